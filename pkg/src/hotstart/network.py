"""Per-unit admittance structures for the AC and DC power-flow models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .errors import SingularDcMatrix
from .matpower import NetworkCase


def _stamp(n, f, t, d_f, d_t, o_ft, o_tf, diag):
    """Sum branch stamps into an n x n CSR matrix with one entry per cell.

    Duplicates are summed with ``np.add.at`` in branch order, the same order
    for cells (i, j) and (j, i), so symmetric stamps give an exactly
    symmetric matrix even with parallel branches.
    """
    lo, hi = np.minimum(f, t), np.maximum(f, t)
    pairs, inv = np.unique(np.stack([lo, hi], axis=1), axis=0, return_inverse=True)
    inv = inv.ravel()
    fwd = f == lo
    upper = np.zeros(len(pairs), dtype=np.result_type(o_ft, o_tf))
    lower = np.zeros_like(upper)
    np.add.at(upper, inv, np.where(fwd, o_ft, o_tf))
    np.add.at(lower, inv, np.where(fwd, o_tf, o_ft))
    dvals = np.asarray(diag, dtype=upper.dtype).copy()
    np.add.at(dvals, f, d_f)
    np.add.at(dvals, t, d_t)
    idx = np.arange(n)
    rows = np.concatenate([pairs[:, 0], pairs[:, 1], idx])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0], idx])
    vals = np.concatenate([upper, lower, dvals])
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def build_ybus(net: NetworkCase) -> sp.csr_matrix:
    """Complex bus admittance matrix (pu) with the standard pi-model branch stamp.

    Every diagonal entry is stored explicitly, even when zero, so the sparsity
    pattern always covers the diagonal.
    """
    n = net.n_bus
    br = net.branch_arrays
    f, t = br["f"], br["t"]
    ys = 1.0 / (br["r"] + 1j * br["x"])
    ytt = ys + 0.5j * br["b"]
    ratio = br["tap"] * np.exp(1j * br["shift"])
    yff = ytt / (ratio * np.conj(ratio))
    yft = -ys / np.conj(ratio)
    ytf = -ys / ratio
    ysh = (net.gs + 1j * net.bs) / net.base_mva

    return _stamp(n, f, t, yff, ytt, yft, ytf, ysh)


@dataclass(frozen=True)
class DcModel:
    """Reduced DC system. ``lu`` is the sparse LU of ``b_reduced``, computed
    once because the matrix does not depend on the loading."""

    b_full: sp.csc_matrix
    b_reduced: sp.csc_matrix
    p_shift: np.ndarray
    slack_index: int
    slack_va: float
    non_slack: np.ndarray
    b_slack_column: np.ndarray = field(repr=False)
    lu: object = field(repr=False, compare=False)


def dc_branch_susceptance(net: NetworkCase) -> np.ndarray:
    br = net.branch_arrays
    return 1.0 / (br["x"] * br["tap"])


def build_dc(net: NetworkCase) -> DcModel:
    """Lossless DC model: 1/(x*tap) weights, phase shifters as injections.

    Resistance and line charging are ignored. Raises SingularDcMatrix when
    the in-service network is not connected.
    """
    n = net.n_bus
    br = net.branch_arrays
    f, t = br["f"], br["t"]
    b = dc_branch_susceptance(net)

    adj = sp.coo_matrix((np.ones(len(f)), (f, t)), shape=(n, n))
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp != 1:
        raise SingularDcMatrix(f"network splits into {n_comp} islands")

    b_full = _stamp(n, f, t, b, b, -b, -b, np.zeros(n)).tocsc()

    p_shift = np.zeros(n)
    flow = -br["shift"] * b
    np.add.at(p_shift, f, flow)
    np.add.at(p_shift, t, -flow)

    ns = net.non_slack
    b_red = b_full[ns][:, ns].tocsc()
    b_red.sort_indices()
    try:
        lu = splu(b_red)
    except RuntimeError as exc:
        raise SingularDcMatrix(str(exc)) from None
    return DcModel(
        b_full=b_full, b_reduced=b_red, p_shift=p_shift,
        slack_index=net.slack, slack_va=float(net.va_rad[net.slack]), non_slack=ns,
        b_slack_column=b_full[:, [net.slack]].toarray().ravel()[ns], lu=lu,
    )
