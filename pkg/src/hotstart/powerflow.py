"""DC and Newton-Raphson AC power flow with flat, warm and hot initial conditions."""

from __future__ import annotations

import enum
import time
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, splu

from .errors import MissingInput, NonConvergence, SingularDcMatrix, SingularJacobian
from .matpower import NetworkCase
from .network import DcModel

DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 30


@dataclass(frozen=True)
class LoadScenario:
    """Bus demands for one sample, in MW / MVAr (case units)."""

    pd: np.ndarray
    qd: np.ndarray
    k: int = 0

    @classmethod
    def default(cls, net: NetworkCase) -> "LoadScenario":
        return cls(net.pd.copy(), net.qd.copy(), 0)


@dataclass
class PowerFlowSolution:
    vm: np.ndarray
    va: np.ndarray  # radians
    iterations: int
    converged: bool
    max_mismatch: float
    solve_time: float


class InitMode(enum.Enum):
    FLAT = "flat"
    WARM = "warm"
    HOT = "hot"


@dataclass(frozen=True)
class InitialConditions:
    vm0: np.ndarray
    va0: np.ndarray
    mode: InitMode

    def __post_init__(self):
        if not (np.all(np.isfinite(self.vm0)) and np.all(np.isfinite(self.va0))):
            raise ValueError("initial conditions must be finite")
        if np.any(self.vm0 <= 0):
            raise ValueError("initial voltage magnitudes must be positive")


def _scenario(net, scenario):
    return LoadScenario.default(net) if scenario is None else scenario


def dc_injections(net: NetworkCase, scenario: LoadScenario | None = None) -> np.ndarray:
    """Net real injection per bus in pu, shunt conductance counted as load."""
    sc = _scenario(net, scenario)
    return (net.pg - sc.pd - net.gs) / net.base_mva


def solve_dcpf(net: NetworkCase, dc: DcModel, scenario: LoadScenario | None = None) -> PowerFlowSolution:
    """Solve ``B_red @ theta = (p - p_shift)_red - B[:, slack] * slack_va``.

    ``max_mismatch`` holds the infinity-norm residual of the reduced system.
    """
    sc = _scenario(net, scenario)
    t0 = time.perf_counter()
    p = (net.pg - sc.pd - net.gs) / net.base_mva
    ns = dc.non_slack
    rhs = (p - dc.p_shift)[ns] - dc.b_slack_column * dc.slack_va
    theta_ns = dc.lu.solve(rhs)
    va = np.empty(net.n_bus)
    va[ns] = theta_ns
    va[dc.slack_index] = dc.slack_va
    elapsed = time.perf_counter() - t0
    if not np.all(np.isfinite(theta_ns)):
        raise SingularDcMatrix("non-finite DC angles")
    resid = float(np.max(np.abs(dc.b_reduced @ theta_ns - rhs), initial=0.0))
    return PowerFlowSolution(
        vm=np.ones(net.n_bus), va=va, iterations=0, converged=True,
        max_mismatch=resid, solve_time=elapsed,
    )


def complex_injection_spec(net: NetworkCase, scenario: LoadScenario | None = None) -> np.ndarray:
    sc = _scenario(net, scenario)
    return (net.pg - sc.pd + 1j * (net.qg - sc.qd)) / net.base_mva


def compute_mismatch(net, ybus, scenario, vm, va):
    """Return ``(dp, dq)`` as length-L pu vectors of computed minus specified injection.

    ``dp`` is zero at the slack bus and ``dq`` is zero at every non-PQ bus, so
    only the Newton equations carry a value.
    """
    v = vm * np.exp(1j * va)
    mis = v * np.conj(ybus @ v) - complex_injection_spec(net, scenario)
    dp = mis.real.copy()
    dq = mis.imag.copy()
    dp[net.slack] = 0.0
    dq[net.bus_type != 1] = 0.0
    return dp, dq


class NewtonWorkspace:
    """Load-independent Newton data for one (network, Ybus) pair.

    Holds the bus index sets and the map from Ybus nonzeros onto the four
    polar Jacobian blocks. Jacobian values are still recomputed every
    iteration. Build one per network and pass it to :func:`solve_acpf` when
    solving many scenarios.
    """

    def __init__(self, net: NetworkCase, ybus: sp.csr_matrix):
        self.net = net
        self.ybus = ybus
        n = net.n_bus
        pvpq, pq = net.pvpq, net.pq
        npvpq = len(pvpq)
        pos_a = np.full(n, -1)
        pos_a[pvpq] = np.arange(npvpq)
        pos_m = np.full(n, -1)
        pos_m[pq] = np.arange(len(pq))
        rows = np.repeat(np.arange(n), np.diff(ybus.indptr))
        cols = ybus.indices
        self.rows, self.cols = rows, cols
        self.diag = rows == cols
        ra, ca, rm, cm = pos_a[rows], pos_a[cols], pos_m[rows], pos_m[cols]
        self.m11 = (ra >= 0) & (ca >= 0)
        self.m12 = (ra >= 0) & (cm >= 0)
        self.m21 = (rm >= 0) & (ca >= 0)
        self.m22 = (rm >= 0) & (cm >= 0)
        jrow = np.concatenate([
            ra[self.m11], ra[self.m12], npvpq + rm[self.m21], npvpq + rm[self.m22]])
        jcol = np.concatenate([
            ca[self.m11], npvpq + cm[self.m12], ca[self.m21], npvpq + cm[self.m22]])
        self.dim = npvpq + len(pq)
        # column-major order of the Jacobian triplets, so CSC is built without a sort
        self.perm = np.lexsort((jrow, jcol))
        self.indices = jrow[self.perm]
        self.indptr = np.searchsorted(jcol[self.perm], np.arange(self.dim + 1)).astype(np.int32)
        self.indices = self.indices.astype(np.int32)
        self.diag_rows = rows[self.diag]

    def assemble(self, ydata, v, ibus):
        r, c = self.rows, self.cols
        vn = v / np.abs(v)
        dva = -1j * v[r] * np.conj(ydata * v[c])
        dvm = v[r] * np.conj(ydata * vn[c])
        d, dr = self.diag, self.diag_rows
        dva[d] += 1j * v[dr] * np.conj(ibus[dr])
        dvm[d] += np.conj(ibus[dr]) * vn[dr]
        data = np.concatenate([
            dva[self.m11].real, dvm[self.m12].real, dva[self.m21].imag, dvm[self.m22].imag])
        return sp.csc_matrix((data[self.perm], self.indices, self.indptr),
                             shape=(self.dim, self.dim))


def solve_acpf(
    net: NetworkCase,
    ybus: sp.csr_matrix,
    scenario: LoadScenario | None,
    init: InitialConditions,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    strict: bool = True,
    workspace: NewtonWorkspace | None = None,
) -> PowerFlowSolution:
    """Full Newton-Raphson in polar coordinates.

    Unknowns are angles at PV and PQ buses and magnitudes at PQ buses. PV
    magnitudes are pinned to generator setpoints and the slack to its
    setpoint and case angle, whatever ``init`` says. Converged when the
    infinity norm of the stacked mismatch drops below ``tol``;
    ``iterations`` counts linear solves.

    With ``strict`` (the default) a failed solve raises NonConvergence; with
    ``strict=False`` the last iterate is returned with ``converged=False``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    t0 = time.perf_counter()
    pv, pq, pvpq, slack = net.pv, net.pq, net.pvpq, net.slack
    npvpq = len(pvpq)
    sbus = complex_injection_spec(net, scenario)

    vm = init.vm0.astype(float, copy=True)
    va = init.va0.astype(float, copy=True)
    vm[pv] = net.vg[pv]
    vm[slack] = net.vg[slack]
    va[slack] = net.va_rad[slack]
    v = vm * np.exp(1j * va)

    pattern = workspace if workspace is not None else NewtonWorkspace(net, ybus)
    ydata = ybus.data

    def mismatch(v):
        ibus = ybus @ v
        mis = v * np.conj(ibus) - sbus
        return ibus, np.r_[mis[pvpq].real, mis[pq].imag]

    ibus, F = mismatch(v)
    norm_f = float(np.max(np.abs(F), initial=0.0))
    converged = norm_f < tol
    it = 0
    while not converged and it < max_iter:
        it += 1
        J = pattern.assemble(ydata, v, ibus)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", MatrixRankWarning)
                dx = -splu(J).solve(F)
        except (RuntimeError, MatrixRankWarning):
            raise SingularJacobian(it) from None
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        v = vm * np.exp(1j * va)
        ibus, F = mismatch(v)
        norm_f = float(np.max(np.abs(F), initial=0.0))
        if not np.isfinite(norm_f):
            break
        converged = norm_f < tol
    elapsed = time.perf_counter() - t0

    if not converged and strict:
        raise NonConvergence(it, norm_f)
    return PowerFlowSolution(
        vm=vm, va=va, iterations=it,
        converged=bool(converged), max_mismatch=norm_f, solve_time=elapsed,
    )


def assemble_initial(
    net: NetworkCase,
    mode: InitMode | str,
    dc_solution: PowerFlowSolution | None = None,
    prediction: tuple[np.ndarray, np.ndarray] | None = None,
) -> InitialConditions:
    """Initial voltages for the Newton solve.

    FLAT: 1.0 pu / 0 rad at PQ and PV buses.
    WARM: DC angles everywhere, 1.0 pu at PQ buses.
    HOT: predicted angles at non-slack buses, predicted magnitudes at PQ buses.
    PV magnitudes always come from the generator setpoint and the slack bus
    from its setpoint and case angle.
    """
    mode = InitMode(mode)
    n = net.n_bus
    vm0 = np.ones(n)
    va0 = np.zeros(n)
    if mode is InitMode.WARM:
        if dc_solution is None:
            raise MissingInput(mode.name)
        va0 = np.asarray(dc_solution.va, dtype=float).copy()
    elif mode is InitMode.HOT:
        if prediction is None:
            raise MissingInput(mode.name)
        pred_vm, pred_va = (np.asarray(a, dtype=float) for a in prediction)
        va0 = pred_va.copy()
        vm0[net.pq] = pred_vm[net.pq]
    vg = net.vg
    vm0[net.pv] = vg[net.pv]
    vm0[net.slack] = vg[net.slack]
    va0[net.slack] = net.va_rad[net.slack]
    return InitialConditions(vm0=vm0, va0=va0, mode=mode)
