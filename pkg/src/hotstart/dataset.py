"""Training data: DC inputs, warm-start AC targets, timings and the W/H split.

Channel order of ``x`` (L x 4 x N) is ``[V_DC - 1, theta_DC, P_d, Q_d]`` with
angles in radians and demand deltas in per unit. Targets are ``V_AC - 1``
and ``theta_AC`` (radians).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import binio
from .errors import (
    LowConvergenceRate,
    SingularJacobian,
    UnconvergedTarget,
)
from .matpower import NetworkCase
from .network import build_dc, build_ybus
from .powerflow import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    InitMode,
    LoadScenario,
    NewtonWorkspace,
    PowerFlowSolution,
    assemble_initial,
    solve_acpf,
    solve_dcpf,
)
from .scenarios import SamplerConfig, ScenarioStream

log = logging.getLogger(__name__)

CHANNELS = ("V_DC-1", "theta_DC", "P_d", "Q_d")
MIN_CONVERGENCE_RATE = 0.5


@dataclass
class Deltas:
    p_d: np.ndarray  # L x N, pu
    q_d: np.ndarray


def compute_deltas(net: NetworkCase, p_mw: np.ndarray, q_mw: np.ndarray) -> Deltas:
    return Deltas(
        p_d=(p_mw - net.pd[:, None]) / net.base_mva,
        q_d=(q_mw - net.qd[:, None]) / net.base_mva,
    )


def assemble_x(dc_solutions, deltas: Deltas) -> np.ndarray:
    """Stack DC solutions and demand deltas into the L x 4 x N input tensor."""
    n = len(dc_solutions)
    if deltas.p_d.shape[1] != n or deltas.q_d.shape != deltas.p_d.shape:
        raise ValueError("DC solutions and deltas disagree on the sample count")
    vm = np.stack([s.vm for s in dc_solutions], axis=1)
    va = np.stack([s.va for s in dc_solutions], axis=1)
    if np.any(np.abs(va) >= np.pi):
        raise ValueError("DC angles outside (-pi, pi): expected radians")
    x = np.stack([vm - 1.0, va, deltas.p_d, deltas.q_d], axis=1)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite entries in the input tensor")
    return x


def assemble_targets(ac_solutions) -> tuple[np.ndarray, np.ndarray]:
    for k, s in enumerate(ac_solutions):
        if not s.converged:
            raise UnconvergedTarget(k)
    y_v = np.stack([s.vm for s in ac_solutions], axis=1) - 1.0
    y_th = np.stack([s.va for s in ac_solutions], axis=1)
    return y_v, y_th


def split_sizes(t: int) -> tuple[int, int]:
    """Train/validation sizes for ``t`` samples in W: ``floor(0.9 t)`` and the rest."""
    n_train = (9 * t) // 10
    return n_train, t - n_train


@dataclass
class Dataset:
    case_name: str
    base_mva: float
    seed: int
    t: int
    x: np.ndarray  # L x 4 x N
    y_v: np.ndarray  # L x N
    y_th: np.ndarray  # L x N
    p_mw: np.ndarray  # L x N sampled demands, kept for re-solving
    q_mw: np.ndarray
    ordinals: np.ndarray  # draw index of every kept sample
    n_ac_warm: np.ndarray
    failures: list[int]
    sampler: dict = field(default_factory=dict)
    tol: float = DEFAULT_TOL
    t_dc: np.ndarray | None = None
    t_ac_warm: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.x.shape[2]

    @property
    def n_bus(self) -> int:
        return self.x.shape[0]

    @property
    def convergence_rate(self) -> float:
        return self.n / (self.n + len(self.failures))

    @property
    def split(self) -> dict[str, np.ndarray]:
        n_train, _ = split_sizes(self.t)
        return {
            "train": np.arange(0, n_train),
            "val": np.arange(n_train, self.t),
            "test": np.arange(self.t, self.n),
        }

    def scenario(self, j: int) -> LoadScenario:
        return LoadScenario(self.p_mw[:, j].copy(), self.q_mw[:, j].copy(), int(self.ordinals[j]))

    def dc_targets(self) -> tuple[np.ndarray, np.ndarray]:
        """DC solution in target form (``V - 1`` and radians)."""
        return self.x[:, 0, :], self.x[:, 1, :]

    def with_t(self, t: int) -> "Dataset":
        """Same samples, different W/H boundary."""
        if not 0 < t < self.n:
            raise ValueError("t must satisfy 0 < t < n")
        out = Dataset(**{f: getattr(self, f) for f in self.__dataclass_fields__})
        out.t = t
        return out

    # -- persistence -----------------------------------------------------------

    def _header(self) -> dict:
        return {
            "kind": "dataset",
            "case": self.case_name,
            "base_mva": self.base_mva,
            "L": self.n_bus,
            "N": self.n,
            "T": self.t,
            "seed": self.seed,
            "tol": self.tol,
            "channels": list(CHANNELS),
            "sampler": self.sampler,
            "failures": [int(k) for k in self.failures],
            "split": {k: [int(v[0]), int(v[-1]) + 1] if len(v) else [0, 0]
                      for k, v in self.split.items()},
        }

    def save(self, path) -> None:
        """Write the deterministic payload to ``path`` and timings to ``path.timing``."""
        binio.write(path, self._header(), {
            "x": self.x, "y_v": self.y_v, "y_th": self.y_th,
            "p_mw": self.p_mw, "q_mw": self.q_mw,
            "ordinals": self.ordinals, "n_ac_warm": self.n_ac_warm,
        })
        if self.t_dc is not None:
            binio.write(timing_path(path), {"kind": "dataset_timing"},
                        {"t_dc": self.t_dc, "t_ac_warm": self.t_ac_warm})

    @classmethod
    def load(cls, path) -> "Dataset":
        h, a = binio.read(path)
        t_dc = t_ac = None
        if timing_path(path).exists():
            _, ta = binio.read(timing_path(path))
            t_dc, t_ac = ta["t_dc"], ta["t_ac_warm"]
        return cls(
            case_name=h["case"], base_mva=h["base_mva"], seed=h["seed"], t=h["T"],
            x=a["x"], y_v=a["y_v"], y_th=a["y_th"], p_mw=a["p_mw"], q_mw=a["q_mw"],
            ordinals=a["ordinals"], n_ac_warm=a["n_ac_warm"], failures=list(h["failures"]),
            sampler=h["sampler"], tol=h["tol"], t_dc=t_dc, t_ac_warm=t_ac,
        )


def timing_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".timing")


def generate(
    net: NetworkCase,
    cfg: SamplerConfig,
    n_target: int,
    t: int,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    chunk: int = 256,
) -> Dataset:
    """Draw scenarios until ``n_target`` of them converge from a warm start.

    Samples are solved serially so the recorded DC and AC timings are free of
    contention. Non-convergent draws go to ``failures`` by draw ordinal.
    """
    if not 0 < t < n_target:
        raise ValueError("need 0 < t < n_target")
    ybus = build_ybus(net)
    dc = build_dc(net)
    ws = NewtonWorkspace(net, ybus)
    stream = ScenarioStream(net, cfg)

    dc_sols: list[PowerFlowSolution] = []
    ac_sols: list[PowerFlowSolution] = []
    p_cols, q_cols, ordinals, failures = [], [], [], []
    drawn = 0
    while len(ac_sols) < n_target:
        m = min(chunk, max(n_target - len(ac_sols), 1))
        p, q, _ = stream.take(m)
        for j in range(m):
            k = drawn + j
            sc = LoadScenario(p[:, j], q[:, j], k)
            d = solve_dcpf(net, dc, sc)
            try:
                a = solve_acpf(net, ybus, sc, assemble_initial(net, InitMode.WARM, d),
                               tol=tol, max_iter=max_iter, strict=False, workspace=ws)
            except SingularJacobian:
                a = None
            if a is None or not a.converged:
                failures.append(k)
                continue
            dc_sols.append(d)
            ac_sols.append(a)
            p_cols.append(p[:, j])
            q_cols.append(q[:, j])
            ordinals.append(k)
            if len(ac_sols) == n_target:
                break
        drawn += m
        rate = len(ac_sols) / (len(ac_sols) + len(failures))
        if len(ac_sols) + len(failures) >= 20 and rate < MIN_CONVERGENCE_RATE:
            raise LowConvergenceRate(rate)
    if failures:
        log.info("warm-start convergence rate %.4f (%d failures)",
                 n_target / (n_target + len(failures)), len(failures))

    p_mw = np.stack(p_cols, axis=1)
    q_mw = np.stack(q_cols, axis=1)
    x = assemble_x(dc_sols, compute_deltas(net, p_mw, q_mw))
    y_v, y_th = assemble_targets(ac_sols)
    return Dataset(
        case_name=net.name, base_mva=net.base_mva, seed=cfg.seed, t=t,
        x=x, y_v=y_v, y_th=y_th, p_mw=p_mw, q_mw=q_mw,
        ordinals=np.array(ordinals, dtype=np.int64),
        n_ac_warm=np.array([s.iterations for s in ac_sols], dtype=np.int64),
        failures=failures, sampler=asdict(cfg), tol=tol,
        t_dc=np.array([s.solve_time for s in dc_sols]),
        t_ac_warm=np.array([s.solve_time for s in ac_sols]),
    )
