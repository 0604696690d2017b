"""End-to-end hot-start pipeline and the warm-vs-hot benchmark.

For one case: sample scenarios and solve DC + warm-start AC flows, train the
V and theta models on W, then for every sample of H time DCPF, inference and
the hot-start AC solve. Warm-start figures for H come from the timings stored
during dataset generation.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cnn import Arch, CnnModel, Target, save_weights, xavier_init
from .dataset import Dataset, generate
from .matpower import NetworkCase, load_case
from .network import build_dc, build_ybus
from .powerflow import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    InitMode,
    NewtonWorkspace,
    assemble_initial,
    solve_acpf,
    solve_dcpf,
)
from .errors import SingularJacobian
from .scenarios import SamplerConfig
from .train import TrainConfig, TrainReport, delta_l, train

log = logging.getLogger(__name__)

DENSE_ARCH_LIMIT = 300  # buses; larger systems get the deep architecture


def default_arch(n_bus: int) -> Arch:
    return Arch.SMALL if n_bus <= DENSE_ARCH_LIMIT else Arch.DEEP


@dataclass
class WarmRow:
    t_avg: float  # ms
    avg_iter: float
    delta_l: float  # percent
    n_samples: int


@dataclass
class HotRow:
    t_avg: float  # ms, t_dc + t_inf + t_ac
    t_dc: float
    t_inf: float
    t_ac: float
    avg_iter: float
    delta_l: float
    n_samples: int


@dataclass
class BenchReport:
    case_name: str
    n: int
    t: int
    warm: WarmRow
    hot: HotRow
    reductions: dict[str, float]
    training_time: float  # s, V and theta models together
    hot_failures: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchReport":
        d = dict(d)
        d["warm"] = WarmRow(**d["warm"])
        d["hot"] = HotRow(**d["hot"])
        return cls(**d)


@dataclass
class HotRecord:
    sample: int  # column in the dataset
    ordinal: int  # scenario draw index
    t_dc: float  # s
    t_inf: float
    t_ac_hot: float
    iterations: int
    converged: bool
    max_mismatch: float
    t_ac_warm: float
    n_warm: int


@dataclass
class PipelineRun:
    report: BenchReport
    dataset: Dataset
    models: dict[Target, CnnModel]
    train_reports: dict[Target, TrainReport]
    records: list[HotRecord]
    predictions: dict[Target, np.ndarray] = field(default_factory=dict)


def _single_input(x_dc_va, p_d, q_d):
    # H x B x C internal layout, B = 1
    h = x_dc_va.shape[0]
    x = np.zeros((h, 1, 4))
    x[:, 0, 1] = x_dc_va
    x[:, 0, 2] = p_d
    x[:, 0, 3] = q_d
    return x


def evaluate_hot(
    net: NetworkCase,
    models: dict[Target, CnnModel],
    dataset: Dataset,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
):
    """Hot-start every test sample; returns ``(records, pred_v, pred_th)``.

    Each sample is timed on its own: DCPF, inference of both models (including
    input assembly and removing the magnitude offset), and the Newton solve.
    Predictions are returned in target form (``V - 1`` and radians).
    """
    ybus = build_ybus(net)
    dc = build_dc(net)
    ws = NewtonWorkspace(net, ybus)
    mv, mt = models[Target.V], models[Target.THETA]
    test = dataset.split["test"]
    pred_v = np.empty((net.n_bus, len(test)))
    pred_th = np.empty_like(pred_v)
    records = []
    for col, j in enumerate(test):
        sc = dataset.scenario(j)
        d = solve_dcpf(net, dc, sc)

        t0 = time.perf_counter()
        x = _single_input(d.va, dataset.x[:, 2, j], dataset.x[:, 3, j])
        v_hat, _ = mv._forward_hbc(x)
        th_hat, _ = mt._forward_hbc(x)
        vm_pred = v_hat[:, 0] + 1.0
        va_pred = th_hat[:, 0]
        t_inf = time.perf_counter() - t0

        pred_v[:, col] = v_hat[:, 0]
        pred_th[:, col] = va_pred
        init = assemble_initial(net, InitMode.HOT, prediction=(vm_pred, va_pred))
        try:
            sol = solve_acpf(net, ybus, sc, init, tol=tol, max_iter=max_iter,
                             strict=False, workspace=ws)
            it, ok, mis, t_ac = sol.iterations, sol.converged, sol.max_mismatch, sol.solve_time
        except SingularJacobian as exc:
            it, ok, mis, t_ac = exc.iteration, False, float("nan"), float("nan")
        records.append(HotRecord(
            sample=int(j), ordinal=int(dataset.ordinals[j]), t_dc=d.solve_time, t_inf=t_inf,
            t_ac_hot=t_ac, iterations=int(it), converged=bool(ok), max_mismatch=float(mis),
            t_ac_warm=float(dataset.t_ac_warm[j]) if dataset.t_ac_warm is not None else float("nan"),
            n_warm=int(dataset.n_ac_warm[j]),
        ))
    return records, pred_v, pred_th


def reduction_pct(warm: float, hot: float) -> float:
    """Percent saved by the hot start relative to the warm start."""
    return 100.0 * (warm - hot) / warm


def summarize(dataset: Dataset, records, pred_v, pred_th, training_time: float) -> BenchReport:
    test = dataset.split["test"]
    dc_v, dc_th = dataset.dc_targets()
    dc_v, dc_th = dc_v[:, test], dc_th[:, test]
    ac_v, ac_th = dataset.y_v[:, test], dataset.y_th[:, test]

    warm = WarmRow(
        t_avg=1e3 * float(np.mean(dataset.t_ac_warm[test])) if dataset.t_ac_warm is not None else float("nan"),
        avg_iter=float(np.mean(dataset.n_ac_warm[test])),
        delta_l=delta_l(dc_v, dc_th, dc_v, dc_th, ac_v, ac_th),
        n_samples=int(len(test)),
    )
    ok = [r for r in records if r.converged]
    if ok:
        t_dc = 1e3 * float(np.mean([r.t_dc for r in ok]))
        t_inf = 1e3 * float(np.mean([r.t_inf for r in ok]))
        t_ac = 1e3 * float(np.mean([r.t_ac_hot for r in ok]))
        avg_iter = float(np.mean([r.iterations for r in ok]))
    else:
        t_dc = t_inf = t_ac = avg_iter = float("nan")
    hot = HotRow(
        t_avg=t_dc + t_inf + t_ac, t_dc=t_dc, t_inf=t_inf, t_ac=t_ac, avg_iter=avg_iter,
        delta_l=delta_l(pred_v, pred_th, dc_v, dc_th, ac_v, ac_th), n_samples=len(ok),
    )
    reductions = {
        "time_pct": reduction_pct(warm.t_avg, hot.t_avg),
        "iter_pct": reduction_pct(warm.avg_iter, hot.avg_iter),
    }
    return BenchReport(
        case_name=dataset.case_name, n=dataset.n, t=dataset.t, warm=warm, hot=hot,
        reductions=reductions, training_time=training_time,
        hot_failures=len(records) - len(ok),
    )


def train_models(dataset: Dataset, seed: int, train_cfg: TrainConfig, arch: Arch | None = None):
    arch = arch or default_arch(dataset.n_bus)
    models, reports = {}, {}
    for target in (Target.V, Target.THETA):
        model = xavier_init(CnnModel.build(arch, dataset.n_bus, target), seed)
        model, rep = train(model, dataset, train_cfg)
        log.info("trained %s model: %d epochs, test dL %.5f%%, %.1fs", target.value,
                 rep.epochs_run, rep.final_delta_l, rep.wall_time)
        models[target], reports[target] = model, rep
    return models, reports


def run_pipeline(
    case,
    n: int,
    t: int,
    seed: int = 0,
    train_cfg: TrainConfig | None = None,
    tol: float = DEFAULT_TOL,
    arch: Arch | None = None,
    dataset: Dataset | None = None,
    out_dir=None,
) -> PipelineRun:
    """Generate (unless ``dataset`` is given), train both models, hot-start H.

    ``case`` is a NetworkCase, a case file path or a bundled case name.

    With ``out_dir`` every artifact is written there: dataset, weights,
    training reports, per-sample records, the report files and figures.
    """
    net = case if isinstance(case, NetworkCase) else load_case(case)
    train_cfg = train_cfg or TrainConfig(seed=seed)
    if dataset is None:
        dataset = generate(net, SamplerConfig(n=n, seed=seed), n, t, tol=tol)
    elif dataset.t != t:
        dataset = dataset.with_t(t)
    models, train_reports = train_models(dataset, seed, train_cfg, arch)
    records, pred_v, pred_th = evaluate_hot(net, models, dataset, tol=tol)
    training_time = sum(r.wall_time for r in train_reports.values())
    report = summarize(dataset, records, pred_v, pred_th, training_time)
    run = PipelineRun(report, dataset, models, train_reports, records,
                      {Target.V: pred_v, Target.THETA: pred_th})
    if out_dir is not None:
        write_run(run, out_dir)
    return run


# -- output --------------------------------------------------------------------

TABLE_COLUMNS = ("row", "t_avg_ms", "avg_iter", "delta_l_pct", "training_time_s")


def table_rows(reports: list[BenchReport]) -> list[dict]:
    rows = []
    for rep in reports:
        rows.append({
            "row": f"Warm Start (H of T={rep.t})", "t_avg_ms": rep.warm.t_avg,
            "avg_iter": rep.warm.avg_iter, "delta_l_pct": rep.warm.delta_l,
            "training_time_s": None,
        })
        rows.append({
            "row": f"Hot Start T={rep.t}", "t_avg_ms": rep.hot.t_avg,
            "avg_iter": rep.hot.avg_iter, "delta_l_pct": rep.hot.delta_l,
            "training_time_s": rep.training_time,
        })
    return rows


def render_table(reports: list[BenchReport]) -> str:
    """Aligned text table in the layout of the published results tables."""
    head = ["", "t_avg (ms)", "Avg. Iter.", "dL", "Training Time (s)"]
    body = []
    for r in table_rows(reports):
        body.append([
            r["row"], f"{r['t_avg_ms']:.5f}", f"{r['avg_iter']:.3f}",
            f"{r['delta_l_pct']:.5g}%",
            "N/A" if r["training_time_s"] is None else f"{r['training_time_s']:.5f}",
        ])
    widths = [max(len(row[i]) for row in [head, *body]) for i in range(len(head))]
    fmt = lambda row: "  ".join(c.ljust(w) if i == 0 else c.rjust(w)
                                for i, (c, w) in enumerate(zip(row, widths)))
    lines = [fmt(head), "-" * len(fmt(head))] + [fmt(r) for r in body]
    extra = []
    for rep in reports:
        extra.append(
            f"T={rep.t}: time reduction {rep.reductions['time_pct']:.2f}%, "
            f"iteration reduction {rep.reductions['iter_pct']:.2f}%, "
            f"hot t_avg = {rep.hot.t_dc:.5f} (DC) + {rep.hot.t_inf:.5f} (inf) + "
            f"{rep.hot.t_ac:.5f} (AC) ms, {rep.hot.n_samples}/{rep.warm.n_samples} "
            f"test samples converged, {rep.hot_failures} hot-start failures"
        )
    return "\n".join(lines + [""] + extra) + "\n"


def save_reports(reports: list[BenchReport], path) -> None:
    Path(path).write_text(json.dumps([r.to_dict() for r in reports], indent=2))


def load_reports(path) -> list[BenchReport]:
    return [BenchReport.from_dict(d) for d in json.loads(Path(path).read_text())]


def write_table_csv(reports: list[BenchReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        w.writeheader()
        for row in table_rows(reports):
            w.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v))
                        for k, v in row.items()})


def write_records_csv(records: list[HotRecord], path) -> None:
    names = list(HotRecord.__dataclass_fields__)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for r in records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])


def read_records_csv(path) -> list[HotRecord]:
    types = {"sample": int, "ordinal": int, "iterations": int, "n_warm": int,
             "converged": lambda s: s == "True"}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(HotRecord(**{k: types.get(k, float)(v) for k, v in row.items()}))
    return out


def write_report(reports: list[BenchReport], out_dir, records=None, train_reports=None) -> dict:
    """Write ``report.txt``, ``report.json``, ``report.csv`` and figures; return their paths."""
    from . import plots

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"txt": out / "report.txt", "json": out / "report.json", "csv": out / "report.csv"}
    paths["txt"].write_text(render_table(reports))
    save_reports(reports, paths["json"])
    write_table_csv(reports, paths["csv"])
    paths.update(plots.render_all(reports, out, records=records, train_reports=train_reports))
    return paths


def write_run(run: PipelineRun, out_dir, tag: str | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = tag or f"T{run.report.t}"
    run.dataset.save(out / "dataset.bin")
    for target, model in run.models.items():
        save_weights(model, out / f"{tag}_{target.value}.weights")
        run.train_reports[target].save(out / f"{tag}_{target.value}.train.json")
    write_records_csv(run.records, out / f"{tag}_records.csv")
    return write_report([run.report], out / tag, records={run.report.t: run.records},
                        train_reports={run.report.t: run.train_reports})
