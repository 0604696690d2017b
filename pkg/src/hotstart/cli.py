"""Command-line entry point: ``hotstart <subcommand> ...``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
Every subcommand accepts ``--seed`` so scripted sweeps can pass one seed
everywhere; commands without randomness ignore it.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from .cnn import Arch, CnnModel, Target, load_weights, save_weights, xavier_init
from .dataset import Dataset, generate
from .errors import HotStartError, NumericalError
from .matpower import load_case
from .network import build_dc, build_ybus
from .powerflow import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    InitMode,
    LoadScenario,
    assemble_initial,
    solve_acpf,
    solve_dcpf,
)
from .scenarios import SamplerConfig
from .train import TrainConfig, train

log = logging.getLogger("hotstart")

LONG_RUNNING_BUSES = 300


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _solver_opts(p):
    p.add_argument("--tol", type=float, default=DEFAULT_TOL, help="mismatch tolerance in pu")
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)


def _scenario_opts(p):
    p.add_argument("--dataset", help="take the demand of one dataset sample")
    p.add_argument("--sample", type=int, default=0, help="dataset column (default 0)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="hotstart", description="CNN hot-start for Newton-Raphson power flow")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("parse", help="validate a case file and print a summary")
    p.add_argument("case", help="case file or bundled case name (case9, case14, case118, case2869pegase)")
    _common(p)

    p = sub.add_parser("gen-dataset", help="sample scenarios and solve DC + warm-start AC flows")
    p.add_argument("--case", required=True)
    p.add_argument("--n", type=int, required=True, help="converged samples to keep")
    p.add_argument("--t", type=int, required=True, help="size of the train+validation set W")
    p.add_argument("--out", required=True)
    _solver_opts(p)
    _common(p)

    for name, hlp in (("dcpf", "solve a DC power flow"), ("acpf", "solve a Newton AC power flow")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--case", required=True)
        _scenario_opts(p)
        p.add_argument("--out", help="write the bus table as CSV here instead of stdout")
        if name == "acpf":
            p.add_argument("--init", choices=[m.value for m in InitMode], default="warm")
            p.add_argument("--weights-v", help="V model weights (hot start)")
            p.add_argument("--weights-theta", help="theta model weights (hot start)")
            _solver_opts(p)
        _common(p)

    p = sub.add_parser("train", help="train one CNN on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--target", choices=[t.value for t in Target], required=True)
    p.add_argument("--arch", choices=[a.value for a in Arch], help="default: by system size")
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--t", type=int, help="override the dataset's T")
    p.add_argument("--out", required=True, help="weights file")
    p.add_argument("--report", help="training report JSON (default: <out>.json)")
    _common(p)

    p = sub.add_parser("evaluate", help="hot-start the test set with trained models")
    p.add_argument("--case", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--weights-v", required=True)
    p.add_argument("--weights-theta", required=True)
    p.add_argument("--t", type=int, help="override the dataset's T")
    p.add_argument("--training-time", type=float, default=float("nan"),
                   help="seconds, copied into the report")
    p.add_argument("--out-dir", required=True)
    _solver_opts(p)
    _common(p)

    p = sub.add_parser("bench", help="full pipeline over a grid of T values")
    p.add_argument("--case", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--t-grid", required=True, help="comma-separated T values, e.g. 1000,2000,3000")
    p.add_argument("--arch", choices=[a.value for a in Arch], help="default: by system size")
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--dataset", help="reuse this dataset instead of generating one")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--long-running", action="store_true",
                   help=f"required for systems above {LONG_RUNNING_BUSES} buses")
    _solver_opts(p)
    _common(p)
    return ap


# -- helpers -------------------------------------------------------------------


def _scenario(net, args):
    if not args.dataset:
        return LoadScenario.default(net), None
    ds = Dataset.load(args.dataset)
    if ds.n_bus != net.n_bus:
        raise UsageError("dataset and case disagree on the bus count")
    if not 0 <= args.sample < ds.n:
        raise UsageError(f"--sample must be in [0, {ds.n})")
    return ds.scenario(args.sample), ds


def _emit_bus_table(net, vm, va, out):
    ids = [b.id for b in net.buses]
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["bus", "vm_pu", "va_deg"])
        for i, m, a in zip(ids, vm, np.degrees(va)):
            w.writerow([i, repr(float(m)), repr(float(a))])
    finally:
        if out:
            fh.close()


def _train_cfg(args) -> TrainConfig:
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
        cfg.setdefault("seed", args.seed)
        return TrainConfig(**cfg)
    return TrainConfig(seed=args.seed)


def _load_models(args, n_bus):
    models = {Target.V: load_weights(args.weights_v), Target.THETA: load_weights(args.weights_theta)}
    for target, m in models.items():
        if m.target is not target:
            raise UsageError(f"{target.value} weights file holds a {m.target.value} model")
        if m.l != n_bus:
            raise UsageError("weights and case disagree on the bus count")
    return models


def _parse_grid(text):
    try:
        grid = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError("--t-grid must be comma-separated integers") from None
    if not grid:
        raise UsageError("--t-grid is empty")
    return grid


# -- commands ------------------------------------------------------------------


def cmd_parse(args):
    net = load_case(args.case)
    br = net.branch_arrays
    print(f"case      {net.name}")
    print(f"base_mva  {net.base_mva}")
    print(f"buses     {net.n_bus} (PQ {len(net.pq)}, PV {len(net.pv)}, slack 1)")
    print(f"branches  {len(net.branches)} ({len(br['f'])} in service)")
    print(f"gens      {len(net.gens)}")
    print(f"load      {net.pd.sum():.3f} MW, {net.qd.sum():.3f} MVAr")


def cmd_gen_dataset(args):
    net = load_case(args.case)
    if not 0 < args.t < args.n:
        raise UsageError("need 0 < t < n")
    ds = generate(net, SamplerConfig(n=args.n, seed=args.seed), args.n, args.t,
                  tol=args.tol, max_iter=args.max_iter)
    ds.save(args.out)
    print(f"wrote {args.out}: N={ds.n} T={ds.t} L={ds.n_bus} "
          f"convergence {100 * ds.convergence_rate:.2f}% "
          f"warm avg iter {ds.n_ac_warm.mean():.3f}")


def cmd_dcpf(args):
    net = load_case(args.case)
    sc, _ = _scenario(net, args)
    sol = solve_dcpf(net, build_dc(net), sc)
    print(f"# dcpf residual {sol.max_mismatch:.3e} pu, {1e3 * sol.solve_time:.4f} ms", file=sys.stderr)
    _emit_bus_table(net, sol.vm, sol.va, args.out)


def cmd_acpf(args):
    net = load_case(args.case)
    sc, ds = _scenario(net, args)
    mode = InitMode(args.init)
    dc_sol = pred = None
    if mode is not InitMode.FLAT:
        dc_sol = solve_dcpf(net, build_dc(net), sc)
    if mode is InitMode.HOT:
        if not (args.weights_v and args.weights_theta):
            raise UsageError("--init hot needs --weights-v and --weights-theta")
        models = _load_models(args, net.n_bus)
        if ds is not None:
            p_d, q_d = ds.x[:, 2, args.sample], ds.x[:, 3, args.sample]
        else:
            p_d = q_d = np.zeros(net.n_bus)
        x = bench._single_input(dc_sol.va, p_d, q_d)
        v_hat, _ = models[Target.V]._forward_hbc(x)
        th_hat, _ = models[Target.THETA]._forward_hbc(x)
        pred = (v_hat[:, 0] + 1.0, th_hat[:, 0])
    init = assemble_initial(net, mode, dc_solution=dc_sol, prediction=pred)
    sol = solve_acpf(net, build_ybus(net), sc, init, tol=args.tol, max_iter=args.max_iter)
    print(f"# acpf init={mode.value} iterations {sol.iterations} mismatch {sol.max_mismatch:.3e} pu "
          f"{1e3 * sol.solve_time:.4f} ms", file=sys.stderr)
    _emit_bus_table(net, sol.vm, sol.va, args.out)


def cmd_train(args):
    ds = Dataset.load(args.dataset)
    if args.t is not None:
        ds = ds.with_t(args.t)
    cfg = _train_cfg(args)
    arch = Arch(args.arch) if args.arch else bench.default_arch(ds.n_bus)
    model = xavier_init(CnnModel.build(arch, ds.n_bus, Target(args.target)), args.seed)
    model, report = train(model, ds, cfg)
    save_weights(model, args.out)
    report_path = args.report or f"{args.out}.json"
    report.save(report_path)
    print(f"{args.target}: {report.epochs_run} epochs ({report.stop_reason}), "
          f"test dL {report.final_delta_l:.5f}%, {report.wall_time:.1f} s -> {args.out}")


def cmd_evaluate(args):
    net = load_case(args.case)
    ds = Dataset.load(args.dataset)
    if args.t is not None:
        ds = ds.with_t(args.t)
    if ds.t_ac_warm is None:
        raise UsageError("dataset has no timing sidecar; warm-start times are unavailable")
    models = _load_models(args, net.n_bus)
    records, pv, pt = bench.evaluate_hot(net, models, ds, tol=args.tol, max_iter=args.max_iter)
    report = bench.summarize(ds, records, pv, pt, args.training_time)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bench.write_records_csv(records, out / f"T{ds.t}_records.csv")
    bench.write_report([report], out, records={ds.t: records})
    print(bench.render_table([report]), end="")


def cmd_bench(args):
    net = load_case(args.case)
    grid = _parse_grid(args.t_grid)
    if any(not 0 < t < args.n for t in grid):
        raise UsageError("every T must satisfy 0 < T < n")
    if net.n_bus > LONG_RUNNING_BUSES and not args.long_running:
        raise UsageError(f"{net.name} has {net.n_bus} buses; pass --long-running to proceed")
    cfg = _train_cfg(args)
    arch = Arch(args.arch) if args.arch else None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.dataset:
        ds = Dataset.load(args.dataset)
        if ds.n != args.n:
            raise UsageError(f"dataset holds {ds.n} samples, --n says {args.n}")
    else:
        ds = generate(net, SamplerConfig(n=args.n, seed=args.seed), args.n, grid[0],
                      tol=args.tol, max_iter=args.max_iter)
        ds.save(out / "dataset.bin")
    reports, records, train_reports = [], {}, {}
    for t in grid:
        log.info("T=%d", t)
        run = bench.run_pipeline(net, args.n, t, seed=args.seed, train_cfg=cfg, tol=args.tol,
                                 arch=arch, dataset=ds.with_t(t))
        tag = f"T{t}"
        for target, model in run.models.items():
            save_weights(model, out / f"{tag}_{target.value}.weights")
            run.train_reports[target].save(out / f"{tag}_{target.value}.train.json")
        bench.write_records_csv(run.records, out / f"{tag}_records.csv")
        reports.append(run.report)
        records[t] = run.records
        train_reports[t] = run.train_reports
    bench.write_report(reports, out, records=records, train_reports=train_reports)
    print(bench.render_table(reports), end="")


COMMANDS = {
    "parse": cmd_parse, "gen-dataset": cmd_gen_dataset, "dcpf": cmd_dcpf, "acpf": cmd_acpf,
    "train": cmd_train, "evaluate": cmd_evaluate, "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        COMMANDS[args.cmd](args)
    except NumericalError as exc:
        print(f"hotstart: numerical failure: {exc!r}", file=sys.stderr)
        return 2
    except (UsageError, HotStartError, OSError, ValueError) as exc:
        print(f"hotstart: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
