"""Command-line experiment runner.

Subcommands:
  * ``simulate``        run one experiment and write rounds.csv / rounds.jsonl /
                        summary.json plus a resolved config copy
  * ``theory-check``    run the quadratic-problem verification battery
  * ``partition-stats`` print partition diagnostics for a config
  * ``sweep``           run a one-key grid across seeds and merge the results

The output root is ``--out``, else ``$GCFED_OUT``, else ``./runs``.
"""

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import theory
from .config import (
    ExperimentConfig,
    config_from_mapping,
    config_to_mapping,
    dump_config,
    load_config,
)
from .data import SyntheticTaskSpec, generate_synthetic, load_idx
from .errors import ConfigError
from .fl_engine import build_client_datasets, partition_for_config, run_experiment
from .gc_core import centralize_mean_sub
from .metrics import first_order_stats, moving_average
from .partition import partition_stats, save_plan
from .seeding import derive_seed

log = logging.getLogger(__name__)

CSV_COLUMNS = ("t", "accuracy", "update_norm", "discrepancy", "failed_flag")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rounds_csv(records, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([r.t, _fmt(r.accuracy), _fmt(r.update_norm),
                             _fmt(r.discrepancy), int(r.failed)])


def write_rounds_jsonl(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json_dict()) + "\n")


def run_summary(records, window: int) -> dict:
    accuracies = [r.accuracy for r in records]
    summary = {
        "rounds": len(records),
        "failed_rounds": sum(1 for r in records if r.failed),
        "first_order": None,
        "peak_smoothed_accuracy": None,
        "final_smoothed_accuracy": None,
    }
    if len(accuracies) >= 1:
        smoothed = moving_average(accuracies, window)
        summary["peak_smoothed_accuracy"] = float(smoothed.max())
        summary["final_smoothed_accuracy"] = float(smoothed[-1])
    if len(accuracies) >= 2:
        stats = first_order_stats(accuracies)
        summary["first_order"] = {"mean": stats.mean, "std": stats.std, "min": stats.min}
    return summary


def write_summary(records, window, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(run_summary(records, window), fh, indent=2)
        fh.write("\n")


def load_datasets(cfg: ExperimentConfig):
    """Materialize (train_x, train_y, test_x, test_y) per the config."""
    if cfg.data_kind == "synthetic":
        spec = SyntheticTaskSpec(
            num_classes=cfg.data_classes,
            input_dim=cfg.data_input_dim,
            separation=cfg.data_separation,
            noise_sigma=cfg.data_noise_sigma,
            samples_per_class=cfg.data_samples_per_class,
            seed=cfg.seed,
        )
        return generate_synthetic(spec)
    train_x, train_y = load_idx(cfg.data_train_images, cfg.data_train_labels,
                                cfg.data_classes)
    test_x, test_y = load_idx(cfg.data_test_images, cfg.data_test_labels,
                              cfg.data_classes)
    if cfg.data_limit > 0:
        train_x, train_y = train_x[:cfg.data_limit], train_y[:cfg.data_limit]
    return train_x, train_y, test_x, test_y


def output_root(explicit) -> Path:
    if explicit:
        return Path(explicit)
    env = os.environ.get("GCFED_OUT")
    if env:
        return Path(env)
    return Path("runs")


def make_run_dir(root: Path, prefix: str) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    candidate = root / f"{prefix}-{stamp}"
    counter = 1
    while candidate.exists():
        candidate = root / f"{prefix}-{stamp}-{counter}"
        counter += 1
    candidate.mkdir()
    return candidate


def execute_run(cfg: ExperimentConfig, out_dir: Path) -> dict:
    """Run one experiment and write all artifacts into ``out_dir``."""
    train_x, train_y, test_x, test_y = load_datasets(cfg)
    plan = partition_for_config(cfg, train_y)
    clients = build_client_datasets(train_x, train_y, plan)
    records, _ = run_experiment(cfg, clients, test_x, test_y)
    dump_config(cfg, out_dir / "config.resolved")
    write_rounds_csv(records, out_dir / "rounds.csv")
    write_rounds_jsonl(records, out_dir / "rounds.jsonl")
    write_summary(records, cfg.smooth_window, out_dir / "summary.json")
    return run_summary(records, cfg.smooth_window)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    out_dir = make_run_dir(output_root(args.out), "run")
    summary = execute_run(cfg, out_dir)
    print(f"wrote {out_dir}")
    if summary["final_smoothed_accuracy"] is not None:
        print(f"final smoothed accuracy: {summary['final_smoothed_accuracy']:.2f}%"
              f" (peak {summary['peak_smoothed_accuracy']:.2f}%)")
    if summary["failed_rounds"]:
        print(f"failed rounds: {summary['failed_rounds']}")
        if cfg.fail_policy == "abort":
            return 1
    return 0


def cmd_partition_stats(args) -> int:
    cfg = load_config(args.config)
    _, train_y, _, _ = load_datasets(cfg)
    plan = partition_for_config(cfg, train_y)
    stats = partition_stats(plan)
    print(f"clients: {stats['num_clients']}  total samples: {stats['total_samples']}"
          f"  alpha: {stats['alpha']}")
    print(f"sizes: min {stats['min_size']}  max {stats['max_size']}")
    print(f"mean class entropy: {stats['mean_class_entropy']:.4f} nats")
    print(f"median classes per client: {stats['median_classes_per_client']:.1f}")
    print(f"single-class clients: {stats['single_class_clients']}")
    if args.save_plan:
        save_plan(plan, args.save_plan)
        print(f"plan saved to {args.save_plan}")
    return 0


THEORY_TOLERANCES = {
    "deterministic_identity": 1e-10,
    "stochastic_relative_error": 0.02,
    "a3_stderr_multiple": 3.0,
    "residual_slack": 1e-12,
    "hyperplane_drift": 1e-12,
}


def run_theory_battery(trials: int = 10000, seed: int = 0) -> dict:
    """The full verification battery; returns per-check values and verdicts."""
    shape = (6, 12)
    eta = 0.1

    worst_identity = 0.0
    for i in range(50):
        problem = theory.QuadraticProblem.random(5, shape, seed=seed + i)
        w0 = centralize_mean_sub(
            np.random.default_rng(derive_seed(seed, "theory-w0", i)).normal(size=shape))
        report = theory.expected_gap_identity_check(problem, w0, eta, trials=1)
        residual = abs(report.measured_reduction - report.predicted_reduction)
        worst_identity = max(worst_identity, residual)

    problem = theory.QuadraticProblem.random(5, shape, seed=seed + 1000)
    w0 = centralize_mean_sub(
        np.random.default_rng(derive_seed(seed, "theory-w0", 1000)).normal(size=shape))
    stochastic = theory.expected_gap_identity_check(problem, w0, eta, trials=trials,
                                                    noise_sigma=0.1, seed=seed)

    worst_violation = -np.inf
    equality_gap = 0.0
    for i in range(100):
        w_star = np.random.default_rng(derive_seed(seed, "theory-residual", i)) \
            .normal(size=shape)
        lhs, rhs, holds = theory.residual_bound_check(w_star)
        worst_violation = max(worst_violation, lhs - rhs)
        equality_gap = max(equality_gap, abs(lhs - rhs))

    drift = theory.hyperplane_drift(problem, w0, eta, steps=100, noise_sigma=0.1,
                                    seed=seed)

    a3_limit = THEORY_TOLERANCES["a3_stderr_multiple"] * stochastic.a3_stderr
    return {
        "deterministic_identity_residual": worst_identity,
        "deterministic_ok": worst_identity <= THEORY_TOLERANCES["deterministic_identity"],
        "stochastic_report": stochastic,
        "stochastic_ok": stochastic.relative_error <= THEORY_TOLERANCES["stochastic_relative_error"],
        "a3_ok": abs(stochastic.a3_mean) <= max(a3_limit, 1e-15),
        "residual_worst_violation": worst_violation,
        "residual_equality_gap": equality_gap,
        "residual_ok": worst_violation <= THEORY_TOLERANCES["residual_slack"],
        "hyperplane_drift": drift,
        "drift_ok": drift <= THEORY_TOLERANCES["hyperplane_drift"],
    }


def cmd_theory_check(args) -> int:
    battery = run_theory_battery(trials=args.trials, seed=args.seed)
    rep = battery["stochastic_report"]

    def line(name, value, ok):
        print(f"{name:<38} {value:>14.6e}   {'ok' if ok else 'FAIL'}")

    print(f"{'check':<38} {'value':>14}   verdict")
    line("one-step identity residual (50 seeds)",
         battery["deterministic_identity_residual"], battery["deterministic_ok"])
    line("stochastic identity relative error", rep.relative_error, battery["stochastic_ok"])
    line("cross-term mean (|A3|)", abs(rep.a3_mean), battery["a3_ok"])
    line("residual bound worst violation", battery["residual_worst_violation"],
         battery["residual_ok"])
    line("hyperplane drift over 100 steps", battery["hyperplane_drift"], battery["drift_ok"])
    print()
    print(f"gap before step:      {rep.gap_before:.6f}")
    print(f"gap after plain:      {rep.gap_after_plain:.6f}")
    print(f"gap after projected:  {rep.gap_after_projected:.6f}")
    print(f"reduction terms:      deterministic {rep.b2_term:.3e}, "
          f"stochastic {rep.a2_term_mean:.3e} ({rep.trials} trials)")
    all_ok = all(battery[k] for k in ("deterministic_ok", "stochastic_ok", "a3_ok",
                                      "residual_ok", "drift_ok"))
    return 0 if all_ok else 1


def cmd_sweep(args) -> int:
    base = load_config(args.config)
    key, _, values_text = args.grid.partition("=")
    key = key.strip()
    values = [v.strip() for v in values_text.split(",") if v.strip()]
    if not key or not values:
        raise ConfigError("--grid expects key=v1,v2,...")
    out_dir = make_run_dir(output_root(args.out), "sweep")
    rows = []
    for value in values:
        for offset in range(args.seeds):
            mapping = config_to_mapping(base)
            mapping[key] = value
            mapping["seed"] = str(base.seed + offset)
            cfg = config_from_mapping(mapping)
            run_dir = out_dir / f"{key.replace('.', '_')}={value}-seed{cfg.seed}"
            run_dir.mkdir()
            summary = execute_run(cfg, run_dir)
            rows.append({
                "key": key,
                "value": value,
                "seed": cfg.seed,
                "final_smoothed": summary["final_smoothed_accuracy"],
                "peak_smoothed": summary["peak_smoothed_accuracy"],
                "fo_mean": summary["first_order"]["mean"] if summary["first_order"] else "",
                "fo_std": summary["first_order"]["std"] if summary["first_order"] else "",
                "fo_min": summary["first_order"]["min"] if summary["first_order"] else "",
                "failed_rounds": summary["failed_rounds"],
            })
            print(f"{key}={value} seed={cfg.seed}: "
                  f"final={summary['final_smoothed_accuracy']}")
    merged = out_dir / "sweep.csv"
    with open(merged, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {merged}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcfed",
                                     description="Federated-learning simulation engine")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one experiment")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", default=None)
    sim.add_argument("--workers", type=int, default=None)
    sim.set_defaults(handler=cmd_simulate)

    thy = sub.add_parser("theory-check", help="verify the one-step projection analysis")
    thy.add_argument("--trials", type=int, default=10000)
    thy.add_argument("--seed", type=int, default=0)
    thy.set_defaults(handler=cmd_theory_check)

    parts = sub.add_parser("partition-stats", help="partition diagnostics for a config")
    parts.add_argument("--config", required=True)
    parts.add_argument("--save-plan", default=None)
    parts.set_defaults(handler=cmd_partition_stats)

    sweep = sub.add_parser("sweep", help="grid over one config key across seeds")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--grid", required=True, metavar="key=v1,v2,...")
    sweep.add_argument("--seeds", type=int, default=1)
    sweep.add_argument("--out", default=None)
    sweep.set_defaults(handler=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
