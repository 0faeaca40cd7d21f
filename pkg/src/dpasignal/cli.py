"""Command line entry point.

    dpasignal <subcommand> [-c CONFIG] [section.key=value ...]

Subcommands read their inputs from disk and write their outputs to disk, so
any step can be re-run on its own.  Exit status: 0 success, 1 usage or
configuration error, 2 data validation error, 3 runtime failure.  Failures
print one ``error: <Class>: <detail>`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

from . import plotting
from .config import PipelineConfig, load_config
from .counting import count, load_counts, save_counts
from .errors import ConfigError, DataValidationError, SignalError
from .ensemble import bag_many, fuse_series
from .evaluation import map_by_year, write_report
from .events import load_cohort_dir, validate
from .rating import cumulate, rate_all, read_series, write_series
from .synth import load_truth, simulate, write_cohort

log = logging.getLogger("dpasignal")

SUBCOMMANDS = ("generate", "count", "rate", "bag", "fuse", "evaluate", "pipeline", "report")
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- steps ----------------------------------------------------------------------------


def _echo(cfg: PipelineConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved.ini").write_text(cfg.echo(), encoding="utf-8")


def _load(cfg: PipelineConfig):
    universes = {}
    if cfg.has_generate:
        universes = dict(drug_universe=range(1, cfg.gen.n_drugs + 1),
                         condition_universe=range(1, cfg.gen.n_conditions + 1))
    cohort = load_cohort_dir(cfg.data_dir, cfg.axis, **universes)
    report = validate(cohort)
    if not report.ok:
        raise DataValidationError("cohort failed validation", report.violations)
    log.info("loaded %d patients, %d eras, %d conditions",
             report.n_patients, report.n_eras, report.n_conditions)
    return cohort


def step_generate(cfg: PipelineConfig) -> None:
    sim = simulate(cfg.gen)
    write_cohort(sim.cohort, sim.truth, cfg.data_dir)
    _echo(cfg, cfg.data_dir)
    log.info("generated %d patients, %d injected occurrences into %s",
             sim.cohort.n_patients, sim.n_injected, cfg.data_dir)


def step_count(cfg: PipelineConfig) -> Path:
    cohort = _load(cfg)
    tables = count(cohort, cfg.delta, cfg.kernel(), cfg.m, cfg.first_era_only,
                   workers=cfg.workers)
    _echo(cfg, cfg.out_dir)
    path = cfg.out_dir / "counts.npz"
    save_counts(tables, path, cohort.drug_universe, cohort.condition_universe)
    return path


def step_rate(cfg: PipelineConfig) -> list[Path]:
    src = cfg.out_dir / "counts.npz"
    if not src.is_file():
        raise ConfigError(f"{src} not found; run the count step first")
    tables, du, cu = load_counts(src, with_universes=True)
    drugs, conds = cfg.scopes(du, cu)
    _echo(cfg, cfg.out_dir)
    paths = []
    for name, rc in (("dpa1", cfg.dpa1), ("dpa2", cfg.dpa2)):
        series = cumulate(rate_all(tables, rc, drugs, conds))
        path = cfg.out_dir / f"rated_{name}.csv"
        write_series(series, path, dense=cfg.dense)
        paths.append(path)
    return paths


def _bag(cfg: PipelineConfig, cohort):
    drugs, conds = cfg.scopes(cohort.drug_universe, cohort.condition_universe)
    kernel = cfg.kernel(cfg.bag.delta_min) if cfg.kernel_kind == "weighted" else None
    result = bag_many(cohort, [cfg.dpa1, cfg.dpa2], cfg.bag, cfg.m, kernel,
                      cfg.first_era_only, drugs, conds, workers=cfg.workers)
    out = cfg.out_dir
    with open(out / "bag_report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "delta", "n_patients"])
        for r in result.replicates:
            w.writerow([r.j, r.delta, r.n_patients])
    # wall times vary from run to run; kept apart from the deterministic outputs
    with open(out / "timings.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "seconds"])
        for r in result.replicates:
            w.writerow([r.j, f"{r.seconds:.4f}"])
    skipped = cfg.bag.k - result.k_effective
    if skipped:
        log.warning("%d of %d replicates had no patients and were skipped", skipped, cfg.bag.k)
    write_series(result.series[0], out / "bagged_dpa1.csv", dense=cfg.dense)
    write_series(result.series[1], out / "bagged_dpa2.csv", dense=cfg.dense)
    return result


def step_bag(cfg: PipelineConfig):
    cohort = _load(cfg)
    _echo(cfg, cfg.out_dir)
    return _bag(cfg, cohort)


def step_fuse(cfg: PipelineConfig, dpa1=None, dpa2=None, output=None) -> Path:
    p1 = Path(dpa1) if dpa1 else cfg.out_dir / "bagged_dpa1.csv"
    p2 = Path(dpa2) if dpa2 else cfg.out_dir / "bagged_dpa2.csv"
    for p in (p1, p2):
        if not p.is_file():
            raise ConfigError(f"{p} not found; run the bag step first")
    a, b = read_series(p1), read_series(p2)
    drugs = sorted({int(x) for s in (a, b) for mat in s for x in mat.drug_ids})
    conds = sorted({int(x) for s in (a, b) for mat in s for x in mat.condition_ids})
    a, b = read_series(p1, drugs, conds), read_series(p2, drugs, conds)
    out = Path(output) if output else cfg.out_dir / "fused.csv"
    _echo(cfg, out.parent)
    write_series(fuse_series(a, b, cfg.ensemble), out, dense=cfg.dense)
    return out


def _evaluate_series(series, truth, out_path: Path):
    per_year, mean = map_by_year(series, truth)
    write_report(per_year, mean, out_path)
    log.info("%s: mean AP %.4f", out_path.name, mean)
    return per_year, mean


def step_evaluate(cfg: PipelineConfig, input_path=None, truth_path=None):
    src = Path(input_path) if input_path else cfg.out_dir / "fused.csv"
    tp = Path(truth_path) if truth_path else cfg.data_dir / "truth.csv"
    for p in (src, tp):
        if not p.is_file():
            raise ConfigError(f"{p} not found")
    truth = load_truth(tp)
    _echo(cfg, cfg.out_dir)
    result = _evaluate_series(read_series(src), truth, cfg.out_dir / f"evaluation_{src.stem}.csv")
    print(f"mean_ap={result[1]:.6f}")
    return result


def _report(cfg: PipelineConfig, series, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    table = plotting.top_pairs(series, cfg.top_k)
    table.to_csv(out_dir / "top_pairs.csv", index=False, float_format="%.6f",
                 lineterminator="\n")
    plotting.plot_trajectories(table, out_dir / "trajectories.png")
    plotting.plot_histogram(series[-1], out_dir / "histogram.png")
    plotting.plot_kernel(cfg.kernel(), out_dir / "kernel.png")
    return out_dir


def step_report(cfg: PipelineConfig, input_path=None) -> Path:
    src = Path(input_path) if input_path else cfg.out_dir / "fused.csv"
    if not src.is_file():
        raise ConfigError(f"{src} not found")
    _echo(cfg, cfg.out_dir)
    return _report(cfg, read_series(src), cfg.out_dir / "report")


def step_pipeline(cfg: PipelineConfig) -> Path:
    if cfg.has_generate:
        step_generate(cfg)
    cohort = _load(cfg)
    _echo(cfg, cfg.out_dir)
    result = _bag(cfg, cohort)
    dpa1, dpa2 = result.series
    ens = fuse_series(dpa1, dpa2, cfg.ensemble)
    write_series(ens, cfg.out_dir / "fused.csv", dense=cfg.dense)
    truth_path = cfg.data_dir / "truth.csv"
    if truth_path.is_file():
        truth = load_truth(truth_path)
        if truth.positives:
            for name, series in (("dpa1", dpa1), ("dpa2", dpa2), ("fused", ens)):
                _evaluate_series(series, truth, cfg.out_dir / f"evaluation_{name}.csv")
    _report(cfg, ens, cfg.out_dir / "report")
    return cfg.out_dir


# -- entry point ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dpasignal", description="Drug/condition signal detection pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", help="sectioned key=value config file")
        p.add_argument("overrides", nargs="*", metavar="section.key=value")
        if name == "fuse":
            p.add_argument("--dpa1", help="occurrence-model score file")
            p.add_argument("--dpa2", help="duration-model score file")
            p.add_argument("--output", help="fused score file")
        if name in ("evaluate", "report"):
            p.add_argument("--input", help="score file (default: fused.csv in out_dir)")
        if name == "evaluate":
            p.add_argument("--truth", help="truth.csv (default: in data_dir)")
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.config, args.overrides)
        t0 = time.perf_counter()
        cmd = args.command
        if cmd == "generate":
            step_generate(cfg)
        elif cmd == "count":
            step_count(cfg)
        elif cmd == "rate":
            step_rate(cfg)
        elif cmd == "bag":
            step_bag(cfg)
        elif cmd == "fuse":
            step_fuse(cfg, args.dpa1, args.dpa2, args.output)
        elif cmd == "evaluate":
            step_evaluate(cfg, args.input, args.truth)
        elif cmd == "report":
            step_report(cfg, args.input)
        else:
            step_pipeline(cfg)
        log.info("%s finished in %.1f s", cmd, time.perf_counter() - t0)
        return EXIT_OK
    except ConfigError as exc:
        return _fail(exc, EXIT_USAGE)
    except DataValidationError as exc:
        return _fail(exc, EXIT_DATA)
    except (SignalError, OSError, ValueError, RuntimeError, MemoryError) as exc:
        return _fail(exc, EXIT_RUNTIME)


def _fail(exc: Exception, code: int) -> int:
    detail = " ".join(str(exc).split())
    print(f"error: {type(exc).__name__}: {detail}", file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
