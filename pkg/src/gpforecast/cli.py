"""Command-line entry point: ``extract``, ``synth``, ``evaluate`` and ``report``.

Every setting is a flat config key.  Values come from built-in defaults,
then an optional ``--config`` key=value file, then command-line flags
(``--budget 80`` sets ``budget``).  Unknown keys in the file are fatal.

Exit codes: 0 success, 1 other error, 2 bad input/config format,
3 no maneuvers, 4 refusing to overwrite an existing corpus.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from .evaluation import (
    EvalSettings,
    EvaluationGrid,
    emit_report,
    read_report,
    run_experiment,
)
from .exceptions import FormatError, GpForecastError, TooManyBadRows
from .gp import LinearKernelParams
from .history import INDEX_FILE, build_bank, load_bank, save_bank
from .ingest import extract_lane_changes, normalize, parse_trajectories, read_key_value, synth_corpus

logger = logging.getLogger("gpforecast")

EXIT_OK, EXIT_ERROR, EXIT_FORMAT, EXIT_EMPTY, EXIT_EXISTS = 0, 1, 2, 3, 4


def _key(default, help):
    return field(default=default, metadata={"help": help})


@dataclass
class RunConfig:
    input: str = _key("", "raw trajectory file (NGSIM layout) for extract")
    corpus_dir: str = _key("corpus", "directory of maneuver window files and index.txt")
    out_dir: str = _key("results", "directory receiving fig3/fig4/fig5 CSVs and summary.txt")
    col_vehicle_id: int = _key(0, "0-based column of the vehicle id")
    col_frame_id: int = _key(1, "0-based column of the 10 Hz frame id")
    col_lateral_pos: int = _key(4, "0-based column of the lateral position in feet (Local_X)")
    col_lane_id: int = _key(13, "0-based column of the lane id")
    disp_min: float = _key(7.0, "smallest accepted |lateral displacement| over a window, ft")
    disp_max: float = _key(14.0, "largest accepted |lateral displacement| over a window, ft")
    synth_n: int = _key(40, "number of synthetic maneuvers")
    synth_seed: int = _key(7, "seed of the synthetic corpus")
    synth_noise: float = _key(0.1, "white-noise std of synthetic positions, ft")
    synth_jitter: float = _key(0.2, "relative jitter of synthetic displacement, rate and centre")
    sigma_l: float = _key(3.0, "initial kernel scale, ft/s")
    c: float = _key(0.0, "initial kernel offset, s")
    noise_var: float = _key(0.01, "initial observation-noise variance, ft^2")
    fix_c: bool = _key(False, "keep the kernel offset at its initial value")
    budget: int = _key(50, "likelihood evaluations per forecast-time hyperparameter fit")
    bank_budget: int = _key(200, "likelihood evaluations per model-bank fit")
    seed: int = _key(0, "optimizer seed")
    models: str = _key("baseline,gp,compound", "comma list from baseline, gp, compound")
    threshold: float = _key(1.0, "compound model switches to the GP at this horizon, s")
    velocity_window: int = _key(2, "samples used for the baseline velocity estimate")
    refit: str = _key("prefix", "prefix: re-fit at every prefix end; start: once per maneuver")
    history_mode: str = _key("augment", "augment: train on history; model_bank: warm start only")
    pooling: str = _key("records", "fig3 pooling: records (all records per horizon) or maneuver")
    prefix_ends: str = _key("all", "forecast issue times: 'all' or comma list of seconds")
    horizons: str = _key("all", "horizons: 'all' (0.1..3.0 s) or comma list of seconds")
    max_maneuvers: int = _key(40, "evaluate only the first N maneuvers in trip order (0 = all)")
    workers: int = _key(1, "parallel worker processes for evaluation")
    force: bool = _key(False, "overwrite an existing corpus directory")

    def settings(self) -> EvalSettings:
        return EvalSettings(
            models=tuple(m.strip() for m in self.models.split(",") if m.strip()),
            threshold=self.threshold,
            budget=self.budget,
            refit=self.refit,
            history_mode=self.history_mode,
            velocity_window=self.velocity_window,
            init=self.init_params(),
            fix_c=self.fix_c,
            seed=self.seed,
            pooling=self.pooling,
        )

    def init_params(self) -> LinearKernelParams:
        return LinearKernelParams(self.sigma_l, self.c, self.noise_var)

    def grid(self) -> EvaluationGrid:
        kw = {}
        if self.prefix_ends != "all":
            kw["prefix_ends"] = _samples(self.prefix_ends)
        if self.horizons != "all":
            kw["horizons"] = _samples(self.horizons)
        return EvaluationGrid(**kw)

    def column_map(self) -> dict:
        return {
            "vehicle_id": self.col_vehicle_id,
            "frame_id": self.col_frame_id,
            "lateral_pos": self.col_lateral_pos,
            "lane_id": self.col_lane_id,
        }

    def echo(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _samples(text: str) -> tuple[int, ...]:
    return tuple(round(float(v) * 10) for v in text.split(",") if v.strip())


def _coerce(name: str, raw: str):
    ftype = {f.name: f.type for f in fields(RunConfig)}[name]
    if ftype == "bool":
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if ftype == "int":
        return int(raw)
    if ftype == "float":
        return float(raw)
    return str(raw)


def resolve_config(path: str | None, overrides: dict) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    known = {f.name for f in fields(RunConfig)}
    values = {}
    if path:
        for key, raw in read_key_value(path).items():
            if key not in known:
                raise FormatError(f"{path}: unknown config key {key!r}")
            values[key] = _coerce(key, raw)
    for key, raw in overrides.items():
        values[key] = _coerce(key, raw) if isinstance(raw, str) else raw
    return RunConfig(**values)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    group = parser.add_argument_group("config keys (flag > config file > default)")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        help_text = f"{f.metadata['help']} [{f.name}, default: {f.default!r}]"
        if f.type == "bool":
            group.add_argument(flag, dest=f.name, action="store_const", const=True,
                               default=argparse.SUPPRESS, help=help_text)
        else:
            group.add_argument(flag, dest=f.name, default=argparse.SUPPRESS,
                               metavar=f.name.upper(), help=help_text)


def _overrides(ns: argparse.Namespace) -> dict:
    known = {f.name for f in fields(RunConfig)}
    return {k: v for k, v in vars(ns).items() if k in known}


def _write_corpus(windows, cfg: RunConfig) -> int:
    out = Path(cfg.corpus_dir)
    if out.exists() and any(out.iterdir()):
        if not cfg.force:
            logger.error("%s already exists; pass --force to overwrite", out)
            return EXIT_EXISTS
        shutil.rmtree(out)
    if not windows:
        logger.error("no lane-change maneuvers extracted")
        return EXIT_EMPTY
    bank = build_bank([normalize(w) for w in windows], cfg.init_params(), cfg.bank_budget, cfg.seed)
    save_bank(bank, out)
    logger.info("wrote %d maneuvers to %s", len(bank), out)
    print(f"{len(bank)} maneuvers -> {out}")
    return EXIT_OK


def _synth_windows(cfg: RunConfig):
    return synth_corpus(
        cfg.synth_n, cfg.synth_seed, cfg.synth_noise, cfg.synth_jitter,
        band=(cfg.disp_min, cfg.disp_max),
    )


_SYNTH_KEYS = {"n": "synth_n", "seed": "synth_seed", "noise": "synth_noise", "jitter": "synth_jitter"}


def cmd_extract(cfg: RunConfig, synth: list[str] | None = None) -> int:
    if synth is not None:
        for item in synth:
            key, sep, val = item.partition("=")
            if not sep or key not in _SYNTH_KEYS:
                raise FormatError(f"--synth expects n=, seed=, noise=, jitter= items, got {item!r}")
            setattr(cfg, _SYNTH_KEYS[key], _coerce(_SYNTH_KEYS[key], val))
        return cmd_synth(cfg)
    if not cfg.input:
        raise FormatError("extract needs --input (or --synth)")
    if not Path(cfg.input).exists():
        raise FormatError(f"input file {cfg.input} does not exist")
    parsed = parse_trajectories(cfg.input, cfg.column_map())
    windows = extract_lane_changes(parsed.rows, (cfg.disp_min, cfg.disp_max))
    logger.info("%d rows, %d malformed, %d windows", len(parsed.rows), parsed.n_malformed, len(windows))
    return _write_corpus(windows, cfg)


def cmd_synth(cfg: RunConfig) -> int:
    return _write_corpus(_synth_windows(cfg), cfg)


def cmd_evaluate(cfg: RunConfig) -> int:
    corpus = Path(cfg.corpus_dir)
    if not (corpus / INDEX_FILE).exists():
        logger.error("no corpus index at %s", corpus / INDEX_FILE)
        return EXIT_EMPTY
    bank = load_bank(corpus)
    if cfg.max_maneuvers > 0 and len(bank) > cfg.max_maneuvers:
        bank = bank.snapshot(cfg.max_maneuvers)
    if len(bank) == 0:
        logger.error("corpus %s is empty", corpus)
        return EXIT_EMPTY
    report, _ = run_experiment(bank, cfg.grid(), cfg.settings(), max(1, cfg.workers), cfg.echo())
    paths = emit_report(report, cfg.out_dir)
    print(f"{report.n_records} records, {sum(report.failures.values())} failures, "
          f"{report.leakage_violations} leakage violations -> {paths[0].parent}")
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    report = read_report(cfg.out_dir)
    models = sorted({r.model for r in report.fig3}, key=("baseline", "gp", "compound").index)
    by = {(r.model, r.horizon): r.p95 for r in report.fig3}
    print("p95 absolute error (ft) vs horizon")
    print(f"{'horizon_s':>9} {'rate_hz':>8} " + " ".join(f"{m:>9}" for m in models))
    for h in sorted({r.horizon for r in report.fig3}):
        rate = next(r.reception_rate for r in report.fig3 if r.horizon == h)
        vals = " ".join(f"{by.get((m, h), float('nan')):9.3f}" for m in models)
        print(f"{h:9.1f} {rate:8.3f} {vals}")
    for name, title in (("fig4", "2-3 s horizons, first 1 s"), ("fig5", "all horizons")):
        rows = getattr(report, name)
        if not rows:
            continue
        print(f"\np95 absolute error (ft) vs history count ({title})")
        hm = sorted({r.model for r in rows}, key=("baseline", "gp", "compound").index)
        hb = {(r.model, r.history_count): r.p95 for r in rows}
        print(f"{'history':>7} " + " ".join(f"{m:>9}" for m in hm))
        for c in sorted({r.history_count for r in rows}):
            print(f"{c:7d} " + " ".join(f"{hb.get((m, c), float('nan')):9.3f}" for m in hm))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpforecast",
        description="Linear-kernel GP lane-change forecasting and benchmark harness.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract lane-change windows from a trajectory file")
    p.add_argument("--synth", nargs="*", metavar="KEY=VALUE",
                   help="generate a synthetic corpus instead (n=, seed=, noise=, jitter=)")
    _add_config_flags(p)
    p = sub.add_parser("synth", help="write a synthetic lane-change corpus")
    _add_config_flags(p)
    p = sub.add_parser("evaluate", help="run the forecast benchmark on a corpus")
    _add_config_flags(p)
    p = sub.add_parser("report", help="print the tables of a finished evaluation")
    _add_config_flags(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(ns.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(ns.config, _overrides(ns))
        if ns.command == "extract":
            return cmd_extract(cfg, ns.synth)
        if ns.command == "synth":
            return cmd_synth(cfg)
        if ns.command == "evaluate":
            return cmd_evaluate(cfg)
        return cmd_report(cfg)
    except (FormatError, TooManyBadRows, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_FORMAT
    except (GpForecastError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
