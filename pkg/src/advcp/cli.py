"""Command line entry point: ``advcp {gen-data,train,rq1,rq2,rq3,solve-game}``.

Exit codes: 0 success, 2 configuration error, 3 data or file-format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, dump_config, load_config
from .dataio import (Dataset, atomic_write_text, fmt_float, generate_synthetic, read_dataset, stratified_split,
                     write_dataset, write_split)
from .errors import ConfigError, EquilibriumError, FormatError, ParameterError
from .experiments import ScoreBank, build_defenses, replication_splits, run_rq1, run_rq2, run_rq3, substream_seed
from .game import PayoffMatrix, solve_zero_sum
from .model import load_model, save_model

log = logging.getLogger("advcp")

REPORT_COLUMNS = ("defense", "attack", "score_kind", "coverage_mean", "coverage_sd", "size_mean", "size_sd",
                  "sscv_mean", "sscv_sd")

EXIT_CONFIG = 2
EXIT_DATA = 3


def _load_data(cfg: RunConfig) -> Dataset:
    if cfg.data_path:
        return read_dataset(cfg.data_path)
    return generate_synthetic(cfg.num_classes, cfg.dim, cfg.per_class, cfg.spread, substream_seed(cfg.seed, "data"))


def _split(cfg: RunConfig, ds: Dataset, mode: str):
    return stratified_split(ds, mode, substream_seed(cfg.seed, "split"))


def _models(cfg: RunConfig, ds, split) -> dict:
    if not cfg.models_dir:
        log.info("training %d models", len(cfg.defenses))
        return build_defenses(ds, split, cfg.defenses, cfg.attack_specs, cfg.train, cfg.seed)
    root = Path(cfg.models_dir)
    models = {}
    for name in ("Normal", *cfg.defenses):
        if name not in models:
            models[name] = load_model(root / f"{name}.json")
    for name, model in models.items():
        if (model.num_classes, model.dim) != (ds.num_classes, ds.dim):
            raise FormatError(f"model {name} does not match the dataset shape", path=root / f"{name}.json")
    return models


def _report_csv(cells: dict, score_kind: str) -> str:
    lines = [",".join(REPORT_COLUMNS)]
    for (defense, attack), stats in cells.items():
        s = stats.summary()
        lines.append(",".join([defense, attack, score_kind, *(fmt_float(s[c]) for c in REPORT_COLUMNS[3:])]))
    return "\n".join(lines) + "\n"


def _prepare(cfg: RunConfig, mode: str):
    ds = _load_data(cfg)
    split = _split(cfg, ds, mode)
    models = _models(cfg, ds, split)
    pool = np.sort(np.concatenate([split.cal, split.eval, split.test]))
    bank = ScoreBank(ds, pool, models, cfg.attacks(), models["Normal"], cfg.score, cfg.attack_target)
    splits = replication_splits(ds, split, cfg.replications, cfg.seed)
    return ds, split, models, bank, splits


def _write_all(out: Path, files: dict[str, str]) -> None:
    # Everything is computed before the first write.
    for name, text in files.items():
        atomic_write_text(out / name, text)


def cmd_gen_data(cfg: RunConfig, out: Path) -> dict[str, str]:
    ds = _load_data(cfg)
    split = _split(cfg, ds, cfg.split_mode)
    write_dataset(ds, out / "dataset.csv")
    write_split(split, out / "split.json")
    return {}


def cmd_train(cfg: RunConfig, out: Path) -> dict[str, str]:
    ds = _load_data(cfg)
    split = _split(cfg, ds, cfg.split_mode)
    models = build_defenses(ds, split, cfg.defenses, cfg.attack_specs, cfg.train, cfg.seed)
    for name, model in models.items():
        save_model(model, out / "models" / f"{name}.json")
    write_split(split, out / "split.json")
    return {}


def cmd_rq1(cfg: RunConfig, out: Path) -> dict[str, str]:
    _, _, _, bank, splits = _prepare(cfg, cfg.split_mode)
    result = run_rq1(bank, splits, list(cfg.defenses), list(cfg.attack_set), cfg.alpha)
    return {"rq1_report.csv": _report_csv(result.cells, cfg.score.label)}


def cmd_rq2(cfg: RunConfig, out: Path) -> dict[str, str]:
    _, _, _, bank, splits = _prepare(cfg, cfg.split_mode)
    result = run_rq2(bank, splits, list(cfg.defenses), list(cfg.attack_set), cfg.alpha)
    calibrations = [c.to_dict() for c in result.calibrations]
    return {
        "rq2_report.csv": _report_csv(result.cells, cfg.score.label),
        "rq2_calibration.json": json.dumps(calibrations, indent=1) + "\n",
    }


def cmd_rq3(cfg: RunConfig, out: Path) -> dict[str, str]:
    _, _, _, bank, splits = _prepare(cfg, "rq3")
    result = run_rq3(bank, splits, list(cfg.defenses), list(cfg.attack_set), cfg.alpha, cfg.seed)
    first = result.replications[0]
    eq_lines = ["replication,value," + ",".join(
        [f"defender.{d}" for d in cfg.defenses] + [f"attacker.{a}" for a in cfg.attack_set])]
    for r, rep in enumerate(result.replications):
        eq = rep.equilibrium
        values = [eq.value, *eq.defender, *eq.attacker]
        eq_lines.append(",".join([str(r), *(fmt_float(v) for v in values)]))
    return {
        "rq3_report.csv": _report_csv(result.cells, cfg.score.label),
        "rq3_payoff_eval.csv": first.eval_payoff.to_csv(),
        "rq3_payoff_test.csv": first.test_payoff.to_csv(),
        "rq3_equilibrium.json": first.equilibrium.to_json(),
        "rq3_equilibria.csv": "\n".join(eq_lines) + "\n",
        "rq3_calibration.json": json.dumps([c.to_dict() for c in first.calibrations], indent=1) + "\n",
    }


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "rq1": cmd_rq1, "rq2": cmd_rq2, "rq3": cmd_rq3}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advcp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (overrides output.dir)")
    p = sub.add_parser("solve-game", help="solve a payoff matrix CSV")
    p.add_argument("matrix")
    p.add_argument("--config", help="accepted for symmetry; unused")
    p.add_argument("--seed", type=int, help="accepted for symmetry; unused")
    p.add_argument("--out", help="also write equilibrium.json here")
    p.add_argument("--all", action="store_true", help="list every equilibrium found")
    return parser


def _solve_game(args) -> int:
    P = PayoffMatrix.load(args.matrix)
    if args.all:
        text = json.dumps([eq.to_dict() for eq in solve_zero_sum(P, all_equilibria=True)], indent=1) + "\n"
    else:
        text = solve_zero_sum(P).to_json()
    if args.out:
        atomic_write_text(Path(args.out) / "equilibrium.json", text)
    sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "solve-game":
            return _solve_game(args)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["output.dir"] = args.out
        cfg = load_config(args.config, overrides)
        out = Path(cfg.output_dir)
        files = COMMANDS[args.command](cfg, out)
        files["config_resolved.txt"] = dump_config(cfg)
        _write_all(out, files)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ParameterError, EquilibriumError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
