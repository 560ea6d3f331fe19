"""Command-line driver: single runs, grid sweeps, ablations, report tables."""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from flaegis.attacks import ATTACK_KINDS
from flaegis.sim import (
    ExperimentError,
    ablation_suite,  # noqa: F401  (re-export for library users of the driver)
    experiment_from_dict,
    report_json,
    rounds_csv_header,
    rounds_csv_rows,
    run_experiment,
)

log = logging.getLogger("flaegis")

ABLATION_DEFENSES = ("flaegis", "flaegis_no_sax", "flaegis_no_fft")
DEFAULT_FRACTIONS = (0.2, 0.4)

# config keys that must be spelled out rather than defaulted silently
REQUIRED_KEYS = (("attack", "kind"),)


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _setup_logging():
    level_name = os.environ.get("FLAEGIS_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        print(f"ignoring unknown FLAEGIS_LOG value {level_name!r}", file=sys.stderr)
        level_name = "info"
    logging.basicConfig(stream=sys.stderr, level=levels[level_name],
                        format="%(levelname)s %(message)s", force=True)


def _load_doc(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise CliError(2, f"config file not found: {path}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise CliError(2, f"malformed JSON in {path}: line {e.lineno} column {e.colno}: {e.msg}")
    if not isinstance(doc, dict):
        raise CliError(2, f"config root in {path} must be a JSON object")
    return doc


def _build_cfg(doc: dict, seed=None):
    for section, key in REQUIRED_KEYS:
        if key not in doc.get(section, {}):
            raise CliError(2, f"missing field '{key}' in section '{section}'")
    body = {k: v for k, v in doc.items() if k != "grid"}
    if seed is not None:
        body["master_seed"] = seed
    try:
        return experiment_from_dict(body)
    except (ValueError, TypeError) as e:
        raise CliError(2, f"invalid config: {e}")


def _write_outputs(out_dir: Path, report) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report_json(report) + "\n")
    lines = [rounds_csv_header()] + rounds_csv_rows(report)
    (out_dir / "rounds.csv").write_text("\n".join(lines) + "\n")


def _log_rounds(report) -> None:
    for r in report.rounds:
        log.debug("round %d detection=%.4f accuracy=%.4f flagged=%d",
                  r.round_index, r.detection_accuracy, r.model_accuracy,
                  len(r.flagged_ids))


def cmd_run(args) -> int:
    doc = _load_doc(args.config)
    cfg = _build_cfg(doc, seed=args.seed)
    try:
        report = run_experiment(cfg)
    except ExperimentError as e:
        print(f"experiment failed: {e}", file=sys.stderr)
        return 1
    _log_rounds(report)
    out = Path(args.out)
    _write_outputs(out, report)
    log.info("wrote %s and %s", out / "report.json", out / "rounds.csv")
    return 0


def _grid_cells(doc: dict):
    grid = doc.get("grid")
    if grid is None:
        raise CliError(2, "sweep config needs a 'grid' section")
    known = {"defenses", "attacks", "fractions"}
    for key in grid:
        if key not in known:
            raise CliError(2, f"unknown field '{key}' in section 'grid'")
    defenses = grid.get("defenses", [])
    attacks = grid.get("attacks", list(ATTACK_KINDS))
    fractions = grid.get("fractions", list(DEFAULT_FRACTIONS))
    cells = list(itertools.product(defenses, attacks, fractions))
    if not cells:
        raise CliError(2, "empty grid: every axis needs at least one value")
    return cells


def _cell_dir(out: Path, cell) -> Path:
    defense, attack, fraction = cell
    return out / f"{defense}__{attack}__{fraction}"


def _cell_cfg(base, cell):
    defense, attack, fraction = cell
    atk = dataclasses.replace(base.attack, kind=attack,
                              omniscient=(attack == "mimic") or base.attack.omniscient)
    return dataclasses.replace(base, defense=defense, attack=atk,
                               malicious_fraction=float(fraction))


def _run_cell(doc: dict, seed, cell, cell_dir: str) -> None:
    cfg = _cell_cfg(_build_cfg(doc, seed=seed), cell)
    report = run_experiment(cfg)
    _write_outputs(Path(cell_dir), report)


def _write_index(out: Path, cells) -> int:
    rows = ["defense,attack,fraction,dir,detection_accuracy,final_accuracy"]
    done = 0
    for cell in cells:
        cdir = _cell_dir(out, cell)
        rpath = cdir / "report.json"
        if not rpath.is_file():
            continue
        rep = json.loads(rpath.read_text())
        det = rep["mean_detection_accuracy"]
        rows.append(",".join(str(x) for x in (
            cell[0], cell[1], cell[2], cdir.name,
            "" if det is None else det, rep["final_accuracy"])))
        done += 1
    (out / "index.csv").write_text("\n".join(rows) + "\n")
    return done


def _execute_cells(doc, cells, out: Path, seed, jobs: int) -> int:
    pending = [c for c in cells if not (_cell_dir(out, c) / "report.json").is_file()]
    for c in cells:
        if c not in pending:
            log.info("skipping completed cell %s", _cell_dir(out, c).name)
    if jobs > 1 and pending:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_cell, doc, seed, c, str(_cell_dir(out, c)))
                       for c in pending]
            for f in futures:
                f.result()
    else:
        for c in pending:
            _run_cell(doc, seed, c, str(_cell_dir(out, c)))
            log.info("finished cell %s", _cell_dir(out, c).name)
    return _write_index(out, cells)


def cmd_sweep(args) -> int:
    doc = _load_doc(args.config)
    cells = _grid_cells(doc)
    _build_cfg(doc)  # validate the base before spending time on cells
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    done = _execute_cells(doc, cells, out, None, args.jobs)
    log.info("sweep complete: %d/%d cells", done, len(cells))
    return 0


def cmd_ablate(args) -> int:
    doc = _load_doc(args.config)
    grid = doc.get("grid", {})
    attacks = grid.get("attacks", list(ATTACK_KINDS))
    fractions = grid.get("fractions", list(DEFAULT_FRACTIONS))
    if not attacks or not fractions:
        raise CliError(2, "empty grid: every axis needs at least one value")
    _build_cfg(doc)
    cells = list(itertools.product(ABLATION_DEFENSES, attacks, fractions))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    done = _execute_cells(doc, cells, out, None, args.jobs)
    log.info("ablation complete: %d/%d cells", done, len(cells))
    return 0


def _collect_reports(out: Path):
    rows = {}
    for rpath in sorted(out.rglob("report.json")):
        rep = json.loads(rpath.read_text())
        cfg = rep["config"]
        key = (cfg["defense"], cfg["attack"]["kind"], cfg["malicious_fraction"])
        rows.setdefault(key, []).append(rep)
    return rows


def cmd_report(args) -> int:
    out = Path(args.out)
    groups = _collect_reports(out)
    if not groups:
        print(f"no report.json files under {out}", file=sys.stderr)
        return 1
    header = f"{'defense':<16} {'attack':<12} {'fraction':>8} {'detection':>10} {'final_acc':>10}"
    print(header)
    print("-" * len(header))
    lines = ["defense,attack,fraction,n_runs,detection_accuracy,final_accuracy"]
    for key in sorted(groups):
        reps = groups[key]
        dets = [r["mean_detection_accuracy"] for r in reps
                if r["mean_detection_accuracy"] is not None]
        det = sum(dets) / len(dets) if dets else None
        acc = sum(r["final_accuracy"] for r in reps) / len(reps)
        det_txt = f"{det:.4f}" if det is not None else "n/a"
        print(f"{key[0]:<16} {key[1]:<12} {key[2]:>8} {det_txt:>10} {acc:>10.4f}")
        lines.append(",".join(str(x) for x in (
            key[0], key[1], key[2], len(reps),
            "" if det is None else det, acc)))
    (out / "summary.csv").write_text("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flaegis",
                                description="federated-learning poisoning lab driver")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=".")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a defense x attack x fraction grid")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.set_defaults(func=cmd_sweep)

    ablate = sub.add_parser("ablate", help="run detection/aggregation ablations")
    ablate.add_argument("--config", required=True)
    ablate.add_argument("--out", required=True)
    ablate.add_argument("--jobs", type=int, default=1)
    ablate.set_defaults(func=cmd_ablate)

    report = sub.add_parser("report", help="summarize stored reports")
    report.add_argument("--out", required=True)
    report.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
