"""Command-line pipeline: suite -> frames -> train -> eval/compare, plus the shift demo.

Every artifact-producing command writes ``<output>.manifest.json`` next to its
main output.  Manifests carry no timestamps, so two identical runs produce
identical manifests as well as identical artifacts.

The ``cmd_*`` functions are the programmatic entry points; ``main`` only parses
arguments and maps exceptions onto exit codes.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .errors import ContractViolation, MalformedInputError, RcirlError
from .evaluation import comparison_csv, evaluate_suite
from .sampler import (
    FRAME_FORMAT_VERSION,
    DPResolution,
    GroundTruthReward,
    SamplerConfig,
    SuiteConfig,
    build_frame,
    generate_scenario_suite,
    read_frame_records,
    split_scenarios,
    write_frames,
)
from .scenario import load_suite, save_suite
from .shiftdemo import DEMO_SEED, shift_report
from .training import TrainConfig, ingest_frames, train_gan_baseline, train_rcirl
from .valuenet import MODEL_FORMAT_VERSION, load_model, save_model

log = logging.getLogger("rcirl")

REPO_SEED = 2024
DEFAULT_HOLDOUT = 50


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    inputs: dict = field(default_factory=dict)  # path -> sha256
    outputs: list = field(default_factory=list)
    version: str = __version__

    def to_json(self) -> str:
        return json.dumps({"command": self.command, "config": self.config, "seed": self.seed,
                           "inputs": self.inputs, "outputs": self.outputs, "version": self.version},
                          indent=1, sort_keys=True) + "\n"

    def write(self, main_output) -> Path:
        path = Path(str(main_output) + ".manifest.json")
        path.write_text(self.to_json())
        return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digests(*paths) -> dict:
    return {str(p): sha256_file(p) for p in paths if p is not None}


def _read_json(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedInputError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedInputError(f"config {path} must be a JSON object")
    return doc


def _build(cls, d: dict, what: str):
    try:
        return cls.from_dict(d)
    except TypeError as exc:
        raise MalformedInputError(f"bad {what} config: {exc}") from exc


# -- commands -------------------------------------------------------------------

def cmd_suite(out, seed: int = REPO_SEED, config_path=None) -> Path:
    cfg = _build(SuiteConfig, _read_json(config_path), "suite")
    scenarios = generate_scenario_suite(cfg, seed)
    save_suite(out, scenarios)
    RunManifest("suite", cfg.to_dict(), seed, _digests(config_path), [str(out)]).write(out)
    log.info("wrote %d scenarios to %s", len(scenarios), out)
    return Path(out)


def cmd_frames(suite_path, out, seed: int = REPO_SEED, config_path=None, n_holdout: int | None = None) -> Path:
    """Synthetic expert plus sampled query for every scenario; features are recomputed at ingest.

    Config keys: ``sampler``, ``gt_reward``, ``dp_resolution`` (objects) and
    ``n_holdout``.  The sampler seed and the split seed both come from ``seed``.
    """
    doc = _read_json(config_path)
    unknown = set(doc) - {"sampler", "gt_reward", "dp_resolution", "n_holdout"}
    if unknown:
        raise MalformedInputError(f"unknown frames config keys: {sorted(unknown)}")
    sampler_cfg = _build(SamplerConfig, {**doc.get("sampler", {}), "seed": seed}, "sampler")
    gt = _build(GroundTruthReward, doc.get("gt_reward", {}), "gt_reward")
    try:
        res = DPResolution(**doc.get("dp_resolution", {}))
    except TypeError as exc:
        raise MalformedInputError(f"bad dp_resolution config: {exc}") from exc
    n_holdout = n_holdout if n_holdout is not None else int(doc.get("n_holdout", DEFAULT_HOLDOUT))
    scenarios = load_suite(suite_path)
    split = split_scenarios(scenarios, min(n_holdout, len(scenarios)), seed)
    n = write_frames(out, (build_frame(sc, gt, sampler_cfg, res, split[sc.id]) for sc in scenarios))
    config = {"sampler": sampler_cfg.to_dict(), "gt_reward": gt.to_dict(), "dp_resolution": res.to_dict(),
              "n_holdout": n_holdout}
    RunManifest("frames", config, seed, _digests(suite_path, config_path), [str(out)]).write(out)
    log.info("wrote %d frames to %s", n, out)
    return Path(out)


def cmd_train(frames_path, suite_path, out, method: str = "rcirl", seed: int = REPO_SEED,
              config_path=None) -> Path:
    doc = _read_json(config_path)
    cfg = _build(TrainConfig, {**doc, "seed": seed}, "training")
    frames = ingest_frames(frames_path, load_suite(suite_path), splits=("train",))
    if len(frames) == 0:
        raise ContractViolation(f"no training frames in {frames_path}")
    trainer = {"rcirl": train_rcirl, "gan": train_gan_baseline}[method]
    model, report = trainer(frames, cfg)
    save_model(model, out)
    report_path = Path(str(out) + ".training.csv")
    report_path.write_text(report.to_csv())
    config = {"method": method, "train": cfg.to_dict(), "frames_kept": frames.kept,
              "frames_dropped": frames.dropped, "best_epoch": report.best_epoch}
    RunManifest("train", config, seed, _digests(frames_path, suite_path, config_path),
                [str(out), str(report_path)]).write(out)
    return Path(out)


def _eval_inputs(suite_path, frames_path, model):
    """Scenarios to run the selector on, plus holdout frames for expert-rank statistics."""
    scenarios = load_suite(suite_path)
    if frames_path is None:
        return scenarios, None
    hold_ids = {r.scenario_id for r in read_frame_records(frames_path) if r.split == "holdout"}
    scenarios = [sc for sc in scenarios if sc.id in hold_ids]
    if not scenarios:
        raise ContractViolation(f"{frames_path} has no holdout scenarios from {suite_path}")
    holdout = ingest_frames(frames_path, scenarios, model.norm_table, splits=("holdout",))
    return scenarios, list(holdout) or None


def cmd_eval(model_path, suite_path, out, frames_path=None, seed: int = REPO_SEED) -> Path:
    """Selector metrics (JSON) plus a one-row-per-metric CSV next to it."""
    model = load_model(model_path)
    scenarios, holdout = _eval_inputs(suite_path, frames_path, model)
    sampler_cfg = SamplerConfig(seed=seed)
    report = evaluate_suite(scenarios, model, sampler_cfg, holdout)
    Path(out).write_text(report.to_json())
    csv_path = Path(str(out) + ".csv")
    csv_path.write_text(report.to_csv())
    RunManifest("eval", {"sampler": sampler_cfg.to_dict(), "n_scenarios": len(scenarios)}, seed,
                _digests(model_path, suite_path, frames_path), [str(out), str(csv_path)]).write(out)
    return Path(out)


def cmd_compare(model_paths: dict, suite_path, out, frames_path=None, seed: int = REPO_SEED) -> Path:
    reports = {}
    for name, path in model_paths.items():
        model = load_model(path)
        scenarios, holdout = _eval_inputs(suite_path, frames_path, model)
        reports[name] = evaluate_suite(scenarios, model, SamplerConfig(seed=seed), holdout)
    Path(out).write_text(comparison_csv(reports))
    RunManifest("compare", {"models": {k: str(v) for k, v in model_paths.items()}}, seed,
                _digests(*model_paths.values(), suite_path, frames_path), [str(out)]).write(out)
    return Path(out)


def cmd_shiftdemo(out_dir, seed: int = DEMO_SEED) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = shift_report(seed)
    points, directions, summary = out_dir / "points.csv", out_dir / "directions.csv", out_dir / "shift_report.json"
    points.write_text(report.points_csv())
    directions.write_text(report.directions_csv())
    summary.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    RunManifest("shiftdemo", {}, seed, {}, [str(points), str(directions), str(summary)]).write(summary)
    return summary


# -- argument parsing -------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rcirl", description="Rank-conditioned reward learning for speed profiles.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_, seed_default=REPO_SEED):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--seed", type=int, default=seed_default, help=f"root seed (default {seed_default})")
        return sp

    sp = add("suite", "generate a synthetic scenario suite (JSON)")
    sp.add_argument("--config", help="SuiteConfig JSON (family counts, ranges)")
    sp.add_argument("--out", required=True, help="output suite file")

    sp = add("frames", "build expert + sampled-query frames (JSONL) for a suite")
    sp.add_argument("--suite", required=True, help="suite file from 'rcirl suite'")
    sp.add_argument("--config", help="JSON with optional sampler / gt_reward / dp_resolution / n_holdout")
    sp.add_argument("--holdout", type=int, help=f"number of holdout scenarios (default {DEFAULT_HOLDOUT})")
    sp.add_argument("--out", required=True, help="output frame file")

    sp = add("train", "train a value model on the train split of a frame file")
    sp.add_argument("--frames", required=True, help="frame file")
    sp.add_argument("--suite", required=True, help="suite the frames were built from")
    sp.add_argument("--method", choices=("rcirl", "gan"), default="rcirl",
                    help="frame-conditioned ranking loss (rcirl) or pooled cross entropy (gan)")
    sp.add_argument("--config", help="TrainConfig JSON")
    sp.add_argument("--out", required=True, help="output model file (JSON)")

    sp = add("eval", "run the online selector and score it (holdout scenarios if --frames is given)")
    sp.add_argument("--model", required=True)
    sp.add_argument("--suite", required=True)
    sp.add_argument("--frames", help="frame file; adds expert-rank statistics on its holdout split")
    sp.add_argument("--out", required=True, help="output report (JSON); a CSV is written alongside")

    sp = add("compare", "side-by-side metric table for several models")
    sp.add_argument("--model", action="append", required=True, metavar="NAME=PATH",
                    help="model to compare; repeatable")
    sp.add_argument("--suite", required=True)
    sp.add_argument("--frames")
    sp.add_argument("--out", required=True, help="output CSV")

    sp = add("shiftdemo", "two-frame max-margin background-shift demo (CSV + JSON)", DEMO_SEED)
    sp.add_argument("--out", required=True, help="output directory")

    sub.add_parser("version", help="print the tool and file-format versions")
    return p


def _parse_models(specs) -> dict:
    out = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep or not name or not path:
            raise MalformedInputError(f"--model expects NAME=PATH, got {spec!r}")
        out[name] = path
    return out


def run(args) -> None:
    if args.command == "version":
        print(f"rcirl {__version__}")
        print(f"model format_version {MODEL_FORMAT_VERSION}")
        print(f"frame format_version {FRAME_FORMAT_VERSION}")
    elif args.command == "suite":
        cmd_suite(args.out, args.seed, args.config)
    elif args.command == "frames":
        cmd_frames(args.suite, args.out, args.seed, args.config, args.holdout)
    elif args.command == "train":
        cmd_train(args.frames, args.suite, args.out, args.method, args.seed, args.config)
    elif args.command == "eval":
        cmd_eval(args.model, args.suite, args.out, args.frames, args.seed)
    elif args.command == "compare":
        cmd_compare(_parse_models(args.model), args.suite, args.out, args.frames, args.seed)
    elif args.command == "shiftdemo":
        cmd_shiftdemo(args.out, args.seed)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors exit 1, --help exits 0
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except RcirlError as exc:
        print(f"rcirl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"rcirl: missing input: {exc}", file=sys.stderr)
        return MalformedInputError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
