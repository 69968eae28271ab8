"""Command-line driver: ``jointpad <command>``.

Stages communicate through files only.  Every artifact records the hash of
the configuration sections that produced it; inputs whose hash disagrees with
the current configuration are refused unless ``--force`` is given.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import lstm, pipeline, sim
from .config import ConfigError, RunConfig, load_config
from .core import (
    Dataset,
    SessionFormatError,
    ValidationError,
    load_session,
    partition,
    save_session,
)
from .transfer import EmptySelection

logger = logging.getLogger("jointpad")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST = "manifest.csv"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# provenance


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def dir_digest(root: Path) -> str:
    return file_digest(root / MANIFEST)


def provenance_line(stage: str, config_hash: str, seed: int, inputs: dict[str, str]) -> str:
    ins = " ".join(f"{k}:{v}" for k, v in sorted(inputs.items()))
    return f"# stage={stage} config_hash={config_hash} seed={seed} inputs={ins or '-'}\n"


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence], provenance: str) -> None:
    buf = io.StringIO()
    buf.write(provenance)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue(), newline="")


def _cell(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


def check_hash(found: str | None, expected: str, what: str, force: bool) -> None:
    if found == expected:
        return
    msg = f"{what} was produced with config hash {found}, current configuration gives {expected}"
    if not force:
        raise DataError(msg + " (use --force to override)")
    logger.warning("%s; continuing because of --force", msg)


# ---------------------------------------------------------------------------
# dataset directories


def read_manifest(root: Path) -> tuple[list[dict], str | None]:
    path = root / MANIFEST
    if not path.exists():
        raise DataError(f"no dataset at {root}: run `jointpad sim gen --out {root}` first")
    lines = path.read_text().splitlines()
    found = None
    if lines and lines[0].startswith("#"):
        for tok in lines[0][1:].split():
            if tok.startswith("config_hash="):
                found = tok.split("=", 1)[1]
        lines = lines[1:]
    return list(csv.DictReader(lines)), found


def load_dataset(root: Path, cfg: RunConfig, force: bool) -> Dataset:
    rows, found = read_manifest(root)
    check_hash(found, cfg.stage_hash("sim"), f"dataset {root}", force)
    if not rows:
        raise DataError(f"dataset {root} lists no sessions")
    return Dataset([load_session(root / r["file"]) for r in rows])


def split_dataset(data: Dataset, cfg: RunConfig) -> Dataset:
    return partition(data, cfg.split.fractions, cfg.seed)


def load_model(path: Path, cfg: RunConfig, force: bool) -> tuple[lstm.ModelParams, lstm.ModelConfig, dict]:
    if not path.exists():
        raise DataError(f"no model at {path}: run `jointpad train --out {path}` first")
    try:
        params, mcfg, extra = lstm.load_checkpoint(path)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    check_hash(extra.get("apply_hash"), cfg.stage_hash("apply"), f"model {path}", force)
    if mcfg.channels != cfg.prep.sensors or mcfg.window != cfg.prep.window:
        raise DataError(
            f"model expects {mcfg.channels} sensors and window {mcfg.window}; "
            f"configuration has {cfg.prep.sensors} and {cfg.prep.window}"
        )
    return params, mcfg, extra


# ---------------------------------------------------------------------------
# commands


def cmd_sim(args, cfg: RunConfig) -> None:
    out = Path(args.out)
    s = cfg.sim
    base = sim.SimConfig(s.d_eta, s.d_beta, s.templates, s.users, s.duration, s.rate, cfg.seed)
    for name in s.templates:
        if name not in sim.TEMPLATES:
            raise UsageError(f"unknown motion template {name!r}; known: {', '.join(sim.TEMPLATES)}")
    overrides = {}
    if s.noise_scale is not None:
        overrides["noise_scale"] = s.noise_scale
    if s.chaos_scale is not None:
        overrides["chaos_scale"] = s.chaos_scale
    if s.profile_seed:
        profiles = {
            f"p{s.profile_seed}u{k}": sim.random_profile(sim.derive_seed(s.profile_seed, k) % 2**31, **overrides)
            for k in range(s.users)
        }
    else:
        profiles = {k: replace(v, **overrides) for k, v in sim.user_profiles(s.users, cfg.seed).items()}
    data = sim.simulate(base, profiles)
    chash = cfg.stage_hash("sim")
    (out / "sessions").mkdir(parents=True, exist_ok=True)
    rows = []
    for sess in data.sessions:
        name = f"sessions/{sess.placement.key}_{sess.motion_id}_{sess.user_id}.csv"
        save_session(sess.with_readings(sess.readings, config_hash=chash), out / name)
        rows.append((name, sess.placement.eta, sess.placement.beta, sess.user_id, sess.motion_id, len(sess)))
    write_csv(
        out / MANIFEST,
        ["file", "eta_cm", "beta_deg", "user_id", "motion_id", "frames"],
        rows,
        provenance_line("sim", chash, cfg.seed, {}),
    )
    print(f"wrote {len(rows)} sessions to {out}")


def cmd_rank(args, cfg: RunConfig) -> None:
    root = Path(args.data)
    data = load_dataset(root, cfg, args.force)
    prep = cfg.prep_config()
    n = cfg.prep.sensors
    rows = []
    for sess in data.sessions:
        r = pipeline.prepare(sess, prep).ranking
        order = " ".join(str(i + 1) for i in r.order)
        rows.append([sess.placement.eta, sess.placement.beta, *map(float, r.entropies), order, sess.user_id, sess.motion_id])
    write_csv(
        Path(args.out),
        ["eta", "beta", *[f"e{i + 1}" for i in range(n)], "order", "user_id", "motion_id"],
        rows,
        provenance_line("rank", cfg.stage_hash("rank"), cfg.seed, {"data": dir_digest(root)}),
    )
    print(f"ranked {len(rows)} sessions -> {args.out}")


def _checkpoint_extra(stage: str, cfg: RunConfig, inputs: dict[str, str], **more) -> dict:
    return {
        "stage": stage,
        "config_hash": cfg.stage_hash(stage),
        "apply_hash": cfg.stage_hash("apply"),
        "seed": cfg.seed,
        "inputs": inputs,
        "prep": cfg.as_dict()["prep"],
        **more,
    }


def cmd_train(args, cfg: RunConfig) -> None:
    root = Path(args.data)
    data = split_dataset(load_dataset(root, cfg, args.force), cfg)
    prep = cfg.prep_config()
    params, report, mcfg = pipeline.train_source(data, prep, cfg.model_config())
    out = Path(args.out)
    inputs = {"data": dir_digest(root)}
    split = [[p.eta, p.beta, data.split[p]] for p in data.placements]
    lstm.save_checkpoint(out, params, mcfg, _checkpoint_extra("train", cfg, inputs, split=split))
    write_csv(
        out.with_name(out.name + ".train.csv"),
        ["epoch", "lr", "train_mse", "val_mse"],
        [[r["epoch"], r["lr"], r["train_mse"], r["val_mse"]] for r in report.as_rows()],
        provenance_line("train", cfg.stage_hash("train"), cfg.seed, inputs),
    )
    best = report.val_mse[report.best_epoch]
    print(f"trained {report.final_epoch + 1} epochs, best val MSE {best:.3f} (epoch {report.best_epoch}) -> {out}")


def cmd_transfer(args, cfg: RunConfig) -> None:
    params, mcfg, _ = load_model(Path(args.model), cfg, args.force)
    root = Path(args.source)
    data = split_dataset(load_dataset(root, cfg, args.force), cfg)
    prep = cfg.prep_config()
    source = [pipeline.prepare(s, prep) for s in data.sessions_in("train")]
    target = [load_session(p) for p in args.target]
    tcfg = cfg.transfer_config()
    new, rep = pipeline.calibrate(
        params, mcfg, source, target, prep, tcfg, use_mmd=not args.no_mmd, select=not args.no_select
    )
    out = Path(args.out)
    inputs = {"model": file_digest(Path(args.model)), "source": dir_digest(root)}
    for k, p in enumerate(args.target):
        inputs[f"target{k}"] = file_digest(Path(p))
    lstm.save_checkpoint(out, new, mcfg, _checkpoint_extra("transfer", cfg, inputs))
    prov = provenance_line("transfer", cfg.stage_hash("transfer"), cfg.seed, inputs)
    write_csv(out.with_name(out.name + ".selected.csv"), ["eta", "beta"], [[p.eta, p.beta] for p in rep.selected], prov)
    keys = ["step", "epoch", "mse", "mmd", "lambda", "total"]
    write_csv(out.with_name(out.name + ".loss.csv"), keys, [[r[k] for k in keys] for r in rep.rows], prov)
    print(f"selected {len(rep.selected)} source placements, {len(rep.rows)} steps -> {out}")


def cmd_predict(args, cfg: RunConfig) -> None:
    params, mcfg, _ = load_model(Path(args.model), cfg, args.force)
    sess = load_session(args.session)
    prepared = pipeline.prepare(sess, cfg.prep_config())
    raw, smoothed = pipeline.predict_prepared(params, prepared, mcfg.window, cfg.smooth if args.smooth else None)
    header = ["timestamp_ms", "angle_raw"] + (["angle_smooth"] if args.smooth else [])
    rows = []
    for i, t in enumerate(sess.timestamps.tolist()):
        row = [t, float(raw[i])]
        if smoothed is not None:
            row.append(float(smoothed[i]))
        rows.append(row)
    inputs = {"model": file_digest(Path(args.model)), "session": file_digest(Path(args.session))}
    write_csv(Path(args.out), header, rows, provenance_line("predict", cfg.stage_hash("predict"), cfg.seed, inputs))
    print(f"predicted {len(rows)} frames -> {args.out}")


def _merge_bins(raw, smooth):
    rows = []
    for k, b in enumerate(raw):
        row = [b.lo, b.hi, b.count, b.mae]
        if smooth is not None:
            row.append(smooth[k].mae)
        rows.append(row)
    return rows


def cmd_evaluate(args, cfg: RunConfig) -> None:
    params, mcfg, _ = load_model(Path(args.model), cfg, args.force)
    root = Path(args.data)
    data = split_dataset(load_dataset(root, cfg, args.force), cfg)
    sessions = list(data.sessions) if args.split == "all" else data.sessions_in(args.split)
    if not sessions:
        raise DataError(f"split {args.split!r} of {root} is empty")
    prep = cfg.prep_config()
    raw = pipeline.report(params, sessions, prep, mcfg.window, None, args.velocity_window)
    smooth = pipeline.report(params, sessions, prep, mcfg.window, cfg.smooth, args.velocity_window) if args.smooth else None
    out = Path(args.out)
    inputs = {"model": file_digest(Path(args.model)), "data": dir_digest(root)}
    prov = provenance_line("evaluate", cfg.stage_hash("evaluate"), cfg.seed, inputs)
    extra = ["mae_smooth"] if smooth else []
    write_csv(
        out / "summary.csv",
        ["split", "count", "mae", *extra],
        [[args.split, raw.count, raw.overall_mae, *([smooth.overall_mae] if smooth else [])]],
        prov,
    )
    place_rows = []
    for k, r in enumerate(raw.per_placement):
        row = [r["eta"], r["beta"], r["count"], r["mae"]]
        if smooth:
            row.append(smooth.per_placement[k]["mae"])
        place_rows.append(row)
    write_csv(out / "per_placement.csv", ["eta", "beta", "count", "mae", *extra], place_rows, prov)
    bins = ["lo", "hi", "count", "mae", *extra]
    write_csv(out / "angle_bins.csv", bins, _merge_bins(raw.angle_bins, smooth.angle_bins if smooth else None), prov)
    write_csv(
        out / "velocity_bins.csv", bins, _merge_bins(raw.velocity_bins, smooth.velocity_bins if smooth else None), prov
    )
    write_csv(
        out / "correlations.csv",
        ["name", "raw", *(["smooth"] if smooth else [])],
        [[k, v, *([smooth.correlations[k]] if smooth else [])] for k, v in raw.correlations.items()],
        prov,
    )
    if args.json:
        doc = {
            "provenance": {"stage": "evaluate", "config_hash": cfg.stage_hash("evaluate"), "seed": cfg.seed, "inputs": inputs},
            "split": args.split,
            "raw": raw.to_dict(),
            "smooth": smooth.to_dict() if smooth else None,
        }
        (out / "report.json").write_text(json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n")
    line = f"{args.split}: MAE {raw.overall_mae:.3f} deg over {raw.count} frames"
    if smooth:
        line += f", smoothed {smooth.overall_mae:.3f}"
    print(line)


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    return x


# ---------------------------------------------------------------------------
# argument parsing


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--seed", type=int, help="run seed (overrides [run] seed)")
    p.add_argument("--sensors", type=int, help="number of active sensors (evenly spaced subset)")
    p.add_argument("--force", action="store_true", help="accept inputs whose config hash differs")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="jointpad", description="Joint-angle estimation pipeline for a stretchable sensor pad.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_sim = sub.add_parser("sim", help="synthetic data")
    sim_sub = p_sim.add_subparsers(dest="sim_command", required=True, parser_class=_Parser)
    g = sim_sub.add_parser("gen", parents=[common], help="simulate a placement grid")
    g.add_argument("--out", required=True)
    g.add_argument("--grid", help="D_ETA,D_BETA grid spacing in cm and degrees")
    g.add_argument("--templates", help="comma-separated motion templates")
    g.add_argument("--users", type=int)
    g.add_argument("--duration", type=float, help="seconds per session")
    g.add_argument("--profile-seed", type=int, help="nonzero: randomise every user profile from this seed")
    g.add_argument("--noise-scale", type=float)
    g.set_defaults(func=cmd_sim)

    r = sub.add_parser("rank", parents=[common], help="channel ranking report")
    r.add_argument("--data", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_rank)

    t = sub.add_parser("train", parents=[common], help="train the source model")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    x = sub.add_parser("transfer", parents=[common], help="unsupervised calibration to new data")
    x.add_argument("--model", required=True)
    x.add_argument("--source", required=True, help="labelled source dataset directory")
    x.add_argument("--target", required=True, nargs="+", help="unlabelled target session CSV(s)")
    x.add_argument("--out", required=True)
    x.add_argument("--epochs", type=int)
    x.add_argument("--no-mmd", action="store_true", help="plain fine-tuning on the source pool")
    x.add_argument("--no-select", action="store_true", help="use every source placement")
    x.set_defaults(func=cmd_transfer)

    pr = sub.add_parser("predict", parents=[common], help="per-frame angle estimates for one session")
    pr.add_argument("--model", required=True)
    pr.add_argument("--session", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--smooth", action="store_true")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", parents=[common], help="binned error report")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=["train", "validate", "test", "all"])
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--smooth", action="store_true")
    e.add_argument("--json", action="store_true")
    e.add_argument("--velocity-window", type=int, default=2, help="frames per velocity estimate")
    e.set_defaults(func=cmd_evaluate)
    return parser


def _overrides(args) -> dict[str, dict]:
    o: dict[str, dict] = {"run": {"seed": args.seed}, "prep": {"sensors": args.sensors}}
    if getattr(args, "grid", None):
        try:
            d_eta, d_beta = (float(v) for v in args.grid.split(","))
        except ValueError:
            raise UsageError(f"--grid expects D_ETA,D_BETA, got {args.grid!r}") from None
        o["sim"] = {"d_eta": d_eta, "d_beta": d_beta}
    sim_flags = {
        "templates": tuple(args.templates.split(",")) if getattr(args, "templates", None) else None,
        "users": getattr(args, "users", None),
        "duration": getattr(args, "duration", None),
        "profile_seed": getattr(args, "profile_seed", None),
        "noise_scale": getattr(args, "noise_scale", None),
    }
    o.setdefault("sim", {}).update(sim_flags)
    if args.command == "train":
        o["model"] = {"epochs": args.epochs}
    if args.command == "transfer":
        o["transfer"] = {"epochs": args.epochs}
    return o


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = load_config(args.config, _overrides(args))
        args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"jointpad: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, lstm.TrainingDiverged) as exc:
        print(f"jointpad: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, SessionFormatError, ValidationError, EmptySelection, FileNotFoundError, ValueError) as exc:
        print(f"jointpad: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
