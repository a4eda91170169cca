"""Command-line entry point: ``python -m fusionsf <command>`` or ``fusionsf <command>``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path


from . import config as C
from .baseline import BaselineError, ClearSkyBaseline, MeanBaseline, export_predictions, persistence
from .data import DataError, build_windows, load_dataset, normalize, split, synth_generate
from .evaluate import EvalError, evaluate, format_table, latent_kl, scenario_eval, zero_shot_eval
from .model import TrainingError, load_checkpoint, save_checkpoint
from .tensor import NumericError
from .train import train_model

log = logging.getLogger("fusionsf")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
DATA_ENV = "FUSIONSF_DATA_DIR"
BASELINES = ("persistence", "mean", "clearsky")


def dataset_checksum(path) -> str:
    """SHA-256 over every file of a dataset directory, in sorted path order."""
    h = hashlib.sha256()
    root = Path(path)
    for f in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(f.relative_to(root)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------- config resolution


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise C.ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def resolve_config(args) -> C.RunConfig:
    """Defaults, then the config file, then ``--set`` pairs, then explicit flags and the data-dir variable."""
    cfg = C.load(args.config) if getattr(args, "config", None) else C.RunConfig()
    C.apply_overrides(cfg, _overrides(getattr(args, "set", None)))
    if os.environ.get(DATA_ENV):
        cfg.data_dir = os.environ[DATA_ENV]
    for key in ("data_dir", "out_dir", "seed", "epochs", "threads", "split_mode"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    return cfg.validate()


def write_snapshot(out_dir: Path, cfg: C.RunConfig, command: str, extra: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(C.dump_text(cfg))
    info = {"command": command, "seed": cfg.seed, "config_digest": C.config_digest(cfg)}
    info.update(extra or {})
    (out_dir / "run.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def _windows(cfg: C.RunConfig, test_plants=None):
    ds = normalize(load_dataset(cfg.data_dir))
    w = build_windows(ds, cfg.T_in, cfg.T_out)
    if cfg.split_mode == "by-plant":
        if not test_plants:
            raise C.ConfigError("split_mode by-plant needs --test-plants")
        return ds, split(w, mode="by-plant", test_plants=test_plants)
    return ds, split(w)


def _plants(text) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()] if text else []


def _check_grid(cfg, ds) -> None:
    grid = list(ds.ctx.shape[-2:])
    if cfg.use_ctx and list(cfg.image_size) != grid:
        raise C.ConfigError(f"image_size {cfg.image_size} does not match the dataset grid {grid}")
    if cfg.use_aux and cfg.aux_channels != ds.nwp.shape[-1]:
        raise C.ConfigError(f"aux_channels {cfg.aux_channels} does not match {ds.nwp.shape[-1]} NWP channels")


def _write_report(rep, out_dir: Path, stem: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.json").write_text(rep.to_json() + "\n")
    (out_dir / f"{stem}.txt").write_text(rep.to_table())
    rep.write_csv(out_dir / f"{stem}_windows.csv")


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    out = Path(args.out or os.environ.get(DATA_ENV) or "data")
    synth_generate(out, n_plants=args.plants, n_days=args.days, grid=(args.grid, args.grid), seed=args.seed)
    digest = dataset_checksum(out)
    print(f"wrote {args.plants} plants x {args.days} days to {out}")
    print(f"sha256 {digest}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    ds, (train_w, val_w, _) = _windows(cfg, _plants(args.test_plants))
    _check_grid(cfg, ds)
    out = Path(cfg.out_dir)
    write_snapshot(out, cfg, "train", {"dataset_sha256": dataset_checksum(cfg.data_dir)})
    model, opt, hist = train_model(cfg.model_config(), train_w, cfg.epochs, cfg.batch_size, cfg.lr, cfg.weight_decay, cfg.seed,
                                   val_windows=val_w if cfg.select_best else None, eval_every=cfg.eval_every)
    hist.to_csv(out / "loss.csv")
    save_checkpoint(out / "checkpoint", model, opt, {"epochs": cfg.epochs, "best_epoch": hist.best_epoch})
    if len(val_w):
        rep = evaluate(model, val_w, "FusionSF", threads=cfg.threads)
        print(f"validation MAE {rep.mae():.5f} RMSE {rep.rmse():.5f} over {rep.count()} windows")
    print(f"checkpoint written to {out / 'checkpoint'}")
    return 0


def _baseline_predictor(name: str, train_w):
    if name == "persistence":
        return lambda w: persistence(w.x_ts, w.y.shape[1])
    if name == "mean":
        m = MeanBaseline.fit(train_w.y)
        return lambda w: m.predict(len(w))
    if name == "clearsky":
        return ClearSkyBaseline.fit(train_w)
    raise C.ConfigError(f"unknown baseline {name!r}; choose from {', '.join(BASELINES)}")


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    _, (train_w, _, test_w) = _windows(cfg, _plants(args.test_plants))
    if args.baseline:
        predictor, label = _baseline_predictor(args.baseline, train_w), args.baseline
    elif args.checkpoint:
        predictor, _, _ = load_checkpoint(args.checkpoint)
        label = "FusionSF"
    else:
        raise C.ConfigError("eval needs --checkpoint or --baseline")
    out = Path(cfg.out_dir)
    write_snapshot(out, cfg, "eval", {"checkpoint": args.checkpoint, "baseline": args.baseline})
    rep = evaluate(predictor, test_w, label, threads=cfg.threads)
    _write_report(rep, out, f"report_{label}")
    print(rep.to_table(), end="")
    return 0 if rep.failures == 0 else EXIT_NUMERIC


def cmd_baseline(args) -> int:
    cfg = resolve_config(args)
    _, (train_w, _, test_w) = _windows(cfg, _plants(args.test_plants))
    out = Path(cfg.out_dir)
    write_snapshot(out, cfg, "baseline")
    names = BASELINES if args.which == "all" else (args.which,)
    reports = []
    for name in names:
        pred = _baseline_predictor(name, train_w)
        rep = evaluate(pred, test_w, name, threads=cfg.threads)
        _write_report(rep, out, f"report_{name}")
        y_hat = pred.predict_windows(test_w) if hasattr(pred, "predict_windows") else pred(test_w)
        export_predictions(out / f"predictions_{name}.csv", test_w, y_hat)
        reports.append(rep)
    table = format_table(reports)
    (out / "baselines.txt").write_text(table)
    print(table, end="")
    return 0


def cmd_zeroshot(args) -> int:
    cfg = resolve_config(args)
    train_p, test_p = _plants(args.train_plants), _plants(args.test_plants)
    if not train_p or not test_p:
        raise C.ConfigError("zeroshot needs --train-plants and --test-plants")
    ds = load_dataset(cfg.data_dir)
    _check_grid(cfg, ds)
    out = Path(cfg.out_dir)
    write_snapshot(out, cfg, "zeroshot", {"train_plants": train_p, "test_plants": test_p})
    run = scenario_eval if args.same_plants else zero_shot_eval
    rep = run(train_p, test_p, ds, cfg.model_config(), epochs=cfg.epochs, seed=cfg.seed, threads=cfg.threads,
              select_best=cfg.select_best)
    _write_report(rep, out, "report_zeroshot")
    print(rep.to_table(), end="")
    return 0


def cmd_diagnose(args) -> int:
    cfg = resolve_config(args)
    _, (_, _, test_w) = _windows(cfg, _plants(args.test_plants))
    model, _, _ = load_checkpoint(args.checkpoint)
    out = Path(cfg.out_dir)
    write_snapshot(out, cfg, "diagnose", {"checkpoint": args.checkpoint})
    diag = latent_kl(model, test_w)
    (out / "latent.json").write_text(json.dumps(diag.to_dict(), indent=2) + "\n")
    print(f"KL(ctx || ts) = {diag.kl:.6f} (VQ {'on' if diag.vq_on else 'off'})")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fusionsf", description="Trimodal day-ahead solar power forecasting.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", help=f"output directory (default ${DATA_ENV} or ./data)")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--plants", type=int, default=10)
    s.add_argument("--days", type=int, default=120)
    s.add_argument("--grid", type=int, default=32, help="image side in pixels")
    s.set_defaults(func=cmd_synth)

    def common(sp, need_out=True):
        sp.add_argument("--config", help="flat key: value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
        sp.add_argument("--data-dir", dest="data_dir")
        if need_out:
            sp.add_argument("--out-dir", dest="out_dir")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, help="evaluation worker threads")
        sp.add_argument("--split-mode", dest="split_mode", choices=["chronological", "by-plant"])
        sp.add_argument("--test-plants", dest="test_plants", help="comma-separated plant ids")

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    common(t)
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint or a baseline on the test split")
    common(e)
    e.add_argument("--checkpoint")
    e.add_argument("--baseline", choices=BASELINES)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline", help="fit and report the naive baselines")
    common(b)
    b.add_argument("--which", default="all", choices=("all",) + BASELINES)
    b.set_defaults(func=cmd_baseline)

    z = sub.add_parser("zeroshot", help="train on some plants, test on others")
    common(z)
    z.add_argument("--epochs", type=int)
    z.add_argument("--train-plants", dest="train_plants", required=True)
    z.add_argument("--same-plants", action="store_true", help="allow overlapping sets (same-plant reference scenario)")
    z.set_defaults(func=cmd_zeroshot)

    d = sub.add_parser("diagnose", help="latent distribution KL between image and series embeddings")
    common(d)
    d.add_argument("--checkpoint", required=True)
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, BaselineError, EvalError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, TrainingError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
