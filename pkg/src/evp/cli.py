"""Command-line interface.

Nine subcommands cover the whole workflow: ``synth`` renders a task to
disk, ``pretrain`` produces the shared backbone checkpoint, ``train``
fits one strategy, ``eval`` scores prediction maps, ``hfc`` extracts
the high-frequency component of an image, ``mask-stats`` measures a
frequency mask, ``params`` does closed-form prompt accounting,
``gradcheck`` runs the registered gradient suite and ``compare`` runs
the strategy comparison or its tau sweep.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric abort.
All randomness is controlled by ``--seed`` flags; artifacts are JSON or
EVPT/EVPC files that round-trip through this package's own readers.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .backbone import BackboneConfig, b4_shape, hier_desk, plain_desk
from .dataset import SPLITS, TASKS, load_manifest, load_samples, sample_pairs, synth_dataset
from .errors import ConfigError, EvpError, FormatError, NumericError
from .frequency import analytic_zero_fraction, extract_hfc, make_hfc_mask
from .gradchecks import GRAD_TOL, run_suite
from .metrics import report as metrics_report
from .model import STRATEGIES, build_model
from .prompting import PromptConfig, prompt_param_count
from .serialization import read_checkpoint, read_evpt, read_pnm, state_checksum, write_checkpoint, write_evpt
from .tensor import Tensor, no_grad
from .training import TrainConfig, train
from .workbench import CompareReport, compare, evaluate, pretrain, tau_sweep

_BACKBONES = {"plain": plain_desk, "hier": hier_desk, "b4": b4_shape}

_CONFIG_DEFAULTS = {
    "backbone": "plain",
    "strategy": "decoder",
    "lr": 1e-3,
    "steps": 500,
    "batch_size": 4,
    "seed": 0,
    "loss": "bce_plus_iou",
    "r": 4,
    "tau": 0.25,
    "fourier_mode": "reduced",
    "vpt_tokens": 50,
    "variant": None,
    "pretrained": None,
}


def _backbone(name: str) -> BackboneConfig:
    if name not in _BACKBONES:
        raise ConfigError(f"unknown backbone {name!r}; expected one of {sorted(_BACKBONES)}")
    return _BACKBONES[name]()


def _load_config(path: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"config {path} is not valid JSON: {exc}") from exc
    unknown = set(raw) - set(_CONFIG_DEFAULTS)
    if unknown:
        raise ConfigError(f"config {path}: unknown keys {sorted(unknown)}")
    cfg = dict(_CONFIG_DEFAULTS)
    cfg.update(raw)
    return cfg


def _prompt_config(cfg: dict) -> PromptConfig | None:
    variant = cfg["variant"]
    if variant is None:
        strategy = cfg["strategy"]
        if strategy == "evp1":
            variant = "v1"
        elif strategy == "evp2":
            variant = "v2"
        else:
            return None
    return PromptConfig(variant, r=int(cfg["r"]), tau=float(cfg["tau"]),
                        fourier_mode=cfg["fourier_mode"])


def _table(rows: list[dict], columns: list[str]) -> str:
    def fmt(v) -> str:
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)
    cells = [[fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c)
              for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)


def _emit(args, human: str, machine: dict) -> None:
    if getattr(args, "json", False):
        print(json.dumps(machine, indent=2, sort_keys=True))
    else:
        print(human)


def _csv_ints(raw: str) -> list[int]:
    try:
        return [int(x) for x in raw.split(",") if x]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {raw!r}") from None


def _csv_floats(raw: str) -> list[float]:
    try:
        return [float(x) for x in raw.split(",") if x]
    except ValueError:
        raise ConfigError(f"expected comma-separated floats, got {raw!r}") from None


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args) -> int:
    splits = None
    if args.train is not None or args.val is not None or args.test is not None:
        splits = (args.train or 0, args.val or 0, args.test or 0)
    manifest = synth_dataset(args.task, args.n, args.size, args.seed, args.out,
                             splits=splits)
    counts = {s: sum(1 for r in manifest.samples if r.split == s) for s in SPLITS}
    summary = {"task": manifest.task, "n": len(manifest.samples), "size": manifest.size,
               "seed": manifest.seed, "out": str(args.out), **counts}
    _emit(args, _table([summary], ["task", "n", "size", "seed", "train", "val", "test", "out"]),
          summary)
    return 0


def _cmd_pretrain(args) -> int:
    manifest = load_manifest(args.data)
    pairs = sample_pairs(load_samples(manifest, "train"))
    bcfg = _backbone(args.backbone)
    state, history = pretrain(bcfg, pairs, args.steps, args.seed,
                              noise_sigma=args.noise, lr=args.lr,
                              batch_size=args.batch_size)
    write_checkpoint(args.out, state)
    summary = {
        "steps": args.steps,
        "first_loss": history[0]["loss"],
        "final_loss": history[-1]["loss"],
        "checksum": state_checksum(state),
        "out": str(args.out),
    }
    _emit(args, _table([summary], ["steps", "first_loss", "final_loss", "checksum", "out"]),
          summary)
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config)
    manifest = load_manifest(args.data)
    train_pairs = sample_pairs(load_samples(manifest, "train"))
    val_pairs = sample_pairs(load_samples(manifest, "val")) or None
    pretrained = None
    if cfg["pretrained"]:
        pretrained = read_checkpoint(cfg["pretrained"])
    bcfg = _backbone(cfg["backbone"])
    model = build_model(bcfg, cfg["strategy"], int(cfg["seed"]),
                        pcfg=_prompt_config(cfg), pretrained=pretrained,
                        vpt_tokens=int(cfg["vpt_tokens"]))
    tcfg = TrainConfig(strategy=cfg["strategy"], lr=float(cfg["lr"]),
                       steps=int(cfg["steps"]), batch_size=int(cfg["batch_size"]),
                       seed=int(cfg["seed"]), loss=cfg["loss"],
                       vpt_tokens=int(cfg["vpt_tokens"]))
    history = train(model, train_pairs, tcfg, val_samples=val_pairs)
    for row in history:
        print(json.dumps(row, sort_keys=True))
    write_checkpoint(args.out, model.state_dict())
    return 0


def _read_gray(path: Path) -> np.ndarray:
    """One prediction or ground-truth map as HxW float64 in [0, 1]."""
    if path.suffix == ".evpt":
        arr = read_evpt(path)
    elif path.suffix in (".pgm", ".ppm"):
        arr = read_pnm(path)
    else:
        raise FormatError(f"{path}: expected .evpt, .pgm or .ppm")
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected a single-channel HxW map, got {arr.shape}")
    return arr


def _cmd_eval(args) -> int:
    dir_mode = args.pred_dir is not None or args.gt_dir is not None
    ckpt_mode = args.ckpt is not None
    if dir_mode == ckpt_mode:
        raise ConfigError("eval needs either --pred-dir/--gt-dir or --data/--config/--ckpt")
    if dir_mode:
        if args.pred_dir is None or args.gt_dir is None:
            raise ConfigError("eval needs both --pred-dir and --gt-dir")
        result = _eval_dirs(Path(args.pred_dir), Path(args.gt_dir))
    else:
        if args.data is None or args.config is None:
            raise ConfigError("checkpoint eval needs --data and --config")
        result = _eval_ckpt(args)
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    means = dict(result["means"])
    means["n"] = result["n"]
    cols = ["n"] + sorted(k for k in means if k != "n")
    _emit(args, _table([means], cols), result)
    return 0


def _eval_dirs(pred_dir: Path, gt_dir: Path) -> dict:
    def index(d: Path) -> dict[str, Path]:
        if not d.is_dir():
            raise ConfigError(f"{d} is not a directory")
        return {p.stem: p for p in sorted(d.iterdir())
                if p.suffix in (".evpt", ".pgm", ".ppm")}

    preds, gts = index(pred_dir), index(gt_dir)
    if sorted(preds) != sorted(gts):
        only_p = sorted(set(preds) - set(gts))[:3]
        only_g = sorted(set(gts) - set(preds))[:3]
        raise ConfigError(f"pred/gt stems differ (pred-only {only_p}, gt-only {only_g})")
    if not preds:
        raise ConfigError(f"no .evpt/.pgm/.ppm maps in {pred_dir}")
    per_sample = []
    for stem in sorted(preds):
        rep = metrics_report(_read_gray(preds[stem]), _read_gray(gts[stem]))
        per_sample.append({"name": stem, **rep.as_dict()})
    keys = [k for k in per_sample[0] if k != "name"]
    means = {k: float(np.mean([r[k] for r in per_sample])) for k in keys}
    return {"kind": "eval", "n": len(per_sample), "means": means, "per_sample": per_sample}


def _eval_ckpt(args) -> dict:
    cfg = _load_config(args.config)
    manifest = load_manifest(args.data)
    pairs = sample_pairs(load_samples(manifest, args.split))
    bcfg = _backbone(cfg["backbone"])
    model = build_model(bcfg, cfg["strategy"], int(cfg["seed"]),
                        pcfg=_prompt_config(cfg), vpt_tokens=int(cfg["vpt_tokens"]))
    model.load_state(read_checkpoint(args.ckpt))
    result = evaluate(model, pairs)
    result["kind"] = "eval"
    return result


def _cmd_hfc(args) -> int:
    path = Path(args.image)
    if path.suffix == ".evpt":
        arr = read_evpt(path)
    elif path.suffix in (".pgm", ".ppm"):
        arr = read_pnm(path)
    else:
        raise FormatError(f"{path}: expected .evpt, .pgm or .ppm")
    with no_grad():
        dec = extract_hfc(Tensor(np.asarray(arr, dtype=np.float64)), args.tau)
    hfc = dec.hfc.data
    if args.out_hfc:
        write_evpt(args.out_hfc, hfc.astype(np.float32))
    if args.out_lfc:
        write_evpt(args.out_lfc, dec.lfc.data.astype(np.float32))
    summary = {
        "tau": args.tau,
        "shape": "x".join(str(d) for d in arr.shape),
        "hfc_energy": float((hfc ** 2).mean()),
        "lfc_energy": float((dec.lfc.data ** 2).mean()),
        "out_hfc": str(args.out_hfc) if args.out_hfc else "",
        "out_lfc": str(args.out_lfc) if args.out_lfc else "",
    }
    _emit(args, _table([summary], ["tau", "shape", "hfc_energy", "lfc_energy",
                                   "out_hfc", "out_lfc"]), summary)
    return 0


def _cmd_mask_stats(args) -> int:
    mask = make_hfc_mask(args.h, args.w, args.tau)
    summary = {
        "h": args.h,
        "w": args.w,
        "tau": args.tau,
        "zero_fraction": mask.zero_fraction,
        "analytic": analytic_zero_fraction(args.tau),
    }
    _emit(args, _table([summary], ["h", "w", "tau", "zero_fraction", "analytic"]), summary)
    return 0


def _cmd_params(args) -> int:
    cfg = _load_config(args.config)
    if cfg["variant"] is None:
        raise ConfigError(f"config {args.config} needs a prompt variant (v1 or v2)")
    bcfg = _backbone(cfg["backbone"])
    pcfg = _prompt_config(cfg)
    count = prompt_param_count(bcfg, pcfg)
    summary = {
        "backbone": cfg["backbone"],
        "variant": pcfg.variant,
        "r": pcfg.r,
        "fourier_mode": pcfg.fourier_mode if pcfg.variant == "v2" else "",
        "prompt_params": count,
        "millions": round(count / 1e6, 2),
    }
    _emit(args, _table([summary], ["backbone", "variant", "r", "fourier_mode",
                                   "prompt_params", "millions"]), summary)
    return 0


def _cmd_gradcheck(args) -> int:
    rows = run_suite(args.seed, h=args.h)
    out_rows = [{"case": n, "max_rel_error": e,
                 "status": "ok" if e < GRAD_TOL else "FAIL"} for n, e in rows]
    human = "\n".join(f"{r['case']:34s} {r['max_rel_error']:.3e}  {r['status']}"
                      for r in out_rows)
    _emit(args, human, {"tolerance": GRAD_TOL, "seed": args.seed, "cases": out_rows})
    return 0 if all(e < GRAD_TOL for _, e in rows) else 1


def _cmd_compare(args) -> int:
    manifest = load_manifest(args.data)
    pretrained = read_checkpoint(args.pretrained)
    bcfg = _backbone(args.backbone)
    seeds = _csv_ints(args.seeds)
    if args.taus:
        report = tau_sweep(bcfg, manifest, seeds, pretrained,
                           taus=tuple(_csv_floats(args.taus)), steps=args.steps,
                           lr=args.lr, batch_size=args.batch_size, loss=args.loss,
                           r=args.r)
        if args.out:
            Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        rows = [{"tau": r["tau"], "zero_fraction": r["mask_zero_fraction"],
                 "median_iou": r["median_iou"]} for r in report["rows"]]
        _emit(args, _table(rows, ["tau", "zero_fraction", "median_iou"]), report)
        return 0

    strategies = [s for s in args.strategies.split(",") if s]
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}; expected one of {STRATEGIES}")
    report: CompareReport = compare(
        bcfg, manifest, strategies, seeds, pretrained, steps=args.steps,
        lr=args.lr, batch_size=args.batch_size, loss=args.loss, tau=args.tau,
        r=args.r, fourier_mode=args.fourier_mode, out_dir=args.ckpt_dir,
    )
    if args.out:
        report.save(args.out)
    rows = []
    for row in report.rows:
        if row["status"] != "ok":
            rows.append({"strategy": row["strategy"], "status": row["status"],
                         "error": row.get("error", "")})
            continue
        rows.append({
            "strategy": row["strategy"],
            "status": row["status"],
            "tunable": row["params"]["tunable"],
            "fraction": row["params"]["tunable_fraction"],
            "iou": row["medians"]["iou"],
            "f_beta_max": row["medians"]["f_beta_max"],
            "mae": row["medians"]["mae"],
        })
    _emit(args, _table(rows, ["strategy", "status", "tunable", "fraction",
                              "iou", "f_beta_max", "mae"]), report.as_dict())
    return 0


# ---------------------------------------------------------------------------
# parser


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, desc):
        sp = sub.add_parser(name, help=desc, description=desc)
        sp.set_defaults(fn=fn)
        sp.add_argument("--json", action="store_true", help="machine output on stdout")
        return sp

    sp = add("synth", _cmd_synth, "render a synthetic task to disk")
    sp.add_argument("--task", required=True, choices=TASKS)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--train", type=int, default=None, help="explicit train count")
    sp.add_argument("--val", type=int, default=None)
    sp.add_argument("--test", type=int, default=None)

    sp = add("pretrain", _cmd_pretrain, "denoising pretext for the backbone")
    sp.add_argument("--data", required=True, help="dataset manifest")
    sp.add_argument("--steps", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="backbone checkpoint path")
    sp.add_argument("--backbone", default="plain", choices=("plain", "hier"))
    sp.add_argument("--noise", type=float, default=0.25)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--batch-size", type=int, default=4)

    sp = add("train", _cmd_train, "train one strategy; history as JSON lines")
    sp.add_argument("--config", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)

    sp = add("eval", _cmd_eval, "score prediction maps or a checkpoint")
    sp.add_argument("--pred-dir")
    sp.add_argument("--gt-dir")
    sp.add_argument("--data")
    sp.add_argument("--config")
    sp.add_argument("--ckpt")
    sp.add_argument("--split", default="test", choices=SPLITS)
    sp.add_argument("--out")

    sp = add("hfc", _cmd_hfc, "high/low-frequency components of one image")
    sp.add_argument("--in", dest="image", required=True, metavar="IMAGE")
    sp.add_argument("--tau", type=float, default=0.25)
    sp.add_argument("--out-hfc")
    sp.add_argument("--out-lfc")

    sp = add("mask-stats", _cmd_mask_stats, "zero fraction of a frequency mask")
    sp.add_argument("--h", type=int, required=True)
    sp.add_argument("--w", type=int, required=True)
    sp.add_argument("--tau", type=float, required=True)

    sp = add("params", _cmd_params, "closed-form prompt parameter count")
    sp.add_argument("--config", required=True)

    sp = add("gradcheck", _cmd_gradcheck, "registered gradient composites")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--h", type=float, default=1e-6)

    sp = add("compare", _cmd_compare, "strategy comparison or tau sweep")
    sp.add_argument("--data", required=True)
    sp.add_argument("--pretrained", required=True)
    sp.add_argument("--strategies", default="decoder,evp1,evp2")
    sp.add_argument("--seeds", default="1")
    sp.add_argument("--steps", type=int, default=300)
    sp.add_argument("--backbone", default="plain", choices=("plain", "hier"))
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--batch-size", type=int, default=4)
    sp.add_argument("--loss", default="bce_plus_iou")
    sp.add_argument("--tau", type=float, default=0.25)
    sp.add_argument("--r", type=int, default=4)
    sp.add_argument("--fourier-mode", default="reduced", choices=("reduced", "full"))
    sp.add_argument("--taus", help="comma-separated taus; switches to the sweep")
    sp.add_argument("--ckpt-dir", help="write per-run checkpoints here")
    sp.add_argument("--out", help="report JSON path")

    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 3
    except (EvpError, ValueError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
