"""Command-line pipeline: simulate, train, infer, stitch, evaluate, spectrum,
epie, gradcheck, ablate. Stages chain through files and carry the config hash."""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import dataset, epie as epie_mod, gridio, model, recon, train as train_mod, verify
from .config import RunConfig

DETERMINISTIC_ENV = "PTYCHOKIT_DETERMINISTIC"


def deterministic_mode():
    """Deterministic mode is the default and currently the only mode.

    All computation is single threaded with fixed reduction order, so results
    are bitwise reproducible regardless; the variable exists so callers can
    request the guarantee explicitly.
    """
    return os.environ.get(DETERMINISTIC_ENV, "1") != "0"


def _build_config(args):
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for kv in args.set or []:
        if "=" not in kv:
            raise ValueError(f"--set expects key=value, got '{kv}'")
        key, value = kv.split("=", 1)
        cfg.set(key.strip(), value.strip())
    if args.seed is not None:
        cfg.set_master_seed(args.seed)
    return cfg


def _check_hash(expected, found, force, what):
    if expected and found and expected != found and not force:
        raise ValueError(f"config hash mismatch for {what}: {expected} != {found} "
                         "(use --force to override)")


def _persist_config(cfg, outdir):
    os.makedirs(outdir, exist_ok=True)
    cfg.save(os.path.join(outdir, "config.txt"))


def cmd_simulate(args):
    cfg = _build_config(args)
    v = cfg.values
    amp, phase = dataset.gen_object(v["object_size"], v["object_size"], v["object_seed"])
    probe = cfg.make_probe()
    plan = dataset.plan_scan(v["rows"], v["cols"], v["step"], v["jitter_max"],
                             v["probe_size"], v["scan_seed"])
    frames, patches = dataset.make_dataset(amp, phase, probe, plan, cfg.noise_cfg())
    dataset.split_rows(frames, v["rows"], v["train_rows"], v["test_rows"],
                       v["val_fraction"], v["split_seed"])
    meta = {"config_hash": cfg.data_hash(), "rows": v["rows"], "cols": v["cols"],
            "step": v["step"], "jitter_max": v["jitter_max"],
            "probe_size": v["probe_size"], "probe_radius": v["probe_radius"],
            "probe_sigma": v["probe_sigma"], "probe_curvature": v["probe_curvature"]}
    dataset.save_dataset(args.out, frames, patches, probe, meta)
    gridio.write_grid(os.path.join(args.out, "object_amplitude.ptg"), amp)
    gridio.write_grid(os.path.join(args.out, "object_phase.ptg"), phase)
    _persist_config(cfg, args.out)
    print(f"simulate: {len(frames)} frames -> {args.out} (hash {meta['config_hash']})")
    return 0


def cmd_train(args):
    cfg = _build_config(args)
    frames, patches, _probe, meta = dataset.load_dataset(args.data)
    _check_hash(cfg.data_hash(), meta.get("config_hash"), args.force, "dataset")
    os.makedirs(args.out, exist_ok=True)
    result = train_mod.train(frames, patches, cfg.model_cfg(), cfg.train_cfg(),
                             ckpt_dir=os.path.join(args.out, "checkpoint"),
                             config_hash=meta.get("config_hash", ""),
                             log_path=os.path.join(args.out, "loss_log.csv"))
    _persist_config(cfg, args.out)
    print(f"train: best val loss {result.best_val:.6g} at epoch {result.best_epoch} "
          f"-> {args.out}/checkpoint")
    return 0


def _load_ckpt_and_data(args):
    params, mcfg, manifest = model.load_checkpoint(args.ckpt)
    frames, patches, probe, meta = dataset.load_dataset(args.data)
    _check_hash(manifest.get("config_hash"), meta.get("config_hash"),
                args.force, "checkpoint vs dataset")
    return params, mcfg, manifest, frames, patches, probe, meta


def _select_split(frames, patches, split):
    if split == "all":
        return frames, patches
    pairs = [(f, p) for f, p in zip(frames, patches) if f.split == split]
    if not pairs:
        raise ValueError(f"no frames in split '{split}'")
    return [f for f, _ in pairs], [p for _, p in pairs]


def cmd_infer(args):
    params, mcfg, manifest, frames, patches, _probe, _meta = _load_ckpt_and_data(args)
    frames, patches = _select_split(frames, patches, args.split)
    preds = recon.infer(frames, params, mcfg)
    os.makedirs(os.path.join(args.out, "pred"), exist_ok=True)
    rows = []
    for i, ((amp, phase), frame) in enumerate(zip(preds, frames)):
        gridio.write_grid(os.path.join(args.out, "pred", f"{i:05d}_amp.ptg"), amp)
        gridio.write_grid(os.path.join(args.out, "pred", f"{i:05d}_phase.ptg"),
                          phase.astype(np.float32))
        rows.append({"index": i, "row": frame.row, "col": frame.col,
                     "y": frame.y, "x": frame.x, "split": frame.split})
    with open(os.path.join(args.out, "predictions.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["index", "row", "col", "y", "x", "split"])
        writer.writeheader()
        writer.writerows(rows)
    with open(os.path.join(args.out, "pred_meta.json"), "w") as fh:
        json.dump({"config_hash": manifest.get("config_hash", ""),
                   "variant": mcfg.variant, "split": args.split}, fh, indent=2)
    print(f"infer: {len(preds)} predictions -> {args.out}")
    return 0


def _load_predictions(pred_dir):
    preds, positions = [], []
    with open(os.path.join(pred_dir, "predictions.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            i = int(row["index"])
            amp = gridio.read_grid(os.path.join(pred_dir, "pred", f"{i:05d}_amp.ptg"))
            phase = gridio.read_grid(os.path.join(pred_dir, "pred", f"{i:05d}_phase.ptg"))
            preds.append((amp, phase.astype(np.float64)))
            positions.append((int(row["y"]), int(row["x"])))
    return preds, positions


def cmd_stitch(args):
    cfg = _build_config(args)
    preds, positions = _load_predictions(args.pred)
    patch = preds[0][0].shape[0]
    scfg = recon.StitchConfig(patch=patch, step=cfg["step"],
                              weight_floor=cfg["stitch_weight_floor"])
    canvas = (max(y for y, _ in positions) + patch, max(x for _, x in positions) + patch)
    amp, mask = recon.stitch([a for a, _ in preds], positions, canvas, scfg)
    phase, _ = recon.stitch_phase([p for _, p in preds], positions, canvas, scfg)
    os.makedirs(args.out, exist_ok=True)
    gridio.write_grid(os.path.join(args.out, "stitched_amp.ptg"), amp.astype(np.float32))
    gridio.write_grid(os.path.join(args.out, "stitched_phase.ptg"), phase.astype(np.float32))
    gridio.write_grid(os.path.join(args.out, "coverage.ptg"), mask.astype(np.float32))
    print(f"stitch: canvas {canvas} -> {args.out}")
    return 0


def cmd_evaluate(args):
    cfg = _build_config(args)
    params, mcfg, manifest, frames, patches, _probe, meta = _load_ckpt_and_data(args)
    frames, patches = _select_split(frames, patches, args.split)
    preds = recon.infer(frames, params, mcfg)
    scfg = recon.StitchConfig(patch=patches[0].amplitude.shape[0], step=cfg["step"],
                              weight_floor=cfg["stitch_weight_floor"])
    rep = recon.report(frames, preds, patches, stitch_cfg=scfg,
                       config_hash=meta.get("config_hash", ""), seed=args.seed or 0)
    recon.write_report(args.out, rep)
    print(f"evaluate: {len(frames)} frames ({args.split}) -> {args.out}/report.txt")
    return 0


def cmd_spectrum(args):
    grid = gridio.read_grid(args.grid)
    side = min(grid.shape)
    radii, curve, bands = recon.radial_psd(grid[:side, :side])
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "psd.txt"), "w") as fh:
        for r, v in zip(radii, curve):
            fh.write(f"{r} {v:.10g}\n")
    with open(os.path.join(args.out, "bands.json"), "w") as fh:
        json.dump({"low": bands[0], "mid": bands[1], "high": bands[2]}, fh, indent=2)
    print(f"spectrum: low {bands[0]:.2f}% mid {bands[1]:.2f}% high {bands[2]:.2f}%")
    return 0


def cmd_epie(args):
    cfg = _build_config(args)
    frames, _patches, probe, _meta = dataset.load_dataset(args.data)
    positions = [(f.y, f.x) for f in frames]
    state = epie_mod.epie_reconstruct(frames, positions, probe,
                                      iters=cfg["epie_iters"], beta=cfg["epie_beta"],
                                      seed=cfg["epie_seed"])
    os.makedirs(args.out, exist_ok=True)
    gridio.write_grid(os.path.join(args.out, "epie_amplitude.ptg"),
                      np.abs(state.object_est).astype(np.float32))
    gridio.write_grid(os.path.join(args.out, "epie_phase.ptg"),
                      np.angle(state.object_est).astype(np.float32))
    with open(os.path.join(args.out, "error_history.txt"), "w") as fh:
        for e in state.error_history:
            fh.write(f"{e:.10g}\n")
    print(f"epie: final data error {state.error_history[-1]:.3e} "
          f"after {state.iterations} sweeps")
    return 0


def cmd_gradcheck(args):
    results = verify.run_gradcheck(verbose=True)
    failed = [r for r in results if not r[3]]
    print(f"gradcheck: {len(results) - len(failed)}/{len(results)} passed")
    return 1 if failed else 0


def cmd_ablate(args):
    cfg = _build_config(args)
    cfg.set("variant", args.variant)
    frames, patches, _probe, meta = dataset.load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    result = train_mod.train(frames, patches, cfg.model_cfg(), cfg.train_cfg(),
                             ckpt_dir=os.path.join(args.out, "checkpoint"),
                             config_hash=meta.get("config_hash", ""),
                             log_path=os.path.join(args.out, "loss_log.csv"))
    test_f, test_p = _select_split(frames, patches, "test")
    preds = recon.infer(test_f, result.params, result.cfg)
    rep = recon.report(test_f, preds, test_p, config_hash=cfg.config_hash())
    recon.write_report(args.out, rep)
    with open(os.path.join(args.out, "ablation.json"), "w") as fh:
        json.dump({"variant": args.variant, "best_val": result.best_val,
                   "config_hash": cfg.config_hash(),
                   "stitched": rep.stitched}, fh, indent=2)
    _persist_config(cfg, args.out)
    print(f"ablate[{args.variant}]: best val {result.best_val:.6g} -> {args.out}")
    return 0


def _add_common(sp):
    sp.add_argument("--config", help="config file (key = value lines)")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override one config key")
    sp.add_argument("--seed", type=int, help="master seed for all stages")
    sp.add_argument("--force", action="store_true",
                    help="proceed despite config-hash mismatch")


def build_parser():
    parser = argparse.ArgumentParser(prog="ptychokit")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="object + scan + frames -> dataset dir")
    _add_common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("train", help="dataset -> checkpoint + loss log")
    _add_common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("infer", help="checkpoint + frames -> predicted patches")
    _add_common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    sp.set_defaults(fn=cmd_infer)

    sp = sub.add_parser("stitch", help="predicted patches -> full field")
    _add_common(sp)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_stitch)

    sp = sub.add_parser("evaluate", help="predictions vs ground truth -> report")
    _add_common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("spectrum", help="grid -> radial PSD + band energies")
    _add_common(sp)
    sp.add_argument("--grid", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_spectrum)

    sp = sub.add_parser("epie", help="frames + probe -> iterative reference recon")
    _add_common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_epie)

    sp = sub.add_parser("gradcheck", help="run the finite-difference suite")
    _add_common(sp)
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("ablate", help="train + evaluate a named variant")
    _add_common(sp)
    sp.add_argument("--variant", required=True, choices=model.VARIANTS)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if not deterministic_mode():
        print("warning: nondeterministic execution is not implemented; "
              "running deterministically", file=sys.stderr)
    try:
        return args.fn(args)
    except (ValueError, KeyError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
