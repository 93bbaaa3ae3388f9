"""``dareplane fit|compare|transform|inspect --config <path> [--out <dir>] [--seed <u64>]``.

Exit codes: 0 ok, 2 configuration error, 3 numeric abort, 4 integrity failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .codec import ArchiveError, decode_archive, encode_archive
from .config import ConfigError, load_config
from .grid import Image, PpmError, psnr, read_ppm, write_ppm
from .rep import DaRePlaneField, FieldSpec
from .render import RadianceModel
from .scenes import make_scene
from .train import LossWeights, NumericAbort, Schedule, TrainConfig, fit
from .wavelet import (
    ORIENTATIONS,
    dominant_orientation,
    dtcwt2d_forward,
    dtcwt2d_inverse,
    dwt2d_forward,
    dwt2d_inverse,
)

__all__ = ["main", "resolve", "build_run", "cmd_fit", "cmd_compare", "cmd_transform", "cmd_inspect"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INTEGRITY = 0, 2, 3, 4
STATIC_SCENES = ("constant", "textured-box")


# ------------------------------------------------------------------ building


def resolve(cfg):
    """Fill in the settings that depend on the scene, so the echoed config is self-contained."""
    v = cfg.values
    if "mode" not in cfg.explicit and v["scene"] in STATIC_SCENES:
        v["mode"] = "static"
    if v["mode"] == "static":
        v["T"] = 1
    v["frames"] = v["frames"] or (1 if v["mode"] == "static" else max(v["T"], 2))
    cfg.explicit |= {"mode", "T", "frames"}
    return cfg


def build_run(cfg):
    """Scene, model and training settings described by a config."""
    v = resolve(cfg).values
    scene = make_scene(v["scene"], v["seed"], v["width"], v["height"], v["train_views"], v["test_views"],
                       v["frames"])
    try:
        spec = FieldSpec(
            N=v["N"], T=v["T"], app_ranks=v["app_ranks"], den_ranks=v["den_ranks"],
            app_dim=v["app_dim"], out_dim=v["out_dim"], mode=v["mode"],
            basis_kind=v["basis"], basis_name=v["wavelet"] or None, level=v["level"],
        )
        weights = LossWeights(v["lambda_photo"], v["lambda_reg"], v["lambda_reg_t"], v["lambda_m"])
        targets = tuple((n, spec.T) for n in v["upsample_N"])
        schedule = Schedule(v["steps"], v["upsample_steps"], targets, v["emptiness_steps"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    field = DaRePlaneField.initialize(spec, np.random.default_rng([v["seed"], 1]))
    field.mask_mode = v["mask_mode"]
    field.use_masks = v["use_masks"]
    model = RadianceModel.create(field, np.random.default_rng([v["seed"], 2]),
                                 density_shift=v["density_shift"], distance_scale=v["distance_scale"])
    tcfg = TrainConfig(
        steps=v["steps"], batch=v["batch"], samples=v["samples"], lr_plane=v["lr_plane"], lr_net=v["lr_net"],
        lr_decay=v["lr_decay"], weights=weights, schedule=schedule, emptiness_res=v["emptiness_res"],
        tau=v["tau"], clip_norm=v["clip_norm"], seed=v["seed"], chunk=v["chunk"], workers=v["workers"] or None,
        background=tuple(scene.background),
    )
    return scene, model, tcfg


def _fmt(x):
    return "inf" if x == float("inf") else f"{x:.6f}"


def _run_fit(cfg, out):
    scene, model, tcfg = build_run(cfg)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(cfg.dump())
    result = fit(model, scene.train, scene.test, tcfg, log_path=os.path.join(out, "log.txt"))
    archive = encode_archive(result.model.field, quantize_8bit=cfg["quantize"],
                             extras={"mlp." + k: w for k, w in result.model.mlp.params.items()})
    with open(os.path.join(out, "archive.dare"), "wb") as fh:
        fh.write(archive)
    lines = [
        f"psnr {_fmt(result.metrics['psnr'])}",
        f"ssim {_fmt(result.metrics['ssim'])}",
        f"sparsity {_fmt(result.metrics['sparsity'])}",
        f"archive_bytes {len(archive)}",
        f"coefficients {result.model.field.coefficient_count()}",
    ]
    for i, row in enumerate(result.metrics["views"]):
        lines.append(f"view {i} frame {row['frame']} psnr {_fmt(row['psnr'])} ssim {_fmt(row['ssim'])}")
        write_ppm(os.path.join(out, f"render_{i:03d}.ppm"), row["image"])
    with open(os.path.join(out, "metrics.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return scene, result, archive


def cmd_fit(cfg, out):
    _, result, _ = _run_fit(cfg, out)
    print(f"psnr {_fmt(result.metrics['psnr'])} ssim {_fmt(result.metrics['ssim'])} "
          f"sparsity {_fmt(result.metrics['sparsity'])}")
    return result


def _per_frame(rows):
    frames = sorted({r["frame"] for r in rows})
    return frames, np.array([np.mean([r["psnr"] for r in rows if r["frame"] == f]) for f in frames])


def cmd_compare(cfg, out, tolerance=0.05):
    """Fit two arms at an equal coefficient budget and report the difference."""
    cfg_b = cfg.with_overrides()
    counts = [build_run(c)[1].field.coefficient_count() for c in (cfg, cfg_b)]
    if abs(counts[0] - counts[1]) > tolerance * max(counts):
        raise ConfigError(f"coefficient budgets differ by more than {tolerance:.0%}: {counts[0]} vs {counts[1]}")
    scene, res_a, _ = _run_fit(cfg, os.path.join(out, "a"))
    _, res_b, _ = _run_fit(cfg_b, os.path.join(out, "b"))
    frames, pa = _per_frame(res_a.metrics["views"])
    _, pb = _per_frame(res_b.metrics["views"])
    delta = res_a.metrics["psnr"] - res_b.metrics["psnr"]
    lines = [
        f"arm_a {cfg['basis']} coefficients {counts[0]} psnr {_fmt(res_a.metrics['psnr'])}",
        f"arm_b {cfg_b['basis']} coefficients {counts[1]} psnr {_fmt(res_b.metrics['psnr'])}",
        f"delta_psnr {_fmt(delta)}",
        f"frame_var_a {_fmt(float(pa.var()))}",
        f"frame_var_b {_fmt(float(pb.var()))}",
        "frame psnr_a psnr_b",
    ]
    lines += [f"{f} {_fmt(a)} {_fmt(b)}" for f, a, b in zip(frames, pa, pb)]
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    for i, (ra, rb, view) in enumerate(zip(res_a.metrics["views"], res_b.metrics["views"], scene.test)):
        side = np.concatenate([ra["image"].data, rb["image"].data, np.asarray(view.image)], axis=1)
        write_ppm(os.path.join(out, f"side_{i:03d}.ppm"), Image(side))
    print(f"delta_psnr {_fmt(delta)}")
    return delta, pa, pb


def cmd_transform(cfg, out):
    """Subband gallery and reconstruction report for a PPM image."""
    try:
        img = read_ppm(cfg["image"])
    except OSError as exc:
        raise ConfigError(f"cannot read image {cfg['image']}: {exc.strerror}") from None
    plane = img.data.mean(axis=2)
    level = cfg["level"]
    step = 1 << level
    if plane.shape[0] % step or plane.shape[1] % step:
        raise ConfigError(f"image size {plane.shape[1]}x{plane.shape[0]} is not divisible by 2**{level}")
    os.makedirs(out, exist_ok=True)
    lines = []
    if cfg["basis"] == "dtcwt":
        fb = cfg["wavelet"] or "near_sym_a"
        c = dtcwt2d_forward(plane, level, fb)
        recon = dtcwt2d_inverse(c, fb)
        bands = []
        for lev in range(level):
            for part, grids in (("real", c.real[lev]), ("imag", c.imag[lev])):
                for d, ang in enumerate(ORIENTATIONS):
                    bands.append((f"l{lev + 1}_{part}_{ang:+.0f}", grids[d]))
        # orientation of what each real subband alone reconstructs at level 1
        for d, ang in enumerate(ORIENTATIONS):
            only = c.map(np.zeros_like)
            only.real[0][d] = c.real[0][d]
            atom = dtcwt2d_inverse(only, fb)
            meas = dominant_orientation(atom) if np.any(atom) else float("nan")
            lines.append(f"orientation {ang:+.0f} measured {meas:.2f}")
    else:
        wav = cfg["wavelet"] or "bior44"
        c = dwt2d_forward(plane, level, wav)
        recon = dwt2d_inverse(c, wav)
        bands = [(f"l{lev + 1}_{name}", g) for lev, det in enumerate(c.details)
                 for name, g in zip(("lh", "hl", "hh"), det)]
    err = float(np.linalg.norm(recon - plane) / max(np.linalg.norm(plane), 1e-300))
    for name, g in bands:
        mag = np.abs(g)
        peak = mag.max()
        write_ppm(os.path.join(out, f"subband_{name}.ppm"), Image((mag / peak if peak > 0 else mag)[..., None]))
    lines = [f"reconstruction_psnr {_fmt(psnr(recon, plane))}", f"relative_error {err:.3e}",
             f"subbands {len(bands)}"] + lines
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return err


def cmd_inspect(path):
    """Header dump and integrity check of an archive."""
    with open(path, "rb") as fh:
        data = fh.read()
    field, masks, extras, info = decode_archive(data, with_info=True)
    s = info.spec
    print(f"version {info.version}")
    print(f"geometry N={s.N} T={s.T} mode={s.mode}")
    print(f"basis {s.basis_kind} {s.basis_name} level {s.level}")
    print(f"ranks app={','.join(map(str, s.app_ranks))} den={','.join(map(str, s.den_ranks))}")
    print(f"features app_dim={s.app_dim} out_dim={s.out_dim}")
    print(f"values {'uint8' if info.quantized else 'float32'}")
    print(f"entries {info.entries} kept {info.kept} sparsity {info.sparsity:.6f}")
    print(f"bytes total {info.total_bytes} masks {info.mask_bytes} values {info.value_bytes}")
    print(f"dense arrays {len(extras) + sum(1 for k in field.params if '.g' not in k)}")
    print("CRC OK")
    return info


# ---------------------------------------------------------------------- main


def _parser():
    p = argparse.ArgumentParser(prog="dareplane", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=("fit", "compare", "transform", "inspect"))
    p.add_argument("--config", required=True, help="config file (or an archive for inspect)")
    p.add_argument("--out", help="output directory (overrides the config's 'out')")
    p.add_argument("--seed", help="unsigned 64-bit seed (overrides the config's 'seed')")
    return p


def _is_archive(path):
    try:
        with open(path, "rb") as fh:
            return fh.read(4) == b"DARE"
    except OSError:
        return False


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "inspect" and _is_archive(args.config):
            archive = args.config
        else:
            cfg = load_config(args.config, args.command)
            if args.seed is not None:
                try:
                    seed = int(args.seed, 0)
                except ValueError:
                    raise ConfigError(f"--seed must be an integer, got {args.seed!r}") from None
                if not 0 <= seed < 1 << 64:
                    raise ConfigError("--seed must be an unsigned 64-bit integer")
                cfg.values["seed"] = seed
            if args.out is not None:
                cfg.values["out"] = args.out
            archive = cfg.get("archive")
        if args.command == "inspect":
            cmd_inspect(archive)
        elif args.command == "fit":
            cmd_fit(cfg, cfg["out"])
        elif args.command == "compare":
            cmd_compare(cfg, cfg["out"])
        else:
            cmd_transform(cfg, cfg["out"])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PpmError as exc:
        print(f"image error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ArchiveError as exc:
        print(f"integrity failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
