"""Command-line interface: ``metareg {phantom,register,eval,gradcheck}``.

Exit codes: 0 success, 1 check failure, 2 usage or input error, 3 numerical
error. Every flag may also be given in a JSON file passed with ``--config``;
keys mirror the flag names (dashes or underscores) and flags win.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import io as mio
from .core import MetaRegError, NumericalError, as_mask
from .energy import MODES
from .flow import metamorphic_output
from .gradcheck import MAX_SIZE, check_gradient, random_instance
from .metrics import count_negative_jacobians, evaluate_registration
from .optim import RegConfig, register
from .phantom import PhantomSpec, gen_pair

log = logging.getLogger("metareg")

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3

PHANTOM_DEFAULTS = {
    "seed": 0,
    "size": 64,
    "count": 1,
    "out_dir": None,
    "organ_rx": 22.0,
    "organ_ry": 17.0,
    "texture_amp": 0.1,
    "warp_amp": 3.0,
    "warp_sigma": 10.0,
    "tumor_radius": 6.0,
    "tumor_intensity": 0.35,
    "tumor_count": 1,
    "no_pgm": False,
}

REGISTER_DEFAULTS = {
    "source": None,
    "target": None,
    "mask": None,
    "mode": "metamorphic",
    "steps": 7,
    "kappa": 0.9,
    "lambda1": 1.0,
    "lambda2": 1.0,
    "lambda3": 0.001,
    "lr": 0.05,
    "iters": 500,
    "tol_rel": 1e-6,
    "seed": 0,
    "out_dir": None,
    "no_figures": False,
}

EVAL_DEFAULTS = {
    "result_dir": None,
    "truth_phi": None,
    "src_organ_mask": None,
    "tgt_organ_mask": None,
    "csv": None,
}

GRADCHECK_DEFAULTS = {
    "size": 8,
    "steps": 2,
    "mode": "metamorphic",
    "seed": 0,
    "tol": 1e-4,
}

TABLE_COLUMNS = ("method", "ssd_total", "ssd_healthy", "foldings", "runtime_ms", "dice", "field_err_max")


class UsageError(Exception):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot load config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in raw.items()}


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge flags over config-file values over built-in defaults."""
    config = _load_config(getattr(args, "config", None))
    unknown = set(config) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    opts = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        opts[key] = flag if flag is not None else config.get(key, default)
    return opts


def _require(opts: dict, *keys: str) -> None:
    missing = [k for k in keys if opts.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return mio.read_pgm(path)
    img = mio.read_raster(path)
    if img.ndim != 2 or img.dtype == bool:
        raise mio.FormatError(f"{path}: expected a scalar image raster")
    return img


def _read_mask(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return as_mask(mio.read_pgm(path) >= 0.5)
    m = mio.read_raster(path)
    if m.dtype != bool:
        raise mio.FormatError(f"{path}: expected a uint8 mask raster")
    return m


def _read_vector(path) -> np.ndarray:
    phi = mio.read_raster(path)
    if phi.ndim != 3:
        raise mio.FormatError(f"{path}: expected a vector raster")
    return phi


def _f32(a: np.ndarray) -> np.ndarray:
    # the values a float32 raster will hold once written and read back
    return a.astype(np.float32).astype(np.float64)


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise mio.RasterIOError(f"cannot create {out}: {exc}") from exc
    return out


# phantom


def cmd_phantom(opts: dict) -> int:
    _require(opts, "out_dir")
    count = int(opts["count"])
    if count < 1:
        raise UsageError(f"--count must be >= 1, got {count}")
    template = PhantomSpec(
        size=int(opts["size"]),
        seed=int(opts["seed"]),
        organ_radii=(float(opts["organ_rx"]), float(opts["organ_ry"])),
        texture_amp=float(opts["texture_amp"]),
        warp_amp=float(opts["warp_amp"]),
        warp_sigma=float(opts["warp_sigma"]),
        tumor_radius=float(opts["tumor_radius"]),
        tumor_intensity=float(opts["tumor_intensity"]),
        tumor_count=int(opts["tumor_count"]),
    )
    template.validate()
    out = _out_dir(opts["out_dir"])
    pairs = []
    for i in range(count):
        spec = replace(template, seed=template.seed + i)
        pair = gen_pair(spec)
        name = f"pair_{spec.seed:04d}"
        pdir = _out_dir(out / name)
        rasters = {
            "I0": pair.I0,
            "I1": pair.I1,
            "mask": pair.mask,
            "phi_truth": pair.phi_truth,
            "q_truth": pair.q_truth,
            "organ_src": pair.organ_mask_src,
            "organ_tgt": pair.organ_mask_tgt,
        }
        files = {}
        for key, arr in rasters.items():
            mio.write_raster(pdir / f"{key}.mrf", arr)
            files[key] = f"{name}/{key}.mrf"
        if not opts["no_pgm"]:
            for key in ("I0", "I1"):
                mio.write_pgm(pdir / f"{key}.pgm", np.clip(rasters[key], 0.0, 1.0))
                files[f"{key}_pgm"] = f"{name}/{key}.pgm"
        max_disp = float(np.hypot(pair.phi_truth[0], pair.phi_truth[1]).max())
        pairs.append({"seed": spec.seed, "files": files, "mask_pixels": int(pair.mask.sum()), "max_disp": max_disp})
        print(
            f"pair {name}\tseed={spec.seed}\tmask_px={int(pair.mask.sum())}"
            f"\tmax_disp={max_disp:.4f}\tfoldings={count_negative_jacobians(pair.phi_truth)}"
        )
    spec_dict = asdict(template)
    spec_dict["organ_radii"] = list(template.organ_radii)
    manifest = {"spec": spec_dict, "count": count, "pairs": pairs}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return EXIT_OK


# register


def cmd_register(opts: dict) -> int:
    _require(opts, "source", "target", "out_dir")
    mode = opts["mode"]
    if mode not in MODES:
        raise UsageError(f"--mode must be one of {MODES}, got {mode!r}")
    if opts["mask"] is None and mode != "diffeo":
        raise UsageError(f"mode {mode!r} requires --mask")
    cfg = RegConfig(
        mode=mode,
        steps=int(opts["steps"]),
        kappa=float(opts["kappa"]),
        lambdas=(float(opts["lambda1"]), float(opts["lambda2"]), float(opts["lambda3"])),
        lr=float(opts["lr"]),
        max_iters=int(opts["iters"]),
        tol_rel=float(opts["tol_rel"]),
        seed=int(opts["seed"]),
    )
    # Work on float32-representable inputs so the written copies reproduce the run.
    I0 = _f32(_read_image(opts["source"]))
    I1 = _f32(_read_image(opts["target"]))
    m = _read_mask(opts["mask"]) if opts["mask"] is not None else None

    result = register(I0, I1, m, cfg)

    out = _out_dir(opts["out_dir"])
    phi = _f32(result.phi_final)
    q = _f32(result.q_final)
    m_eff = m if m is not None else np.zeros(I0.shape, dtype=bool)
    output = metamorphic_output(I0, phi, q, m_eff)
    qm = np.where(m_eff, q, 0.0)
    metrics = evaluate_registration(output, I1, m, phi, result.metrics.runtime_ms)

    rasters = {"source": I0, "target": I1, "phi": phi, "q": q, "output": output, "qm": qm}
    if m is not None:
        rasters["mask"] = m
    files = {}
    for key, arr in rasters.items():
        mio.write_raster(out / f"{key}.mrf", arr)
        files[key] = f"{key}.mrf"
    if not opts["no_figures"]:
        from .plotting import render_run

        figs = render_run(out, I0, I1, m, result)
        files.update({k: Path(v).name for k, v in figs.items()})
    mio.write_report(out / "report.json", cfg, result, metrics, files)
    print(_table_header())
    print(_table_row(mode, metrics.as_dict()))
    print(f"iterations={result.iterations_run}\tconverged={result.converged}\treport={out / 'report.json'}")
    return EXIT_OK


# eval


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return f"{float(value):.6e}"


def _table_header() -> str:
    return "\t".join(TABLE_COLUMNS)


def _table_row(method: str, metrics: dict) -> str:
    return "\t".join([method] + [_fmt(metrics.get(k)) for k in TABLE_COLUMNS[1:]])


def cmd_eval(opts: dict) -> int:
    _require(opts, "result_dir")
    rdir = Path(opts["result_dir"])
    report = mio.read_report(rdir / "report.json")
    files = report.get("files", {})
    for key in ("source", "target", "phi", "q"):
        if key not in files:
            raise mio.RasterIOError(f"{rdir}: report lists no {key!r} artifact")
    I0 = _read_image(rdir / files["source"])
    I1 = _read_image(rdir / files["target"])
    phi = _read_vector(rdir / files["phi"])
    q = _read_image(rdir / files["q"])
    m = _read_mask(rdir / files["mask"]) if "mask" in files else None
    m_eff = m if m is not None else np.zeros(I0.shape, dtype=bool)
    output = metamorphic_output(I0, phi, q, m_eff)

    phi_truth = _read_vector(opts["truth_phi"]) if opts["truth_phi"] else None
    src_seg = _read_mask(opts["src_organ_mask"]) if opts["src_organ_mask"] else None
    tgt_seg = _read_mask(opts["tgt_organ_mask"]) if opts["tgt_organ_mask"] else None
    if (src_seg is None) != (tgt_seg is None):
        raise UsageError("--src-organ-mask and --tgt-organ-mask must be given together")
    metrics = evaluate_registration(
        output, I1, m, phi, report.get("runtime_ms", 0.0), src_seg=src_seg, tgt_seg=tgt_seg, phi_truth=phi_truth
    )
    row = metrics.as_dict()
    method = report.get("mode", "?")
    print(_table_header())
    print(_table_row(method, row))
    if opts["csv"]:
        path = Path(opts["csv"])
        new = not path.exists()
        with path.open("a", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(TABLE_COLUMNS)
            writer.writerow([method] + [row.get(k, "") for k in TABLE_COLUMNS[1:]])
    return EXIT_OK


# gradcheck


def cmd_gradcheck(opts: dict) -> int:
    size = int(opts["size"])
    if size > MAX_SIZE:
        raise UsageError(f"--size {size} exceeds the gradcheck limit of {MAX_SIZE}")
    if size < 2:
        raise UsageError(f"--size must be >= 2, got {size}")
    steps = int(opts["steps"])
    if steps < 1:
        raise UsageError(f"--steps must be >= 1, got {steps}")
    mode = opts["mode"]
    if mode not in MODES:
        raise UsageError(f"--mode must be one of {MODES}, got {mode!r}")
    tol = float(opts["tol"])
    params, I0, I1, mask = random_instance(size, steps, mode, int(opts["seed"]))
    res = check_gradient(params, I0, I1, mask, mode)
    status = "PASS" if res.passed(tol) else "FAIL"
    print(
        f"gradcheck {status}\tsize={size}\tsteps={steps}\tmode={mode}\tseed={opts['seed']}"
        f"\tmax_rel_err={res.max_rel_err:.3e}\ttol={tol:.1e}\tchecked={res.checked}/{res.total}"
    )
    print(f"worst {res.worst_label}\tadjoint={res.adjoint:.10e}\tfinite_diff={res.finite_diff:.10e}")
    return EXIT_OK if res.passed(tol) else EXIT_CHECK


# parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with option defaults (flags win)")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def _flag(p, name, **kw):
    p.add_argument(name, default=None, **kw)


def _switch(p, name, help_text):
    p.add_argument(name, action="store_const", const=True, default=None, help=help_text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metareg", description="Metamorphic image registration toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate synthetic source/target pairs")
    _add_common(p)
    _flag(p, "--seed", type=int, help="base seed (pair i uses seed + i)")
    _flag(p, "--size", type=int, help="grid side length in pixels")
    _flag(p, "--count", type=int, help="number of pairs")
    _flag(p, "--out-dir", help="output directory")
    _flag(p, "--organ-rx", type=float, help="organ ellipse x radius")
    _flag(p, "--organ-ry", type=float, help="organ ellipse y radius")
    _flag(p, "--texture-amp", type=float)
    _flag(p, "--warp-amp", type=float, help="peak displacement speed in pixels")
    _flag(p, "--warp-sigma", type=float, help="width of the velocity bumps")
    _flag(p, "--tumor-radius", type=float)
    _flag(p, "--tumor-intensity", type=float)
    _flag(p, "--tumor-count", type=int)
    _switch(p, "--no-pgm", "skip the PGM previews")
    p.set_defaults(func=cmd_phantom, defaults=PHANTOM_DEFAULTS)

    p = sub.add_parser("register", help="register a source image onto a target")
    _add_common(p)
    _flag(p, "--source", help="source image (.mrf or .pgm)")
    _flag(p, "--target", help="target image (.mrf or .pgm)")
    _flag(p, "--mask", help="pathology mask (.mrf uint8 or .pgm)")
    _flag(p, "--mode", choices=MODES)
    _flag(p, "--steps", type=int, help="number of flow steps N")
    _flag(p, "--kappa", type=float, help="per-step Lipschitz bound")
    _flag(p, "--lambda1", type=float, help="similarity weight")
    _flag(p, "--lambda2", type=float, help="intensity smoothness weight")
    _flag(p, "--lambda3", type=float, help="folding penalty weight")
    _flag(p, "--lr", type=float, help="Adam learning rate")
    _flag(p, "--iters", type=int, help="maximum Adam iterations")
    _flag(p, "--tol-rel", type=float, help="relative energy change for convergence")
    _flag(p, "--seed", type=int)
    _flag(p, "--out-dir", help="output directory")
    _switch(p, "--no-figures", "skip the PNG figures")
    p.set_defaults(func=cmd_register, defaults=REGISTER_DEFAULTS)

    p = sub.add_parser("eval", help="recompute metrics for a register output directory")
    _add_common(p)
    _flag(p, "--result-dir", help="directory written by 'register'")
    _flag(p, "--truth-phi", help="true displacement raster")
    _flag(p, "--src-organ-mask", help="source organ mask raster")
    _flag(p, "--tgt-organ-mask", help="target organ mask raster")
    _flag(p, "--csv", help="append the row to this CSV file")
    p.set_defaults(func=cmd_eval, defaults=EVAL_DEFAULTS)

    p = sub.add_parser("gradcheck", help="finite-difference check of the energy gradient")
    _add_common(p)
    _flag(p, "--size", type=int, help=f"grid side length (<= {MAX_SIZE})")
    _flag(p, "--steps", type=int)
    _flag(p, "--mode", choices=MODES)
    _flag(p, "--seed", type=int)
    _flag(p, "--tol", type=float, help="max relative error allowed")
    p.set_defaults(func=cmd_gradcheck, defaults=GRADCHECK_DEFAULTS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        opts = _resolve(args, args.defaults)
        return args.func(opts)
    except NumericalError as exc:
        at = f" (iteration {exc.iteration})" if exc.iteration is not None else ""
        print(f"error: numerical failure{at}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, MetaRegError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
