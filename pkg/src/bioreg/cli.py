"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure. On
failure a single ``<Category>: <message>`` line goes to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
import warnings
from dataclasses import asdict
from typing import Optional

import numpy as np

from . import __version__
from .core import DisplacementField2D
from .elasticity import Material, strain_energy_density, strain_tensor, stiffness_matrix
from .errors import BioregError, MissingMasks
from .metrics import evaluate, jacobian_det_map, jacobian_metric
from .objective import LossConfig
from .phantom import PhantomSpec, endpoint_error, make_pair
from .rasterio import (
    Raster,
    dump_report,
    field_to_raster,
    image_to_raster,
    load_field,
    load_image,
    load_masks,
    masks_to_raster,
    read_raster,
    write_raster,
)
from .solver import SolverConfig, register

log = logging.getLogger("bioreg")

REG_CHOICES = {"bim": "bim", "l2": "l2grad", "none": "none"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_register_args(p):
    p.add_argument("--moving", required=True)
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving-masks")
    p.add_argument("--fixed-masks")
    p.add_argument("--reg", choices=sorted(REG_CHOICES), default="bim")
    p.add_argument("--lambda", dest="lam", type=float, default=0.05)
    p.add_argument("--gamma", type=float, default=0.01)
    p.add_argument("--nu", type=float, default=0.4)
    p.add_argument("--E", dest="E", type=float, default=1.0)
    p.add_argument("--reg-norm", choices=["rms", "sum", "mean"], default="rms")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--pyramid", action="store_true")
    p.add_argument("--gt-dvf", help="ground-truth field; adds endpoint error to the report")
    p.add_argument("--roi", help="mask file whose first channel restricts the endpoint error")
    p.add_argument("--timing", action="store_true", help="record wall-clock time (breaks byte determinism)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bioreg", description="Biomechanics-informed 2D deformable registration")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("register", help="optimise a displacement field for one image pair")
    _add_register_args(p)
    p.add_argument("--out-dvf", required=True)
    p.add_argument("--report", required=True)

    p = sub.add_parser("metrics", help="score a displacement field against mask sets")
    p.add_argument("--dvf", required=True)
    p.add_argument("--moving-masks", required=True)
    p.add_argument("--fixed-masks", required=True)
    p.add_argument("--report", required=True)

    p = sub.add_parser("strain", help="write strain energy and Jacobian determinant maps")
    p.add_argument("--dvf", required=True)
    p.add_argument("--nu", type=float, default=0.4)
    p.add_argument("--E", dest="E", type=float, default=1.0)
    p.add_argument("--out-energy", required=True)
    p.add_argument("--out-detj", required=True)

    p = sub.add_parser("phantom", help="render a contracting-annulus phantom pair")
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--ri", type=float, default=14.0)
    p.add_argument("--ro", type=float, default=22.0)
    p.add_argument("--contraction", type=float, default=0.05)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-prefix", required=True)

    p = sub.add_parser("sweep", help="register once per hyperparameter value")
    p.add_argument("--param", choices=["lambda", "gamma", "nu"], required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    _add_register_args(p)
    p.add_argument("--report", required=True)
    return parser


def _solver_config(args, **override) -> SolverConfig:
    vals = {"lam": args.lam, "gamma": args.gamma, "nu": args.nu}
    vals.update(override)
    loss = LossConfig(
        lam=vals["lam"],
        gamma=vals["gamma"],
        material=Material(args.E, vals["nu"]),
        regularizer=REG_CHOICES[args.reg],
        reg_norm=args.reg_norm,
    )
    return SolverConfig(lr=args.lr, max_iter=args.iters, tol=args.tol, loss=loss, pyramid=args.pyramid)


def _config_echo(cfg: SolverConfig) -> dict:
    d = asdict(cfg)
    d["loss"]["material"] = {"E": cfg.loss.material.E, "nu": cfg.loss.material.nu}
    return d


def _load_inputs(args):
    I_m = load_image(args.moving)
    I_f = load_image(args.fixed)
    masks = None
    if bool(args.moving_masks) != bool(args.fixed_masks):
        raise UsageError("--moving-masks and --fixed-masks must be given together")
    if args.moving_masks:
        masks = (load_masks(args.moving_masks), load_masks(args.fixed_masks))
    gt = load_field(args.gt_dvf) if args.gt_dvf else None
    roi = None
    if args.roi:
        roi = read_raster(args.roi).data[..., 0]
    return I_m, I_f, masks, gt, roi


def _run_pair(args, I_m, I_f, masks, gt, roi, cfg: SolverConfig) -> tuple[dict, DisplacementField2D]:
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MissingMasks)
        if masks is None and cfg.loss.gamma > 0:
            log.warning("gamma > 0 but no masks supplied; segmentation term set to 0")
        res = register(I_m, I_f, masks, cfg)
    u = res.u_star
    rec = {
        "config": _config_echo(cfg),
        "inputs": {"moving": args.moving, "fixed": args.fixed,
                   "moving_masks": args.moving_masks, "fixed_masks": args.fixed_masks},
        "iterations": res.iterations,
        "stop_reason": res.stop_reason,
        "history": res.history,
        "final": res.history[-1],
        "mean_displacement_mm": float(u.magnitude().mean()),
    }
    jm, js = jacobian_metric(u)
    rec["jac_metric"] = {"mean": jm, "std": js, "text": f"{jm:.4f} ± {js:.4f}"}
    if masks is not None:
        rec["metrics"] = evaluate(u, *masks).to_dict()
    if gt is not None:
        roi_mask = roi if roi is not None else np.ones(u.shape, dtype=bool)
        mean, mx = endpoint_error(u, gt, roi_mask)
        rec["endpoint_error_mm"] = {"mean": mean, "max": mx}
    if args.timing:
        rec["seconds"] = time.perf_counter() - t0
    return rec, u


def cmd_register(args) -> int:
    I_m, I_f, masks, gt, roi = _load_inputs(args)
    rec, u = _run_pair(args, I_m, I_f, masks, gt, roi, _solver_config(args))
    write_raster(args.out_dvf, field_to_raster(u))
    dump_report(args.report, {"tool": "bioreg register", "version": __version__, "pairs": [rec]})
    return 0


def cmd_metrics(args) -> int:
    u = load_field(args.dvf)
    report = evaluate(u, load_masks(args.moving_masks), load_masks(args.fixed_masks))
    dump_report(args.report, {"tool": "bioreg metrics", "version": __version__, "dvf": args.dvf,
                              **report.to_dict()})
    return 0


def cmd_strain(args) -> int:
    u = load_field(args.dvf)
    C = stiffness_matrix(Material(args.E, args.nu))
    W = strain_energy_density(strain_tensor(u), C)
    write_raster(args.out_energy, image_to_raster(W))
    write_raster(args.out_detj, image_to_raster(jacobian_det_map(u)))
    return 0


def cmd_phantom(args) -> int:
    spec = PhantomSpec(
        size=(args.size, args.size),
        r_inner=args.ri,
        r_outer=args.ro,
        contraction=args.contraction,
        noise=args.noise,
        seed=args.seed,
    )
    pair = make_pair(spec)
    pre = args.out_prefix
    write_raster(f"{pre}_moving.brf", image_to_raster(pair.I_m))
    write_raster(f"{pre}_fixed.brf", image_to_raster(pair.I_f))
    write_raster(f"{pre}_moving_masks.brf", masks_to_raster(pair.s_m))
    write_raster(f"{pre}_fixed_masks.brf", masks_to_raster(pair.s_f))
    write_raster(f"{pre}_gt_dvf.brf", field_to_raster(pair.u_gt))
    write_raster(f"{pre}_roi.brf", Raster("mask", pair.roi.astype(np.uint8)[..., None], spec.spacing, ("roi",)))
    return 0


def _parse_values(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values must be comma-separated numbers, got {text!r}") from None


def _row(rec, param, value):
    row = {"param": param, "value": value, "mean_displacement_mm": rec["mean_displacement_mm"],
           "jac_metric": rec["jac_metric"]["mean"], "final_total": rec["final"]["total"]}
    if "metrics" in rec:
        for label, m in rec["metrics"]["structures"].items():
            row[f"{label}_dice"] = m["dice"]
            row[f"{label}_hd_mm"] = m["hd_mm"]
    if "endpoint_error_mm" in rec:
        row["epe_mean_mm"] = rec["endpoint_error_mm"]["mean"]
    return row


def cmd_sweep(args) -> int:
    values = _parse_values(args.values)
    if not values:
        raise UsageError("--values is empty")
    key = {"lambda": "lam", "gamma": "gamma", "nu": "nu"}[args.param]
    I_m, I_f, masks, gt, roi = _load_inputs(args)
    runs, table = [], []
    for v in values:
        rec, _ = _run_pair(args, I_m, I_f, masks, gt, roi, _solver_config(args, **{key: v}))
        runs.append(rec)
        table.append(_row(rec, args.param, v))
    dump_report(args.report, {"tool": "bioreg sweep", "version": __version__, "param": args.param,
                              "table": table, "runs": runs})
    return 0


COMMANDS = {
    "register": cmd_register,
    "metrics": cmd_metrics,
    "strain": cmd_strain,
    "phantom": cmd_phantom,
    "sweep": cmd_sweep,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"UsageError: {exc}", file=sys.stderr)
        return 1
    except BioregError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
