"""Configuration-driven pipeline and command-line entry point.

    statlap run    --config cfg.json [--output DIR] [--seed N] [--threads N]
    statlap verify --config cfg.json [--output DIR] [--seed N] [--threads N]

One JSON config describes the manifold (a catalog model on a chart, a
synthetic preset, or explicit field files), the dual-pair parameter, the f
choice, the spectral settings and a task list.  Every run writes a
machine-readable report.json whose checks section carries each invariant
residual; the process exits 0 only if all executed checks pass.  Identical
(config, seed) pairs produce byte-identical outputs.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import accel, fieldio
from .checks import ManifoldSource, run_all_checks
from .errors import ConfigError, StatlapError
from .geometry import SYNTHETIC_PRESETS, build_manifold, synthetic_manifold
from .kernels import kernel_gram, uniform_prior
from .models import eval_closed_form, get_model, model_grid
from .operators import assemble_weak_laplacian, inner_product_data
from .spectral import decomposition_for_time, eigendecompose, vdd_matrix

TASKS = ("spectrum", "vdd-matrix", "kernel-gram", "verify")

_TOP_KEYS = {"model", "fields", "alpha", "f", "spectral", "tasks", "vdd",
             "kernel", "verify", "output", "seed"}
_MODEL_KEYS = {"name", "fixed_params", "chart", "preset", "points"}
_CHART_KEYS = {"center", "period", "points"}
_SPECTRAL_KEYS = {"k", "dense_cutoff", "tol", "cluster_rtol"}
_VDD_KEYS = {"t"}
_KERNEL_KEYS = {"t", "samples", "samples_file", "prior"}
_VERIFY_KEYS = {"refine", "spectral_k", "vdd_t", "kernel_t"}
_FIELDS_KEYS = {"path", "g", "C", "f"}


def _reject_unknown(block, allowed, where):
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def validate_config(cfg: dict) -> dict:
    """Schema-validate a raw config dict; returns it with defaults filled."""
    _reject_unknown(cfg, _TOP_KEYS, "config")
    if ("model" in cfg) == ("fields" in cfg):
        raise ConfigError("config needs exactly one of 'model' or 'fields'")
    if "model" in cfg:
        model = cfg["model"]
        _reject_unknown(model, _MODEL_KEYS, "model")
        if "name" not in model:
            raise ConfigError("model.name is required")
        if model["name"] == "synthetic":
            if "preset" not in model or model["preset"] not in SYNTHETIC_PRESETS:
                raise ConfigError(
                    f"synthetic model needs a preset from {sorted(SYNTHETIC_PRESETS)}")
            if "points" not in model:
                raise ConfigError("synthetic model needs a points list")
        else:
            if "chart" not in model:
                raise ConfigError("parametric model needs a chart block")
            _reject_unknown(model["chart"], _CHART_KEYS, "model.chart")
            for key in _CHART_KEYS:
                if key not in model["chart"]:
                    raise ConfigError(f"model.chart.{key} is required")
    else:
        _reject_unknown(cfg["fields"], _FIELDS_KEYS, "fields")
        if "path" not in cfg["fields"]:
            raise ConfigError("fields.path is required")

    alpha = cfg.get("alpha", 1.0)
    if not isinstance(alpha, (int, float)):
        raise ConfigError("alpha must be a number")

    fspec = cfg.get("f", "zero")
    if isinstance(fspec, str):
        if fspec not in ("zero", "log-sqrt-det-g"):
            raise ConfigError("f must be 'zero', 'log-sqrt-det-g' or a field reference")
    elif isinstance(fspec, dict):
        _reject_unknown(fspec, {"path", "name"}, "f")
        if "path" not in fspec:
            raise ConfigError("explicit f needs a path")
    else:
        raise ConfigError("f must be a string or an object")

    if "spectral" in cfg:
        _reject_unknown(cfg["spectral"], _SPECTRAL_KEYS, "spectral")
    tasks = cfg.get("tasks", ["verify"])
    if not isinstance(tasks, list) or not tasks:
        raise ConfigError("tasks must be a non-empty list")
    for task in tasks:
        if task not in TASKS:
            raise ConfigError(f"unknown task {task!r}; valid tasks are {list(TASKS)}")
    if "vdd-matrix" in tasks:
        _reject_unknown(cfg.get("vdd", {}), _VDD_KEYS, "vdd")
        if "t" not in cfg.get("vdd", {}):
            raise ConfigError("vdd.t is required for the vdd-matrix task")
    if "kernel-gram" in tasks:
        kernel = cfg.get("kernel", {})
        _reject_unknown(kernel, _KERNEL_KEYS, "kernel")
        if "t" not in kernel:
            raise ConfigError("kernel.t is required for the kernel-gram task")
        if ("samples" in kernel) == ("samples_file" in kernel):
            raise ConfigError("kernel needs exactly one of samples or samples_file")
        if kernel.get("prior", "uniform") != "uniform":
            raise ConfigError("only the uniform prior is configurable")
    if "verify" in cfg:
        _reject_unknown(cfg["verify"], _VERIFY_KEYS, "verify")
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    out = dict(cfg)
    out.setdefault("alpha", 1.0)
    out.setdefault("f", "zero")
    out.setdefault("seed", 0)
    out.setdefault("tasks", ["verify"])
    return out


def _f_values(cfg, grid, sqrt_det_g):
    fspec = cfg.get("f", "zero")
    if fspec == "zero":
        return np.zeros(grid.n_nodes)
    if fspec == "log-sqrt-det-g":
        return np.log(sqrt_det_g)
    path = fspec["path"]
    fgrid, fields = fieldio.load_fields(path)
    name = fspec.get("name", "f")
    if name not in fields:
        raise ConfigError(f"field {name!r} not found in {path}")
    if fgrid.points != grid.points:
        raise ConfigError("f field grid does not match the chart grid")
    return fields[name].values


def manifold_source(cfg: dict) -> ManifoldSource:
    """Build the (refinable, when possible) manifold source from a config."""
    alpha = float(cfg["alpha"])
    if "fields" in cfg:
        fblock = cfg["fields"]
        grid, fields = fieldio.load_fields(fblock["path"])
        gname, cname = fblock.get("g", "g"), fblock.get("C", "C")
        for want in (gname, cname):
            if want not in fields:
                raise ConfigError(f"field {want!r} not found in {fblock['path']}")
        g = fields[gname].values
        C = fields[cname].values
        sdg = np.sqrt(np.linalg.det(g))
        f = _f_values(cfg, grid, sdg)

        def builder(factor):
            if factor != 1:
                raise ConfigError("field-file manifolds cannot be refined")
            return build_manifold(grid, g, C, f, alpha=alpha)

        return ManifoldSource(builder=builder, refinable=False, model=None,
                              smooth=False)

    mblock = cfg["model"]
    if mblock["name"] == "synthetic":
        preset = mblock["preset"]
        points = tuple(int(p) for p in np.atleast_1d(mblock["points"]))

        def builder(factor):
            return synthetic_manifold(preset, tuple(p * factor for p in points),
                                      alpha=alpha)

        # f override for presets applies only to the zero default
        if cfg.get("f", "zero") != "zero":
            base = builder

            def builder(factor):
                md = base(factor)
                f = _f_values(cfg, md.grid, md.sqrt_det_g.values)
                return build_manifold(md.grid, md.g.values, md.C.values, f, alpha=alpha)

        return ManifoldSource(builder=builder, refinable=True, model=None)

    model = get_model(mblock["name"], **mblock.get("fixed_params", {}))
    chart = mblock["chart"]

    def builder(factor):
        points = [int(p) * factor for p in np.atleast_1d(chart["points"])]
        grid = model_grid(chart["center"], chart["period"], points)
        g, C = eval_closed_form(model, grid)
        f = _f_values(cfg, grid, np.sqrt(np.linalg.det(g.values)))
        return build_manifold(grid, g.values, C.values, f, alpha=alpha)

    return ManifoldSource(builder=builder, refinable=True, model=model,
                          smooth=model.chart_fields_smooth)


def _spectral_rank(cfg, dof):
    block = cfg.get("spectral", {})
    k = block.get("k", "full")
    if k == "full":
        dense_cutoff = block.get("dense_cutoff", 2048)
        return dof if dof <= dense_cutoff else min(96, dof - 1)
    return min(int(k), dof)


def _decomposition(cfg, L, ipd, seed, t=None):
    block = cfg.get("spectral", {})
    dense_cutoff = block.get("dense_cutoff", 2048)
    if t is not None and block.get("k", "full") == "full":
        return decomposition_for_time(L, ipd, t, seed=seed, dense_cutoff=dense_cutoff)
    k = _spectral_rank(cfg, L.matrix.shape[0])
    return eigendecompose(L, ipd, k, tol=block.get("tol", 0.0), seed=seed,
                          dense_cutoff=dense_cutoff,
                          cluster_rtol=block.get("cluster_rtol", 1e-8))


def _task_spectrum(cfg, source, outdir, seed, report):
    md = source.build(1)
    ipd = inner_product_data(md)
    L = assemble_weak_laplacian(md, ipd)
    dec = _decomposition(cfg, L, ipd, seed)
    fieldio.write_csv_spectrum(os.path.join(outdir, "spectrum.csv"), dec.eigenvalues)
    eig_fields = {f"eigenfield_{q:04d}": dec.fields[q] for q in range(dec.k)}
    fieldio.save_fields(os.path.join(outdir, "eigenfields.json"), md.grid, eig_fields)
    report["artifacts"] += ["spectrum.csv", "eigenfields.json"]
    report["spectrum"] = {
        "k": dec.k,
        "eigenvalues_head": [float(v) for v in dec.eigenvalues[: min(16, dec.k)]],
        "bortho_residual": float(dec.bortho_residual),
        "eig_residual": float(dec.eig_residual),
    }


def _task_vdd(cfg, source, outdir, seed, report):
    md = source.build(1)
    ipd = inner_product_data(md)
    L = assemble_weak_laplacian(md, ipd)
    t = float(cfg["vdd"]["t"])
    dec = _decomposition(cfg, L, ipd, seed, t=t)
    D = vdd_matrix(dec, md, t)
    ids = list(range(md.grid.n_nodes))
    fieldio.write_csv_matrix(os.path.join(outdir, "vdd_matrix.csv"), D, ids, ids,
                             corner="node_id")
    report["artifacts"].append("vdd_matrix.csv")
    report["vdd"] = {"t": t, "k": dec.k, "tail_bound": float(dec.tail_bound(t)),
                     "max_distance": float(D.max())}


def _task_kernel_gram(cfg, source, outdir, seed, report):
    if source.model is None:
        raise ConfigError("kernel-gram needs a parametric model configuration")
    md = source.build(1)
    ipd = inner_product_data(md)
    L = assemble_weak_laplacian(md, ipd)
    kblock = cfg["kernel"]
    t = float(kblock["t"])
    if "samples_file" in kblock:
        ids, values = fieldio.read_samples_jsonl(kblock["samples_file"])
    else:
        values = [float(v) for v in kblock["samples"]]
        ids = [str(i) for i in range(len(values))]
    dec = _decomposition(cfg, L, ipd, seed, t=t if t > 0 else None)
    prior = uniform_prior(md)
    gram = kernel_gram(values, t, dec, md, source.model, prior, sample_ids=ids)
    fieldio.write_csv_matrix(os.path.join(outdir, "gram.csv"), gram.matrix, ids, ids,
                             corner="sample_id")
    report["artifacts"].append("gram.csv")
    report["kernel_gram"] = {"t": t, "n_samples": len(values),
                             "min_eigenvalue": gram.min_eigenvalue()}


def _task_verify(cfg, source, outdir, seed, report):
    vblock = cfg.get("verify", {})
    if not vblock.get("refine", True):
        source = ManifoldSource(builder=source.builder, refinable=False,
                                model=source.model, smooth=source.smooth)
    md = source.build(1)
    dof = md.grid.n_nodes * md.grid.dim
    k = min(int(vblock.get("spectral_k", 48)), dof)
    checks, _ = run_all_checks(
        source, seed=seed, spectral_k=k,
        vdd_t=float(vblock.get("vdd_t", 0.5)),
        kernel_t=float(vblock.get("kernel_t", 0.1)))
    report["checks"] += [c.to_dict() for c in checks]
    _print_check_table(checks)


def _print_check_table(checks):
    name_w = max(len(c.name) for c in checks)
    print(f"{'identity':<{name_w}}  {'residual':>12}  {'tolerance':>12}  "
          f"{'ratio':>8}  result")
    for c in checks:
        tol = "-" if c.tolerance is None else f"{c.tolerance:.1e}"
        ratio = "-" if c.ratio is None else f"{c.ratio:.2f}"
        state = "pass" if c.passed else "FAIL"
        print(f"{c.name:<{name_w}}  {c.residual:>12.3e}  {tol:>12}  {ratio:>8}  {state}")


_TASK_RUNNERS = {
    "spectrum": _task_spectrum,
    "vdd-matrix": _task_vdd,
    "kernel-gram": _task_kernel_gram,
    "verify": _task_verify,
}


def run_pipeline(cfg: dict, output_dir: str, seed: int | None = None) -> dict:
    """Execute the configured tasks; returns the report dict.

    The report carries the canonical config echo, its digest, every check
    result and the produced artifact names; all content is deterministic for
    a fixed (config, seed).
    """
    cfg = validate_config(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    source = manifold_source(cfg)
    canonical = json.dumps(cfg, sort_keys=True)
    report = {
        "config": cfg,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": cfg["seed"],
        "tasks": list(cfg["tasks"]),
        "artifacts": [],
        "checks": [],
    }
    os.makedirs(output_dir, exist_ok=True)
    for task in cfg["tasks"]:
        _TASK_RUNNERS[task](cfg, source, output_dir, cfg["seed"], report)
    report["all_checks_passed"] = all(c["passed"] for c in report["checks"])
    report["artifacts"].append("report.json")
    fieldio.atomic_write_text(os.path.join(output_dir, "report.json"),
                              json.dumps(report, sort_keys=True, indent=1) + "\n")
    return report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="statlap",
        description="Vector Laplacian, heat kernels and diffusion distances "
                    "on parametric statistical charts")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, blurb in (("run", "execute the configured task list"),
                        ("verify", "run only the invariant suite")):
        p = sub.add_parser(name, help=blurb)
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--output", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None,
                       help="worker-thread cap (wall time only, never results)")
    args = parser.parse_args(argv)

    if args.threads is not None:
        accel.set_threads(args.threads)

    try:
        with open(args.config) as handle:
            cfg = json.load(handle)
        if not isinstance(cfg, dict):
            raise ConfigError("config root must be a JSON object")
        cfg = validate_config(cfg)
        if args.command == "verify":
            cfg["tasks"] = ["verify"]
        output_dir = args.output or cfg.get("output") or "statlap-out"
    except (json.JSONDecodeError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4

    try:
        report = run_pipeline(cfg, output_dir, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StatlapError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4

    if not report["all_checks_passed"]:
        failing = [c["name"] for c in report["checks"] if not c["passed"]]
        print(f"numerical failure: checks failed: {failing}", file=sys.stderr)
        return 3
    print(f"ok: {len(report['checks'])} checks passed, "
          f"artifacts in {output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
