"""Command-line entry point.

Every subcommand computes its outputs in memory, then writes them to
``--out-dir`` together with ``manifest.json``: subcommand, full parameter
set, seed, tool version, timestamps, and the SHA-256 of every output.
``freedim replay <manifest>`` re-runs the recorded parameters and compares
digests.  CSV outputs end with a ``# manifest <digest>`` line, where the
digest covers the subcommand, parameters and input-file hashes only, so it
is stable across reruns.

Exit codes: 0 success, 1 invariant or acceptance failure, 2 usage or
configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FreedimError, NumericalFailure
from .kernel import (CellFill, build_band, build_constant, build_diagonal_triangles,
                     build_lifted, build_upper_triangle, ce_sup, kernel_from_json,
                     kernel_to_json, l1_mass, StepFunction, support_area)
from . import dimension, dyson, matio, packing, plotting, randmat, spectra
from .randmat import SampleConfig

EXIT_OK, EXIT_INVARIANT, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3

# CSV trailers are written with this placeholder and patched once the
# input-file hashes, which commands discover while loading, are known
_PENDING = "pending"

# params that do not change output bytes
_NON_OUTPUT = {"out_dir", "workers", "command", "func", "dyson_command"}


class UsageError(Exception):
    pass


class Run:
    """Outputs and status collected by one subcommand."""

    def __init__(self, params_digest):
        self.params_digest = params_digest
        self.files: dict[str, bytes] = {}
        self.status = EXIT_OK
        self.messages: list[str] = []

    def csv(self, name, header, rows):
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(_cell(v, name) for v in row))
        lines.append(f"# manifest {self.params_digest}")
        self.files[name] = ("\n".join(lines) + "\n").encode()

    def json(self, name, doc):
        _check_finite_doc(doc, name)
        self.files[name] = (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode()

    def figure(self, name, draw, *args, **kwargs):
        buf = io.BytesIO()
        draw(*args, buf, **kwargs)
        self.files[name] = buf.getvalue()

    def fail(self, msg):
        self.status = max(self.status, EXIT_INVARIANT)
        self.messages.append(msg)


def _cell(v, where):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, (float, np.floating)):
        if not math.isfinite(v):
            raise NumericalFailure(f"{where}: non-finite value {v}", {"file": where})
        return repr(float(v))
    return str(v)


def _check_finite_doc(doc, where):
    if isinstance(doc, float) and not math.isfinite(doc):
        raise NumericalFailure(f"{where}: non-finite value {doc}", {"file": where})
    if isinstance(doc, dict):
        for v in doc.values():
            _check_finite_doc(v, where)
    elif isinstance(doc, (list, tuple)):
        for v in doc:
            _check_finite_doc(v, where)


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _map(fn, items, workers):
    """Ordered map; results do not depend on ``workers``."""
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# -- kernels -----------------------------------------------------------------

def _add_kernel_args(p):
    g = p.add_argument_group("kernel")
    g.add_argument("--spec", help="kernel JSON file")
    g.add_argument("--builder", choices=["constant", "upper-triangle", "diag-triangles", "band", "lifted"])
    g.add_argument("--n", type=int, help="grid order (constant, upper-triangle, band)")
    g.add_argument("--r", type=int, help="number of diagonal triangles")
    g.add_argument("--w", type=int, help="band width in cells")
    g.add_argument("--c", type=float, default=1.0, help="cell value (default 1)")
    g.add_argument("--N", type=int, help="lifted: number of blocks")
    g.add_argument("--p", type=int, default=1, help="lifted: sub-blocks per block (default 1)")
    g.add_argument("--cij", action="append", default=[], metavar="I,J,V",
                   help="lifted: coefficient c_IJ = V with 1-based I != J; repeatable, unset entries are 0")


def _lifted_coef(args):
    N = args.N
    if N is None:
        raise UsageError("--builder lifted needs --N")
    coef = [[0.0] * N for _ in range(N)]
    for item in args.cij:
        parts = item.split(",")
        if len(parts) != 3:
            raise UsageError(f"--cij expects I,J,V, got {item!r}")
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise UsageError(f"--cij expects I,J,V, got {item!r}") from None
        if not (1 <= i <= N and 1 <= j <= N) or i == j:
            raise UsageError(f"--cij indices must be distinct and in 1..{N}, got {item!r}")
        coef[i - 1][j - 1] = v
    return coef


def _need(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise UsageError(f"--builder {args.builder} needs --{name}")


def _load_kernel(args, inputs):
    if (args.spec is None) == (args.builder is None):
        raise UsageError("give exactly one of --spec or --builder")
    if args.spec is not None:
        data = Path(args.spec).read_bytes()
        inputs[args.spec] = _sha256(data)
        return kernel_from_json(data.decode())
    b = args.builder
    if b == "constant":
        _need(args, "n")
        return build_constant(args.n, Fraction(args.c))
    if b == "upper-triangle":
        _need(args, "n")
        return build_upper_triangle(args.n)
    if b == "diag-triangles":
        _need(args, "r")
        return build_diagonal_triangles(args.r, Fraction(args.c))
    if b == "band":
        _need(args, "n", "w")
        return build_band(args.n, args.w, Fraction(args.c))
    return build_lifted(args.N, args.p, [[Fraction(x) for x in row] for row in _lifted_coef(args)])


def _kernel_from_config(spec, base: Path, inputs):
    if isinstance(spec, str):
        path = Path(spec) if Path(spec).is_absolute() else base / spec
        data = path.read_bytes()
        inputs[str(path)] = _sha256(data)
        return kernel_from_json(data.decode())
    if isinstance(spec, dict) and "builder" in spec:
        ns = argparse.Namespace(spec=None, builder=None, n=None, r=None, w=None, c=1.0,
                                N=None, p=1, cij=[])
        for key, value in spec.items():
            if key == "cij":
                value = [",".join(str(x) for x in item) if isinstance(item, list) else item
                         for item in value]
            if not hasattr(ns, key):
                raise UsageError(f"config kernel: unknown field {key!r}")
            setattr(ns, key, value)
        if ns.builder not in ("constant", "upper-triangle", "diag-triangles", "band", "lifted"):
            raise UsageError(f"config kernel: unknown builder {ns.builder!r}")
        return _load_kernel(ns, inputs)
    return kernel_from_json(spec)


def _hypothesis_doc(h):
    return {"holds": h.holds, "r": h.r, "c": None if h.c is None else str(h.c),
            "failure_reason": h.failure_reason, "valid_r": list(h.valid_r)}


def cmd_kernel(args, run, inputs):
    K = _load_kernel(args, inputs)
    bounds = dimension.dimension_bounds(K)
    lo, hi = ce_sup(K)
    summary = {
        "support_area": str(support_area(K)),
        "l1_mass": str(l1_mass(K)),
        "ce_sup": {"alpha": str(lo), "beta": str(hi)},
        "bounds": bounds.as_dict(),
    }
    run.json("kernel.json", kernel_to_json(K))
    run.json("bounds.json", summary)
    if bounds.lower is not None and bounds.lower > bounds.upper:
        run.fail("lower bound exceeds upper bound")
    print(json.dumps({"kernel": kernel_to_json(K), **summary}, indent=2, sort_keys=True))


# -- spectra -----------------------------------------------------------------

def cmd_brown_disk(args, run, inputs):
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    eps_list = args.eps
    if not eps_list:
        raise UsageError("--eps needs at least one value")
    rows, summary = [], []
    for eps in eps_list:
        r_th = spectra.disk_radius(eps, args.c)

        def one(t, eps=eps):
            X = randmat.perturbed_dt(SampleConfig(args.k, args.seed, t), eps, args.c)
            return spectra.eigenvalues(X)

        samples = _map(one, range(args.trials), args.workers)
        ks = [spectra.ks_uniform_disk(s, r_th) for s in samples]
        rad = [spectra.spectral_radius(s) for s in samples]
        med = [spectra.median_radius(s) for s in samples]
        for t in range(args.trials):
            rows.append((t, eps, ks[t], rad[t], med[t], r_th))
        summary.append((eps, float(np.mean(ks)), float(np.mean(rad)), float(np.mean(med)), r_th,
                        r_th / math.sqrt(2)))
        ev = samples[0].eigenvalues
        run.csv(f"eigenvalues_eps{eps:g}.csv", ["re", "im"], zip(ev.real, ev.imag))
        run.csv(f"radial_cdf_eps{eps:g}.csv", ["r", "F_emp", "F_theory"],
                spectra.radial_cdf_table(samples[0], r_th))
        if args.figures:
            run.figure(f"spectrum_eps{eps:g}.png", plotting.spectrum_plot, samples[0].eigenvalues,
                       r_th, title=f"k={args.k}, eps={eps:g}, c={args.c:g}, trial 0")
            run.figure(f"radial_cdf_eps{eps:g}.png", plotting.radial_cdf_plot,
                       samples[0].radii_sorted, r_th, title=f"eps={eps:g}, trial 0")
    run.csv("brown_disk.csv", ["trial", "eps", "ks", "spectral_radius", "median_radius", "r_theory"], rows)
    run.csv("brown_disk_summary.csv", ["eps", "mean_ks", "mean_spectral_radius", "mean_median_radius",
                                       "r_theory", "r_theory_median"], summary)
    for row in summary:
        print("eps={:g}: mean KS {:.4f}, spectral radius {:.4f}, median {:.4f}, r {:.6f}".format(
            row[0], row[1], row[2], row[3], row[4]))


def cmd_covariance(args, run, inputs):
    if args.trials < 2:
        raise UsageError("--trials must be at least 2 to estimate standard errors")
    K = _load_kernel(args, inputs)
    if args.k % K.n:
        raise UsageError(f"--k {args.k} is not divisible by the grid order {K.n}")
    sampler = args.sampler
    if sampler == "auto":
        sampler = "lifted" if args.builder == "lifted" else "weighted"
    if sampler == "lifted":
        if args.builder != "lifted":
            raise UsageError("--sampler lifted needs --builder lifted")
        coef = _lifted_coef(args)

        def draw(t):
            return randmat.lifted_sample(args.N, args.p, coef, SampleConfig(args.k, args.seed, t))
    else:
        def draw(t):
            return randmat.weighted_sample(K, SampleConfig(args.k, args.seed, t))

    def one(t):
        X = draw(t)
        return randmat.kernel_recovery(X, K.n), np.sum(np.abs(X) ** 2) / args.k

    results = _map(one, range(args.trials), args.workers)
    H = np.stack([r[0] for r in results])
    tr = np.array([r[1] for r in results])
    T = args.trials
    mean = H.mean(axis=0)
    se = H.std(axis=0, ddof=1) / math.sqrt(T)
    targets = randmat.cell_targets(K, args.k)
    fills = K.fill
    names = {CellFill.EMPTY: "empty", CellFill.FULL: "full", CellFill.TRI: "tri"}
    rows = []
    worst = 0.0
    for i in range(K.n):
        for j in range(K.n):
            target = float(targets[i, j])
            diff = mean[i, j] - target
            z = 0.0 if diff == 0 else (diff / se[i, j] if se[i, j] > 0 else math.inf)
            worst = max(worst, abs(z))
            rows.append((i, j, names[CellFill(int(fills[i, j]))], target, mean[i, j], se[i, j], z))
    run.csv("covariance.csv", ["i", "j", "fill", "target", "mean", "se", "z"], rows)
    expected = float(randmat.expected_trace(K, args.k))
    tr_se = float(tr.std(ddof=1) / math.sqrt(T))
    tr_z = (tr.mean() - expected) / tr_se if tr_se > 0 else 0.0
    run.csv("trace.csv", ["trials", "mean", "se", "expected", "z"],
            [(T, float(tr.mean()), tr_se, expected, float(tr_z))])
    if args.figures:
        run.figure("covariance.png", plotting.covariance_plot, mean, targets.astype(float),
                   title=f"k={args.k}, {T} trials")
    if args.max_se is not None and (worst > args.max_se or abs(tr_z) > args.max_se):
        run.fail(f"deviation {max(worst, abs(tr_z)):.2f} SE exceeds {args.max_se}")
    print(f"max |z| over cells {worst:.3f}; trace mean {tr.mean():.6f} (expected {expected:.6f}, z {tr_z:.3f})")


def cmd_dyson(args, run, inputs):
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")

    def one(t):
        cfg = SampleConfig(args.k, args.seed, t)
        form = spectra.schur(randmat.ginibre(cfg))
        return form, dyson.log_density(form.t)

    results = _map(one, range(args.trials), args.workers)
    rows = []
    dens = []
    for t, (form, d) in enumerate(results):
        sample = spectra.SpectralSample.from_eigenvalues(np.diag(form.t))
        ks = spectra.ks_uniform_disk(sample, 1.0)
        inter = None if d.degenerate else d.interaction
        total = None if d.degenerate else d.total
        if d.degenerate:
            run.fail(f"trial {t}: diagonal collision, density is zero")
        rows.append((t, d.log_c, inter, total, ks, spectra.spectral_radius(sample),
                     spectra.median_radius(sample), form.residual))
        dens.append(d.total)
    run.csv("dyson.csv", ["trial", "log_c", "interaction", "log_density", "ks_circular",
                          "spectral_radius", "median_radius", "schur_residual"], rows)
    if args.figures:
        run.figure("dyson_log_density.png", plotting.dyson_plot, dens, title=f"k={args.k}")
        first = np.diag(results[0][0].t)
        run.figure("dyson_spectrum.png", plotting.spectrum_plot, first, 1.0,
                   title=f"Schur diagonal, k={args.k}, trial 0")
    print(f"log_c({args.k}) = {rows[0][1]!r}; mean KS vs circular law {np.mean([r[4] for r in rows]):.4f}")


# -- packing -----------------------------------------------------------------

def _auto_eps(cloud, count=8):
    d = cloud.dist[np.triu_indices(cloud.m, 1)]
    if len(d) == 0 or d.max() == 0:
        raise UsageError("cannot choose an automatic eps grid for a cloud without distinct points")
    q = np.quantile(d[d > 0], np.linspace(0.05, 0.95, count))
    return sorted(set(float(x) / 2 for x in q))


def _generate_cloud(args):
    if args.k is None or args.m is None:
        raise UsageError("--generator needs --k and --m")
    fn = {"ginibre": randmat.ginibre, "dt": randmat.dt_sample}[args.generator]
    return _map(lambda t: fn(SampleConfig(args.k, args.seed, t)), range(args.m), args.workers)


def cmd_packing(args, run, inputs):
    if (args.cloud is None) == (args.generator is None):
        raise UsageError("give exactly one of --cloud or --generator")
    if args.cloud is not None:
        p = Path(args.cloud)
        if p.is_dir():
            for child in sorted(p.iterdir()):
                if child.is_file():
                    inputs[str(child)] = _sha256(child.read_bytes())
        else:
            inputs[args.cloud] = _sha256(p.read_bytes())
        mats = matio.load_matrices(p)
    else:
        mats = _generate_cloud(args)
    cloud = packing.cloud_from_samples(mats)
    if args.eps == "auto":
        eps = _auto_eps(cloud)
    else:
        try:
            eps = sorted(set(_floats(args.eps)))
        except argparse.ArgumentTypeError as exc:
            raise UsageError(str(exc)) from None
    rep = packing.packing_report(cloud, eps)
    run.csv("packing.csv", ["eps", "p_hat", "k_hat"], zip(rep.eps_grid, rep.p_hat, rep.k_hat))
    sand = [packing.sandwich_check(cloud, e) for e in rep.eps_grid]
    run.csv("sandwich.csv", ["eps", "p_4eps", "k_2eps", "p_eps", "holds", "mode"],
            [(s.eps, s.p_4eps, s.k_2eps, s.p_eps, s.holds, "estimator" if s.estimator_mode else "exact")
             for s in sand])
    run.json("packing.json", {"m": rep.m, "slope": rep.slope, "slope_stderr": rep.slope_stderr,
                              "slope_note": "exploratory surrogate, not a dimension value",
                              "eps_grid": list(rep.eps_grid), "p_hat": list(rep.p_hat),
                              "k_hat": list(rep.k_hat), "diagnostics": rep.diagnostics})
    if args.figures:
        run.figure("packing.png", plotting.packing_plot, rep.eps_grid, rep.p_hat, rep.k_hat,
                   slope=rep.slope, title=f"m={rep.m}")
    bad = [s.eps for s in sand if not s.holds]
    if bad:
        run.fail(f"sandwich inequality fails at eps {bad}")
    print(f"m={rep.m}; sandwich {'pass' if not bad else 'FAIL'}; slope {rep.slope}")


# -- dimension ---------------------------------------------------------------

def cmd_prop1(args, run, inputs):
    f = StepFunction([Fraction(x) for x in args.f])
    eps = sorted(set(args.eps), reverse=True)
    if not eps:
        raise UsageError("--eps needs at least one value")
    ratios = [dimension.prop1_ratio(f, e) for e in eps]
    positive = [v for v in f.values if v > 0]
    target = Fraction(len(positive), f.n) - 1
    doc = {"f": [str(v) for v in f.values], "eps": eps, "ratios": ratios, "limit": str(target),
           "limit_float": float(target), "bound": None, "within_bound": None}
    if not positive or eps[-1] < min(positive):
        rep = dimension.prop1_limit_check(f, eps)
        doc["bound"] = rep.bound
        doc["within_bound"] = rep.within_bound
        if not rep.within_bound:
            run.fail("ratio at the smallest eps lies outside the error bound")
    run.csv("prop1.csv", ["eps", "ratio", "limit"], [(e, r, float(target)) for e, r in zip(eps, ratios)])
    run.json("prop1.json", doc)
    for e, r in zip(eps, ratios):
        print(f"eps={e:g}: ratio {r!r}")


def cmd_experiment(args, run, inputs):
    path = Path(args.config)
    data = path.read_bytes()
    inputs[args.config] = _sha256(data)
    try:
        cfg = json.loads(data)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.config}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{args.config}: expected a JSON object")
    missing = {"kernel", "k_list", "trials", "eps_grid"} - set(cfg)
    if missing:
        raise UsageError(f"{args.config}: missing field(s) {sorted(missing)}")
    extra = set(cfg) - {"kernel", "k_list", "trials", "eps_grid", "seed", "kernel_id"}
    if extra:
        raise UsageError(f"{args.config}: unknown field(s) {sorted(extra)}")
    K = _kernel_from_config(cfg["kernel"], path.parent, inputs)
    seed = int(cfg.get("seed", args.seed))
    k_list = cfg["k_list"]
    if not isinstance(k_list, list) or not k_list or not all(
            isinstance(k, int) and not isinstance(k, bool) and k >= 1 for k in k_list):
        raise UsageError("k_list: expected a non-empty list of positive integers")
    if not isinstance(cfg["trials"], int) or isinstance(cfg["trials"], bool):
        raise UsageError("trials: expected an integer")
    if not isinstance(cfg["eps_grid"], list) or not all(
            isinstance(e, (int, float)) and not isinstance(e, bool) for e in cfg["eps_grid"]):
        raise UsageError("eps_grid: expected a list of numbers")
    rep = dimension.dimension_experiment(K, k_list, cfg["trials"], cfg["eps_grid"], seed=seed,
                                         workers=args.workers,
                                         kernel_id=str(cfg.get("kernel_id", "kernel")))
    run.json("experiment.json", rep.as_dict())
    b = rep.bounds
    lower = None if b.lower is None else float(b.lower)
    rows = []
    for k in rep.k_list:
        r = rep.packing.get(k)
        rows.append((k, r.m if r else None, r.slope if r else None, r.slope_stderr if r else None,
                     lower, float(b.upper), "" if r else "failed"))
    run.csv("slopes.csv", ["k", "m", "slope", "slope_stderr", "lower", "upper", "status"], rows)
    prow = [(k, e, p, q) for k, r in rep.packing.items() for e, p, q in zip(r.eps_grid, r.p_hat, r.k_hat)]
    run.csv("packing.csv", ["k", "eps", "p_hat", "k_hat"], prow)
    run.csv("kn_series.csv", ["N", "value"], [(N, v) for N, v in b.kn_series.items()])
    if args.figures:
        for k, r in rep.packing.items():
            run.figure(f"packing_k{k}.png", plotting.packing_plot, r.eps_grid, r.p_hat, r.k_hat,
                       slope=r.slope, title=f"k={k}, m={r.m}")
    for v in rep.invariant_violations:
        run.fail(v)
    if rep.failures:
        # shape problems (k not a multiple of the grid) are configuration errors
        numerical = any(not msg.startswith("ShapeError") for msg in rep.failures.values())
        run.status = max(run.status, EXIT_NUMERICAL if numerical else EXIT_USAGE)
        run.messages.extend(f"k={k}: {msg}" for k, msg in rep.failures.items())
    print(f"bounds: lower {lower}, upper {float(b.upper)}; slopes "
          + ", ".join(f"k={row[0]}: {row[2]}" for row in rows))


# -- matrices ----------------------------------------------------------------

def cmd_sample(args, run, inputs):
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    gen = args.generator
    if gen == "weighted":
        K = _load_kernel(args, inputs)
        draw = lambda cfg: randmat.weighted_sample(K, cfg)  # noqa: E731
    elif gen == "lifted":
        if args.N is None:
            raise UsageError("--generator lifted needs --N")
        coef = _lifted_coef(args)
        draw = lambda cfg: randmat.lifted_sample(args.N, args.p, coef, cfg)  # noqa: E731
    elif gen == "perturbed":
        draw = lambda cfg: randmat.perturbed_dt(cfg, args.eps, args.scale)  # noqa: E731
    else:
        draw = {"ginibre": randmat.ginibre, "dt": randmat.dt_sample}[gen]
    first = args.trial
    mats = _map(lambda t: draw(SampleConfig(args.k, args.seed, t)),
                range(first, first + args.trials), args.workers)
    for t, X in zip(range(first, first + args.trials), mats):
        if not np.all(np.isfinite(X)):
            raise NumericalFailure(f"sample {t}: non-finite entries",
                                   {"trial": t, "count": int(np.sum(~np.isfinite(X)))})
    if args.format == "raw":
        run.files["samples.bin"] = b"".join(matio.raw_bytes(X) for X in mats)
    else:
        for t, X in zip(range(first, first + args.trials), mats):
            text = matio.csv_text(X) + f"# manifest {run.params_digest}\n"
            run.files[f"sample_{t:04d}.csv"] = text.encode()
    print(f"wrote {args.trials} {gen} sample(s) of size {args.k}")


# -- driver ------------------------------------------------------------------

COMMANDS = {
    "kernel": cmd_kernel,
    "brown-disk": cmd_brown_disk,
    "covariance": cmd_covariance,
    "dyson": cmd_dyson,
    "packing": cmd_packing,
    "prop1": cmd_prop1,
    "experiment": cmd_experiment,
    "sample": cmd_sample,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default="freedim-out", help="output directory (default freedim-out)")
    common.add_argument("--seed", type=int, default=0, help="base seed (default 0)")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                        help="worker threads (default: logical cores); never changes outputs")
    common.add_argument("--figures", action="store_true", help="also render PNG figures")

    parser = argparse.ArgumentParser(prog="freedim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"freedim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("kernel", parents=[common], help="canonical kernel JSON and exact bounds")
    _add_kernel_args(p)

    p = sub.add_parser("brown-disk", parents=[common], help="spectra of c(y + eps w) against the disk law")
    p.add_argument("--k", type=int, default=400)
    p.add_argument("--eps", type=_floats, default=[0.25, 0.5, 1.0], help="comma-separated eps values")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--trials", type=int, default=10)

    p = sub.add_parser("covariance", parents=[common], help="kernel recovery from weighted or lifted samples")
    _add_kernel_args(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--sampler", choices=["auto", "weighted", "lifted"], default="auto")
    p.add_argument("--max-se", type=float, default=None,
                   help="exit 1 if any cell or the trace deviates by more than this many SE")

    p = sub.add_parser("dyson", help="triangular density of Ginibre Schur forms")
    dsub = p.add_subparsers(dest="dyson_command", required=True)
    q = dsub.add_parser("check", parents=[common])
    q.add_argument("--k", type=int, required=True)
    q.add_argument("--trials", type=int, default=10)

    p = sub.add_parser("packing", parents=[common], help="packing/covering counts of a matrix cloud")
    p.add_argument("--cloud", help="raw file of concatenated matrices, CSV file, or directory")
    p.add_argument("--generator", choices=["ginibre", "dt"])
    p.add_argument("--k", type=int)
    p.add_argument("--m", type=int, help="number of generated matrices")
    p.add_argument("--eps", default="auto", help="comma-separated eps values or 'auto'")

    p = sub.add_parser("prop1", parents=[common], help="regularised log-integral ratios of a step function")
    p.add_argument("--f", type=_floats, required=True, help="comma-separated step values")
    p.add_argument("--eps", type=_floats, required=True, help="comma-separated eps values in (0,1)")

    p = sub.add_parser("experiment", parents=[common], help="packing experiment from a JSON config")
    p.add_argument("--config", required=True)

    p = sub.add_parser("sample", parents=[common], help="write seeded matrix samples")
    _add_kernel_args(p)
    p.add_argument("--generator", choices=["ginibre", "dt", "weighted", "lifted", "perturbed"],
                   required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--trial", type=int, default=0, help="first trial index")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--eps", type=float, default=0.5, help="perturbed: eps")
    p.add_argument("--scale", type=float, default=1.0, help="perturbed: overall factor c")
    p.add_argument("--format", choices=["csv", "raw"], default="csv")

    p = sub.add_parser("replay", help="re-run a manifest and compare output digests")
    p.add_argument("manifest")
    p.add_argument("--out-dir", default=None, help="where to write the rerun (default: temporary)")
    p.add_argument("--workers", type=int, default=None, help="override the recorded worker count")
    return parser


def _params(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NON_OUTPUT}


def _digest(command, params):
    return _sha256(json.dumps({"subcommand": command, "params": params}, sort_keys=True).encode())


def execute(command, args):
    """Run one subcommand and write its outputs; returns ``(status, manifest)``."""
    params = _params(args)
    started = _now()
    inputs: dict[str, str] = {}
    run = Run(_PENDING)
    COMMANDS[command](args, run, inputs)
    digest = _digest(command, {**params, "inputs": inputs})
    old = f"# manifest {_PENDING}\n".encode()
    for name, data in list(run.files.items()):
        if name.endswith(".csv") and data.endswith(old):
            run.files[name] = data[:-len(old)] + f"# manifest {digest}\n".encode()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, data in run.files.items():
        (out / name).write_bytes(data)
    manifest = {
        "subcommand": command,
        "params": params,
        "seed": getattr(args, "seed", None),
        "workers": args.workers,
        "version": __version__,
        "inputs": inputs,
        "params_digest": digest,
        "started": started,
        "finished": _now(),
        "outputs": {name: _sha256(data) for name, data in sorted(run.files.items())},
        "status": run.status,
        "messages": run.messages,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for msg in run.messages:
        print(f"freedim: {msg}", file=sys.stderr)
    return run.status, manifest


def replay(args):
    mpath = Path(args.manifest)
    try:
        manifest = json.loads(mpath.read_text())
        command = manifest["subcommand"]
        params = dict(manifest["params"])
        expected = manifest["outputs"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"{mpath}: not a readable manifest ({exc})") from None
    if command not in COMMANDS:
        raise UsageError(f"{mpath}: unknown subcommand {command!r}")
    for path, digest in manifest.get("inputs", {}).items():
        if not Path(path).exists() or _sha256(Path(path).read_bytes()) != digest:
            print(f"input changed or missing: {path}", file=sys.stderr)
            return EXIT_INVARIANT
    workers = args.workers if args.workers is not None else manifest.get("workers", 1)
    tmp = None
    out_dir = args.out_dir
    if out_dir is None:
        tmp = tempfile.TemporaryDirectory(prefix="freedim-replay-")
        out_dir = tmp.name
    try:
        ns = argparse.Namespace(**params, out_dir=out_dir, workers=workers)
        _, fresh = execute(command, ns)
    finally:
        if tmp is not None:
            tmp.cleanup()
    status = EXIT_OK
    for name in sorted(set(expected) | set(fresh["outputs"])):
        a, b = expected.get(name), fresh["outputs"].get(name)
        verdict = "OK" if a == b else "MISMATCH"
        # the recorded copy next to the manifest must also still match
        on_disk = mpath.parent / name
        if verdict == "OK" and on_disk.is_file() and _sha256(on_disk.read_bytes()) != a:
            verdict = "MODIFIED"
        print(f"{verdict} {name}")
        if verdict != "OK":
            status = EXIT_INVARIANT
    return status


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            return replay(args)
        if args.workers < 1:
            raise UsageError("--workers must be at least 1")
        status, _ = execute(args.command, args)
        return status
    except UsageError as exc:
        print(f"freedim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"freedim: numerical failure: {exc}", file=sys.stderr)
        diag = getattr(exc, "diagnostics", None)
        if diag:
            print(f"freedim: diagnostics: {json.dumps(diag, sort_keys=True, default=str)}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FreedimError, OSError, json.JSONDecodeError) as exc:
        print(f"freedim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"freedim: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
