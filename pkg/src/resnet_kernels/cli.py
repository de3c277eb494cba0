"""Command-line entry point.

One subcommand per experiment family; every run writes RFC-4180 CSV (UTF-8,
'.' decimal separator, 17 significant digits) to --out or stdout, plus a
single-line JSON manifest of the resolved flags (sidecar file next to
--out, stderr otherwise).  Reruns with identical manifests produce
identical CSVs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .errors import ContractError, DatasetFormatError, NumericError
from .gp import RegressionConfig, classify, one_hot, posterior_mean, tune_noise
from .gram import Dataset, KernelDescriptor, gram, load_dataset, preprocess_sphere, spectrum
from .grad_moments import grad_profile
from .kernels import KernelHyper, ntk_forward, nngp_forward
from .limits import rk4_trajectory, uniform_trajectory_batch
from .mc import McConfig, mc_nngp_error
from .pacbayes import gp_kl, pac_bound
from .scaling import ScalingScheme, load_custom


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def parse_scheme(token: str) -> ScalingScheme:
    if token.startswith("custom:"):
        path = token.split(":", 1)[1]
        if not os.path.exists(path):
            raise FileNotFoundError(f"custom scaling file not found: {path}")
        return load_custom(path)
    if token in ("unscaled", "uniform", "decreasing"):
        return ScalingScheme(token)
    raise ValueError(
        f"unknown scaling {token!r}; expected unscaled|uniform|decreasing|custom:<path>"
    )


def _parse_depths(token: str) -> list[int]:
    return [int(v) for v in token.split(",") if v]


def _write_csv(args, header, rows, extra_manifest=None, t_start=None):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    manifest = {
        "subcommand": args.subcommand,
        "flags": {k: v for k, v in sorted(vars(args).items()) if k != "subcommand"},
        "version": __version__,
        "out": args.out or "-",
        "wall_clock_s": round(time.time() - t_start, 3) if t_start else None,
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    line = json.dumps(manifest, default=str, sort_keys=True)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
        with open(args.out + ".manifest.json", "w") as fh:
            fh.write(line + "\n")
    else:
        sys.stdout.write(text)
        print(line, file=sys.stderr)


def _hyper(args, dim=None) -> KernelHyper:
    return KernelHyper(args.sigma_w2, args.sigma_b2, dim if dim is not None else args.dim)


def _sphere_points(n, dim, seed) -> np.ndarray:
    if dim == 2:
        ang = np.random.default_rng(seed).uniform(0.0, 2.0 * np.pi, n)
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    pts = np.random.default_rng(seed).standard_normal((n, dim))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_kernel_curve(args) -> int:
    t0 = time.time()
    scheme = parse_scheme(args.scaling)
    hyper = _hyper(args)
    x = np.zeros(args.dim)
    x[0] = 1.0
    if args.ntk:
        states = ntk_forward(x, x, hyper, scheme, args.depth)
        rows = [(s.layer, s.q_aa, s.theta_ab) for s in states]
    else:
        states = nngp_forward(x, x, hyper, scheme, args.depth)
        rows = [(s.layer, s.q_aa, "") for s in states]
    _write_csv(args, ["layer", "q_diag", "theta_diag"], rows, t_start=t0)
    return 0


def cmd_spectrum(args) -> int:
    t0 = time.time()
    scheme = parse_scheme(args.scaling)
    hyper = _hyper(args)
    points = _sphere_points(args.n, args.dim, args.seed)
    rows = []
    for depth in _parse_depths(args.depths):
        desc = KernelDescriptor(hyper=hyper, scheme=scheme, depth=depth,
                                kind="ntk" if args.ntk else "nngp",
                                normalize="correlation")
        result = spectrum(gram(points, descriptor=desc), args.top)
        for rank, ev in enumerate(result.values, start=1):
            rows.append((depth, rank, ev))
    _write_csv(args, ["depth", "rank", "eigenvalue"], rows,
               {"points_seed": args.seed}, t_start=t0)
    return 0


def cmd_regress(args) -> int:
    t0 = time.time()
    scheme = parse_scheme(args.scaling)
    if args.correlation and args.sigma_b2 > 0.0:
        raise ContractError("--correlation requires --sigma-b2 0")
    raw = load_dataset(args.dataset, format=args.format, labels_path=args.labels)
    test = (load_dataset(args.test_dataset, format=args.format, labels_path=args.test_labels,
                         split="test") if args.test_dataset else None)
    rng = np.random.default_rng(args.seed)
    n_classes = int(raw.targets.max()) + 1
    # class-balanced training subset, recorded seed
    per_class = args.train // n_classes
    train_idx = []
    for c in range(n_classes):
        rows = np.flatnonzero(raw.targets == c)
        train_idx.extend(rng.permutation(rows)[:per_class])
    train_idx = np.sort(np.asarray(train_idx))
    rest = np.setdiff1d(np.arange(raw.n), train_idx)
    rest = rng.permutation(rest)
    n_val = min(args.val, len(rest)) if args.val else max(1, len(rest) // 5)
    val_idx, hold_idx = rest[:n_val], rest[n_val:]
    train = Dataset(raw.inputs[train_idx], raw.targets[train_idx], "train")
    val = Dataset(raw.inputs[val_idx], raw.targets[val_idx], "val")
    if test is None:
        test = Dataset(raw.inputs[hold_idx], raw.targets[hold_idx], "test")
    train, val, test = preprocess_sphere(train, [val, test])

    hyper = KernelHyper(args.sigma_w2, args.sigma_b2, train.dim)
    desc = KernelDescriptor(hyper=hyper, scheme=scheme, depth=args.depth,
                            kind="ntk" if args.ntk else "nngp",
                            normalize="correlation" if args.correlation else "covariance")
    q_nn = gram(train, descriptor=desc)
    q_vn = gram(val, train, descriptor=desc)
    q_tn = gram(test, train, descriptor=desc)
    config = RegressionConfig(n_classes=n_classes)
    choice = tune_noise(q_nn, q_vn, train.targets, val.targets, config)
    pred = classify(posterior_mean(q_nn, q_tn, one_hot(train.targets, n_classes),
                                   choice.sigma_sq))
    test_acc = float(np.mean(pred == test.targets))
    print(f"sigma2 {choice.sigma_sq:.6g} (multiplier {choice.multiplier})")
    print(f"val accuracy {choice.val_accuracy:.4f}")
    print(f"test accuracy {test_acc:.4f}")
    if args.emit == "csv":
        rows = [(scheme.kind, args.depth, choice.sigma_sq, choice.multiplier,
                 choice.val_accuracy, test_acc)]
        _write_csv(args, ["scaling", "depth", "sigma2", "multiplier", "val_acc", "test_acc"],
                   rows, {"train_seed": args.seed}, t_start=t0)
    return 0


def cmd_pacbayes(args) -> int:
    t0 = time.time()
    scheme = parse_scheme(args.scaling)
    hyper = _hyper(args)
    points = _sphere_points(args.n, args.dim, args.seed)
    y = np.random.default_rng(args.seed + 1).choice([-1.0, 1.0], size=args.n)
    depths = _parse_depths(args.depths)
    sigma2 = args.sigma2
    if sigma2 is None:
        # default noise: 0.01 * trace/N of the shallowest requested kernel,
        # held fixed across the sweep
        first = gram(points, descriptor=KernelDescriptor(hyper=hyper, scheme=scheme,
                                                         depth=depths[0]))
        sigma2 = 0.01 * float(np.trace(first.values)) / args.n
    rows = []
    for depth in depths:
        desc = KernelDescriptor(hyper=hyper, scheme=scheme, depth=depth)
        report = gp_kl(gram(points, descriptor=desc), y, sigma2)
        bound = pac_bound(0.0, report.kl_divergence, args.n, args.delta)
        rows.append((depth, report.kl_divergence, report.logdet_term,
                     report.trace_term, report.quad_term, bound))
    _write_csv(args, ["depth", "kl", "logdet", "trace", "quad", "bound"], rows,
               {"points_seed": args.seed, "sigma2": sigma2}, t_start=t0)
    return 0


def cmd_grad(args) -> int:
    t0 = time.time()
    scheme = parse_scheme(args.scaling)
    hyper = _hyper(args)
    profile = grad_profile(scheme, hyper, args.depth)
    rows = list(enumerate(profile.values))
    _write_csv(args, ["layer", "qbar"], rows, t_start=t0)
    return 0


def cmd_mc_validate(args) -> int:
    t0 = time.time()
    scheme = parse_scheme(args.scaling)
    hyper = _hyper(args)
    cfg = McConfig(width=args.width, depth=args.depth, n_samples=args.samples,
                   seed=args.seed, scheme=scheme, hyper=hyper)
    pts = _sphere_points(2, args.dim, args.seed)
    workers = args.threads if args.threads > 0 else (os.cpu_count() or 1)
    rows = []
    for name, (a, b) in (("var_x", (0, 0)), ("var_xp", (1, 1)), ("cov", (0, 1))):
        emp, ana, z = mc_nngp_error(cfg, pts[a], pts[b], workers=workers)
        rows.append((name, emp, ana, z))
    _write_csv(args, ["quantity", "empirical", "analytic", "z"], rows, t_start=t0)
    return 0


def cmd_ode_check(args) -> int:
    t0 = time.time()
    hyper = _hyper(args)
    pts = _sphere_points(2 * args.pairs, args.dim, args.seed)
    x, xp = pts[: args.pairs], pts[args.pairs:]
    sb2, sw2, d = hyper.sigma_b_sq, hyper.sigma_w_sq, hyper.input_dim
    state0 = np.stack([
        sb2 + sw2 * np.einsum("ij,ij->i", x, xp) / d,
        sb2 + sw2 * np.einsum("ij,ij->i", x, x) / d,
        sb2 + sw2 * np.einsum("ij,ij->i", xp, xp) / d,
    ], axis=1)
    rows = []
    for depth in _parse_depths(args.depths):
        discrete = uniform_trajectory_batch(state0, hyper, depth)
        # integrate on a refinement of the layer grid so t = l/L lands on nodes
        refine = max(1, -(-args.steps // depth))
        ode = rk4_trajectory(state0, hyper, 1.0, refine * depth)
        gap = float(np.max(np.abs(discrete - ode[::refine, :, 0])))
        rows.append((depth, gap))
    _write_csv(args, ["depth", "sup_gap"], rows, {"points_seed": args.seed}, t_start=t0)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resnet-kernels",
        description="Infinite-width kernels of scaled residual networks and "
                    "their downstream experiments (CSV out).",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, dim=784):
        p.add_argument("--out", default=None, help="CSV output path (default stdout)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=0, help="0 = auto")
        p.add_argument("--sigma-w2", dest="sigma_w2", type=float, default=2.0)
        p.add_argument("--sigma-b2", dest="sigma_b2", type=float, default=0.0)
        p.add_argument("--dim", type=int, default=dim)

    p = sub.add_parser("kernel-curve", help="diagonal NNGP/NTK values per layer")
    common(p, dim=2)
    p.add_argument("--scaling", required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--ntk", action="store_true")
    p.set_defaults(func=cmd_kernel_curve)

    p = sub.add_parser("spectrum", help="normalized Gram eigenvalues over a depth sweep")
    common(p, dim=2)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--depths", default="1,10,100,1000")
    p.add_argument("--scaling", required=True)
    p.add_argument("--ntk", action="store_true")
    p.add_argument("--top", type=int, default=50)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("regress", help="GP posterior-mean classification")
    common(p)
    p.add_argument("--train", type=int, required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--format", choices=("idx", "csv"), default="idx")
    p.add_argument("--labels", default=None)
    p.add_argument("--test-dataset", default=None)
    p.add_argument("--test-labels", default=None)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--scaling", required=True)
    p.add_argument("--correlation", action="store_true")
    p.add_argument("--ntk", action="store_true")
    p.add_argument("--val", type=int, default=5000)
    p.add_argument("--emit", choices=("csv",), default=None)
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("pacbayes", help="GP posterior KL and PAC-Bayes bound vs depth")
    common(p, dim=16)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--depths", default="4,8,16,32")
    p.add_argument("--scaling", required=True)
    p.add_argument("--sigma2", type=float, default=None,
                   help="noise level; default 0.01 * trace(Q)/N at the first depth")
    p.add_argument("--delta", type=float, default=0.05)
    p.set_defaults(func=cmd_pacbayes)

    p = sub.add_parser("grad", help="exact gradient second-moment profile")
    common(p, dim=2)
    p.add_argument("--scaling", required=True)
    p.add_argument("--depth", type=int, required=True)
    p.set_defaults(func=cmd_grad)

    p = sub.add_parser("mc-validate", help="finite-width Monte-Carlo kernel check")
    common(p, dim=16)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--scaling", required=True)
    p.set_defaults(func=cmd_mc_validate)

    p = sub.add_parser("ode-check", help="discrete depth recursion vs continuum limit")
    common(p, dim=8)
    p.add_argument("--steps", type=int, default=10000)
    p.add_argument("--depths", default="100,1000,10000")
    p.add_argument("--pairs", type=int, default=20)
    p.set_defaults(func=cmd_ode_check)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ContractError, DatasetFormatError, NumericError, ValueError,
            FileNotFoundError, IndexError, OverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
