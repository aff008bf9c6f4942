"""``relutopo`` command line: train, flow, boundary, homology, index, demo-linear.

Exit codes: 0 success, 2 input error, 3 download failure, 4 numerical
blow-up, 5 winding-number failure, 6 degenerate or complex eigenvalues.
"""
from __future__ import annotations

import argparse
import gzip
import json
import sys
import urllib.error
import urllib.request
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .data_io import (
    MNIST_FILES,
    load_mnist,
    load_mnist_split,
    load_model,
    save_model,
    write_orbit_summary,
    write_pgm_strip,
)
from .errors import (
    ComplexEigenvalues,
    DegenerateEigenvalues,
    NonFiniteState,
    RefinementExhausted,
    RelutopoError,
    ZeroOnCurve,
)
from .flow import (
    FlowConfig,
    cluster_endpoints,
    default_cluster_radius,
    iterate_flows,
    linear_flow_demo,
    pca_fit,
    probability_decreases,
)
from .mlp import MlpNetwork, TrainConfig, train
from .planar import (
    DEMO_FIELDS,
    THREE_ZERO_POINTS,
    THREE_ZERO_RADIUS,
    GradientField,
    Planar2DNetwork,
    PolygonalCurve,
    bump_modified_field,
    extract_boundary,
    hexagon_network,
    poincare_hopf_check,
    winding_number,
)
from .svg import complex_svg, scatter_svg
from .topology import CATALOG, complex_from_json, complex_to_json, homology

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DOWNLOAD = 3
EXIT_NONFINITE = 4
EXIT_INDEX = 5
EXIT_EIGEN = 6


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


# --- helpers -------------------------------------------------------------------

def _floats(text: str, count: Optional[int] = None, name: str = "value") -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise CliError(f"{name} must be comma-separated numbers, got {text!r}") from None
    if count is not None and len(vals) != count:
        raise CliError(f"{name} needs {count} numbers, got {len(vals)}")
    return vals


def _ints(text: str, name: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"{name} must be comma-separated integers, got {text!r}") from None


def _num(v: float) -> str:
    return repr(float(v))


def _write_run_json(directory: Path, args: argparse.Namespace) -> None:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")}
    doc = {"subcommand": args.command, "version": __version__, "seed": getattr(args, "seed", 1),
           "flags": flags}
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "run.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_network(path: str) -> MlpNetwork:
    try:
        return load_model(path)
    except FileNotFoundError:
        raise CliError(f"model file {path} not found") from None


def _planar(network: MlpNetwork) -> Planar2DNetwork:
    if network.d_in != 2:
        raise CliError(f"boundary extraction needs a 2-input network; this model has d_in = {network.d_in}")
    planar = Planar2DNetwork(network)
    planar.output_weights  # rejects d_out > 2 early
    return planar


# --- train ---------------------------------------------------------------------

def _download(url: str, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    base = url.rstrip("/")
    for name in MNIST_FILES.values():
        target = directory / name
        if target.is_file():
            continue
        try:
            with urllib.request.urlopen(f"{base}/{name}", timeout=60) as resp:
                data = resp.read()
        except (urllib.error.URLError, OSError):
            # most mirrors only carry the gzipped files
            try:
                with urllib.request.urlopen(f"{base}/{name}.gz", timeout=60) as resp:
                    data = gzip.decompress(resp.read())
            except (urllib.error.URLError, OSError, EOFError) as exc:
                raise CliError(f"could not download {name} from {base}: {exc}", EXIT_DOWNLOAD) from None
        target.write_bytes(data)


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    out = Path(args.out)
    if args.download:
        _download(args.download, data_dir)
    train_set, test_set = load_mnist(data_dir)
    config = TrainConfig(epochs=args.epochs, lr=args.lr, batch=args.batch, seed=args.seed)
    network, log = train(train_set, test_set, config, d_hidden=args.hidden)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(network, out)
    log_path = Path(args.log) if args.log else out.parent / "train_log.csv"
    lines = ["epoch,train_acc,val_acc"]
    lines += [f"{e['epoch']},{_num(e['train_acc'])},{_num(e['val_acc'])}" for e in log]
    log_path.write_text("\n".join(lines) + "\n")
    _write_run_json(Path(args.run_dir) if args.run_dir else out.parent, args)
    print(f"epochs = {args.epochs}, val_acc = {log[-1]['val_acc']:.4f}")
    print(f"wrote {out} and {log_path}")
    return EXIT_OK


# --- flow ----------------------------------------------------------------------

SNAPSHOT_HEADER = "seed_id,label,argmax_class,prob,pc1,pc2"


def cmd_flow(args) -> int:
    out = Path(args.out)
    network = _load_network(args.model)
    test = load_mnist_split(args.data, "test")
    if not 1 <= args.seeds <= test.count:
        raise CliError(f"--seeds must lie in 1..{test.count}")
    if network.d_in != test.images.shape[1]:
        raise CliError(f"model expects {network.d_in} inputs, images have {test.images.shape[1]}")
    try:
        fixed = FlowConfig.parse_mode(args.mode)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    if fixed is not None and not 0 <= fixed < network.d_out:
        raise CliError(f"class {fixed} out of range 0..{network.d_out - 1}")
    snaps = sorted(set(_ints(args.snapshots, "--snapshots")))
    if any(t < 0 for t in snaps):
        raise CliError("snapshot iterations must be non-negative")
    skipped = [t for t in snaps if t > args.iters]
    snaps = [t for t in snaps if t <= args.iters]
    for t in skipped:
        print(f"note: snapshot {t} is beyond --iters {args.iters}; skipped", file=sys.stderr)
    config = FlowConfig(step=args.step, max_iters=args.iters, fixed_class=fixed,
                        snapshot_iters=tuple(snaps))

    x0 = test.images[:args.seeds]
    labels = test.labels[:args.seeds]
    strip_seeds = {}
    for c in range(10):
        idx = np.flatnonzero(labels == c)[:args.images_per_class]
        for i in idx:
            strip_seeds[int(i)] = c

    out.mkdir(parents=True, exist_ok=True)
    projector = pca_fit(x0, 2)
    snap_states = {t: np.empty_like(x0) for t in snaps}
    snap_classes = {t: np.empty(len(x0), dtype=np.int64) for t in snaps}
    snap_probs = {t: np.empty(len(x0)) for t in snaps}
    endpoints = np.empty_like(x0)
    end_classes = np.empty(len(x0), dtype=np.int64)
    final_probs = np.empty(len(x0))
    steps = decreases = left = 0
    with open(out / "orbits.csv", "wb") as fh:
        first = True
        for orbit in iterate_flows(network, x0, config, chunk_size=args.chunk_size):
            fh.write(write_orbit_summary([orbit], projector, header=first))
            first = False
            i = orbit.seed_id
            for t in snaps:
                s = min(t, orbit.iterations)
                snap_states[t][i] = orbit.states[s]
                snap_classes[t][i] = orbit.classes[s]
                snap_probs[t][i] = orbit.probs[s]
            endpoints[i] = orbit.endpoint
            end_classes[i] = orbit.classes[-1]
            final_probs[i] = orbit.probs[-1]
            steps += orbit.iterations
            decreases += len(probability_decreases(orbit))
            left += orbit.left_cube
            if i in strip_seeds:
                frames = [orbit.state_at(t) for t in range(10)]
                write_pgm_strip(frames, out / f"strip_class{strip_seeds[i]}_seed{i}.pgm")

    for n, t in enumerate(snaps):
        final = n == len(snaps) - 1 and len(snaps) > 1
        model = pca_fit(snap_states[t], 2) if (final and args.refit_final) else projector
        pcs = model.project(snap_states[t])
        rows = [SNAPSHOT_HEADER]
        rows += [f"{i},{labels[i]},{snap_classes[t][i]},{_num(snap_probs[t][i])},"
                 f"{_num(pcs[i, 0])},{_num(pcs[i, 1])}" for i in range(len(x0))]
        (out / f"snapshot_{t}.csv").write_text("\n".join(rows) + "\n")
        (out / f"snapshot_{t}.svg").write_bytes(scatter_svg(pcs, labels))

    radius = args.cluster_radius if args.cluster_radius else default_cluster_radius(x0.shape[1])
    report = cluster_endpoints(endpoints, end_classes, radius)
    doc = {
        "mode": config.mode,
        "seeds": int(len(x0)),
        "iterations": int(args.iters),
        "cluster_radius": float(radius),
        "cluster_count": report.cluster_count,
        "clusters": [{"class_id": c.class_id, "member_count": c.member_count,
                      "purity": c.purity, "mean_radius": c.mean_radius}
                     for c in report.clusters],
        "steps": int(steps),
        "probability_decrease_steps": int(decreases),
        "final_prob_ge_099_fraction": float(np.mean(final_probs >= 0.99)),
        "left_unit_cube": int(left),
    }
    (out / "attractor.json").write_text(json.dumps(doc, indent=2) + "\n")
    _write_run_json(Path(args.run_dir) if args.run_dir else out, args)
    print(f"{len(x0)} orbits, {steps} steps, {decreases} probability decreases")
    print(f"cluster_count = {report.cluster_count} (radius {radius:.6g})")
    return EXIT_OK


# --- boundary ------------------------------------------------------------------

def cmd_boundary(args) -> int:
    if args.demo == "hexagon":
        planar = hexagon_network()
    elif args.model:
        planar = _planar(_load_network(args.model))
    else:
        raise CliError("give --model or --demo hexagon")
    bbox = _floats(args.bbox, 4, "--bbox")
    merge = _floats(args.merge_tol, 1, "--merge-tol")[0] if args.merge_tol else None
    result = extract_boundary(planar, bbox, merge)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(complex_to_json(result.complex))
    if args.svg:
        cells = [c.polygon for c in result.decomposition.cells]
        Path(args.svg).write_bytes(complex_svg(result.complex, bbox, cells))
    _write_run_json(Path(args.run_dir) if args.run_dir else out.parent, args)
    print(result.summary())
    return EXIT_OK


# --- homology ------------------------------------------------------------------

def format_homology(h) -> list[str]:
    groups = [f"H{k}: {h.group(k)}" for k in range(len(h.betti))]
    lines = [", ".join(groups + [f"chi = {h.euler}"])]
    for k, t in enumerate(h.torsion):
        if t:
            lines.append(f"H{k} torsion: " + " + ".join(f"Z/{d}" for d in t))
    lines.append("betti = " + " ".join(str(b) for b in h.betti))
    return lines


def cmd_homology(args) -> int:
    if args.catalog:
        if args.catalog not in CATALOG:
            raise CliError(f"unknown catalog complex {args.catalog!r}; choose from {', '.join(CATALOG)}")
        cx = CATALOG[args.catalog]()
    elif args.complex:
        try:
            cx = complex_from_json(Path(args.complex).read_text())
        except FileNotFoundError:
            raise CliError(f"complex file {args.complex} not found") from None
    else:
        raise CliError("give --complex FILE or --catalog NAME")
    h = homology(cx)
    _write_run_json(Path(args.run_dir), args)
    for line in format_homology(h):
        print(line)
    return EXIT_OK


# --- index ---------------------------------------------------------------------

def _parse_curve(text: str) -> PolygonalCurve:
    vals = _floats(text, None, "--curve")
    if len(vals) not in (3, 4):
        raise CliError(f"--curve takes cx,cy,r[,n], got {text!r}")
    n = int(vals[3]) if len(vals) == 4 else 64
    if n < 3 or not vals[2] > 0:
        raise CliError("a curve needs a positive radius and at least 3 points")
    return PolygonalCurve.circle(vals[:2], vals[2], n)


def _curve_file(path: str) -> list[PolygonalCurve]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read curve file {path}: {exc}") from None
    # either one polygon [[x, y], ...] or a list of them
    if doc and isinstance(doc[0][0], (int, float)):
        doc = [doc]
    return [PolygonalCurve(np.asarray(c, dtype=np.float64)) for c in doc]


def cmd_index(args) -> int:
    curves = [_parse_curve(c) for c in (args.curve or [])]
    if args.curve_file:
        curves += _curve_file(args.curve_file)
    if args.demo:
        field_ = DEMO_FIELDS[args.demo]()
        if not curves:
            if args.demo == "three-zero":
                curves = [PolygonalCurve.circle((0.0, 0.0), 4.0, 128)]
                curves += [PolygonalCurve.circle(p, THREE_ZERO_RADIUS) for p in THREE_ZERO_POINTS]
            else:
                curves = [PolygonalCurve.circle((0.0, 0.0), 1.0)]
    elif args.model:
        network = _load_network(args.model)
        if network.d_in != 2:
            raise CliError(f"index computation needs a 2-input network; this model has d_in = {network.d_in}")
        if args.cls is None or not 0 <= args.cls < network.d_out:
            raise CliError(f"--class must lie in 0..{network.d_out - 1}")
        if not curves:
            raise CliError("give at least one --curve or --curve-file")
        if args.bump is not None:
            if args.bbox:
                bbox = _floats(args.bbox, 4, "--bbox")
            else:
                # box around the outer curve, so the curve sits inside the ramp band
                lo, hi = curves[0].points.min(axis=0), curves[0].points.max(axis=0)
                pad = args.bump / 2.0
                bbox = [lo[0] - pad, lo[1] - pad, hi[0] + pad, hi[1] + pad]
            field_ = bump_modified_field(network, args.cls, bbox, args.bump)
        else:
            field_ = GradientField(network, args.cls)
    else:
        raise CliError("give --model M --class K or --demo NAME")

    _write_run_json(Path(args.run_dir), args)
    try:
        if len(curves) == 1:
            print(winding_number(field_, curves[0], args.samples, args.refine_limit))
            return EXIT_OK
        report = poincare_hopf_check(field_, curves[0], curves[1:], args.samples, args.refine_limit)
    except (ZeroOnCurve, RefinementExhausted) as exc:
        hint = " add --bump MARGIN or move the curve" if not args.demo else " move the curve"
        raise CliError(f"index computation failed: {exc};{hint}", EXIT_INDEX) from None
    print(f"outer: {report.outer_index}")
    print("inner: " + " ".join(str(i) for i in report.inner_indices))
    verdict = "consistent" if report.consistent else f"inconsistent ({report.outer_index} != {report.sum_inner})"
    print(f"outer = sum(inner): {verdict}")
    return EXIT_OK


# --- demo-linear ---------------------------------------------------------------

def cmd_demo_linear(args) -> int:
    a = np.array(_floats(args.matrix, 4, "--matrix")).reshape(2, 2)
    x0 = np.array(_floats(args.init, 2, "--init"))
    result = linear_flow_demo(a, x0, args.dt, args.steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["iter,x,y,angle_deg"]
    st = result.orbit.states
    rows += [f"{t},{_num(st[t, 0])},{_num(st[t, 1])},{_num(result.angles_deg[t])}"
             for t in range(len(st))]
    (out / "linear_orbit.csv").write_text("\n".join(rows) + "\n")
    _write_run_json(Path(args.run_dir) if args.run_dir else out, args)
    lam, vec = result.eigenvalues, result.eigenvectors
    print(f"eigenvalues: {_num(lam[0])} {_num(lam[1])}")
    for i in range(2):
        print(f"eigenvector {i}: ({_num(vec[0, i])}, {_num(vec[1, i])})")
    it = result.alignment_iter
    print(f"alignment iteration: {it if it is not None else 'never'}")
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relutopo", description="Topology and gradient-flow analysis of small ReLU networks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the 784-256-10 MNIST network")
    p.add_argument("--data", required=True, help="directory with the four MNIST IDX files")
    p.add_argument("--download", metavar="URL", help="fetch missing IDX files from this base URL")
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--log", help="training log CSV (default: train_log.csv beside the model)")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--run-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("flow", help="integrate probability-gradient flows from test images")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", default="argmax", help="argmax or fixed:K")
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--seeds", type=int, default=1000, help="use the first N test images")
    p.add_argument("--snapshots", default="0,9,99")
    p.add_argument("--images-per-class", type=int, default=1)
    p.add_argument("--refit-final", action=argparse.BooleanOptionalAction, default=True,
                   help="refit PCA on the states of the last snapshot")
    p.add_argument("--cluster-radius", type=float, help="default 0.05*sqrt(dim)")
    p.add_argument("--chunk-size", type=int, default=100)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--run-dir")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("boundary", help="extract the decision boundary of a 2-input network")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--model")
    src.add_argument("--demo", choices=["hexagon"])
    p.add_argument("--bbox", required=True, help="xmin,ymin,xmax,ymax")
    p.add_argument("--merge-tol")
    p.add_argument("--out", required=True, help="complex JSON path")
    p.add_argument("--svg")
    p.add_argument("--run-dir")
    p.set_defaults(func=cmd_boundary)

    p = sub.add_parser("homology", help="Betti numbers and torsion of a simplicial complex")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--complex")
    src.add_argument("--catalog", help=f"one of: {', '.join(CATALOG)}")
    p.add_argument("--run-dir", default=".")
    p.set_defaults(func=cmd_homology)

    p = sub.add_parser("index", help="winding numbers of a planar field")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--model")
    src.add_argument("--demo", choices=sorted(DEMO_FIELDS))
    p.add_argument("--class", dest="cls", type=int)
    p.add_argument("--curve", action="append", help="cx,cy,r[,n]; repeat, first is the outer curve")
    p.add_argument("--curve-file", help="JSON polygon or list of polygons")
    p.add_argument("--bump", type=float, metavar="MARGIN")
    p.add_argument("--bbox", help="box for --bump (default: outer curve's box padded by MARGIN/2)")
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--refine-limit", type=int, default=16)
    p.add_argument("--run-dir", default=".")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("demo-linear", help="Euler orbit of a 2x2 linear system")
    p.add_argument("--matrix", required=True, help="a,b,c,d for [[a,b],[c,d]]")
    p.add_argument("--init", default="1,1")
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--out", required=True)
    p.add_argument("--run-dir")
    p.set_defaults(func=cmd_demo_linear)
    return parser


_NUMERIC_LIST_FLAGS = {"--matrix", "--init", "--bbox", "--curve", "--merge-tol"}


def _join_negative_values(argv: Sequence[str]) -> list[str]:
    # argparse would read "--matrix -4,6,1,-2" as two options; glue such values on
    out, i = [], 0
    argv = list(argv)
    while i < len(argv):
        tok = argv[i]
        if tok in _NUMERIC_LIST_FLAGS and i + 1 < len(argv) and argv[i + 1][:2] not in ("--", ""):
            nxt = argv[i + 1]
            if nxt.startswith("-") and len(nxt) > 1 and (nxt[1].isdigit() or nxt[1] == "."):
                out.append(f"{tok}={nxt}")
                i += 2
                continue
        out.append(tok)
        i += 1
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    args = build_parser().parse_args(_join_negative_values(argv))
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NonFiniteState as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except (DegenerateEigenvalues, ComplexEigenvalues) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EIGEN
    except (ZeroOnCurve, RefinementExhausted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INDEX
    except (RelutopoError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
