"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line with the measured numbers
before asserting, so the run log doubles as a report.
"""
import json
import math
import time

import numpy as np
import pytest

from conftest import TIMINGS
from oracles import grid_curve_report, jacobi_eigh, rational_betti, sign_grid
from relutopo.cli import main
from relutopo.flow import (
    alignment_iteration,
    line_angle_deg,
    linear_closed_form,
    linear_flow_demo,
    pca_fit,
)
from relutopo.mlp import forward_batch, prob_gradient, softmax
from relutopo.planar import (
    DEMO_FIELDS,
    THREE_ZERO_POINTS,
    THREE_ZERO_RADIUS,
    PolygonalCurve,
    bump_modified_field,
    extract_boundary,
    hexagon_network,
    poincare_hopf_check,
    scan_singularities,
    winding_number,
)
from relutopo.topology import CATALOG, boundary_matrix, homology


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        return ok
    return emit


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, _ = capsys.readouterr()
    return code, out


# --- 1 ----------------------------------------------------------------------------------

@pytest.mark.mnist
def test_1_training_accuracy(trained, report):
    _, log = trained
    acc = log[-1]["val_acc"]
    seconds = TIMINGS.get("train", 0.0)
    ok = acc >= 0.96 and seconds <= 15 * 60
    report(1, ok, f"val_acc = {acc:.4f} (>= 0.96), training {seconds:.0f} s (<= 900 s)")
    assert ok


# --- 2 ----------------------------------------------------------------------------------

@pytest.mark.mnist
def test_2_gradient_correctness(trained_network, mnist, report):
    net = trained_network
    images = mnist[1].images
    rng = np.random.default_rng(2024)
    order = rng.permutation(len(images))
    pre = forward_batch(net, images[order[:1000]]).preact1
    chosen = order[:1000][np.min(np.abs(pre), axis=1) > 1e-3][:100]
    assert len(chosen) == 100

    def g(x, k):
        return softmax(forward_batch(net, x[None, :]).logits)[0, k]

    h = 1e-4
    worst_rel = worst_sum = 0.0
    for i in chosen:
        x = images[i]
        probs = softmax(forward_batch(net, x[None, :]).logits)[0]
        grads = np.array([prob_gradient(net, x, k) for k in range(10)])
        worst_sum = max(worst_sum, float(np.max(np.abs(grads.sum(axis=0)))))
        for k in (int(np.argmax(probs)), int(rng.integers(10))):
            coords = rng.choice(784, 20, replace=False)
            fd = np.empty(20)
            for n, j in enumerate(coords):
                e = np.zeros(784)
                e[j] = h
                fd[n] = (g(x + e, k) - g(x - e, k)) / (2 * h)
            an = grads[k, coords]
            worst_rel = max(worst_rel, float(np.max(np.abs(fd - an)) / np.max(np.abs(an))))
    ok = worst_rel <= 1e-4 and worst_sum <= 1e-10
    report(2, ok, f"max relative FD error {worst_rel:.2e} (<= 1e-4), max |sum_k grad g_k| {worst_sum:.1e} (<= 1e-10)")
    assert ok


# --- 3 ----------------------------------------------------------------------------------

def test_3_hexagon_pipeline(report):
    box = (-4.0, -4.0, 4.0, 4.0)
    start = time.perf_counter()
    planar = hexagon_network()
    result = extract_boundary(planar, box)
    h = homology(result.complex)
    seconds = time.perf_counter() - start
    has_curve, closed, n_pos, _ = grid_curve_report(sign_grid(planar.decision, box, 400))
    ok = (result.complex.count(0) == 6 and result.complex.count(1) == 6 and not result.is_open
          and h.betti == [1, 1] and h.torsion == [[], []] and h.euler == 0
          and has_curve and closed and n_pos == 1 and seconds < 1.0)
    report(3, ok, f"{result.summary()}, betti {h.betti}, chi {h.euler}, grid oracle curve={has_curve} "
                  f"closed={closed}, {seconds * 1000:.0f} ms (< 1 s)")
    assert ok


# --- 4 ----------------------------------------------------------------------------------

def test_4_homology_suite(report):
    expected = {
        "hexagon": ([1, 1], [[], []]),
        "filled-triangle": ([1, 0, 0], [[], [], []]),
        "two-circles": ([2, 2], [[], []]),
        "octahedron": ([1, 0, 1], [[], [], []]),
        "torus": ([1, 2, 1], [[], [], []]),
        "projective-plane": ([1, 0, 0], [[], [2], []]),
    }
    start = time.perf_counter()
    bad = []
    for name, (betti, torsion) in expected.items():
        cx = CATALOG[name]()
        h = homology(cx)
        if h.betti != betti or h.torsion != torsion or rational_betti(cx) != betti:
            bad.append(name)
        for k in range(2, cx.dimension + 1):
            if (boundary_matrix(cx, k - 1).entries @ boundary_matrix(cx, k).entries).any():
                bad.append(f"{name}: boundary of boundary")
    sphere_chi = homology(CATALOG["octahedron"]()).euler
    seconds = time.perf_counter() - start
    ok = not bad and sphere_chi == 2 and seconds < 5.0
    report(4, ok, f"{len(expected)} complexes, mismatches {bad or 'none'}, sphere chi {sphere_chi}, "
                  f"{seconds:.2f} s (< 5 s)")
    assert ok


# --- 5 ----------------------------------------------------------------------------------

def _index_results(samples, toy_network):
    circle = PolygonalCurve.circle((0.0, 0.0), 1.0)
    out = {name: winding_number(DEMO_FIELDS[name](), circle, samples)
           for name in ("source", "saddle", "degree2")}
    three = poincare_hopf_check(DEMO_FIELDS["three-zero"](), PolygonalCurve.circle((0.0, 0.0), 4.0, 128),
                                [PolygonalCurve.circle(p, THREE_ZERO_RADIUS) for p in THREE_ZERO_POINTS],
                                samples)
    out["three-zero"] = (three.outer_index, tuple(three.inner_indices), three.consistent)
    # toy 2-D network: bump on [-4, 4]^2 with margin 1, outer square inside the ramp band
    field = bump_modified_field(toy_network, 1, (-4.0, -4.0, 4.0, 4.0), 1.0)
    region = (-3.9, -3.9, 3.9, 3.9)
    toy_samples = samples // 8
    scan = scan_singularities(field, region, 40, toy_samples)
    toy = poincare_hopf_check(field, PolygonalCurve.rectangle(*region), [c for c, _ in scan.singular],
                              toy_samples)
    out["toy"] = (toy.outer_index, tuple(toy.inner_indices), toy.consistent, len(scan.failed))
    return out


def test_5_index_suite(toy_network, report):
    base = _index_results(256, toy_network)
    doubled = _index_results(512, toy_network)
    ok = (base["source"] == 1 and base["saddle"] == -1 and base["degree2"] == 2
          and base["three-zero"][2] and base["toy"][2] and base["toy"][3] == 0
          and base == doubled)
    report(5, ok, f"source {base['source']}, saddle {base['saddle']}, degree2 {base['degree2']}, "
                  f"three-zero outer/inner {base['three-zero'][:2]}, toy network outer/inner {base['toy'][:2]}, "
                  f"doubled samples identical: {base == doubled}")
    assert ok


# --- 6 and 7 -----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def flow_run(mnist_dir, trained_model_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("flow1000")
    start = time.perf_counter()
    code = main(["flow", "--model", str(trained_model_file), "--data", str(mnist_dir), "--mode", "argmax",
                 "--step", "0.05", "--iters", "100", "--seeds", "1000", "--out", str(out)])
    seconds = time.perf_counter() - start
    assert code == 0
    return out, seconds


@pytest.mark.mnist
def test_6a_probability_monotone(flow_run, report):
    out, seconds = flow_run
    doc = json.loads((out / "attractor.json").read_text())
    frac = 1 - doc["probability_decrease_steps"] / doc["steps"]
    ok = frac >= 0.99 and seconds < 300
    report("6a", ok, f"{frac:.4%} of {doc['steps']} steps non-decreasing (>= 99%), flow run {seconds:.0f} s (< 300 s)")
    assert ok


@pytest.mark.mnist
def test_6b_final_confidence(flow_run, report):
    doc = json.loads((flow_run[0] / "attractor.json").read_text())
    frac = doc["final_prob_ge_099_fraction"]
    ok = frac >= 0.95
    report("6b", ok, f"{frac:.1%} of seeds end with max probability >= 0.99 (>= 95%)")
    assert ok


@pytest.mark.mnist
def test_6c_ten_sinks(flow_run, report):
    doc = json.loads((flow_run[0] / "attractor.json").read_text())
    classes = [c["class_id"] for c in doc["clusters"]]
    ok = (doc["cluster_count"] == 10 and sorted(classes) == list(range(10))
          and all(c["purity"] > 0.5 for c in doc["clusters"]))
    report("6c", ok, f"{doc['cluster_count']} single-linkage clusters at radius {doc['cluster_radius']:.4g} "
                     f"(need exactly 10, one per class)")
    assert ok


@pytest.mark.mnist
def test_7_snapshot_artifacts(flow_run, mnist, report):
    out, _ = flow_run
    rows = {}
    for t in (0, 9, 99):
        lines = (out / f"snapshot_{t}.csv").read_text().splitlines()
        rows[t] = len(lines) - 1 if lines[0] == "seed_id,label,argmax_class,prob,pc1,pc2" else -1
    model = pca_fit(mnist[1].images[:1000], 2)
    ortho = float(np.max(np.abs(model.components @ model.components.T - np.eye(2))))

    x = np.random.default_rng(50).standard_normal((50, 10))
    ours = pca_fit(x, 10)
    w, v = jacobi_eigh(np.cov(x, rowvar=False))
    val_err = float(np.max(np.abs(ours.eigenvalues - w)))
    vec_err = max(min(np.max(np.abs(ours.components[i] - v[:, i])), np.max(np.abs(ours.components[i] + v[:, i])))
                  for i in range(10))
    ok = all(n == 1000 for n in rows.values()) and ortho <= 1e-8 and val_err <= 1e-10 and vec_err <= 1e-8
    report(7, ok, f"snapshot rows {rows}, orthonormality error {ortho:.1e} (<= 1e-8), "
                  f"Jacobi eigenvalue error {val_err:.1e}, eigenvector error {vec_err:.1e}")
    assert ok


# --- 8 ----------------------------------------------------------------------------------

def test_8_linear_demo(report):
    lam = linear_flow_demo(np.array([[-4.0, 6.0], [1.0, -2.0]]), np.array([1.0, 1.0])).eigenvalues
    eig_err = float(np.max(np.abs(lam - [-3 + math.sqrt(7), -3 - math.sqrt(7)])))

    dt, a, x0 = 0.01, np.diag([-1.0, -10.0]), np.array([1.0, 1.0])
    demo = linear_flow_demo(a, x0, dt, 2000)
    t = dt * np.arange(2001)
    exact = linear_closed_form(a, x0, t)
    reference = alignment_iteration(line_angle_deg(exact, demo.slow_direction))
    decayed = math.ceil(5 / 10 / dt)
    late_max = float(np.max(demo.angles_deg[decayed:]))
    ok = (eig_err <= 1e-9 and demo.alignment_iter is not None
          and abs(demo.alignment_iter - reference) <= 2 and late_max < 5.0)
    report(8, ok, f"eigenvalue error {eig_err:.1e} (<= 1e-9), alignment at {demo.alignment_iter} vs closed form "
                  f"{reference} (+-2), max angle after iteration {decayed}: {late_max:.2f} deg (< 5)")
    assert ok


# --- 9 ----------------------------------------------------------------------------------

def _outputs(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_9_determinism(capsys, tmp_path, report):
    from relutopo.data_io import save_model, write_idx_images, write_idx_labels
    from conftest import random_network

    data = tmp_path / "data"
    data.mkdir()
    rng = np.random.default_rng(9)
    for split, n in (("train", 200), ("t10k", 40)):
        (data / f"{split}-images-idx3-ubyte").write_bytes(write_idx_images(rng.random((n, 784))))
        (data / f"{split}-labels-idx1-ubyte").write_bytes(write_idx_labels(np.arange(n) % 10))
    save_model(random_network(seed=9, scale=3.0), tmp_path / "rand.json")

    commands = {
        "train": ["train", "--data", data, "--out", tmp_path / "train" / "m.json", "--epochs", 1, "--hidden", 32],
        "flow": ["flow", "--model", tmp_path / "rand.json", "--data", data, "--seeds", 40, "--iters", 30,
                 "--out", tmp_path / "flow"],
        "boundary": ["boundary", "--demo", "hexagon", "--bbox", "-4,-4,4,4", "--out", tmp_path / "boundary" / "b.json",
                     "--svg", tmp_path / "boundary" / "b.svg"],
        "homology": ["homology", "--catalog", "projective-plane", "--run-dir", tmp_path / "homology"],
        "index": ["index", "--demo", "three-zero", "--run-dir", tmp_path / "index"],
        "demo-linear": ["demo-linear", "--matrix", "-4,6,1,-2", "--out", tmp_path / "demo-linear"],
    }
    differing = []
    for name, argv in commands.items():
        first = run_cli(capsys, *argv)
        first_files = _outputs(tmp_path / name)
        second = run_cli(capsys, *argv)
        if first[0] != 0 or first != second or first_files != _outputs(tmp_path / name):
            differing.append(name)
    ok = not differing
    report(9, ok, f"{len(commands)} subcommands run twice, differing outputs: {differing or 'none'}")
    assert ok
