"""End-to-end acceptance checks, one test per criterion."""
import json
import time

import numpy as np

from regionmotion import cli
from regionmotion import disentangle as dz
from regionmotion import flow as fl
from regionmotion import heatmap as hm
from regionmotion import motion as mo
from regionmotion import synth
from regionmotion.errors import DegenerateHeatmap
from regionmotion.motion import AffineMotion, MotionSet
from regionmotion.tensor_io import Grid2, read_bytes_image, read_image, read_tensor, write_image, write_tensor


def _random_motion(rng):
    while True:
        lin = rng.normal(size=(2, 2)) * rng.uniform(0.5, 20)
        if abs(np.linalg.det(lin)) > 1e-2 * np.linalg.norm(lin) ** 2:
            return AffineMotion(lin, rng.uniform(-100, 100, size=2))


def _close(a, b, tol=1e-9):
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b)) <= tol * max(1.0, np.max(np.abs(a)), np.max(np.abs(b)))


def test_1_toy_rectangles(tmp_path, criterion):
    start = time.perf_counter()
    code = cli.run(["toy-rect", "--n", "128", "--size", "64", "-o", str(tmp_path / "report.json")])
    elapsed = time.perf_counter() - start
    report = json.loads((tmp_path / "report.json").read_text())
    ok = code == 0 and report["mean"] < 0.5 and report["max"] < 2.0 and elapsed < 5.0
    criterion(1, "toy-rect angle error", ok, f"mean {report['mean']:.4f} deg, max {report['max']:.4f} deg, {elapsed:.2f} s")


def test_2_gradcheck(capsys, criterion):
    start = time.perf_counter()
    code = cli.run(["gradcheck", "--trials", "100"])
    elapsed = time.perf_counter() - start
    summary = capsys.readouterr().out.strip()
    criterion(2, "gradcheck", code == 0 and elapsed < 30.0, f"{summary}, {elapsed:.2f} s")


def test_3_motion_algebra(criterion):
    rng = np.random.default_rng(3)
    n = 1000
    compose_ok = True
    for _ in range(n):
        a, b, c = (_random_motion(rng) for _ in range(3))
        compose_ok &= _close(mo.compose(a, AffineMotion.identity()).matrix(), a.matrix())
        compose_ok &= _close(mo.compose(a, a).matrix(), AffineMotion.identity().matrix())
        compose_ok &= _close(mo.compose(mo.compose(a, b), mo.compose(c, b)).matrix(), mo.compose(a, c).matrix(), 1e-7)
        compose_ok &= mo.relative_update(a, b, b) == a
    worst_orth = worst_cov = 0.0
    measured = 0
    while measured < n:
        size = int(rng.integers(8, 24))
        theta = rng.uniform(0, np.pi)
        u = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        cov = u @ np.diag(rng.uniform(0.5, size / 3, size=2) ** 2) @ u.T
        env = hm.rasterize_gaussian(rng.uniform(0.3 * size, 0.7 * size, size=2), cov, (size, size))
        h = hm.normalize(env * rng.uniform(0, 1, size=(size, size)))
        try:
            lin = mo.pca_motion(h).linear
        except DegenerateHeatmap:
            continue
        measured += 1
        worst_orth = max(worst_orth, abs(lin[:, 0] @ lin[:, 1]) / np.linalg.norm(lin))
        worst_cov = max(worst_cov, np.max(np.abs(lin @ lin.T - hm.covariance(h))))
    ok = compose_ok and worst_orth <= 1e-9 and worst_cov <= 1e-9
    criterion(
        3,
        "motion algebra invariants",
        ok,
        f"{n} compose cases {'ok' if compose_ok else 'FAILED'}, {measured} PCA motions: "
        f"column dot/norm {worst_orth:.1e}, |LL^T - C| {worst_cov:.1e}",
    )


def test_4_equivariance(criterion):
    rng = np.random.default_rng(4)
    worst = 0.0
    min_mismatch = np.inf
    for _ in range(500):
        mx, tilde = _random_motion(rng), _random_motion(rng)
        mxt = AffineMotion.from_matrix(np.linalg.inv(tilde.homogeneous()) @ mx.homogeneous())
        scale = max(1.0, np.abs(mx.matrix()).max())
        worst = max(worst, mo.equivariance_residual(mx, mxt, tilde) / scale)
        wrong = AffineMotion(mxt.linear, mxt.translation + rng.normal(size=2) * 0.1)
        min_mismatch = min(min_mismatch, mo.equivariance_residual(mx, wrong, tilde))
    criterion(4, "equivariance residual", worst <= 1e-9 and min_mismatch > 0, f"matched max {worst:.1e}, mismatched min {min_mismatch:.2e}")


def test_5_puppet_reconstruction(tmp_path, criterion):
    start = time.perf_counter()
    means = []
    identical = True
    for seed in range(10):
        scene = tmp_path / f"scene{seed}"
        assert cli.run(["puppet", "--parts", "3", "--frames", "16", "--size", "128", "--seed", str(seed), "-o", str(scene)]) == 0
        for mode in ("standard", "relative"):
            assert cli.run(["animate", "--scene", str(scene), "--mode", mode, "-o", str(tmp_path / f"{mode}{seed}")]) == 0
        std = json.loads((tmp_path / f"standard{seed}" / "report.json").read_text())
        rel = json.loads((tmp_path / f"relative{seed}" / "report.json").read_text())
        means.append(std["mean"])
        identical &= std["per_item"] == rel["per_item"]
        for t in range(1, 16):
            name = f"{t:04d}.ppm"
            a = (tmp_path / f"standard{seed}" / "frames" / name).read_bytes()
            identical &= a == (tmp_path / f"relative{seed}" / "frames" / name).read_bytes()
    elapsed = time.perf_counter() - start
    ok = max(means) <= 0.02 and identical and elapsed < 60.0
    criterion(
        5,
        "puppet reconstruction",
        ok,
        f"standard L1 mean {np.mean(means):.4f} max {max(means):.4f}, relative identical: {identical}, {elapsed:.1f} s",
    )


def test_6_disentanglement(criterion):
    family = synth.MotionFamily.default(3, seed=0)
    pairs = family.sample_pairs(20000, seed=1)
    cfg = dz.TrainConfig(total_pairs=100_000, seed=0)
    start = time.perf_counter()
    model = dz.train(pairs, cfg)
    elapsed = time.perf_counter() - start
    twin = dz.train(pairs, cfg)
    deterministic = all(model.params[k].tobytes() == twin.params[k].tobytes() for k in model.params)
    sv_err, ang_err = [], []
    for item in family.scale_swap_pairs(200, seed=99, source_scale=1.3, driving_scale=1.0):
        out = dz.disentangled_motions(model, item["source"], item["driving"])
        for k, m in enumerate(out.regions):
            sv, theta = mo.principal_axes(m)
            truth = item["source_singular"][k]
            sv_err.append(np.max(np.abs(sv - truth) / truth))
            ang_err.append(synth.angle_error(theta, item["driving_angles"][k]))
    sv_mean, ang_mean = float(np.mean(sv_err)), float(np.mean(ang_err))
    ok = sv_mean <= 0.05 and ang_mean <= 2.0 and deterministic and elapsed < 600
    criterion(
        6,
        "shape/pose disentanglement",
        ok,
        f"singular values mean {100 * sv_mean:.2f}% (max {100 * max(sv_err):.1f}%), "
        f"angles mean {ang_mean:.2f} deg (max {max(ang_err):.1f}), deterministic: {deterministic}, train {elapsed:.0f} s",
    )


def test_7_segmentation(tmp_path, criterion):
    exact = True
    for seed in range(10):
        scene = synth.gen_puppet(synth.PuppetConfig(), seed)
        exact &= all(np.array_equal(synth.segment(scene.heatmaps(t)), scene.labels(t)) for t in range(scene.T))
    maps = np.zeros((2, 1, 3))
    maps[0, 0, 0] = 0.0005
    maps[0, 0, 1] = 0.001
    maps[0, 0, 2], maps[1, 0, 2] = 0.0004, 0.0006
    boundary = synth.segment(maps, 0.001).tolist() == [[0, 1, 2]]
    labels = synth.segment(scene.heatmaps(0))
    write_tensor(scene.heatmaps(0).astype(np.float32), tmp_path / "h.mtn")
    assert cli.run(["segment", "--heatmaps", str(tmp_path / "h.mtn"), "-o", str(tmp_path / "l.pgm")]) == 0
    from_cli = read_bytes_image(tmp_path / "l.pgm")[..., 0]
    iou = synth.foreground_iou(labels, from_cli)
    ok = exact and boundary and iou == 1.0
    criterion(7, "segmentation rules", ok, f"labels exact on 10 scenes: {exact}, threshold boundary: {boundary}, IoU {iou}")


def test_8_flow_input_dims(criterion):
    rng = np.random.default_rng(8)
    grid = Grid2(48, 48)
    source = rng.uniform(size=(48, 48, 3))
    dims = {}
    for k in (1, 5, 10, 20):
        heats, regions = [], []
        for i in range(k):
            mu = rng.uniform(10, 38, size=2)
            cov = np.diag(rng.uniform(4, 16, size=2))
            heats.append(hm.normalize(hm.rasterize_gaussian(mu, cov, grid)))
            regions.append(AffineMotion(np.eye(2) + rng.normal(scale=0.05, size=(2, 2)), rng.normal(size=2)))
        out = fl.build_flow_input(source, MotionSet(tuple(regions), AffineMotion.identity()), heats)
        dims[k] = out.shape
    ok = all(shape == (48, 48, 4 * k + 3) for k, shape in dims.items())
    criterion(8, "flow input dims", ok, ", ".join(f"K={k}: {list(s)}" for k, s in dims.items()))


def test_9_format_round_trips(tmp_path, criterion):
    rng = np.random.default_rng(9)
    image_ok = tensor_ok = 0
    for i in range(1000):
        h, w = rng.integers(1, 24, size=2)
        c = int(rng.choice([1, 3]))
        img = rng.uniform(size=(h, w, c))
        path = tmp_path / ("i.pgm" if c == 1 else "i.ppm")
        write_image(img, path)
        back = read_image(path)
        image_ok += back.shape == img.shape and np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12

        rank = int(rng.integers(1, 5))
        t = (rng.standard_normal(rng.integers(1, 7, size=rank)) * 10 ** rng.uniform(-6, 6)).astype(np.float32)
        write_tensor(t, tmp_path / "t.mtn")
        r = read_tensor(tmp_path / "t.mtn")
        tensor_ok += r.shape == t.shape and r.tobytes() == t.tobytes()
    ok = image_ok == 1000 and tensor_ok == 1000
    criterion(9, "format round trips", ok, f"images {image_ok}/1000, tensors {tensor_ok}/1000")
