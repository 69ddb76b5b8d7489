import numpy as np
import pytest

from cardioshape import synth
from cardioshape.motion import (
    SlicePlane,
    ViewSet,
    _label_dice,
    _pair_term,
    bilinear_sample,
    eval_intersections,
    intersection_samples,
    mc_objective,
    mc_optimize,
)


def make_plane(origin, axis_u, axis_v, image, spacing=(1.0, 1.0), label=None, pid="p"):
    return SlicePlane(
        origin=origin,
        axis_u=axis_u,
        axis_v=axis_v,
        pixel_spacing=spacing,
        image=image,
        label=label,
        plane_id=pid,
    )


@pytest.fixture(scope="module")
def synthetic_views():
    cfg = synth.SynthConfig(scale=0.05, n_frames=3, seed=11, voxel_size=2.0)
    pop = synth.synth_population(cfg, 1)
    geom = synth.VolumeGeometry.default(cfg.voxel_size)
    labels = synth.voxelize_sequence(pop.sequences[0], geom)
    texture = synth.make_texture(geom.dims, np.random.Generator(np.random.Philox(99)))
    intensity = [
        synth.intensity_volume(labels[t], texture=texture)
        for t in range(cfg.n_frames)
    ]
    specs = synth.default_view_specs(geom, n_sax=5, pixel_spacing=2.0)
    return intensity, labels, geom, specs


class TestIntersectionSamples:
    def test_orthogonal_planes_count_and_axis(self):
        img = np.zeros((1, 11, 11))
        a = make_plane([0, -5, -5], [0, 1, 0], [0, 0, 1], img)
        b = make_plane([-5, 0, -5], [1, 0, 0], [0, 0, 1], img)
        pts = intersection_samples(a, b)
        # shared line is the z axis clipped to 10 mm: step 1 -> 11 points
        assert len(pts) == 11
        assert np.abs(pts[:, :2]).max() < 1e-12

    def test_parallel_rejected(self):
        img = np.zeros((1, 4, 4))
        a = make_plane([0, 0, 0], [1, 0, 0], [0, 1, 0], img)
        b = make_plane([0, 0, 5], [1, 0, 0], [0, 1, 0], img)
        with pytest.raises(ValueError, match="parallel"):
            intersection_samples(a, b)

    def test_disjoint_rectangles_empty(self):
        img = np.zeros((1, 4, 4))
        a = make_plane([0, 0, 0], [1, 0, 0], [0, 1, 0], img)
        b = make_plane([0, 50, -1], [0, 1, 0], [0, 0, 1], img)
        assert len(intersection_samples(a, b)) == 0

    def test_points_project_inside_both(self, synthetic_views):
        intensity, labels, geom, specs = synthetic_views
        rng = np.random.Generator(np.random.Philox(3))
        views, _ = synth.slice_views(intensity, labels, geom, specs, 2.0, rng)
        pairs = [(views.la_2ch, views.la_4ch)] + [
            (p, views.la_2ch) for p in views.sax
        ]
        for a, b in pairs:
            pts = intersection_samples(a, b)
            for plane in (a, b):
                pix = plane.world_to_pixels(pts)
                h, w = plane.shape
                assert (pix[:, 0] >= -1e-9).all() and (pix[:, 0] < w).all()
                assert (pix[:, 1] >= -1e-9).all() and (pix[:, 1] < h).all()


class TestBilinear:
    def test_pixel_center_exact(self):
        rng = np.random.default_rng(0)
        img = rng.normal(size=(2, 6, 7))
        plane = make_plane([0, 0, 0], [1, 0, 0], [0, 1, 0], img)
        assert bilinear_sample(plane, np.array([3.0, 2.0, 0.0]), 1) == img[1, 2, 3]

    def test_constant_image(self):
        img = np.full((1, 5, 5), 2.5)
        plane = make_plane([0, 0, 0], [1, 0, 0], [0, 1, 0], img)
        for p in ([0.3, 1.7, 0], [4.0, 4.0, 0], [200.0, -3.0, 0]):
            assert abs(bilinear_sample(plane, np.array(p, float), 0) - 2.5) < 1e-12

    def test_midpoint_of_two_pixels(self):
        img = np.zeros((1, 2, 2))
        img[0, 0, 0] = 1.0
        img[0, 0, 1] = 3.0
        plane = make_plane([0, 0, 0], [1, 0, 0], [0, 1, 0], img)
        assert abs(bilinear_sample(plane, np.array([0.5, 0.0, 0.0]), 0) - 2.0) < 1e-12

    def test_displacement_shifts_sampling(self):
        img = np.zeros((1, 2, 3))
        img[0, :, 1] = 1.0
        plane = make_plane([0, 0, 0], [1, 0, 0], [0, 1, 0], img, spacing=(2.0, 2.0))
        # displacement is in mm: 2 mm = 1 pixel along u
        plane.displacement = np.array([2.0, 0.0])
        assert abs(bilinear_sample(plane, np.array([0.0, 0.0, 0.0]), 0) - 1.0) < 1e-12


class TestObjective:
    def test_constant_images_zero(self):
        img = np.full((2, 8, 8), 3.0)
        sax = [
            make_plane([-4, -4, z], [1, 0, 0], [0, 1, 0], img.copy(), pid=f"s{z}")
            for z in (-2, 0, 2)
        ]
        la1 = make_plane([0, -4, -4], [0, 1, 0], [0, 0, 1], img.copy(), pid="la1")
        la2 = make_plane([-4, 0, -4], [1, 0, 0], [0, 0, 1], img.copy(), pid="la2")
        views = ViewSet(sax, la1, la2)
        for p in views.planes():
            p.displacement = np.random.default_rng(1).normal(0, 3, 2)
        value, grads = mc_objective(views)
        assert value < 1e-12

    def test_zero_displacement_near_minimal(self, synthetic_views):
        intensity, labels, geom, specs = synthetic_views
        rng = np.random.Generator(np.random.Philox(5))
        views, _ = synth.slice_views(intensity, labels, geom, specs, 0.0, rng)
        base, _ = mc_objective(views)
        rng2 = np.random.default_rng(2)
        for _ in range(3):
            for p in views.planes():
                p.displacement = rng2.normal(0, 2.0, 2)
            shifted, _ = mc_objective(views)
            assert shifted > base
            for p in views.planes():
                p.displacement = np.zeros(2)

    def test_gradient_matches_fd(self, synthetic_views):
        intensity, labels, geom, specs = synthetic_views
        rng = np.random.Generator(np.random.Philox(7))
        views, _ = synth.slice_views(intensity, labels, geom, specs, 2.0, rng)
        # irrational offsets keep samples away from |.| kinks and pixel knots
        rng2 = np.random.default_rng(3)
        for p in views.planes():
            p.displacement = rng2.normal(0, 1.0, 2) + 0.2345
        value, grads = mc_objective(views)
        worst = 0.0
        n_clean = 0
        gmax = max(np.abs(g).max() for g in grads.values())

        def fd_at(p, axis, h):
            p.displacement[axis] += h
            vp, _ = mc_objective(views)
            p.displacement[axis] -= 2 * h
            vm, _ = mc_objective(views)
            p.displacement[axis] += h
            return (vp - vm) / (2 * h)

        for p in views.planes():
            for axis in range(2):
                fd1 = fd_at(p, axis, 1e-5)
                fd2 = fd_at(p, axis, 5e-6)
                if abs(fd1) < 1e-3 * gmax:
                    continue
                # a kink inside the probe window makes the two step sizes
                # disagree; the comparison is specified away from kinks
                if abs(fd1 - fd2) > 1e-5 * abs(fd1):
                    continue
                worst = max(worst, abs(grads[p.plane_id][axis] - fd1) / abs(fd1))
                n_clean += 1
        assert n_clean >= 8
        assert worst < 1e-4

    def test_translation_along_intersection_invariance(self):
        # both planes cut from one linear-intensity volume share the z axis;
        # moving both contents equally along z re-samples the same volume
        # values on each side, so the pair term is exactly unchanged
        gradient = np.array([0.3, 0.7, 0.2])

        def plane_image(origin, axis_u, axis_v, size=17):
            xs, ys = np.meshgrid(np.arange(size), np.arange(size))
            world = (
                np.asarray(origin)
                + xs[..., None] * np.asarray(axis_u)
                + ys[..., None] * np.asarray(axis_v)
            )
            return (world @ gradient)[None, :, :]

        a = make_plane(
            [0, -8, -8], [0, 1, 0], [0, 0, 1],
            plane_image([0, -8, -8], [0, 1, 0], [0, 0, 1]), pid="a",
        )
        b = make_plane(
            [-8, 0, -8], [1, 0, 0], [0, 0, 1],
            plane_image([-8, 0, -8], [1, 0, 0], [0, 0, 1]), pid="b",
        )
        pts = intersection_samples(a, b)
        pix_a = a.world_to_pixels(pts)
        pix_b = b.world_to_pixels(pts)
        base, _, _ = _pair_term(a, b, pix_a, pix_b)
        a.displacement = np.array([0.0, 1.3])  # v axis is z for both planes
        b.displacement = np.array([0.0, 1.3])
        shifted, _, _ = _pair_term(a, b, pix_a, pix_b)
        assert abs(shifted - base) < 1e-12


class TestOptimize:
    def test_defaults(self):
        import inspect

        sig = inspect.signature(mc_optimize)
        assert sig.parameters["lr"].default == 0.1
        assert sig.parameters["epochs"].default == 1000

    def test_envelope_monotone_and_recovery(self, synthetic_views):
        intensity, labels, geom, specs = synthetic_views
        rng = np.random.Generator(np.random.Philox(13))
        views, injected = synth.slice_views(intensity, labels, geom, specs, 2.0, rng)
        displacements, trace = mc_optimize(views, lr=0.1, epochs=150)
        envelope = np.minimum.accumulate(trace)
        assert (np.diff(envelope) <= 0).all()
        errs = [np.linalg.norm(displacements[k] + injected[k]) for k in injected]
        assert np.median(errs) < 0.75

    def test_noop_stability(self, synthetic_views):
        # at 1 mm pixels the discretisation bias vanishes and aligned views
        # stay aligned
        intensity, labels, geom, _ = synthetic_views
        specs = synth.default_view_specs(geom, n_sax=5, pixel_spacing=1.0, size=96)
        rng = np.random.Generator(np.random.Philox(17))
        views, _ = synth.slice_views(intensity, labels, geom, specs, 0.0, rng)
        displacements, _ = mc_optimize(views, lr=0.1, epochs=60)
        mags = [np.linalg.norm(d) for d in displacements.values()]
        assert max(mags) < 0.2


class TestEvalIntersections:
    def test_identical_aligned_views(self, synthetic_views):
        # axis-aligned planes whose lattices contain the intersection samples
        # exactly: both views quantise to the same voxels
        intensity, labels, geom, _ = synthetic_views
        half = 47.0
        sax = [
            synth.PlaneSpec(
                plane_id=f"sax_{d}",
                origin=np.array([-half, -half, float(z)]),
                axis_u=np.array([1.0, 0.0, 0.0]),
                axis_v=np.array([0.0, 1.0, 0.0]),
                pixel_spacing=(1.0, 1.0),
                height=95,
                width=95,
            )
            for d, z in enumerate((-20, 0, 20))
        ]
        la = [
            synth.PlaneSpec(
                plane_id=pid,
                origin=np.array([ox, oy, -half]),
                axis_u=np.array(u),
                axis_v=np.array([0.0, 0.0, 1.0]),
                pixel_spacing=(1.0, 1.0),
                height=95,
                width=95,
            )
            for pid, (ox, oy), u in (
                ("la_2ch", (-half, 0.0), [1.0, 0.0, 0.0]),
                ("la_4ch", (0.0, -half), [0.0, 1.0, 0.0]),
            )
        ]
        rng = np.random.Generator(np.random.Philox(19))
        views, _ = synth.slice_views(
            intensity, labels, geom, (sax, la[0], la[1]), 0.0, rng
        )
        out = eval_intersections(views)
        assert out["pearson_r"] > 0.999
        assert out["dice"] == 1.0

    def test_dice_omitted_without_labels(self, synthetic_views):
        intensity, labels, geom, specs = synthetic_views
        rng = np.random.Generator(np.random.Philox(23))
        views, _ = synth.slice_views(intensity, None, geom, specs, 0.0, rng)
        out = eval_intersections(views)
        assert "dice" not in out

    def test_label_dice_counting_oracle(self):
        rng = np.random.default_rng(4)
        la = rng.integers(0, 3, 500)
        lb = rng.integers(0, 3, 500)
        got = _label_dice(la, lb)
        scores = []
        for lab in (1, 2):
            inter = np.sum((la == lab) & (lb == lab))
            denom = np.sum(la == lab) + np.sum(lb == lab)
            scores.append(2 * inter / denom)
        assert abs(got - np.mean(scores)) < 1e-12


class TestViewSetValidation:
    def test_needs_three_sax(self):
        img = np.zeros((1, 4, 4))
        sax = [make_plane([0, 0, z], [1, 0, 0], [0, 1, 0], img) for z in (0, 1)]
        la1 = make_plane([0, 0, 0], [0, 1, 0], [0, 0, 1], img)
        la2 = make_plane([0, 0, 0], [1, 0, 0], [0, 0, 1], img)
        with pytest.raises(ValueError, match="at least 3"):
            ViewSet(sax, la1, la2)

    def test_sax_must_be_parallel(self):
        img = np.zeros((1, 4, 4))
        sax = [
            make_plane([0, 0, 0], [1, 0, 0], [0, 1, 0], img),
            make_plane([0, 0, 1], [1, 0, 0], [0, 0, 1], img),
            make_plane([0, 0, 2], [1, 0, 0], [0, 1, 0], img),
        ]
        la1 = make_plane([0, 0, 0], [0, 1, 0], [0, 0, 1], img)
        la2 = make_plane([0, 0, 0], [1, 0, 0], [0, 0, 1], img)
        with pytest.raises(ValueError, match="parallel"):
            ViewSet(sax, la1, la2)

    def test_nonunit_axis_rejected(self):
        with pytest.raises(ValueError, match="unit"):
            make_plane([0, 0, 0], [2, 0, 0], [0, 1, 0], np.zeros((1, 4, 4)))
