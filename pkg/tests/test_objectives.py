import numpy as np
import pytest
from scipy.spatial import distance_matrix

from cardioshape import synth
from cardioshape.mesh import STRUCTURES, ChamberSet, MeshSequence, TriMesh
from cardioshape.objectives import (
    LossWeights,
    TargetClouds,
    _edge_std,
    curvature_loss,
    cycle_loss,
    dice,
    edge_loss,
    pearson_r,
    recon_loss,
    surface_distances,
    temporal_laplacian_error,
    temporal_loss,
    total_loss,
)

from conftest import toy_sequence


@pytest.fixture(scope="module")
def small_pop():
    cfg = synth.SynthConfig(scale=0.02, n_frames=3, seed=5)
    return synth.synth_population(cfg, 1)


def fd_gradient_check(fn, seq, rng, n_probe=20, h=1e-4, tol=1e-5):
    """Central-difference check of d(value)/d(vertex) on random coordinates."""
    stacked = seq.stacked()
    _, grads = fn(seq)
    gmax = max(np.abs(g).max() for g in grads.values())
    assert gmax > 0
    checked = 0
    worst = 0.0
    while checked < n_probe:
        s = STRUCTURES[rng.integers(5)]
        t = int(rng.integers(seq.n_frames))
        i = int(rng.integers(stacked[s].shape[1]))
        k = int(rng.integers(3))
        perturbed = {ss: v.copy() for ss, v in stacked.items()}
        perturbed[s][t, i, k] += h
        vp, _ = fn(seq.with_stacked(perturbed))
        perturbed[s][t, i, k] -= 2 * h
        vm, _ = fn(seq.with_stacked(perturbed))
        fd = (vp - vm) / (2 * h)
        if abs(fd) > 1e-3 * gmax:
            worst = max(worst, abs(grads[s][t, i, k] - fd) / abs(fd))
            checked += 1
    assert worst < tol


class TestReconLoss:
    def test_zero_at_self_targets(self, small_pop):
        seq = small_pop.sequences[0]
        value, grads = recon_loss(seq, TargetClouds.from_sequence(seq))
        assert value == 0.0
        assert all(np.abs(g).max() == 0.0 for g in grads.values())

    def test_translated_targets_value(self):
        # shift well below the vertex spacing: every point matches its own
        # translated copy and both directions measure exactly d
        seq = toy_sequence(n_frames=1)
        d = 0.05
        targets = TargetClouds(
            [{s: seq.frames[0][s].vertices + [0, 0, d] for s in STRUCTURES}]
        )
        value, _ = recon_loss(seq, targets)
        assert abs(value - 2 * d * len(STRUCTURES)) < 1e-12

    def test_matches_exhaustive_oracle(self, small_pop):
        rng = np.random.default_rng(0)
        seq = small_pop.sequences[0]
        targets = TargetClouds(
            [
                {
                    s: rng.normal(0, 30, (40, 3)) + fr[s].vertices.mean(axis=0)
                    for s in STRUCTURES
                }
                for fr in seq.frames
            ]
        )
        value, _ = recon_loss(seq, targets)
        oracle = 0.0
        for t, fr in enumerate(seq.frames):
            for s in STRUCTURES:
                dm = distance_matrix(fr[s].vertices, targets.points(t, s))
                oracle += dm.min(axis=1).mean() + dm.min(axis=0).mean()
        assert abs(value - oracle / seq.n_frames) < 1e-12

    def test_gradient_fd(self, small_pop):
        rng = np.random.default_rng(1)
        seq = small_pop.sequences[0]
        targets = TargetClouds(
            [
                {s: fr[s].vertices + rng.normal(0, 2, fr[s].vertices.shape)
                 for s in STRUCTURES}
                for fr in seq.frames
            ]
        )
        fd_gradient_check(lambda q: recon_loss(q, targets), seq, rng)

    def test_empty_target_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            TargetClouds([{"LV-endo": np.zeros((0, 3))}])


class TestEdgeLoss:
    def test_equal_edges_zero(self):
        seq = toy_sequence(n_frames=2)  # icospheres: not equal edges
        tri = TriMesh(
            [[0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]], [[0, 1, 2]], "LV-endo"
        )
        seq = toy_sequence(n_frames=2, base=tri)
        value, grads = edge_loss(seq)
        assert value < 1e-12

    def test_path_1133_oracle(self):
        # population std of {1, 1, 3, 3}: mean 2, variance 1, std 1
        assert _edge_std([1.0, 1.0, 3.0, 3.0]) == 1.0

    def test_gradient_fd(self, small_pop):
        rng = np.random.default_rng(2)
        fd_gradient_check(edge_loss, small_pop.sequences[0], rng)


class TestCurvatureLoss:
    def test_template_repeated_is_zero(self, small_pop):
        template = small_pop.template
        seq = MeshSequence([template, template])
        value, _ = curvature_loss(seq, small_pop.curvatures)
        assert value == 0.0

    def test_anticorrelated_term_is_two(self, small_pop):
        # flipping face orientation negates every curvature: r = -1 per term
        template = small_pop.template
        flipped = ChamberSet(
            {
                s: TriMesh(
                    template[s].vertices, template[s].faces[:, [0, 2, 1]], s
                )
                for s in STRUCTURES
            }
        )
        value, _ = curvature_loss(MeshSequence([flipped]), small_pop.curvatures)
        assert abs(value - 2.0 * len(STRUCTURES)) < 1e-12

    def test_rigid_rotation_invariant(self, small_pop):
        rng = np.random.default_rng(3)
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        moved = small_pop.template.transformed(
            rotation=q, translation=np.array([4.0, 5.0, -6.0])
        )
        value, _ = curvature_loss(MeshSequence([moved]), small_pop.curvatures)
        assert abs(value) < 1e-9

    def test_zero_variance_rejected(self, small_pop):
        template = small_pop.template
        flat = {s: np.zeros(template[s].n_vertices) for s in STRUCTURES}
        with pytest.raises(ValueError, match="zero-variance"):
            curvature_loss(MeshSequence([template]), flat)

    def test_gradient_fd(self, small_pop):
        rng = np.random.default_rng(4)
        fd_gradient_check(
            lambda q: curvature_loss(q, small_pop.curvatures),
            small_pop.sequences[0],
            rng,
        )


class TestTemporalLoss:
    def test_static_zero(self):
        value, _ = temporal_loss(toy_sequence(n_frames=3))
        assert value == 0.0

    def test_unit_step_per_frame(self):
        seq = toy_sequence(n_frames=4, motion=lambda t: [float(t), 0, 0])
        value, _ = temporal_loss(seq)
        assert abs(value - 1.0 * len(STRUCTURES)) < 1e-12

    def test_single_frame_rejected(self):
        with pytest.raises(ValueError, match="two frames"):
            temporal_loss(toy_sequence(n_frames=1))

    def test_gradient_fd(self, small_pop):
        rng = np.random.default_rng(5)
        fd_gradient_check(temporal_loss, small_pop.sequences[0], rng)


class TestCycleLoss:
    def test_periodic_zero(self, small_pop):
        value, _ = cycle_loss(small_pop.sequences[0])
        assert value == 0.0

    def test_shifted_last_frame(self):
        seq = toy_sequence(
            n_frames=3, motion=lambda t: [0, 2.0 if t == 2 else 0.0, 0]
        )
        value, _ = cycle_loss(seq)
        assert abs(value - 2.0 * len(STRUCTURES)) < 1e-12

    def test_matches_exhaustive(self):
        rng = np.random.default_rng(6)
        seq = toy_sequence(n_frames=3, motion=lambda t: rng.normal(size=3))
        value, _ = cycle_loss(seq)
        oracle = sum(
            np.sqrt(
                ((seq.frames[-1][s].vertices - seq.frames[0][s].vertices) ** 2).sum(
                    axis=1
                )
            ).mean()
            for s in STRUCTURES
        )
        assert abs(value - oracle) < 1e-12

    def test_gradient_fd(self):
        rng = np.random.default_rng(7)
        seq = toy_sequence(n_frames=3, motion=lambda t: rng.normal(size=3))
        fd_gradient_check(cycle_loss, seq, rng)


class TestTotalLoss:
    def test_default_weights(self):
        w = LossWeights()
        assert (w.lambda_edge, w.lambda_curv, w.lambda_temp, w.lambda_cycle) == (
            0.5,
            1.0,
            0.1,
            0.2,
        )

    def test_zero_weights_equals_recon(self, small_pop):
        seq = small_pop.sequences[0]
        rng = np.random.default_rng(8)
        targets = TargetClouds(
            [
                {s: fr[s].vertices + rng.normal(0, 1, fr[s].vertices.shape)
                 for s in STRUCTURES}
                for fr in seq.frames
            ]
        )
        total, _, _ = total_loss(
            seq, targets, LossWeights(0.0, 0.0, 0.0, 0.0), small_pop.curvatures
        )
        ref, _ = recon_loss(seq, targets)
        assert total == ref

    def test_linear_in_edge_weight(self, small_pop):
        seq = small_pop.sequences[0]
        targets = TargetClouds.from_sequence(seq)
        curv = small_pop.curvatures
        v1, _, _ = total_loss(seq, targets, LossWeights(0.5, 0, 0, 0), curv)
        v2, _, _ = total_loss(seq, targets, LossWeights(1.0, 0, 0, 0), curv)
        e, _ = edge_loss(seq)
        assert abs((v2 - v1) - 0.5 * e) < 1e-12

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(lambda_edge=-0.1)

    def test_all_terms_nonnegative(self, small_pop):
        seq = small_pop.sequences[0]
        rng = np.random.default_rng(9)
        targets = TargetClouds(
            [
                {s: fr[s].vertices + rng.normal(0, 1, fr[s].vertices.shape)
                 for s in STRUCTURES}
                for fr in seq.frames
            ]
        )
        _, _, terms = total_loss(seq, targets, LossWeights(), small_pop.curvatures)
        assert all(v >= 0 for v in terms.values())


class TestSurfaceDistances:
    def test_identical_sets(self):
        a = np.random.default_rng(10).normal(size=(30, 3))
        sd = surface_distances(a, a.copy())
        assert sd["assd"] == 0.0 and sd["uni_assd_a_to_b"] == 0.0 and sd["hd90"] == 0.0

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(11)
        a = rng.normal(0, 5, (10, 3))
        b = rng.normal(0, 5, (10, 3))
        sd = surface_distances(a, b)
        dm = distance_matrix(a, b)
        pooled = np.concatenate([dm.min(axis=1), dm.min(axis=0)])
        assert abs(sd["assd"] - pooled.mean()) < 1e-12
        assert abs(sd["uni_assd_a_to_b"] - dm.min(axis=1).mean()) < 1e-12
        assert abs(sd["hd90"] - np.percentile(pooled, 90)) < 1e-12

    def test_translated_interior_uni(self):
        # grid far larger than the 3 mm shift: interior matches are exact
        xs, ys = np.meshgrid(np.arange(30, dtype=float), np.arange(30, dtype=float))
        a = np.column_stack([xs.ravel() * 10, ys.ravel() * 10, np.zeros(900)])
        b = a + [0, 0, 3.0]
        sd = surface_distances(a, b)
        assert abs(sd["uni_assd_a_to_b"] - 3.0) < 1e-12

    def test_hd90_monotone_under_dilation(self):
        # dilating the separation between disjoint sets increases every
        # pooled nearest-neighbour distance, hence the percentile
        rng = np.random.default_rng(12)
        a = rng.normal(size=(100, 3))
        prev = 0.0
        for gap in (10.0, 15.0, 20.0, 40.0):
            sd = surface_distances(a, a + [gap, 0, 0])
            assert sd["hd90"] >= prev - 1e-12
            prev = sd["hd90"]

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            surface_distances(np.zeros((0, 3)), np.zeros((3, 3)))


class TestDice:
    def test_identical(self):
        vol = np.zeros((4, 4, 4), dtype=int)
        vol[1:3, 1:3, 1:3] = 2
        assert dice(vol, vol.copy(), 2) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4, 4), dtype=int)
        b = np.zeros((4, 4, 4), dtype=int)
        a[0, 0, 0] = 1
        b[3, 3, 3] = 1
        assert dice(a, b, 1) == 0.0

    def test_half_overlap(self):
        a = np.zeros((4, 4, 1), dtype=int)
        b = np.zeros((4, 4, 1), dtype=int)
        a[0:2, :, :] = 1  # 8 voxels
        b[1:3, :, :] = 1  # 8 voxels, overlap 4
        assert dice(a, b, 1) == 0.5

    def test_both_empty_is_one(self):
        assert dice(np.zeros((2, 2)), np.zeros((2, 2)), 5) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shapes differ"):
            dice(np.zeros((2, 2)), np.zeros((3, 2)), 1)


class TestTemporalLaplacian:
    def test_linear_motion_zero(self):
        seq = toy_sequence(n_frames=5, motion=lambda t: [0.7 * t, -0.2 * t, 0.0])
        assert temporal_laplacian_error(seq) < 1e-12

    def test_static_zero(self):
        assert temporal_laplacian_error(toy_sequence(n_frames=4)) == 0.0

    def test_sinusoid_closed_form(self):
        amp, omega = 2.0, 0.8
        seq = toy_sequence(
            n_frames=6, motion=lambda t: [amp * np.sin(omega * t), 0, 0]
        )
        got = temporal_laplacian_error(seq)
        t = np.arange(6)
        x = amp * np.sin(omega * t)
        expected = np.abs(x[:-2] + x[2:] - 2 * x[1:-1]).mean()
        assert abs(got - expected) < 1e-9

    def test_needs_three_frames(self):
        with pytest.raises(ValueError, match="three frames"):
            temporal_laplacian_error(toy_sequence(n_frames=2))


class TestPearson:
    def test_self(self):
        x = np.random.default_rng(13).normal(size=50)
        assert pearson_r(x, x) == 1.0

    def test_negated(self):
        x = np.random.default_rng(14).normal(size=50)
        assert pearson_r(x, -x) == -1.0

    def test_textbook_formula(self):
        rng = np.random.default_rng(15)
        x = rng.normal(size=200)
        y = rng.normal(size=200)
        n = len(x)
        num = n * (x * y).sum() - x.sum() * y.sum()
        den = np.sqrt(n * (x**2).sum() - x.sum() ** 2) * np.sqrt(
            n * (y**2).sum() - y.sum() ** 2
        )
        assert abs(pearson_r(x, y) - num / den) < 1e-12

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError, match="zero-variance"):
            pearson_r(np.ones(10), np.arange(10.0))
