import numpy as np
import pytest

from _gradcheck import assert_gradients_match
from svlab import objectives as obj
from svlab.objectives import DinoCenter, MocoQueue, PrototypeBank

LN_1P_EINV = float(np.log(1 + np.exp(-1)))  # ~0.31326


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------------------
# value oracles


class TestCpc:
    def test_single_item_batch_is_zero(self):
        p = [np.array([[1.0, 0.0]])]
        f = [np.array([[0.5, 0.5]])]
        assert obj.cpc_loss(p, f, tau=1.0).value == pytest.approx(0.0, abs=1e-12)

    def test_aligned_vs_orthogonal_hand_value(self):
        eye = np.eye(2)
        out = obj.cpc_loss([eye], [eye], tau=1.0)
        assert out.value == pytest.approx(LN_1P_EINV, abs=1e-9)
        # two timesteps with the same geometry: same mean
        out2 = obj.cpc_loss([eye, eye], [eye, eye], tau=1.0)
        assert out2.value == pytest.approx(LN_1P_EINV, abs=1e-9)

    def test_rejects_bad_tau_and_shapes(self):
        eye = np.eye(2)
        with pytest.raises(ValueError):
            obj.cpc_loss([eye], [eye], tau=0.0)
        with pytest.raises(ValueError):
            obj.cpc_loss([eye], [np.eye(3)], tau=1.0)


class TestSimclr:
    def test_single_item_batch_is_zero(self):
        z = np.array([[0.3, 0.4]])
        assert obj.simclr_loss(z, z, tau=0.5).value == pytest.approx(0.0, abs=1e-12)

    def test_orthonormal_pair_hand_value(self):
        eye = np.eye(2)
        assert obj.simclr_loss(eye, eye, tau=1.0).value == pytest.approx(
            LN_1P_EINV, abs=1e-9
        )


class TestMoco:
    def test_empty_queue_is_zero(self):
        z = np.array([[1.0, 0.0], [0.0, 1.0]])
        q = MocoQueue(capacity=8, dim=2)
        assert obj.moco_loss(z, z, q, tau=0.5).value == pytest.approx(0.0, abs=1e-12)

    def test_constant_embeddings_full_queue_paper_value(self):
        # constant embeddings with a full 32768-entry queue: the softmax is
        # uniform over 1 + 32768 candidates
        v = unit([1.0, 2.0, 3.0])
        z = np.tile(v, (4, 1))
        queue = np.tile(v, (32768, 1))
        out = obj.moco_loss(z, z, queue, tau=0.03)
        assert out.value == pytest.approx(np.log(1 + 32768), abs=1e-6)
        assert out.value == pytest.approx(10.40, abs=0.01)

    def test_one_orthogonal_negative_hand_value(self):
        z = np.array([[1.0, 0.0]])
        queue = np.array([[0.0, 1.0]])
        out = obj.moco_loss(z, z, queue, tau=1.0)
        assert out.value == pytest.approx(LN_1P_EINV, abs=1e-9)

    def test_queue_fifo_eviction(self):
        q = MocoQueue(capacity=4, dim=2)
        q.push(np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert len(q) == 2
        q.push(np.array([[1.0, 1.0], [2.0, 0.0], [0.0, 2.0]]))
        assert len(q) == 4
        arr = q.array()
        # oldest remaining entry is [0, 1]; [1, 0] was evicted
        np.testing.assert_allclose(arr[0], [0.0, 1.0])
        np.testing.assert_allclose(arr[-1], [0.0, 1.0])

    def test_matches_one_directional_ntxent_with_batch_queue(self):
        # a queue freshly filled with the other batch's keys (minus the own
        # positive) reproduces the one-directional in-batch objective
        rng = np.random.default_rng(0)
        z = rng.normal(size=(6, 4))
        zp = rng.normal(size=(6, 4))
        zn = z / np.linalg.norm(z, axis=1, keepdims=True)
        zpn = zp / np.linalg.norm(zp, axis=1, keepdims=True)
        tau = 0.2

        def ntxent_one_direction(anchors, others):
            sims = anchors @ others.T / tau
            shifted = sims - sims.max(axis=1, keepdims=True)
            logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
            return -np.diag(logp)

        oracle_terms = ntxent_one_direction(zn, zpn)
        moco_terms = []
        for i in range(6):
            others = np.delete(zp, i, axis=0)
            out = obj.moco_loss(z[i : i + 1], zp[i : i + 1], others, tau=tau)
            moco_terms.append(out.value)
        np.testing.assert_allclose(moco_terms, oracle_terms, atol=1e-9)
        # and the symmetric implementation averages the two directions
        sym_oracle = 0.5 * (
            oracle_terms.mean() + ntxent_one_direction(zpn, zn).mean()
        )
        assert obj.simclr_loss(z, zp, tau).value == pytest.approx(sym_oracle, abs=1e-9)


class TestDeepCluster:
    def test_single_cluster_is_zero(self):
        z = np.array([[1.0, 0.0], [0.0, 1.0]])
        protos = PrototypeBank(np.array([[1.0, 1.0]]))
        out = obj.deepcluster_loss(z, [0, 0], protos, tau=0.1)
        assert out.value == pytest.approx(0.0, abs=1e-12)

    def test_aligned_centroid_hand_value(self):
        z = np.array([[1.0, 0.0]])
        protos = PrototypeBank(np.array([[1.0, 0.0], [0.0, 1.0]]))
        out = obj.deepcluster_loss(z, [0], protos, tau=0.1)
        assert out.value == pytest.approx(np.log(1 + np.exp(-10)), rel=1e-6)
        assert out.value == pytest.approx(4.54e-5, rel=1e-2)

    def test_out_of_range_assignment(self):
        z = np.eye(2)
        protos = PrototypeBank(np.eye(2))
        with pytest.raises(ValueError):
            obj.deepcluster_loss(z, [0, 2], protos, tau=0.1)


class TestSwav:
    def test_uniform_everything_gives_log_p(self):
        n_proto = 6
        protos = PrototypeBank(np.eye(n_proto))
        z = np.tile(unit(np.ones(n_proto)), (3, 1))
        a = np.full((3, n_proto), 1.0 / (3 * n_proto))
        out = obj.swav_loss(z, z, protos, a, a, tau=0.1)
        assert out.value == pytest.approx(np.log(n_proto), abs=1e-9)

    def test_one_hot_sharp_alignment_small_loss(self):
        protos = PrototypeBank(
            np.array([[1.0, 0.0], [np.cos(np.pi / 3), np.sin(np.pi / 3)]])
        )
        z = np.array([[1.0, 0.0]])
        one_hot = np.array([[1.0, 0.0]])
        out = obj.swav_loss(z, z, protos, one_hot, one_hot, tau=0.1)
        assert out.value < 0.01

    def test_shape_mismatch(self):
        protos = PrototypeBank(np.eye(3))
        z = np.ones((2, 3))
        with pytest.raises(ValueError):
            obj.swav_loss(z, z, protos, np.ones((2, 4)), np.ones((2, 3)), tau=0.1)


class TestWmse:
    def test_identical_views_zero(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(32, 4))
        out = obj.wmse_loss(z, z.copy(), slice_size=16)
        assert out.value == pytest.approx(0.0, abs=1e-6)

    def test_antipodal_views_four(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(32, 4))
        out = obj.wmse_loss(z, -z, slice_size=16)
        assert out.value == pytest.approx(4.0, abs=1e-6)

    def test_slice_too_small(self):
        z = np.random.default_rng(3).normal(size=(8, 4))
        with pytest.raises(ValueError):
            obj.wmse_loss(z, z, slice_size=4)


class TestBarlowTwins:
    def test_identity_cross_correlation_zero(self):
        z = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
        out = obj.barlow_twins_loss(z, z.copy(), lam=0.005)
        assert out.value == pytest.approx(0.0, abs=1e-9)

    def test_default_weight(self):
        import inspect

        assert (
            inspect.signature(obj.barlow_twins_loss).parameters["lam"].default == 0.005
        )

    def test_hand_3x2_matches_direct_evaluation(self):
        z = np.array([[1.0, 2.0], [3.0, 5.0], [2.0, 0.0]])
        zp = np.array([[0.0, 1.0], [1.0, 4.0], [-1.0, 2.0]])
        lam = 0.3
        eps = 1e-12
        zs = (z - z.mean(0)) / (z.std(0) + eps)
        zps = (zp - zp.mean(0)) / (zp.std(0) + eps)
        corr = zs.T @ zps / 3
        want = sum((1 - corr[d, d]) ** 2 for d in range(2))
        want += lam * sum(
            corr[d, dp] ** 2 for d in range(2) for dp in range(2) if d != dp
        )
        out = obj.barlow_twins_loss(z, zp, lam=lam)
        assert out.value == pytest.approx(want, abs=1e-10)


class TestVicreg:
    def test_spread_identical_views_zero(self):
        z = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]) * 1.5
        out = obj.vicreg_loss(z, z.copy(), lam=1.0, mu=1.0, nu=0.1)
        assert out.value == pytest.approx(0.0, abs=1e-12)

    def test_constant_batches_give_two_mu(self):
        z = np.ones((4, 3)) * 0.7
        for mu in (1.0, 2.5):
            out = obj.vicreg_loss(z, z.copy(), lam=1.0, mu=mu, nu=0.1)
            assert out.value == pytest.approx(2 * mu, abs=1e-9)

    def test_paper_default_weights(self):
        import inspect

        params = inspect.signature(obj.vicreg_loss).parameters
        assert params["lam"].default == 1.0
        assert params["mu"].default == 1.0
        assert params["nu"].default == 0.1


class TestByol:
    def test_aligned_zero_antipodal_four(self):
        rng = np.random.default_rng(4)
        p = rng.normal(size=(5, 3))
        assert obj.byol_loss(p, p.copy()).value == pytest.approx(0.0, abs=1e-9)
        assert obj.byol_loss(p, -p).value == pytest.approx(4.0, abs=1e-9)

    def test_teacher_gradient_exactly_zero(self):
        rng = np.random.default_rng(5)
        p = rng.normal(size=(5, 3))
        t = rng.normal(size=(5, 3))
        out = obj.byol_loss(p, t)
        assert np.all(out.grads["z_teacher"] == 0.0)


class TestSimsiam:
    def test_aligned_and_orthogonal(self):
        p = np.array([[1.0, 0.0], [0.0, 2.0]])
        assert obj.simsiam_loss(p, p.copy()).value == pytest.approx(-1.0, abs=1e-12)
        other = np.array([[0.0, 1.0], [3.0, 0.0]])
        assert obj.simsiam_loss(p, other).value == pytest.approx(0.0, abs=1e-12)


class TestDino:
    def test_uniform_everything_gives_log_dim(self):
        dim = 16
        zeros = np.zeros((3, dim))
        center = DinoCenter(np.zeros(dim), momentum=0.9)
        out = obj.dino_loss(
            [zeros, zeros.copy()], [zeros.copy()], center, tau_s=0.1, tau_t=0.04
        )
        assert out.value == pytest.approx(np.log(dim), abs=1e-9)

    def test_sharp_teacher_aligned_student_small_loss(self):
        dim = 8
        teacher = np.zeros((2, dim))
        teacher[:, 0] = 1.0  # one-hot after sharpening at tau_t = 0.04
        student = np.zeros((2, dim))
        student[:, 0] = 10.0  # logit gap 10 at tau_s = 0.1
        center = DinoCenter(np.zeros(dim), momentum=0.9)
        out = obj.dino_loss(
            [student, student.copy()], [teacher], center, tau_s=0.1, tau_t=0.04
        )
        assert out.value < 0.01

    def test_returns_teacher_probs_and_zero_teacher_grad(self):
        rng = np.random.default_rng(6)
        views = [rng.normal(size=(3, 5)) for _ in range(3)]
        teacher = [rng.normal(size=(3, 5)) for _ in range(2)]
        center = DinoCenter(rng.normal(size=5), momentum=0.9)
        out = obj.dino_loss(views, teacher, center, tau_s=0.1, tau_t=0.04)
        assert len(out.aux["teacher_probs"]) == 2
        np.testing.assert_allclose(out.aux["teacher_probs"][0].sum(axis=1), 1.0)
        assert np.all(out.grads["teacher_views"] == 0.0)

    def test_requires_a_global_view(self):
        z = np.zeros((2, 4))
        with pytest.raises(ValueError):
            obj.dino_loss([z, z], [], DinoCenter(np.zeros(4)), 0.1, 0.04)


class TestDinoCenterUpdate:
    def test_zero_momentum_gives_batch_mean(self):
        c = DinoCenter(np.zeros(3), momentum=0.0)
        outs = np.array([[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]])
        new = obj.dino_center_update(c, outs)
        np.testing.assert_allclose(new.center, [2.0, 2.0, 2.0])

    def test_fixed_point(self):
        c = DinoCenter(np.array([1.0, -1.0]), momentum=0.7)
        outs = np.tile(c.center, (4, 1))
        new = obj.dino_center_update(c, outs)
        np.testing.assert_allclose(new.center, c.center, atol=1e-15)

    def test_hand_value(self):
        c = DinoCenter(np.array([0.0]), momentum=0.9)
        new = obj.dino_center_update(c, np.array([[1.0], [1.0]]))
        assert new.center[0] == pytest.approx(0.1, abs=1e-12)


class TestAamSoftmax:
    def test_zero_margin_reduces_to_scaled_softmax(self):
        rng = np.random.default_rng(7)
        y = rng.normal(size=(6, 4))
        protos = PrototypeBank(rng.normal(size=(5, 4)))
        labels = rng.integers(0, 5, size=6)
        out = obj.aam_softmax_loss(y, labels, protos, s=30.0, m=0.0)
        # independent oracle: plain scaled softmax cross-entropy
        yn = y / np.linalg.norm(y, axis=1, keepdims=True)
        wn = protos.prototypes / np.linalg.norm(
            protos.prototypes, axis=1, keepdims=True
        )
        logits = 30.0 * yn @ wn.T
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        want = -logp[np.arange(6), labels].mean()
        assert out.value == pytest.approx(want, abs=1e-12)

    def test_margin_does_not_decrease_loss(self):
        rng = np.random.default_rng(8)
        y = rng.normal(size=(8, 4))
        protos = PrototypeBank(rng.normal(size=(6, 4)))
        labels = rng.integers(0, 6, size=8)
        base = obj.aam_softmax_loss(y, labels, protos, s=30.0, m=0.0).value
        with_margin = obj.aam_softmax_loss(y, labels, protos, s=30.0, m=0.2).value
        assert with_margin >= base - 1e-12

    def test_paper_defaults(self):
        import inspect

        params = inspect.signature(obj.aam_softmax_loss).parameters
        assert params["s"].default == 30.0
        assert params["m"].default == 0.2

    def test_margin_overflow_falls_back(self):
        # target cosine near -1 puts theta + m past pi
        y = np.array([[-1.0, 1e-3]])
        protos = PrototypeBank(np.array([[1.0, 0.0], [0.0, 1.0]]))
        out = obj.aam_softmax_loss(y, [0], protos, s=5.0, m=0.5)
        assert np.isfinite(out.value)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            obj.aam_softmax_loss(np.eye(2), [2], PrototypeBank(np.eye(2)), 30.0, 0.2)


# ---------------------------------------------------------------------------
# finite-difference gradient suite (shared with the acceptance tests)


def loss_cases(rng, b=4, d=5):
    """One case per objective: (loss_fn -> LossOutput, arrays, diff names, zero names).

    Stop-gradient side data (queues, assignments, labels, teacher views,
    frozen whitening transforms) is captured in the closures so that the
    finite-difference oracle perturbs only the differentiable inputs.
    """
    z = rng.normal(size=(b, d))
    zp = rng.normal(size=(b, d))
    cases = {}

    preds = rng.normal(size=(3, b, d))
    futs = rng.normal(size=(3, b, d))
    cases["cpc"] = (
        lambda predictions, future_reps: obj.cpc_loss(predictions, future_reps, 0.5),
        {"predictions": preds, "future_reps": futs},
        ["predictions", "future_reps"],
        [],
    )
    cases["simclr"] = (
        lambda z, zp: obj.simclr_loss(z, zp, 0.5),
        {"z": z.copy(), "zp": zp.copy()},
        ["z", "zp"],
        [],
    )
    queue = rng.normal(size=(7, d))
    cases["moco"] = (
        lambda z_query, z_key: obj.moco_loss(z_query, z_key, queue, 0.5),
        {"z_query": z.copy(), "z_key": zp.copy()},
        ["z_query"],
        ["z_key", "queue"],
    )
    assignments = rng.integers(0, 3, size=b)
    protos = rng.normal(size=(3, d))
    cases["deepcluster"] = (
        lambda z, prototypes: obj.deepcluster_loss(z, assignments, prototypes, 0.5),
        {"z": z.copy(), "prototypes": protos.copy()},
        ["z", "prototypes"],
        [],
    )
    a_a = rng.uniform(0.1, 1.0, size=(b, 3))
    a_b = rng.uniform(0.1, 1.0, size=(b, 3))
    cases["swav"] = (
        lambda z, zp, prototypes: obj.swav_loss(z, zp, prototypes, a_a, a_b, 0.5),
        {"z": z.copy(), "zp": zp.copy(), "prototypes": protos.copy()},
        ["z", "zp", "prototypes"],
        ["assignments_a", "assignments_b"],
    )
    slice_size = max(d + 1, 8)
    zw = rng.normal(size=(2 * slice_size, d))
    zwp = rng.normal(size=(2 * slice_size, d))
    frozen = obj.slice_whiteners(zw, zwp, slice_size=slice_size)
    cases["wmse"] = (
        lambda z, zp: obj.wmse_loss(z, zp, slice_size, whiteners=frozen),
        {"z": zw, "zp": zwp},
        ["z", "zp"],
        [],
    )
    cases["barlow_twins"] = (
        lambda z, zp: obj.barlow_twins_loss(z, zp, 0.01),
        {"z": z.copy(), "zp": zp.copy()},
        ["z", "zp"],
        [],
    )
    cases["vicreg"] = (
        lambda z, zp: obj.vicreg_loss(z, zp, 1.0, 1.0, 0.1),
        {"z": z.copy(), "zp": zp.copy()},
        ["z", "zp"],
        [],
    )
    cases["byol"] = (
        lambda prediction, z_teacher: obj.byol_loss(prediction, z_teacher),
        {"prediction": z.copy(), "z_teacher": zp.copy()},
        ["prediction"],
        ["z_teacher"],
    )
    cases["simsiam"] = (
        lambda prediction, z_other: obj.simsiam_loss(prediction, z_other),
        {"prediction": z.copy(), "z_other": zp.copy()},
        ["prediction"],
        ["z_other"],
    )
    teacher = rng.normal(size=(2, b, d))
    center = DinoCenter(rng.normal(size=d) * 0.1, momentum=0.9)
    cases["dino"] = (
        lambda student_views: obj.dino_loss(
            list(student_views), list(teacher), center, 0.1, 0.04
        ),
        {"student_views": rng.normal(size=(4, b, d))},
        ["student_views"],
        ["teacher_views"],
    )
    labels = rng.integers(0, 3, size=b)
    cases["aam_softmax"] = (
        lambda y, prototypes: obj.aam_softmax_loss(y, labels, prototypes, 5.0, 0.2),
        {"y": z.copy(), "prototypes": protos.copy()},
        ["y", "prototypes"],
        [],
    )
    return cases


ALL_LOSSES = [
    "cpc",
    "simclr",
    "moco",
    "deepcluster",
    "swav",
    "wmse",
    "barlow_twins",
    "vicreg",
    "byol",
    "simsiam",
    "dino",
    "aam_softmax",
]


@pytest.mark.parametrize("name", ALL_LOSSES)
def test_gradients_match_finite_differences(name):
    for seed in range(5):
        rng = np.random.default_rng(1000 + seed)
        loss_fn, arrays, diff_names, zero_names = loss_cases(rng)[name]
        out = loss_fn(**arrays)
        value_fn = lambda **kw: loss_fn(**kw).value  # noqa: E731
        assert_gradients_match(value_fn, arrays, out.grads, diff_names)
        for zname in zero_names:
            assert np.all(
                out.grads[zname] == 0.0
            ), f"{zname} gradient not exactly zero"


# ---------------------------------------------------------------------------
# structural invariants across all losses


@pytest.mark.parametrize("name", ALL_LOSSES)
def test_gradient_shapes_match_inputs(name):
    rng = np.random.default_rng(77)
    loss_fn, arrays, diff_names, _ = loss_cases(rng)[name]
    out = loss_fn(**arrays)
    for dname in diff_names:
        assert out.grads[dname].shape == np.asarray(arrays[dname]).shape


def test_permutation_equivariance():
    rng = np.random.default_rng(21)
    b, d = 6, 4
    perm = rng.permutation(b)
    z = rng.normal(size=(b, d))
    zp = rng.normal(size=(b, d))
    protos = rng.normal(size=(3, d))
    queue = rng.normal(size=(5, d))
    labels = rng.integers(0, 3, size=b)
    a_a = rng.uniform(0.1, 1.0, size=(b, 3))
    a_b = rng.uniform(0.1, 1.0, size=(b, 3))
    teacher = [rng.normal(size=(b, d))]
    center = DinoCenter(np.zeros(d))
    preds = rng.normal(size=(2, b, d))
    futs = rng.normal(size=(2, b, d))

    pairs = [
        (
            obj.simclr_loss(z, zp, 0.2).value,
            obj.simclr_loss(z[perm], zp[perm], 0.2).value,
        ),
        (
            obj.moco_loss(z, zp, queue, 0.2).value,
            obj.moco_loss(z[perm], zp[perm], queue, 0.2).value,
        ),
        (
            obj.cpc_loss(preds, futs, 0.5).value,
            obj.cpc_loss(preds[:, perm], futs[:, perm], 0.5).value,
        ),
        (
            obj.deepcluster_loss(z, labels, protos, 0.2).value,
            obj.deepcluster_loss(z[perm], labels[perm], protos, 0.2).value,
        ),
        (
            obj.swav_loss(z, zp, protos, a_a, a_b, 0.2).value,
            obj.swav_loss(z[perm], zp[perm], protos, a_a[perm], a_b[perm], 0.2).value,
        ),
        (
            obj.barlow_twins_loss(z, zp, 0.01).value,
            obj.barlow_twins_loss(z[perm], zp[perm], 0.01).value,
        ),
        (obj.vicreg_loss(z, zp).value, obj.vicreg_loss(z[perm], zp[perm]).value),
        (obj.byol_loss(z, zp).value, obj.byol_loss(z[perm], zp[perm]).value),
        (obj.simsiam_loss(z, zp).value, obj.simsiam_loss(z[perm], zp[perm]).value),
        (
            obj.dino_loss([z, zp], teacher, center, 0.1, 0.04).value,
            obj.dino_loss(
                [z[perm], zp[perm]], [teacher[0][perm]], center, 0.1, 0.04
            ).value,
        ),
        (
            obj.aam_softmax_loss(z, labels, protos, 5.0, 0.2).value,
            obj.aam_softmax_loss(z[perm], labels[perm], protos, 5.0, 0.2).value,
        ),
    ]
    # a single whitening slice makes the whitening transform itself
    # permutation-invariant
    bw = 8
    zw, zwp = rng.normal(size=(bw, 3)), rng.normal(size=(bw, 3))
    permw = rng.permutation(bw)
    pairs.append(
        (
            obj.wmse_loss(zw, zwp, bw).value,
            obj.wmse_loss(zw[permw], zwp[permw], bw).value,
        )
    )
    for got, permuted in pairs:
        assert got == pytest.approx(permuted, abs=1e-10)


def test_single_row_rescale_invariance_for_cosine_losses():
    rng = np.random.default_rng(22)
    b, d = 5, 4
    z = rng.normal(size=(b, d))
    zp = rng.normal(size=(b, d))
    queue = rng.normal(size=(6, d))
    preds = rng.normal(size=(2, b, d))
    futs = rng.normal(size=(2, b, d))
    scale = 3.7
    for row in (0, 3):
        z2 = z.copy()
        z2[row] *= scale
        checks = [
            (obj.simclr_loss(z, zp, 0.2).value, obj.simclr_loss(z2, zp, 0.2).value),
            (
                obj.moco_loss(z, zp, queue, 0.2).value,
                obj.moco_loss(z2, zp, queue, 0.2).value,
            ),
            (obj.byol_loss(z, zp).value, obj.byol_loss(z2, zp).value),
            (obj.simsiam_loss(z, zp).value, obj.simsiam_loss(z2, zp).value),
        ]
        p2 = preds.copy()
        p2[0, row] *= scale
        checks.append(
            (obj.cpc_loss(preds, futs, 0.5).value, obj.cpc_loss(p2, futs, 0.5).value)
        )
        for a, b_ in checks:
            assert a == pytest.approx(b_, abs=1e-9)
