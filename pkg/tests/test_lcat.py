import numpy as np
import pytest

from kgalign.errors import ConfigError, DataError
from kgalign.lcat import (
    LcatParams,
    Neighborhood,
    aggregate,
    attention,
    attention_scores,
    attention_softmax,
    backward,
    convolve,
    forward,
    load_checkpoint,
    mix_output,
    mlp_forward,
    save_checkpoint,
    sigmoid,
)

from oracles import finite_difference, gat_scores_ref, softmax_ref


def random_neigh(rng, n):
    lists = []
    for i in range(n):
        extra = set(rng.choice(n, size=int(rng.integers(0, 4))).tolist())
        lists.append(sorted({i} | extra))
    return lists, Neighborhood.from_lists(lists)


def random_params(rng, d_in, d_model, logit_scale=0.5):
    params = LcatParams.init(d_in, d_model, rng)
    params.lam_logits[:] = rng.standard_normal(3) * logit_scale
    return params


class TestMlpForward:
    def test_identity(self):
        params = LcatParams.init(3, 3, np.random.default_rng(0))
        params.mlp_w = np.eye(3)
        params.mlp_b = np.zeros(3)
        x = np.random.default_rng(1).standard_normal((4, 3))
        np.testing.assert_array_equal(mlp_forward(params, x), x)

    def test_zero_weight_gives_bias(self):
        params = LcatParams.init(3, 3, np.random.default_rng(0))
        params.mlp_w = np.zeros((3, 3))
        params.mlp_b = np.array([1.0, 2.0, 3.0])
        out = mlp_forward(params, np.ones((5, 3)))
        assert np.all(out == params.mlp_b)

    def test_matches_reference_multiply(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((3, 4))
        w = rng.standard_normal((4, 2))
        b = rng.standard_normal(2)
        # reference: explicit loops
        ref = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                ref[i, j] = sum(x[i, k] * w[k, j] for k in range(4)) + b[j]
        params = LcatParams(
            mlp_w=w, mlp_b=b,
            w1=np.zeros((2, 2)), w2=np.zeros((2, 2)),
            att=np.zeros(4), lam_logits=np.zeros(3),
        )
        np.testing.assert_allclose(mlp_forward(params, x), ref, atol=1e-12)

    def test_shape_mismatch(self):
        params = LcatParams.init(3, 2, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            mlp_forward(params, np.zeros((2, 5)))


class TestConvolve:
    def test_lambda_zero_is_identity(self):
        rng = np.random.default_rng(3)
        _, neigh = random_neigh(rng, 5)
        e = rng.standard_normal((5, 3))
        np.testing.assert_array_equal(convolve(e, neigh, 0.0), e)

    def test_constant_rows_fixed_point(self):
        rng = np.random.default_rng(4)
        _, neigh = random_neigh(rng, 6)
        v = rng.standard_normal(3)
        e = np.tile(v, (6, 1))
        for lam2 in (0.1, 0.5, 1.0):
            np.testing.assert_allclose(convolve(e, neigh, lam2), e, atol=1e-12)

    def test_two_node_hand_value(self):
        neigh = Neighborhood.from_lists([[0, 1], [0, 1]])
        e = np.array([[1.0, 0.0], [0.0, 1.0]])
        out = convolve(e, neigh, 1.0)
        np.testing.assert_allclose(out[0], [2 / 3, 1 / 3], atol=1e-12)

    def test_isolated_node_unchanged(self):
        neigh = Neighborhood.from_lists([[0]])
        e = np.array([[5.0, -1.0]])
        np.testing.assert_allclose(convolve(e, neigh, 0.7), e)


class TestAttention:
    def test_lambda1_zero_exactly_uniform(self):
        rng = np.random.default_rng(5)
        lists, neigh = random_neigh(rng, 7)
        e = rng.standard_normal((7, 4))
        w2 = rng.standard_normal((4, 4))
        att = rng.standard_normal(8)
        alpha = attention(e, neigh, 0.0, w2, att)
        for i, members in enumerate(lists):
            seg = alpha[neigh.indptr[i] : neigh.indptr[i + 1]]
            expected = 1.0 / len(members)
            assert np.all(seg == expected)  # bitwise

    def test_isolated_node_attends_to_self(self):
        neigh = Neighborhood.from_lists([[0]])
        alpha = attention(np.ones((1, 2)), neigh, 1.0, np.eye(2), np.ones(4))
        assert alpha.tolist() == [1.0]

    def test_gat_form_reference(self):
        rng = np.random.default_rng(6)
        lists, neigh = random_neigh(rng, 6)
        e = rng.standard_normal((6, 3))
        w2 = rng.standard_normal((3, 3))
        att = rng.standard_normal(6)
        psi, _, _, _ = attention_scores(e, neigh, 1.0, w2, att)
        ref = gat_scores_ref(e, lists, w2, att)
        for k, (i, j) in enumerate(zip(neigh.row, neigh.indices)):
            assert psi[k] == pytest.approx(ref[(int(i), int(j))], abs=1e-12)

    def test_softmax_matches_reference(self):
        rng = np.random.default_rng(7)
        lists, neigh = random_neigh(rng, 5)
        psi = rng.standard_normal(neigh.indices.size) * 10
        alpha = attention_softmax(psi, neigh)
        for i in range(5):
            lo, hi = neigh.indptr[i], neigh.indptr[i + 1]
            np.testing.assert_allclose(alpha[lo:hi], softmax_ref(psi[lo:hi].tolist()), atol=1e-12)

    def test_rows_sum_to_one_many_draws(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            n = int(rng.integers(1, 10))
            _, neigh = random_neigh(rng, n)
            psi = rng.standard_normal(neigh.indices.size) * rng.uniform(0.1, 50)
            alpha = attention_softmax(psi, neigh)
            sums = neigh.segment_sum(alpha)
            np.testing.assert_allclose(sums, 1.0, atol=1e-9)


class TestAggregate:
    def test_isolated_node(self):
        neigh = Neighborhood.from_lists([[0]])
        e = np.array([[1.0, 2.0]])
        w1 = np.array([[1.0, 0.5], [0.0, 1.0]])
        out = aggregate(e, np.array([1.0]), neigh, w1)
        np.testing.assert_allclose(out, e @ w1)

    def test_uniform_alpha_identity_w1_is_mean(self):
        rng = np.random.default_rng(9)
        lists, neigh = random_neigh(rng, 6)
        e = rng.standard_normal((6, 3))
        alpha = np.concatenate(
            [np.full(len(l), 1.0 / len(l)) for l in lists]
        )
        out = aggregate(e, alpha, neigh, np.eye(3))
        for i, members in enumerate(lists):
            np.testing.assert_allclose(out[i], e[members].mean(axis=0), atol=1e-12)

    def test_matches_dense_reference(self):
        rng = np.random.default_rng(10)
        lists, neigh = random_neigh(rng, 5)
        e = rng.standard_normal((5, 3))
        w2 = rng.standard_normal((3, 3))
        att = rng.standard_normal(6)
        alpha = attention(e, neigh, 0.8, w2, att)
        w1 = rng.standard_normal((3, 3))
        dense_alpha = np.zeros((5, 5))
        for k, (i, j) in enumerate(zip(neigh.row, neigh.indices)):
            dense_alpha[i, j] = alpha[k]
        ref = dense_alpha @ e @ w1
        np.testing.assert_allclose(aggregate(e, alpha, neigh, w1), ref, atol=1e-12)


class TestMixOutput:
    def test_extremes(self):
        rng = np.random.default_rng(11)
        e_agg = rng.standard_normal((4, 3))
        e = rng.standard_normal((4, 3))
        _, high, _ = mix_output(e_agg, e, 1.0)
        np.testing.assert_allclose(high, e_agg / np.linalg.norm(e_agg, axis=1, keepdims=True))
        _, low, _ = mix_output(e_agg, e, 0.0)
        np.testing.assert_allclose(low, e / np.linalg.norm(e, axis=1, keepdims=True))

    def test_halfway_hand_value(self):
        e_agg = np.array([[2.0, 0.0]])
        e = np.array([[0.0, 4.0]])
        y, out, norms = mix_output(e_agg, e, 0.5)
        np.testing.assert_allclose(y, [[1.0, 2.0]])
        np.testing.assert_allclose(out, [[1.0, 2.0]] / np.sqrt(5))

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            mix_output(np.zeros((2, 3)), np.zeros((2, 4)), 0.5)


class TestForwardBackward:
    def setup_case(self, seed, n=6, d_in=5, d_model=4):
        rng = np.random.default_rng(seed)
        lists, neigh = random_neigh(rng, n)
        x = rng.standard_normal((n, d_in))
        params = random_params(rng, d_in, d_model)
        return rng, neigh, x, params

    def test_zero_upstream_gradient(self):
        _, neigh, x, params = self.setup_case(12)
        out = forward(params, x, neigh)
        grads = backward(params, out, np.zeros_like(out.e_tilde))
        for g in grads.values():
            assert np.all(g == 0.0)

    def test_finite_difference_all_tensors(self):
        # weighted-sum loss so the FD check exercises normalization too
        for seed in range(3):
            rng, neigh, x, params = self.setup_case(seed)
            weights = rng.standard_normal((x.shape[0], params.d_out))

            out = forward(params, x, neigh)
            grads = backward(params, out, weights)

            def loss():
                return float(np.sum(forward(params, x, neigh).e_tilde * weights))

            fd = finite_difference(loss, params.tensors(), step=1e-3)
            for name in params.TENSOR_NAMES:
                # normwise relative error: elementwise would be dominated by
                # the h^2 truncation of the difference quotient near zeros
                rel = np.linalg.norm(grads[name] - fd[name]) / max(
                    np.linalg.norm(fd[name]), 1e-12
                )
                assert rel < 1e-4, (name, rel)

    def test_saturated_lambda_logit_gradient_vanishes(self):
        _, neigh, x, params = self.setup_case(13)
        for sign in (+1, -1):
            params.lam_logits[0] = sign * 30.0
            out = forward(params, x, neigh)
            grads = backward(params, out, np.ones_like(out.e_tilde))
            assert abs(grads["lam_logits"][0]) < 1e-10

    def test_output_rows_unit_norm(self):
        _, neigh, x, params = self.setup_case(14)
        out = forward(params, x, neigh)
        np.testing.assert_allclose(np.linalg.norm(out.e_tilde, axis=1), 1.0, atol=1e-9)

    def test_attention_rows_sum_to_one_after_updates(self):
        rng, neigh, x, params = self.setup_case(15)
        for _ in range(5):
            params.lam_logits += rng.standard_normal(3)
            out = forward(params, x, neigh)
            sums = out.neigh.segment_sum(out.alpha)
            np.testing.assert_allclose(sums, 1.0, atol=1e-9)

    def test_permutation_equivariance(self):
        rng, neigh, x, params = self.setup_case(16)
        n = x.shape[0]
        perm = rng.permutation(n)
        inv = np.argsort(perm)
        lists = [
            sorted(int(inv[j]) for j in neigh.indices[neigh.indptr[int(perm[i])] : neigh.indptr[int(perm[i]) + 1]])
            for i in range(n)
        ]
        neigh_p = Neighborhood.from_lists(lists)
        out = forward(params, x, neigh)
        out_p = forward(params, x[perm], neigh_p)
        np.testing.assert_allclose(out_p.e_tilde, out.e_tilde[perm], atol=1e-12)

    def test_lambda_override_fixes_value_and_zeroes_grad(self):
        _, neigh, x, params = self.setup_case(17)
        out = forward(params, x, neigh, lam_override=(0.0, None, None))
        assert out.lambdas[0] == 0.0
        grads = backward(params, out, np.ones_like(out.e_tilde))
        assert grads["lam_logits"][0] == 0.0
        # the output mix lambda still trains
        assert grads["lam_logits"][2] != 0.0

    def test_bad_gradient_shape(self):
        _, neigh, x, params = self.setup_case(18)
        out = forward(params, x, neigh)
        with pytest.raises(ConfigError):
            backward(params, out, np.zeros((1, 1)))


class TestParams:
    def test_lambdas_bounded_for_any_logits(self):
        # float64 sigmoid saturates to exactly 1.0 past ~36.7; test the
        # representable range, as the bound holds mathematically everywhere
        rng = np.random.default_rng(19)
        params = LcatParams.init(3, 3, rng)
        for _ in range(100):
            params.lam_logits[:] = rng.uniform(-36, 36, size=3)
            for lam in params.lambdas():
                assert 0.0 < lam < 1.0

    def test_init_starts_at_half(self):
        params = LcatParams.init(3, 3, np.random.default_rng(0))
        assert params.lambdas() == (0.5, 0.5, 0.5)

    def test_dims_must_match(self):
        with pytest.raises(ConfigError):
            LcatParams.init(3, 4, np.random.default_rng(0), d_out=5)

    def test_clone_is_independent(self):
        params = LcatParams.init(3, 3, np.random.default_rng(0))
        copy = params.clone()
        copy.mlp_w += 1.0
        assert not np.array_equal(copy.mlp_w, params.mlp_w)

    def test_sigmoid_bounds(self):
        assert sigmoid(0.0) == 0.5
        assert sigmoid(100.0) == pytest.approx(1.0)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        params = random_params(np.random.default_rng(20), 4, 3)
        path = tmp_path / "ckpt.json"
        save_checkpoint(params, path, seed=9)
        back, seed = load_checkpoint(path)
        assert seed == 9
        for name in params.TENSOR_NAMES:
            np.testing.assert_array_equal(getattr(back, name), getattr(params, name))

    def test_shape_mismatch_rejected(self, tmp_path):
        params = random_params(np.random.default_rng(21), 4, 3)
        path = tmp_path / "ckpt.json"
        save_checkpoint(params, path)
        wrong = {name: (9, 9) for name in params.TENSOR_NAMES}
        with pytest.raises(DataError):
            load_checkpoint(path, expect_shapes=wrong)

    def test_garbage_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(DataError):
            load_checkpoint(path)
