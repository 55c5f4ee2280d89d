"""The split classifier head: normalizations, cosine matching, softmax head."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csil import engine as en
from csil.model import (
    Classifier,
    EmbeddingLayer,
    RegularHead,
    ZeroBiasHead,
    build_classifier,
    classify,
    cosine_match,
    regular_dense_forward,
    zerobias_forward,
)

from helpers import gradcheck


class TestUnitNormalize:
    def test_three_four_five(self):
        out = en.unit_rows(en.constant([[3.0, 4.0]]))
        assert np.allclose(out.data, [[0.6, 0.8]], atol=1e-15)
        out = en.unit_cols(en.constant([[3.0], [4.0]]))
        assert np.allclose(out.data, [[0.6], [0.8]], atol=1e-15)

    def test_idempotent_on_unit_rows(self):
        rng = np.random.default_rng(0)
        m = rng.normal(size=(4, 6))
        m /= np.linalg.norm(m, axis=1, keepdims=True)
        out = en.unit_rows(en.constant(m))
        assert np.allclose(out.data, m, atol=1e-12)

    def test_identity_unchanged_by_unit_cols(self):
        out = en.unit_cols(en.constant(np.eye(4)))
        assert np.allclose(out.data, np.eye(4), atol=1e-15)

    def test_row_norms_against_recomputation(self):
        rng = np.random.default_rng(1)
        out = en.unit_rows(en.constant(rng.normal(size=(5, 7)))).data
        assert np.allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)

    def test_col_norms_against_recomputation(self):
        rng = np.random.default_rng(2)
        out = en.unit_cols(en.constant(rng.normal(size=(7, 5)))).data
        assert np.allclose(np.linalg.norm(out, axis=0), 1.0, atol=1e-12)

    def test_direction_preserved(self):
        rng = np.random.default_rng(3)
        m = rng.normal(size=(4, 5))
        out = en.unit_rows(en.constant(m)).data
        cos = (out * m).sum(axis=1) / np.linalg.norm(m, axis=1)
        assert np.allclose(cos, 1.0, atol=1e-12)


class TestCosineMatching:
    def _setup(self, rng, n_classes=3, embed=6, batch=4):
        emb = EmbeddingLayer(np.eye(embed), np.zeros(embed))
        head = ZeroBiasHead(rng.normal(size=(n_classes, embed)))
        return emb, head

    def test_self_match_scores_one(self):
        rng = np.random.default_rng(4)
        emb, head = self._setup(rng)
        x = en.constant(head.fingerprints.data[1][:, None] * 2.7)
        scores = zerobias_forward(x, emb, head)
        assert scores.data[1, 0] == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_scores_zero(self):
        emb = EmbeddingLayer(np.eye(4), np.zeros(4))
        head = ZeroBiasHead(np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]))
        x = en.constant(np.array([[0.0], [0.0], [2.0], [0.0]]))
        scores = zerobias_forward(x, emb, head)
        assert abs(scores.data[0, 0]) <= 1e-12
        assert abs(scores.data[1, 0]) <= 1e-12

    def test_matches_direct_cosine_oracle(self):
        rng = np.random.default_rng(5)
        emb = EmbeddingLayer(rng.normal(size=(6, 4)), rng.normal(size=6))
        head = ZeroBiasHead(rng.normal(size=(3, 6)))
        x = rng.normal(size=(4, 5))
        scores = zerobias_forward(en.constant(x), emb, head).data
        y1 = emb.weight.data @ x + emb.bias.data[:, None]
        expected = np.empty((3, 5))
        for i in range(3):
            for j in range(5):
                f, v = head.fingerprints.data[i], y1[:, j]
                expected[i, j] = f @ v / (np.linalg.norm(f) * np.linalg.norm(v))
        assert np.allclose(scores, expected, atol=1e-12)
        assert np.all(scores <= 1.0 + 1e-12) and np.all(scores >= -1.0 - 1e-12)

    def test_zero_embedded_column_rejected(self):
        emb = EmbeddingLayer(np.zeros((4, 3)), np.zeros(4))
        head = ZeroBiasHead(np.ones((2, 4)))
        with pytest.raises(ValueError, match="column 0"):
            zerobias_forward(en.constant(np.ones((3, 2))), emb, head)

    @settings(deadline=None, max_examples=30)
    @given(st.floats(0.01, 100.0), st.integers(0, 2**16))
    def test_scale_invariance(self, factor, seed):
        rng = np.random.default_rng(seed)
        fp = rng.normal(size=(3, 5))
        x = rng.normal(size=(5, 2))
        base = cosine_match(en.constant(x), en.constant(fp)).data
        fp2 = fp.copy()
        fp2[1] *= factor
        x2 = x.copy()
        x2[:, 0] *= factor
        scaled = cosine_match(en.constant(x2), en.constant(fp2)).data
        assert np.allclose(base, scaled, atol=1e-10)

    def test_gradients_flow_through_both_normalizations(self):
        rng = np.random.default_rng(6)
        emb = EmbeddingLayer(rng.normal(size=(4, 3)), rng.normal(size=4))
        head = ZeroBiasHead(rng.normal(size=(2, 4)))
        x = en.constant(rng.normal(size=(3, 3)))
        y = np.array([0, 1, 0])

        def loss():
            return en.cross_entropy(classify(zerobias_forward(x, emb, head), 8.0), y)

        gradcheck(loss, [emb.weight, emb.bias, head.fingerprints], rtol=1e-4)


class TestClassify:
    def test_uniform_scores_give_uniform_probabilities(self):
        probs = classify(en.constant(np.full((4, 3), 0.25)), 8.0)
        assert np.allclose(probs.data, 0.25, atol=1e-12)

    def test_large_temperature_approaches_argmax(self):
        probs = classify(en.constant([[1.0], [0.0], [-1.0]]), 500.0)
        assert probs.data[0, 0] == pytest.approx(1.0, abs=1e-9)

    def test_temperature_eight_matches_direct_evaluation(self):
        scores = np.array([[1.0], [0.0], [-1.0]])
        probs = classify(en.constant(scores), 8.0).data
        e = np.exp(8.0 * scores - (8.0 * scores).max())
        assert np.allclose(probs, e / e.sum(), atol=1e-12)

    def test_columns_sum_to_one(self):
        rng = np.random.default_rng(7)
        probs = classify(en.constant(rng.uniform(-1, 1, (5, 9))), 8.0).data
        assert np.allclose(probs.sum(axis=0), 1.0, atol=1e-12)

    def test_non_positive_temperature_rejected(self):
        with pytest.raises(ValueError, match="temperature"):
            classify(en.constant(np.zeros((2, 2))), 0.0)
        with pytest.raises(ValueError, match="temperature"):
            classify(en.constant(np.zeros((2, 2))), -3.0)


class TestRegularHead:
    def test_zero_weights_constant_bias(self):
        emb = EmbeddingLayer(np.eye(3), np.zeros(3))
        head = RegularHead(np.zeros((2, 3)), np.array([5.0, -1.0]))
        out = regular_dense_forward(en.constant(np.ones((3, 4))), emb, head)
        assert np.allclose(out.data[0], 5.0) and np.allclose(out.data[1], -1.0)

    def test_identity_passthrough(self):
        emb = EmbeddingLayer(np.eye(3), np.zeros(3))
        head = RegularHead(np.eye(3), np.zeros(3))
        x = np.random.default_rng(8).normal(size=(3, 5))
        out = regular_dense_forward(en.constant(x), emb, head)
        assert np.allclose(out.data, x, atol=1e-12)

    def test_random_instance_matches_matmul_oracle(self):
        rng = np.random.default_rng(9)
        emb = EmbeddingLayer(rng.normal(size=(4, 3)), rng.normal(size=4))
        head = RegularHead(rng.normal(size=(2, 4)), rng.normal(size=2))
        x = rng.normal(size=(3, 6))
        out = regular_dense_forward(en.constant(x), emb, head).data
        y1 = emb.weight.data @ x + emb.bias.data[:, None]
        assert np.allclose(out, head.weight.data @ y1 + head.bias.data[:, None], atol=1e-12)

    def test_head_swap_preserves_shape(self):
        rng = np.random.default_rng(10)
        emb = EmbeddingLayer(rng.normal(size=(6, 4)), np.zeros(6))
        x = en.constant(rng.normal(size=(4, 5)))
        zb = ZeroBiasHead(rng.normal(size=(3, 6)))
        reg = RegularHead(rng.normal(size=(3, 6)), np.zeros(3))
        assert zerobias_forward(x, emb, zb).shape == regular_dense_forward(x, emb, reg).shape
        assert zb.n_classes == reg.n_classes == 3


class TestClassifier:
    @pytest.mark.parametrize("extractor", ["mlp", "cnn"])
    def test_forward_shapes(self, extractor):
        rng = np.random.default_rng(11)
        model = build_classifier("zerobias", extractor, n_classes=4,
                                 hidden_dim=16, feature_dim=8, rng=rng)
        assert model.embed_dim == 8  # defaults to 2C
        batch = rng.normal(size=(6, 32, 32, 3)).astype(np.float32)
        scores = model.scores(batch)
        assert scores.shape == (4, 6)
        assert np.all(np.abs(scores) <= 1.0 + 1e-12)

    def test_clone_is_bit_identical_and_independent(self):
        rng = np.random.default_rng(12)
        model = build_classifier(n_classes=3, hidden_dim=8, feature_dim=4, rng=rng)
        twin = model.clone()
        for name, p in model.named_params().items():
            assert np.array_equal(p.data, twin.named_params()[name].data)
        twin.head.fingerprints.data[0, 0] += 1.0
        assert model.head.fingerprints.data[0, 0] != twin.head.fingerprints.data[0, 0]

    def test_gradcheck_full_mlp_model(self):
        rng = np.random.default_rng(13)
        model = build_classifier(n_classes=2, hidden_dim=3, feature_dim=3, rng=rng)
        batch = rng.normal(size=(3, 32, 32, 3)) * 0.1
        y = np.array([0, 1, 1])

        def loss():
            return en.cross_entropy(classify(model.scores_t(batch), 8.0), y)

        params = model.named_params()
        gradcheck(loss, [params["embed.w"], params["embed.b"], params["head.fp"]],
                  rtol=1e-4)
