import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import finite_difference_grad, naive_forward, naive_loss
from verbspace.dataset import SyntheticSpec, generate_synthetic
from verbspace.errors import (
    DimensionMismatchError,
    MalformedFileError,
    NumericError,
    SchemeMismatchError,
    VerbspaceError,
    VocabularyMismatchError,
)
from verbspace.label_space import LabelVector, VerbVocabulary, VoteRecord
from verbspace.regressor import (
    EPS,
    ModelParams,
    TrainConfig,
    check_vocabulary,
    forward,
    grad,
    init_params,
    load_model,
    loss_sigmoid_bce,
    loss_softmax_ce,
    save_model,
    train,
)

# frozen from direct evaluation: 1/(1+e^-1), -ln 0.2, (-ln 0.8 - ln 0.7)/2
SIGMOID_1 = 0.7310585786300049
NEG_LN_02 = 1.6094379124341003
BCE_EXAMPLE = 0.2899092476264711


def zero_model(d, out, activation):
    return ModelParams((d, out), [np.zeros((out, d))], [np.zeros(out)], activation)


def random_model(rng, dims, activation):
    params = init_params(dims, activation, rng=rng)
    params.biases = [rng.normal(0, 0.3, b.shape) for b in params.biases]
    return params


def random_batch(rng, n, d, out, loss):
    x = rng.normal(size=(n, d))
    if loss == "softmax_ce":
        t = np.eye(out)[rng.integers(0, out, n)]
    else:
        t = rng.uniform(0, 1, (n, out))
    return x, t


class TestForward:
    def test_zero_sigmoid(self):
        assert forward(zero_model(4, 3, "sigmoid"), np.ones(4)).tolist() == [0.5, 0.5, 0.5]

    def test_zero_softmax(self):
        np.testing.assert_allclose(forward(zero_model(4, 3, "softmax"), np.ones(4)), [1 / 3] * 3, rtol=1e-15)

    def test_identity_sigmoid(self):
        params = ModelParams((2, 2), [np.eye(2)], [np.zeros(2)], "sigmoid")
        np.testing.assert_allclose(forward(params, [1.0, 0.0]), [SIGMOID_1, 0.5], rtol=1e-15)

    def test_batch_shape(self):
        out = forward(zero_model(4, 3, "sigmoid"), np.ones((5, 4)))
        assert out.shape == (5, 3)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            forward(zero_model(4, 3, "sigmoid"), np.ones(3))

    def test_non_finite(self):
        params = ModelParams((1, 2), [np.array([[1.0], [1.0]])], [np.zeros(2)], "sigmoid")
        with pytest.raises(NumericError):
            forward(params, [np.inf])

    def test_matches_naive_loops(self):
        rng = np.random.default_rng(0)
        for activation in ("sigmoid", "softmax"):
            params = random_model(rng, (5, 4, 3), activation)
            x = rng.normal(size=5)
            np.testing.assert_allclose(forward(params, x),
                                       naive_forward(params.weights, params.biases, x, activation),
                                       rtol=1e-12)

    @settings(max_examples=100)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(2, 8))
    def test_output_ranges(self, seed, d, out):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(4, d))
        p = forward(random_model(rng, (d, out), "softmax"), x)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
        p = forward(random_model(rng, (d, 5, out), "sigmoid"), x)
        assert np.all((p > 0) & (p < 1))


class TestLosses:
    def test_ce_uniform(self):
        assert loss_softmax_ce([1 / 3] * 3, [0, 1, 0]) == pytest.approx(np.log(3), rel=1e-12)

    def test_ce_perfect(self):
        assert loss_softmax_ce([1, 0, 0], [1, 0, 0]) == pytest.approx(0.0, abs=1e-6)

    def test_ce_example(self):
        assert loss_softmax_ce([0.7, 0.2, 0.1], [0, 1, 0]) == pytest.approx(NEG_LN_02, rel=1e-12)

    def test_ce_clamps_zero(self):
        assert loss_softmax_ce([1.0, 0.0], [0, 1]) == pytest.approx(-np.log(EPS))

    def test_bce_half(self):
        assert loss_sigmoid_bce([0.5] * 4, [0.5] * 4) == pytest.approx(np.log(2), rel=1e-12)

    def test_bce_perfect(self):
        assert loss_sigmoid_bce([1, 0, 1], [1, 0, 1]) == pytest.approx(0.0, abs=1e-6)

    def test_bce_example(self):
        assert loss_sigmoid_bce([0.8, 0.3], [1, 0]) == pytest.approx(BCE_EXAMPLE, rel=1e-12)

    @settings(max_examples=200)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 10))
    def test_bce_minimised_at_target(self, seed, dim):
        rng = np.random.default_rng(seed)
        t = rng.uniform(0, 1, dim)
        p = rng.uniform(0, 1, dim)
        assert loss_sigmoid_bce(p, t) >= loss_sigmoid_bce(np.clip(t, EPS, 1 - EPS), t) - 1e-12


class TestGrad:
    @pytest.mark.parametrize("loss", ["softmax_ce", "sigmoid_bce"])
    @pytest.mark.parametrize("hidden", [(), (5,)])
    def test_finite_differences(self, loss, hidden):
        rng = np.random.default_rng(42)
        d, out = 4, 3
        params = random_model(rng, (d, *hidden, out), "softmax" if loss == "softmax_ce" else "sigmoid")
        x, t = random_batch(rng, 6, d, out, loss)
        gw, gb = grad(params, (x, t), loss)
        fd = finite_difference_grad(lambda: naive_loss(params.weights, params.biases, x, t, loss),
                                    params.weights + params.biases)
        for analytic, numeric in zip(gw + gb, fd):
            np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-9)

    def test_zero_signal(self):
        params = zero_model(3, 2, "sigmoid")
        x = np.ones((4, 3))
        gw, gb = grad(params, (x, np.full((4, 2), 0.5)), "sigmoid_bce")
        assert np.linalg.norm(gw[0]) == 0 and np.linalg.norm(gb[0]) == 0

    @pytest.mark.parametrize("loss", ["softmax_ce", "sigmoid_bce"])
    def test_duplicated_batch(self, loss):
        rng = np.random.default_rng(3)
        params = random_model(rng, (3, 4, 2), "softmax" if loss == "softmax_ce" else "sigmoid")
        x, t = random_batch(rng, 5, 3, 2, loss)
        single = grad(params, (x, t), loss)
        double = grad(params, (np.vstack([x, x]), np.vstack([t, t])), loss)
        for a, b in zip(single[0] + single[1], double[0] + double[1]):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)

    def test_scheme_mismatch(self):
        params = zero_model(2, 2, "softmax")
        saml = [LabelVector("SAML", [0.5, 0.5])]
        with pytest.raises(SchemeMismatchError):
            grad(params, (np.ones((1, 2)), saml), "softmax_ce")
        with pytest.raises(SchemeMismatchError):
            grad(params, (np.ones((1, 2)), np.array([[0.5, 0.5]])), "softmax_ce")
        with pytest.raises(SchemeMismatchError):
            grad(zero_model(2, 2, "sigmoid"), (np.ones((1, 2)), [LabelVector("SL", [1, 0])]), "sigmoid_bce")

    def test_empty_batch(self):
        with pytest.raises(VerbspaceError):
            grad(zero_model(2, 2, "sigmoid"), (np.empty((0, 2)), np.empty((0, 2))), "sigmoid_bce")


def separable_pairs(scheme="SL", noise=0.0, per=10):
    spec = SyntheticSpec(2, per, 8, noise, (VoteRecord("a", {"x": 3, "y": 2}, 3),
                                            VoteRecord("b", {"y": 3, "z": 1}, 3)), seed=7)
    instances, votes = generate_synthetic(spec)
    from verbspace.dataset import attach_labels
    return attach_labels(instances, votes, VerbVocabulary(("x", "y", "z")), scheme)


class TestTrain:
    def test_separable_sl(self):
        pairs = separable_pairs()
        params = train(pairs, TrainConfig(epochs=100, seed=1))
        pred = forward(params, np.stack([i.features for i, _ in pairs]))
        truth = np.stack([lab.values for _, lab in pairs])
        assert np.array_equal(pred.argmax(axis=1), truth.argmax(axis=1))

    def test_zero_lr_keeps_init(self):
        pairs = separable_pairs("SAML")
        params = train(pairs, TrainConfig(epochs=3, learning_rate=0.0, seed=4))
        from verbspace.dataset import make_rng
        assert params == init_params((8, 3), "sigmoid", rng=make_rng(4, 0))

    def test_deterministic(self):
        pairs = separable_pairs("ML", noise=0.3)
        a = train(pairs, TrainConfig(epochs=10, seed=9, hidden=(4,)))
        b = train(pairs, TrainConfig(epochs=10, seed=9, hidden=(4,)))
        assert a == b
        c = train(pairs, TrainConfig(epochs=10, seed=10, hidden=(4,)))
        assert a != c

    def test_loss_non_increasing_full_batch(self):
        pairs = separable_pairs("SAML", noise=0.5, per=20)
        losses = []
        train(pairs, TrainConfig(epochs=60, learning_rate=1e-3, batch_size=len(pairs), seed=0),
              on_epoch=lambda e, loss, t: losses.append(loss))
        assert len(losses) == 60
        assert all(b <= a for a, b in zip(losses, losses[1:]))

    def test_epoch_log(self, caplog):
        with caplog.at_level("INFO", logger="verbspace.regressor"):
            train(separable_pairs(), TrainConfig(epochs=2))
        assert "epoch 0 loss" in caplog.text and "epoch 1 loss" in caplog.text

    def test_divergence_names_epoch(self):
        with pytest.raises(NumericError, match=r"epoch \d+"):
            train(separable_pairs("SAML", noise=0.0), TrainConfig(epochs=20, learning_rate=1e308))

    def test_mixed_schemes(self):
        pairs = separable_pairs("SL")[:2] + separable_pairs("SAML")[:2]
        with pytest.raises(SchemeMismatchError):
            train(pairs, TrainConfig(epochs=1))

    def test_loss_scheme_mismatch(self):
        with pytest.raises(SchemeMismatchError):
            train(separable_pairs("SAML"), TrainConfig(epochs=1, loss="softmax_ce"))

    @pytest.mark.parametrize("kwargs", [{"epochs": 0}, {"batch_size": 0}, {"learning_rate": -1},
                                        {"loss": "hinge"}, {"momentum": 1.0}])
    def test_config_validation(self, kwargs):
        with pytest.raises(VerbspaceError):
            TrainConfig(**kwargs)


class TestModelFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        params = random_model(rng, (5, 4, 3), "softmax")
        params.vocab_fingerprint = "abc123"
        save_model(params, tmp_path / "m.txt")
        assert load_model(tmp_path / "m.txt") == params

    def test_truncated(self, tmp_path):
        params = random_model(np.random.default_rng(0), (5, 3), "sigmoid")
        save_model(params, tmp_path / "m.txt")
        lines = (tmp_path / "m.txt").read_text().splitlines()
        (tmp_path / "m.txt").write_text("\n".join(lines[:-2]) + "\n")
        with pytest.raises(MalformedFileError):
            load_model(tmp_path / "m.txt")

    def test_garbage(self, tmp_path):
        (tmp_path / "m.txt").write_text("hello\n")
        with pytest.raises(MalformedFileError):
            load_model(tmp_path / "m.txt")

    def test_vocabulary_mismatch_at_use(self, tmp_path):
        params = random_model(np.random.default_rng(0), (4, 5), "sigmoid")
        save_model(params, tmp_path / "m.txt")
        big = VerbVocabulary(tuple(f"v{j}" for j in range(90)))
        with pytest.raises(DimensionMismatchError):
            check_vocabulary(load_model(tmp_path / "m.txt"), big)
        small = VerbVocabulary(tuple(f"v{j}" for j in range(5)))
        check_vocabulary(params, small)
        params.vocab_fingerprint = "other"
        with pytest.raises(VocabularyMismatchError):
            check_vocabulary(params, small)
