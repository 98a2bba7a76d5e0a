"""Training engines, prediction protocols, and the log/checkpoint files."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from evconf.data import SplitSpec, SyntheticSpec, generate_synthetic, split
from evconf.errors import ContractError
from evconf.methods import (
    MethodConfig,
    PredictionRecord,
    TrainedModel,
    load_model,
    predict,
    predict_bbb,
    predict_dataset,
    predict_ensemble,
    predict_mcdp,
    read_prediction_log,
    save_model,
    train_method,
    write_prediction_log,
)
from evconf.network import FeedForwardNet, LayerSpec, softplus
from evconf.methods import _gaussian_kl_terms, _kl_batch_weights
from evconf.numeric import SeededStream, finite_difference_grad


@pytest.fixture(scope="module")
def separable():
    data = generate_synthetic(
        SyntheticSpec(class_counts=(75, 75), separation=6.0, seed=11)
    )
    return split(data, SplitSpec(seed=11))


def fast_config(method, seed=1, **kw):
    defaults = dict(
        epochs=15, batch_size=16, warmup_steps=20, peak_lr=3e-3, hidden_dims=(16,)
    )
    defaults.update(kw)
    return MethodConfig(method=method, seed=seed, **defaults)


class TestMethodConfig:
    def test_unknown_method(self):
        with pytest.raises(ContractError):
            MethodConfig(method="svm")

    def test_field_validation(self):
        with pytest.raises(ContractError):
            MethodConfig(method="mcdp", test_samples=0)
        with pytest.raises(ContractError):
            MethodConfig(method="ensemble", ensemble_size=0)
        with pytest.raises(ContractError):
            MethodConfig(method="mcdp", dropout_rate=1.0)
        with pytest.raises(ContractError):
            MethodConfig(method="bbb", prior_scale=0.0)
        with pytest.raises(ContractError):
            MethodConfig(method="evidential", lam=-1.0)

    def test_weight_decay_defaults(self):
        assert MethodConfig(method="l2").resolved_weight_decay() == 0.01
        assert MethodConfig(method="ensemble").resolved_weight_decay() == 0.01
        assert MethodConfig(method="evidential").resolved_weight_decay() == 0.0
        assert MethodConfig(method="mcdp").resolved_weight_decay() == 0.0
        assert MethodConfig(method="l2", weight_decay=0.5).resolved_weight_decay() == 0.5


class TestPredictionRecord:
    def test_from_distribution_fields(self):
        r = PredictionRecord.from_distribution("e1", [0.25, 0.75], 1)
        assert r.predicted_class == 1
        assert r.confidence == 0.75
        assert r.correct is True
        assert r.pi_hat == (0.25, 0.75)

    def test_confidence_is_max_of_pi_hat(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            pi = rng.dirichlet(np.ones(4))
            r = PredictionRecord.from_distribution("x", pi, 0)
            assert r.confidence == max(r.pi_hat)

    def test_tie_breaks_to_lowest_index(self):
        r = PredictionRecord.from_distribution("x", [0.5, 0.5], 1)
        assert r.predicted_class == 0
        assert r.correct is False

    def test_simplex_validation(self):
        with pytest.raises(ContractError):
            PredictionRecord.from_distribution("x", [0.9, 0.2], 0)
        with pytest.raises(ContractError):
            PredictionRecord.from_distribution("x", [-0.1, 1.1], 0)
        with pytest.raises(ContractError):
            PredictionRecord.from_distribution("x", [0.5, 0.5], 2)

    def test_replace_supports_calibrated_copies(self):
        r = PredictionRecord.from_distribution("x", [0.3, 0.7], 1)
        mapped = dataclasses.replace(r, confidence=0.6)
        assert mapped.confidence == 0.6
        assert mapped.pi_hat == r.pi_hat


class TestEvidentialTraining:
    def test_separable_accuracy_over_seeds(self, separable):
        train, val, test = separable
        accs = []
        for seed in range(5):
            model = train_method(train, val, fast_config("evidential", seed=seed))
            records = predict_dataset(model, test)
            accs.append(np.mean([r.correct for r in records]))
        assert np.mean(accs) >= 0.95

    def test_lambda_recorded_and_both_converge(self, separable, tmp_path):
        train, val, test = separable
        for lam in (0.0, 0.5):
            model = train_method(train, val, fast_config("evidential", lam=lam))
            acc = np.mean([r.correct for r in predict_dataset(model, test)])
            assert acc >= 0.9
            path = tmp_path / f"lam{lam}.json"
            save_model(path, model)
            assert load_model(path).config.lam == lam

    def test_fixed_seed_identical_checkpoint_bytes(self, separable, tmp_path):
        train, val, _ = separable
        cfg = fast_config("evidential", seed=4, epochs=5)
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_model(p1, train_method(train, val, cfg))
        save_model(p2, train_method(train, val, cfg))
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_dataset_rejected(self, separable):
        _, val, _ = separable
        with pytest.raises(ContractError):
            train_method([], val, fast_config("evidential"))


class TestL2Training:
    def test_outputs_are_simplexes(self, separable):
        train, val, test = separable
        model = train_method(train, val, fast_config("l2", epochs=5))
        for r in predict_dataset(model, test):
            pi = np.array(r.pi_hat)
            assert np.all(pi >= 0.0)
            assert pi.sum() == pytest.approx(1.0, abs=1e-9)

    def test_separable_accuracy_over_seeds(self, separable):
        train, val, test = separable
        accs = []
        for seed in range(5):
            model = train_method(train, val, fast_config("l2", seed=seed))
            accs.append(np.mean([r.correct for r in predict_dataset(model, test)]))
        assert np.mean(accs) >= 0.95

    def test_weight_decay_shrinks_norm(self, separable):
        train, val, _ = separable

        def norm(model):
            return math.sqrt(
                sum(float(np.sum(p * p)) for _, _, p in model.net.parameters())
            )

        with_decay = train_method(
            train, val, fast_config("l2", seed=3, epochs=10, weight_decay=0.01)
        )
        without = train_method(
            train, val, fast_config("l2", seed=3, epochs=10, weight_decay=0.0)
        )
        assert norm(with_decay) < norm(without)


class TestMcdp:
    def test_zero_dropout_equals_deterministic_pass(self, separable):
        train, val, test = separable
        cfg = fast_config("mcdp", dropout_rate=0.0, epochs=5)
        model = train_method(train, val, cfg)
        rng = SeededStream(5, 0)
        stochastic = predict_mcdp(model, test[0], cfg, rng)
        single = dataclasses.replace(cfg, test_samples=1)
        deterministic = predict_mcdp(model, test[0], single, SeededStream(6, 1))
        np.testing.assert_allclose(stochastic.pi_hat, deterministic.pi_hat, atol=1e-12)

    def test_seeded_prediction_deterministic(self, separable):
        train, val, test = separable
        cfg = fast_config("mcdp", epochs=5)
        model = train_method(train, val, cfg)
        a = predict_mcdp(model, test[0], cfg, SeededStream(5, 3))
        b = predict_mcdp(model, test[0], cfg, SeededStream(5, 3))
        assert a == b

    def test_averaged_pi_is_simplex(self, separable):
        train, val, test = separable
        cfg = fast_config("mcdp", epochs=5)
        model = train_method(train, val, cfg)
        for ex in test[:10]:
            r = predict_mcdp(model, ex, cfg, SeededStream(1, 1))
            pi = np.array(r.pi_hat)
            assert np.all(pi >= 0.0)
            assert pi.sum() == pytest.approx(1.0, abs=1e-9)

    def test_sample_count_convergence(self, separable):
        train, val, test = separable
        cfg = fast_config("mcdp", epochs=10)
        model = train_method(train, val, cfg)
        cfg500 = dataclasses.replace(cfg, test_samples=500)
        tvs = []
        for ex in test[:20]:
            p50 = np.array(predict_mcdp(model, ex, cfg, SeededStream(7, 0)).pi_hat)
            p500 = np.array(predict_mcdp(model, ex, cfg500, SeededStream(7, 1)).pi_hat)
            tvs.append(0.5 * float(np.abs(p50 - p500).sum()))
        assert np.mean(tvs) < 0.1


class TestBbb:
    def test_posterior_scales_strictly_positive(self, separable):
        train, val, _ = separable
        model = train_method(train, val, fast_config("bbb", epochs=3, peak_lr=3e-2))
        for i, spec in enumerate(model.net.specs):
            assert spec.bayesian
            assert np.all(softplus(model.net.params[i]["w_rho"]) > 0.0)
            assert np.all(softplus(model.net.params[i]["b_rho"]) > 0.0)

    def test_kl_non_negative_and_zero_at_prior(self):
        spec = [LayerSpec(3, 2, "identity", bayesian=True)]
        net = FeedForwardNet.initialise(spec, SeededStream(0, 0))
        prior_scale = 1.0
        kl, _ = _gaussian_kl_terms(net, prior_scale)
        assert kl >= 0.0
        # posterior exactly at the prior: mu = 0, sigma = prior_scale
        rho_at_prior = math.log(math.exp(prior_scale) - 1.0)
        for key in ("w_mu", "b_mu"):
            net.params[0][key][:] = 0.0
        for key in ("w_rho", "b_rho"):
            net.params[0][key][:] = rho_at_prior
        kl, grads = _gaussian_kl_terms(net, prior_scale)
        assert kl == pytest.approx(0.0, abs=1e-12)
        for g in grads[0].values():
            np.testing.assert_allclose(g, 0.0, atol=1e-12)

    def test_per_weight_kl_matches_quadrature_oracle(self):
        # Gauss-Hermite integration of E_q[ln q - ln p]
        nodes, weights = np.polynomial.hermite.hermgauss(80)
        rng = np.random.default_rng(8)
        for _ in range(25):
            mu = rng.normal(scale=2.0)
            sigma = rng.uniform(0.05, 3.0)
            s = rng.uniform(0.5, 2.0)
            x = mu + math.sqrt(2.0) * sigma * nodes
            ln_q = -0.5 * ((x - mu) / sigma) ** 2 - math.log(sigma) - 0.5 * math.log(2 * math.pi)
            ln_p = -0.5 * (x / s) ** 2 - math.log(s) - 0.5 * math.log(2 * math.pi)
            quad = float(np.sum(weights * (ln_q - ln_p)) / math.sqrt(math.pi))
            closed = math.log(s / sigma) + (sigma**2 + mu**2) / (2.0 * s**2) - 0.5
            assert closed == pytest.approx(quad, abs=1e-6)

    def test_kl_gradients_match_finite_differences(self):
        spec = [LayerSpec(2, 2, "identity", bayesian=True)]
        net = FeedForwardNet.initialise(spec, SeededStream(3, 0))
        prior_scale = 0.8
        for key in ("w_mu", "w_rho", "b_mu", "b_rho"):
            base = net.params[0][key].copy()

            def kl_at(vec, key=key, base=base):
                net.params[0][key][:] = vec.reshape(base.shape)
                val, _ = _gaussian_kl_terms(net, prior_scale)
                net.params[0][key][:] = base
                return val

            fd = finite_difference_grad(kl_at, base.ravel().copy(), h=1e-6)
            _, grads = _gaussian_kl_terms(net, prior_scale)
            np.testing.assert_allclose(
                grads[0][key].ravel(), fd, atol=1e-5, rtol=1e-5
            )

    def test_kl_batch_weights(self):
        uniform = _kl_batch_weights("uniform", 7)
        np.testing.assert_allclose(uniform, 1.0 / 7.0, atol=1e-15)
        geometric = _kl_batch_weights("geometric", 7)
        assert geometric.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(np.diff(geometric) < 0.0)
        # Blundell weighting: 2^(M-i) / (2^M - 1)
        m = 7
        expected = np.array([2.0 ** (m - i) / (2.0**m - 1.0) for i in range(1, m + 1)])
        np.testing.assert_allclose(geometric, expected, rtol=1e-12)

    def test_seeded_prediction_deterministic(self, separable):
        train, val, test = separable
        cfg = fast_config("bbb", epochs=3, peak_lr=3e-2)
        model = train_method(train, val, cfg)
        a = predict_bbb(model, test[0], cfg, SeededStream(9, 0))
        b = predict_bbb(model, test[0], cfg, SeededStream(9, 0))
        assert a == b

    def test_sample_count_convergence(self, separable):
        train, val, test = separable
        cfg = fast_config("bbb", epochs=10, peak_lr=3e-2)
        model = train_method(train, val, cfg)
        cfg500 = dataclasses.replace(cfg, test_samples=500)
        tvs = []
        for ex in test[:20]:
            p50 = np.array(predict_bbb(model, ex, cfg, SeededStream(7, 0)).pi_hat)
            p500 = np.array(predict_bbb(model, ex, cfg500, SeededStream(7, 1)).pi_hat)
            tvs.append(0.5 * float(np.abs(p50 - p500).sum()))
        assert np.mean(tvs) < 0.1


class TestEnsemble:
    def test_members_differ(self, separable, tmp_path):
        train, val, _ = separable
        model = train_method(train, val, fast_config("ensemble", epochs=3, ensemble_size=3))
        flat = [np.concatenate([p.ravel() for _, _, p in net.parameters()])
                for net in model.members]
        assert not np.array_equal(flat[0], flat[1])
        assert not np.array_equal(flat[1], flat[2])

    def test_prediction_invariant_to_member_order(self, separable):
        train, val, test = separable
        cfg = fast_config("ensemble", epochs=3, ensemble_size=3)
        model = train_method(train, val, cfg)
        reversed_model = TrainedModel(
            method="ensemble",
            config=cfg,
            members=list(reversed(model.members)),
            num_classes=model.num_classes,
        )
        for ex in test[:10]:
            assert predict(model, ex) == predict(reversed_model, ex)

    def test_single_member_equals_l2(self, separable):
        train, val, test = separable
        seed = 2
        ensemble = train_method(
            train, val, fast_config("ensemble", seed=seed, epochs=5, ensemble_size=1)
        )
        l2 = train_method(train, val, fast_config("l2", seed=seed, epochs=5))
        for ex in test[:10]:
            assert predict(ensemble, ex).pi_hat == predict(l2, ex).pi_hat

    def test_mean_is_simplex(self, separable):
        train, val, test = separable
        model = train_method(train, val, fast_config("ensemble", epochs=3, ensemble_size=3))
        for ex in test[:10]:
            pi = np.array(predict_ensemble(model, ex).pi_hat)
            assert np.all(pi >= 0.0)
            assert pi.sum() == pytest.approx(1.0, abs=1e-9)


class TestPredictDispatch:
    def test_zeroed_evidential_head_gives_uniform(self, separable):
        train, val, test = separable
        model = train_method(train, val, fast_config("evidential", epochs=2))
        final = model.net.params[-1]
        final["w"][:] = 0.0
        final["b"][:] = 0.0
        r = predict(model, test[0])
        assert r.pi_hat == (0.5, 0.5)
        assert r.confidence == 0.5

    def test_correct_flag_consistent(self, separable):
        train, val, test = separable
        model = train_method(train, val, fast_config("evidential", epochs=5))
        for r in predict_dataset(model, test):
            assert r.correct == (r.predicted_class == r.true_class)

    def test_confidence_in_valid_range(self, separable):
        train, val, test = separable
        model = train_method(train, val, fast_config("evidential", epochs=5))
        k = model.num_classes
        for r in predict_dataset(model, test):
            assert 1.0 / k - 1e-12 <= r.confidence <= 1.0

    def test_dimension_mismatch(self, separable):
        train, val, test = separable
        model = train_method(train, val, fast_config("l2", epochs=2))
        bad = dataclasses.replace(test[0], features=np.ones((3, model.net.input_dim + 1)))
        with pytest.raises(ContractError):
            predict(model, bad)

    def test_sampling_methods_require_stream(self, separable):
        train, val, test = separable
        model = train_method(train, val, fast_config("mcdp", epochs=2))
        with pytest.raises(ContractError):
            predict(model, test[0])


class TestLossDescent:
    # about 200 optimization steps on a separable task must cut each
    # method's training objective at least in half
    @pytest.mark.parametrize(
        "method,peak_lr",
        [
            ("evidential", 3e-3),
            ("l2", 3e-3),
            ("mcdp", 3e-3),
            ("bbb", 3e-2),
            ("ensemble", 3e-3),
        ],
    )
    def test_loss_halves(self, separable, method, peak_lr):
        train, val, _ = separable
        kw = {"ensemble_size": 1} if method == "ensemble" else {}
        cfg = fast_config(method, epochs=33, peak_lr=peak_lr, **kw)
        model = train_method(train, val, cfg)
        per_epoch = [h["train_loss"] for h in model.history]
        assert per_epoch[-1] <= 0.5 * per_epoch[0]


class TestModelFiles:
    def test_round_trip_predictions(self, separable, tmp_path):
        train, val, test = separable
        model = train_method(train, val, fast_config("ensemble", epochs=3, ensemble_size=2))
        path = tmp_path / "model.json"
        save_model(path, model)
        loaded = load_model(path)
        assert loaded.method == "ensemble"
        assert len(loaded.members) == 2
        for ex in test[:5]:
            assert predict(loaded, ex) == predict(model, ex)


class TestPredictionLog:
    def test_round_trip_exact(self, separable, tmp_path):
        train, val, test = separable
        model = train_method(train, val, fast_config("evidential", epochs=3))
        records = predict_dataset(model, test)
        path = tmp_path / "preds.tsv"
        write_prediction_log(path, records, "evidential", 1, comments=["config abc123"])
        rows = read_prediction_log(path)
        assert len(rows) == len(records)
        for (method, seed, rec), orig in zip(rows, records):
            assert method == "evidential" and seed == 1
            assert rec == orig

    def test_byte_stable_rewrite(self, separable, tmp_path):
        train, val, test = separable
        model = train_method(train, val, fast_config("l2", epochs=3))
        records = predict_dataset(model, test)
        p1, p2 = tmp_path / "a.tsv", tmp_path / "b.tsv"
        write_prediction_log(p1, records, "l2", 0)
        write_prediction_log(p2, [r for _, _, r in read_prediction_log(p1)], "l2", 0)
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(ContractError):
            write_prediction_log(tmp_path / "x.tsv", [], "l2", 0)
