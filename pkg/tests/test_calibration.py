"""Fitting, monotonicity, rank invariance, and serialization of the
piece-wise linear confidence map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from evconf.calibration import (
    PiecewiseLinearMap,
    apply_pwlm,
    fit_pwlm,
    load_pwlm,
    map_records,
    save_pwlm,
)
from evconf.errors import ContractError, ParseError
from evconf.metrics import EceConfig, auprc, auroc, ece


@dataclass(frozen=True)
class Rec:
    confidence: float
    predicted_class: int
    true_class: int

    @property
    def correct(self) -> bool:
        return self.predicted_class == self.true_class


def recs(confidences, correct):
    return [
        Rec(confidence=float(c), predicted_class=1 if ok else 0, true_class=1)
        for c, ok in zip(confidences, correct)
    ]


def miscalibrated(rng, n):
    """Overconfident binary records: stated confidence c, but the true
    probability of being correct is only 0.5 + 0.6 (c - 0.5)."""
    out = []
    for _ in range(n):
        c = rng.uniform(0.5, 1.0)
        ok = rng.random() < 0.5 + 0.6 * (c - 0.5)
        out.append(Rec(confidence=float(c), predicted_class=1 if ok else 0, true_class=1))
    return out


class TestMapValidation:
    def test_needs_two_knots(self):
        with pytest.raises(ContractError):
            PiecewiseLinearMap([0.5], [0.5])

    def test_x_strictly_increasing(self):
        with pytest.raises(ContractError):
            PiecewiseLinearMap([0.5, 0.5], [0.2, 0.8])

    def test_y_non_decreasing(self):
        with pytest.raises(ContractError):
            PiecewiseLinearMap([0.5, 1.0], [0.8, 0.2])

    def test_y_range(self):
        with pytest.raises(ContractError):
            PiecewiseLinearMap([0.5, 1.0], [0.2, 1.2])

    def test_epsilon_range(self):
        with pytest.raises(ContractError):
            PiecewiseLinearMap([0.5, 1.0], [0.2, 0.8], epsilon=0.0)


class TestFit:
    def test_calibrated_bins_give_identity_knots(self):
        # each occupied bin has mean confidence equal to its accuracy
        records = recs(
            [0.75, 0.75, 0.75, 0.75, 0.55, 0.55, 0.55, 0.55, 0.55],
            [1, 1, 1, 0] + [1, 1, 0, 0, 0],
        )
        # second group: accuracy 2/5 != 0.55, so adjust: use 0.6 with 3 of 5
        records = recs(
            [0.75, 0.75, 0.75, 0.75, 0.6, 0.6, 0.6, 0.6, 0.6],
            [1, 1, 1, 0, 1, 1, 1, 0, 0],
        )
        fitted = fit_pwlm(records, num_bins=5, num_classes=2)
        for x, y in fitted.knots():
            assert y == pytest.approx(np.interp(x, fitted.xs, fitted.ys), abs=1e-15)
        # interior knots are identity within 1e-12
        assert (0.75, 0.75) in [(round(x, 12), round(y, 12)) for x, y in fitted.knots()]
        assert apply_pwlm(fitted, 0.75) == pytest.approx(0.75, abs=1e-12)
        assert apply_pwlm(fitted, 0.6) == pytest.approx(0.6, abs=1e-12)

    def test_uniformly_overconfident_is_pulled_down(self):
        rng = np.random.default_rng(0)
        correct = (rng.random(200) < 0.6).tolist()
        records = recs([0.9] * 200, correct)
        fitted = fit_pwlm(records, num_bins=10, num_classes=2)
        acc = np.mean(correct)
        assert apply_pwlm(fitted, 0.9) == pytest.approx(acc, abs=1e-5)

    def test_single_bin_degenerate_two_knots(self):
        records = recs([0.97] * 5, [1, 1, 1, 1, 0])
        fitted = fit_pwlm(records, num_bins=10, num_classes=2)
        assert len(fitted.xs) == 2
        assert fitted.xs[0] == 0.5 and fitted.xs[-1] == 1.0
        for p in np.linspace(0.0, 1.0, 50):
            assert 0.0 <= apply_pwlm(fitted, p) <= 1.0

    def test_pool_adjacent_violators_weighted_mean(self):
        # bin heights 1.0 (weight 2) then 0.0 (weight 1) pool to 2/3
        records = recs([0.55, 0.55, 0.65], [1, 1, 0])
        fitted = fit_pwlm(records, num_bins=5, num_classes=2)
        heights = dict((round(x, 12), y) for x, y in fitted.knots())
        assert heights[0.55] == pytest.approx(2.0 / 3.0, abs=1e-12)
        assert heights[0.65] == pytest.approx(2.0 / 3.0, abs=1e-12)
        assert np.all(np.diff(fitted.ys) >= 0.0)

    def test_endpoints_cover_full_range(self):
        rng = np.random.default_rng(1)
        fitted = fit_pwlm(miscalibrated(rng, 300), num_bins=10, num_classes=2)
        assert fitted.xs[0] == 0.5
        assert fitted.xs[-1] == 1.0

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        records = miscalibrated(rng, 150)
        a = fit_pwlm(records, num_bins=10, num_classes=2)
        b = fit_pwlm(records, num_bins=10, num_classes=2)
        np.testing.assert_array_equal(a.xs, b.xs)
        np.testing.assert_array_equal(a.ys, b.ys)

    def test_num_classes_inferred_from_pi_hat(self):
        @dataclass(frozen=True)
        class PiRec:
            confidence: float
            predicted_class: int
            true_class: int
            pi_hat: tuple

            @property
            def correct(self):
                return self.predicted_class == self.true_class

        records = [
            PiRec(confidence=0.7, predicted_class=1, true_class=1, pi_hat=(0.3, 0.7)),
            PiRec(confidence=0.8, predicted_class=1, true_class=0, pi_hat=(0.2, 0.8)),
        ]
        fitted = fit_pwlm(records, num_bins=4)
        assert fitted.xs[0] == 0.5

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            fit_pwlm([], num_bins=10, num_classes=2)


class TestApply:
    def test_strictly_increasing(self):
        rng = np.random.default_rng(3)
        fitted = fit_pwlm(miscalibrated(rng, 300), num_bins=10, num_classes=2)
        ps = np.unique(rng.uniform(0.0, 1.0, 2000))
        out = apply_pwlm(fitted, ps)
        assert np.all(np.diff(out) > 0.0)

    def test_outputs_in_unit_interval(self):
        rng = np.random.default_rng(4)
        fitted = fit_pwlm(miscalibrated(rng, 100), num_bins=10, num_classes=2)
        out = apply_pwlm(fitted, np.linspace(0.0, 1.0, 101))
        assert np.all(out >= 0.0) and np.all(out <= 1.0)

    def test_identity_map_is_near_identity(self):
        fitted = PiecewiseLinearMap([0.5, 1.0], [0.5, 1.0])
        for p in (0.5, 0.6, 0.93, 1.0):
            assert apply_pwlm(fitted, p) == pytest.approx(p, abs=1e-6)

    def test_out_of_range_input_rejected(self):
        fitted = PiecewiseLinearMap([0.5, 1.0], [0.5, 1.0])
        with pytest.raises(ContractError):
            apply_pwlm(fitted, 1.5)

    def test_rank_invariance_of_auroc_auprc(self):
        rng = np.random.default_rng(5)
        for trial in range(10):
            val = miscalibrated(rng, 200)
            test = miscalibrated(rng, 200)
            fitted = fit_pwlm(val, num_bins=10, num_classes=2)
            mapped = map_records(fitted, test)
            scores = [r.confidence for r in test]
            ok = [r.correct for r in test]
            mapped_scores = [r.confidence for r in mapped]
            assert auroc(mapped_scores, ok) == auroc(scores, ok)
            assert auprc(mapped_scores, ok) == auprc(scores, ok)

    def test_ece_improves_on_matched_distribution(self):
        # fit on validation, apply to a test draw from the same process;
        # mean over 5 seeds must not get worse
        before, after = [], []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            val = miscalibrated(rng, 400)
            test = miscalibrated(rng, 400)
            fitted = fit_pwlm(val, num_bins=10, num_classes=2)
            mapped = map_records(fitted, test)
            before.append(ece(test, EceConfig(10)))
            after.append(ece(mapped, EceConfig(10)))
        assert np.mean(after) <= np.mean(before)

    def test_map_records_only_touches_confidence(self):
        fitted = PiecewiseLinearMap([0.5, 1.0], [0.25, 0.75])
        records = recs([0.8, 0.6], [1, 0])
        mapped = map_records(fitted, records)
        assert [r.predicted_class for r in mapped] == [r.predicted_class for r in records]
        assert [r.true_class for r in mapped] == [r.true_class for r in records]
        assert mapped[0].confidence != records[0].confidence


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(6)
        fitted = fit_pwlm(miscalibrated(rng, 250), num_bins=10, num_classes=2)
        path = tmp_path / "map.txt"
        save_pwlm(fitted, path)
        first = path.read_bytes()
        loaded = load_pwlm(path)
        np.testing.assert_array_equal(loaded.xs, fitted.xs)
        np.testing.assert_array_equal(loaded.ys, fitted.ys)
        assert loaded.epsilon == fitted.epsilon
        save_pwlm(loaded, path)
        assert path.read_bytes() == first

    def test_rejects_wrong_header(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("something 1\nepsilon 1e-06\n0.5 0.5\n1.0 1.0\n")
        with pytest.raises(ParseError):
            load_pwlm(path)

    def test_rejects_unknown_version(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("evconf-pwlm 9\nepsilon 1e-06\n0.5 0.5\n1.0 1.0\n")
        with pytest.raises(ParseError):
            load_pwlm(path)

    def test_rejects_malformed_knot(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("evconf-pwlm 1\nepsilon 1e-06\n0.5 oops\n1.0 1.0\n")
        with pytest.raises(ParseError) as err:
            load_pwlm(path)
        assert "line 3" in str(err.value)
