"""Pearson correlation and the evaluation protocol."""
from __future__ import annotations

import numpy as np
import pytest

from cine2mesh.evaluate import EvalConfig, evaluate_sample, evaluate_samples, pearson
from cine2mesh.shapemodel import default_shape_model, generate_cohort


class TestPearson:
    def test_perfect_linear(self):
        xs = np.array([0.1, 0.4, 0.2, 0.9])
        assert pearson(xs, 2 * xs + 1) == pytest.approx(1.0, abs=1e-12)

    def test_perfect_anticorrelation(self):
        xs = np.array([1.0, 2.0, 5.0])
        assert pearson(xs, -xs) == pytest.approx(-1.0, abs=1e-12)

    def test_hand_computed_value(self):
        # x=(1,2,3,4), y=(1,3,2,4): covariance 4, variances 5 each -> r=0.8.
        assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)

    def test_matches_independent_two_pass_evaluation(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.normal(size=30)
            y = rng.normal(size=30) + 0.5 * x
            mx, my = x.mean(), y.mean()
            direct = ((x - mx) * (y - my)).sum() / np.sqrt(
                ((x - mx) ** 2).sum() * ((y - my) ** 2).sum()
            )
            assert pearson(x, y) == pytest.approx(direct, abs=1e-12)
            assert pearson(x, y) == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError, match="variance"):
            pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            pearson([1.0, 2.0], [1.0, 2.0, 3.0])


@pytest.fixture(scope="module")
def oracle_setup():
    model = default_shape_model(seed=3, detail=1, n_modes=4, cohort_size=12)
    cohort = generate_cohort(model, count=4, n_frames=6, seed=4)
    return model, cohort


class TestOracleInjection:
    def test_gt_injection_gives_near_zero_asd_and_perfect_r(self, oracle_setup):
        # Feeding ground-truth meshes through the full evaluation path checks
        # the metric pipeline independently of any learning.
        _, cohort = oracle_setup
        samples = [
            (s.index, s.video, s.video, s.ef["LV"]) for s in cohort
        ]
        report = evaluate_samples(
            samples,
            predict_fn=lambda video: video,
            config=EvalConfig(surface_samples=800),
            view_config="oracle",
        )
        assert report.n_failed == 0
        assert report.n_evaluated == len(cohort)
        for phase in ("ED", "ES"):
            for structure, value in report.asd_mean[phase].items():
                assert value < 0.1, (phase, structure, value)
        assert report.pearson_r > 0.999

    def test_failures_recorded_not_dropped(self, oracle_setup):
        _, cohort = oracle_setup

        def broken_predict(video):
            raise RuntimeError("checkpoint exploded")

        samples = [(s.index, s.video, s.video, s.ef["LV"]) for s in cohort[:2]]
        report = evaluate_samples(samples, broken_predict, EvalConfig(), view_config="x")
        assert report.n_failed == 2
        assert report.n_evaluated == 0
        assert "checkpoint exploded" in report.failures[0]

    def test_sample_result_contains_phases_and_curves(self, oracle_setup):
        _, cohort = oracle_setup
        s = cohort[0]
        result = evaluate_sample(
            s.index, s.video, s.video, s.ef["LV"], EvalConfig(surface_samples=500)
        )
        assert set(result.asd) == {"ED", "ES"}
        assert result.ef_pred == pytest.approx(s.ef["LV"], rel=0.02)
        assert set(result.volume_curves) == {"LV", "RV", "LA", "RA"}
        assert len(result.volume_curves["LV"]) == s.video.n_frames
