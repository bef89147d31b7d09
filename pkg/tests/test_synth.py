import math

import numpy as np
import pytest
from scipy import stats

from oracles import mixture_variance
from lgm_emg.errors import DegenerateDataError
from lgm_emg.models import LgmParams, ScaleMixtureParams
from lgm_emg.recording import TrialMetadata, segment_action
from lgm_emg.synth import (
    TrialProfile,
    derived_seed,
    make_trial,
    protocol_action_model,
    protocol_grid,
    sample_lgm,
    sample_sm,
    trial_filename,
)


def _variance_se(z):
    # standard error of the sample variance, estimated from the sample itself
    c = z - z.mean()
    return np.std(c * c) / math.sqrt(z.size)


class TestSampleLgm:
    def test_pure_laplacian_kurtosis(self):
        z = sample_lgm(LgmParams(1.0, 0.0, 1.0, 0.0, 1.0), 10**6, seed=0)
        assert stats.kurtosis(z, fisher=False) == pytest.approx(6.0, abs=0.1)

    def test_mixture_variance(self):
        z = sample_lgm(LgmParams(0.5, 0.0, 1.0, 0.0, 2.0), 10**6, seed=1)
        lam, s1, s2 = 0.5, 1.0, 2.0
        # fourth central moment: 6 s^4 for the Laplacian, 3 s^4 for the Gaussian
        m4 = lam * 6 * s1**4 + (1 - lam) * 3 * s2**4
        v = mixture_variance(lam, s1, s2)
        se = math.sqrt((m4 - v * v) / z.size)
        assert v == 2.5
        assert abs(np.var(z) - v) <= 3 * se

    def test_determinism(self):
        p = LgmParams(0.3, 0.1, 1, -0.1, 2)
        assert np.array_equal(sample_lgm(p, 1000, seed=7), sample_lgm(p, 1000, seed=7))
        assert not np.array_equal(sample_lgm(p, 1000, seed=7), sample_lgm(p, 1000, seed=8))

    def test_labels_match_weight(self):
        z, labels = sample_lgm(LgmParams(0.7, 0, 1, 0, 3), 100_000, seed=2, return_labels=True)
        assert z.shape == labels.shape
        assert abs(labels.mean() - 0.7) < 0.01

    def test_bad_n(self):
        with pytest.raises(ValueError):
            sample_lgm(LgmParams(0.5, 0, 1, 0, 1), 0)

    def test_moments_converge(self):
        p = LgmParams(0.6, 0.0, 1.0, 0.0, 2.0)
        v = mixture_variance(0.6, 1.0, 2.0)
        for n in (10**4, 10**6):
            z = sample_lgm(p, n, seed=3)
            assert abs(np.var(z) - v) <= 4 * _variance_se(z)
            assert abs(z.mean()) <= 4 * z.std() / math.sqrt(n)


class TestSampleSm:
    def test_gaussian_limit_variance(self):
        z = sample_sm(ScaleMixtureParams(0.0, 1.5, 1e6), 10**6, seed=0)
        assert abs(np.var(z) - 2.25) <= 3 * 2.25 * math.sqrt(2 / z.size)

    def test_t4_variance(self):
        z = sample_sm(ScaleMixtureParams(0.0, 1.0, 4.0), 10**6, seed=1)
        assert abs(np.var(z) - 2.0) <= 3 * _variance_se(z)

    def test_determinism(self):
        p = ScaleMixtureParams(0.2, 1.0, 3.0)
        assert np.array_equal(sample_sm(p, 500, seed=4), sample_sm(p, 500, seed=4))

    def test_matches_t_distribution(self):
        z = sample_sm(ScaleMixtureParams(0.0, 1.0, 3.0), 50_000, seed=5)
        assert stats.kstest(z, stats.t(3).cdf).pvalue > 0.001


class TestMakeTrial:
    def test_default_length(self):
        series = make_trial(TrialProfile())
        assert len(series) == 36000
        assert series.rate == 2000.0
        assert series.annotations["action_start_index"] == 20000
        assert series.annotations["action_end_index"] == 30000

    def test_action_phase_is_louder(self):
        series = make_trial(TrialProfile(seed=3))
        x = series.samples
        assert np.std(x[20000:30000]) > 5 * np.std(x[:20000])

    def test_deterministic(self):
        prof = TrialProfile(seed=9, rest_s=1, action_s=1, release_s=1)
        assert make_trial(prof) == make_trial(prof)

    def test_labels(self):
        series, labels = make_trial(TrialProfile(rest_s=1, action_s=1, release_s=1), with_labels=True)
        assert labels.size == 2000

    def test_sm_action_model(self):
        series = make_trial(TrialProfile(action_model=ScaleMixtureParams(0, 0.05, 4), rest_s=1, action_s=1, release_s=1))
        assert series.annotations["model"] == "ScaleMixtureParams"
        assert series.annotations["model.nu"] == 4

    def test_boost_recovered(self):
        amp = 0.01 * 5
        series = make_trial(TrialProfile(action_model=LgmParams(0.5, 0, amp, 0, amp), seed=21))
        seg = segment_action(series)
        assert abs(seg.start_index / 2000 - 10) <= 0.25

    def test_zero_rest_sigma_is_degenerate_downstream(self):
        with pytest.raises(DegenerateDataError):
            segment_action(make_trial(TrialProfile(rest_sigma=0.0)))

    @pytest.mark.parametrize("kw", [dict(rest_s=0), dict(action_s=-1), dict(rate=0), dict(rest_sigma=-1)])
    def test_invalid_profile(self, kw):
        with pytest.raises(ValueError):
            TrialProfile(**kw)


class TestProtocolGrid:
    def test_grid_size_and_distinct_seeds(self):
        items = list(protocol_grid(seed=0, trials=2))
        assert len(items) == 3 * 2 * 2 * 7 * 2
        assert len({prof.seed for _, prof in items}) == len(items)
        assert len({trial_filename(m) for m, _ in items}) == len(items)

    def test_derived_seed_stable(self):
        meta = TrialMetadata(1, "novice", 2.5, "isotonic", "BB", 1)
        assert derived_seed(5, meta) == derived_seed(5, meta)
        assert derived_seed(5, meta) != derived_seed(6, meta)

    def test_ground_truth_design(self):
        bb = protocol_action_model(TrialMetadata(1, "trained", 5.0, "isotonic", "BB", 1))
        fcu = protocol_action_model(TrialMetadata(1, "trained", 5.0, "isotonic", "FCU", 1))
        assert bb.sigma1 / fcu.sigma1 == pytest.approx(2.0)
        low = protocol_action_model(TrialMetadata(1, "novice", 0.0, "isotonic", "BB", 1))
        high = protocol_action_model(TrialMetadata(1, "novice", 10.0, "isotonic", "BB", 1))
        assert high.sigma1 > low.sigma1
        assert high.lambda1 > low.lambda1

    def test_filename(self):
        meta = TrialMetadata(3, "trained", 2.5, "isometric", "FCU", 9)
        assert trial_filename(meta) == "s03_trained_isometric_FCU_w2p5_t9.csv"
