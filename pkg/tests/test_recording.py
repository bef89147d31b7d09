import warnings

import numpy as np
import pytest

from lgm_emg.errors import BoundsError, DataError, DegenerateDataError, NoActivityError, ParseError
from lgm_emg.models import LgmParams
from lgm_emg.recording import (
    FormatError,
    RecordingWarning,
    SampleSeries,
    Segment,
    SegmentationConfig,
    TrialMetadata,
    extract_segment,
    load_recording,
    moving_rms,
    segment_action,
    write_recording,
)
from lgm_emg.synth import TrialProfile, make_trial

HEADER = "rate=2000,channel=BB,subject_id=3,experience=trained,weight_kg=2.5,activity=isometric,muscle=BB,trial_index=4"


def _write(tmp_path, text, name="trial.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadRecording:
    def test_four_rows_at_2000_hz(self, tmp_path):
        path = _write(tmp_path, HEADER + "\n0.1\n-0.2\n0.3\n-0.4\n")
        series, meta = load_recording(path)
        assert len(series) == 4
        assert series.duration_seconds == pytest.approx(0.002, abs=1e-15)
        assert series.rate == 2000.0
        assert meta.weight_kg == 2.5
        assert meta.trial_index == 4
        assert meta.experience.value == "trained"
        assert meta.defaulted == ()

    def test_nan_amplitude_is_data_error(self, tmp_path):
        path = _write(tmp_path, HEADER + "\n0.1\nNaN\n0.3\n")
        with pytest.raises(DataError):
            load_recording(path)

    def test_malformed_row_reports_line_number(self, tmp_path):
        path = _write(tmp_path, HEADER + "\n0.1\n0.2\nabc\n")
        with pytest.raises(ParseError) as info:
            load_recording(path)
        assert info.value.line == 4
        assert "line 4" in str(info.value)

    def test_missing_rate_is_format_error(self, tmp_path):
        path = _write(tmp_path, "channel=BB,muscle=BB\n0.1\n0.2\n")
        with pytest.raises(FormatError):
            load_recording(path)

    def test_missing_metadata_is_defaulted_with_warning(self, tmp_path):
        path = _write(tmp_path, "rate=1000\n0.1\n0.2\n")
        with pytest.warns(RecordingWarning, match="defaulted"):
            _, meta = load_recording(path)
        assert "experience" in meta.defaulted
        assert "weight_kg" in meta.defaulted

    def test_strict_protocol_rejects_unknown_weight(self, tmp_path):
        path = _write(tmp_path, HEADER.replace("weight_kg=2.5", "weight_kg=3.3") + "\n0.1\n0.2\n")
        load_recording(path)
        with pytest.raises(DataError):
            load_recording(path, strict_protocol=True)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_recording(tmp_path / "nope.csv")

    def test_synth_round_trip_is_bit_identical(self, tmp_path):
        meta = TrialMetadata(2, "intermediate", 5.0, "isotonic", "FCU", 7)
        series = make_trial(TrialProfile(rest_s=1.0, action_s=1.0, release_s=0.5, seed=11), meta)
        path = write_recording(series, tmp_path / "rt.csv")
        loaded, loaded_meta = load_recording(path)
        assert np.array_equal(loaded.samples, series.samples)
        assert loaded.samples.tobytes() == series.samples.tobytes()
        assert loaded_meta == meta
        assert loaded.annotations["action_start_index"] == 2000

    def test_comment_lines_become_annotations(self, tmp_path):
        path = _write(tmp_path, HEADER + "\n# note=hello\n# gain=2.5\n0.5\n0.25\n")
        series, _ = load_recording(path)
        assert series.annotations == {"note": "hello", "gain": 2.5}


class TestSampleSeries:
    def test_samples_are_read_only(self):
        s = SampleSeries([1.0, 2.0], 10.0)
        with pytest.raises(ValueError):
            s.samples[0] = 5.0

    def test_rate_must_be_positive(self):
        with pytest.raises(ValueError):
            SampleSeries([1.0, 2.0], 0.0)

    def test_duration_consistent_under_slicing(self):
        s = SampleSeries(np.arange(10.0), 4.0)
        part = extract_segment(s, Segment(2, 8))
        assert part.duration_seconds == 6 / 4.0
        assert part.rate == s.rate


class TestExtractSegment:
    def setup_method(self):
        self.series = SampleSeries([0.1, 0.2, 0.3, 0.4], 2000.0)

    def test_whole_range_is_identity(self):
        assert extract_segment(self.series, Segment(0, 4)) == self.series

    def test_first_sample(self):
        part = extract_segment(self.series, Segment(0, 1))
        assert len(part) == 1
        assert part.samples[0] == 0.1

    def test_resegment_full_range_is_idempotent(self):
        once = extract_segment(self.series, Segment(1, 3))
        twice = extract_segment(once, Segment(0, len(once)))
        assert twice == once

    @pytest.mark.parametrize("seg", [Segment(0, 5), Segment(-1, 2), Segment(2, 2), Segment(3, 1)])
    def test_out_of_range_is_bounds_error(self, seg):
        with pytest.raises(BoundsError):
            extract_segment(self.series, seg)


def _trial(seed, boost=25.0, rate=2000.0):
    # action variance = boost x rest variance
    rest = 0.01
    model = LgmParams(1.0 - 1e-9, 0.0, rest * np.sqrt(boost), 0.0, rest * np.sqrt(boost))
    return make_trial(TrialProfile(rest_sigma=rest, action_model=model, rate=rate, seed=seed))


class TestSegmentAction:
    def test_constant_zero_is_no_activity(self):
        with pytest.raises(NoActivityError):
            segment_action(SampleSeries(np.zeros(4000), 1000.0))

    def test_boost_recovers_onset(self):
        series = _trial(5)
        seg = segment_action(series, SegmentationConfig())
        assert abs(seg.start_index / series.rate - 10.0) <= 0.25
        assert abs(seg.end_index / series.rate - 15.0) <= 0.25

    def test_active_throughout_spans_almost_everything(self):
        x = np.random.default_rng(0).standard_normal(20000)
        # threshold below the baseline: the entire series qualifies
        cfg = SegmentationConfig(on_factor=0.5, off_factor=0.25)
        seg = segment_action(SampleSeries(x, 2000.0), cfg)
        assert seg.start_index == 0
        assert seg.end_index == x.size

    def test_no_window_above_threshold(self):
        x = np.random.default_rng(1).standard_normal(20000)
        with pytest.raises(NoActivityError):
            segment_action(SampleSeries(x, 2000.0))

    def test_zero_rest_is_degenerate(self):
        series = make_trial(TrialProfile(rest_sigma=0.0, seed=3))
        with pytest.raises(DegenerateDataError):
            segment_action(series)

    def test_manual_override(self):
        series = _trial(1)
        seg = segment_action(series, SegmentationConfig(manual_start_s=9.5, manual_end_s=15.5))
        assert seg == Segment(19000, 31000)

    def test_manual_out_of_range(self):
        with pytest.raises(BoundsError):
            segment_action(_trial(1), SegmentationConfig(manual_start_s=5.0, manual_end_s=99.0))

    def test_too_short_series(self):
        with pytest.raises(DataError):
            segment_action(SampleSeries(np.ones(150), 1000.0))

    def test_deterministic(self):
        series = _trial(9)
        assert segment_action(series) == segment_action(series)

    def test_longest_region_wins(self):
        rng = np.random.default_rng(4)
        x = 0.01 * rng.standard_normal(30000)
        x[8000:9000] *= 10
        x[15000:25000] *= 10
        seg = segment_action(SampleSeries(x, 1000.0))
        assert abs(seg.start_index - 15000) < 100
        assert abs(seg.end_index - 25000) < 100

    def test_segment_windows_exceed_on_threshold(self):
        series = _trial(12)
        cfg = SegmentationConfig()
        seg = segment_action(series, cfg)
        window = int(cfg.window_ms * 1e-3 * series.rate)
        baseline = np.sqrt(np.mean(series.samples[: int(cfg.baseline_s * series.rate)] ** 2))
        part = extract_segment(series, seg).samples
        starts = np.arange(0, part.size - window + 1, window)
        rms = np.array([np.sqrt(np.mean(part[i : i + window] ** 2)) for i in starts])
        assert np.mean(rms >= cfg.on_factor * baseline) >= 0.9


class TestMovingRms:
    def test_constant_signal(self):
        assert np.allclose(moving_rms(np.full(50, -2.0), 7), 2.0)

    def test_matches_direct_window(self):
        x = np.random.default_rng(2).standard_normal(200)
        w = 10
        rms = moving_rms(x, w)
        i = 100
        direct = np.sqrt(np.mean(x[i - w // 2 : i - w // 2 + w] ** 2))
        assert rms[i] == pytest.approx(direct, rel=1e-12)


class TestSegmentationConfig:
    def test_off_above_on_rejected(self):
        with pytest.raises(ValueError):
            SegmentationConfig(on_factor=1.0, off_factor=2.0)

    def test_default_values(self):
        cfg = SegmentationConfig()
        assert (cfg.window_ms, cfg.on_factor, cfg.off_factor, cfg.baseline_s) == (100.0, 3.0, 1.5, 2.0)
        assert not cfg.manual


def test_metadata_defaults_warn_only_once_per_file(tmp_path):
    path = _write(tmp_path, "rate=1000\n1\n2\n")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        load_recording(path)
    assert sum(issubclass(w.category, RecordingWarning) for w in caught) == 1
