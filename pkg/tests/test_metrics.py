import math

import numpy as np
import pytest

from steerfx.audio import AudioBuffer, make_impulse, make_noise, make_sine
from steerfx.metrics import (
    BELOW_GATE,
    DecayCurve,
    T60FitError,
    decay_consistency,
    estimate_t60,
    grid_sweep,
    integrated_loudness,
    k_weighting_sos,
    rms_db,
    schroeder_edc,
    write_decay_report,
)
from steerfx.model import ModelConfig, init_model

TINY = ModelConfig(layers=2, channels=4, kernel_size=3, dilation_growth=2, cond_dim=2, sample_rate=22050)


def synthetic_decay(t60: float, sample_rate: int = 22050, duration_factor: float = 1.5, seed: int = 0):
    """White noise under an amplitude envelope giving exactly 60 dB of
    energy decay per t60 seconds."""
    n = int(duration_factor * t60 * sample_rate)
    t = np.arange(n) / sample_rate
    rng = np.random.default_rng(seed)
    samples = rng.normal(size=n) * np.exp(-6.907755 * t / t60)
    return AudioBuffer(samples.astype(np.float32), sample_rate)


class TestKWeighting:
    def test_matches_published_48k_coefficients(self):
        sos = k_weighting_sos(48000)
        np.testing.assert_allclose(
            sos[0],
            [1.53512485958697, -2.69169618940638, 1.19839281085285,
             1.0, -1.69065929318241, 0.73248077421585],
            atol=1e-10,
        )
        np.testing.assert_allclose(
            sos[1], [1.0, -2.0, 1.0, 1.0, -1.99004745483398, 0.99007225036621], atol=1e-10
        )


class TestIntegratedLoudness:
    def test_full_scale_997_sine_48k(self):
        assert integrated_loudness(make_sine(997, 1.0, 10.0, 48000)) == pytest.approx(-3.01, abs=0.1)

    def test_minus_20db_sine(self):
        assert integrated_loudness(make_sine(997, 0.1, 10.0, 48000)) == pytest.approx(-23.01, abs=0.1)

    def test_conformance_at_44100(self):
        assert integrated_loudness(make_sine(997, 1.0, 10.0, 44100)) == pytest.approx(-3.01, abs=0.1)

    def test_silence_below_gate(self):
        silence = AudioBuffer(np.zeros(48000, dtype=np.float32), 48000)
        assert integrated_loudness(silence) == BELOW_GATE

    def test_too_short(self):
        with pytest.raises(ValueError, match="too short"):
            integrated_loudness(AudioBuffer(np.zeros(1000, dtype=np.float32), 48000))

    def test_gain_linearity(self):
        base = make_noise(3.0, 0.25, 48000, seed=5)
        for gain_db in (6.0, -6.0, -12.0):
            g = 10 ** (gain_db / 20)
            scaled = AudioBuffer((base.samples * g).astype(np.float32), 48000)
            delta = integrated_loudness(scaled) - integrated_loudness(base)
            assert delta == pytest.approx(gain_db, abs=0.1)

    def test_stereo_sums_channel_energy(self):
        mono = make_sine(997, 0.5, 2.0, 48000)
        stereo = AudioBuffer(np.vstack([mono.samples, mono.samples]), 48000)
        # two identical channels double the energy: +3.01 dB
        delta = integrated_loudness(stereo) - integrated_loudness(mono)
        assert delta == pytest.approx(3.01, abs=0.05)


class TestSchroederEdc:
    def test_single_impulse_drops_to_floor(self):
        curve = schroeder_edc(make_impulse(100, 1.0, 22050))
        assert curve.levels_db[0] == 0.0
        np.testing.assert_array_equal(curve.levels_db[1:], -120.0)

    def test_two_equal_impulses(self):
        samples = np.zeros(200, dtype=np.float32)
        samples[0] = 0.5
        samples[50] = 0.5
        curve = schroeder_edc(AudioBuffer(samples, 22050))
        assert curve.levels_db[0] == 0.0
        np.testing.assert_allclose(curve.levels_db[1:51], 10 * math.log10(0.5), rtol=1e-9)
        np.testing.assert_array_equal(curve.levels_db[51:], -120.0)

    def test_exponential_decay_is_linear_in_db(self):
        buf = synthetic_decay(1.0, duration_factor=1.2)
        curve = schroeder_edc(buf)
        span = (curve.levels_db <= -5) & (curve.levels_db >= -40)
        slope, intercept = np.polyfit(curve.times[span], curve.levels_db[span], 1)
        fit = slope * curve.times[span] + intercept
        assert np.max(np.abs(fit - curve.levels_db[span])) < 1.0  # dB
        assert slope == pytest.approx(-60.0, rel=0.05)

    def test_monotone_nonincreasing_any_input(self, rng):
        for _ in range(5):
            samples = rng.normal(size=500).astype(np.float32)
            curve = schroeder_edc(AudioBuffer(samples, 22050))
            assert curve.levels_db[0] == 0.0
            assert np.all(np.diff(curve.levels_db) <= 0)

    def test_rejects_silence(self):
        with pytest.raises(ValueError, match="zero"):
            schroeder_edc(AudioBuffer(np.zeros(100, dtype=np.float32), 22050))


class TestEstimateT60:
    @pytest.mark.parametrize("t60", [0.3, 1.0, 2.0])
    def test_recovers_synthetic_decay(self, t60):
        estimate = estimate_t60(schroeder_edc(synthetic_decay(t60)))
        assert estimate.seconds == pytest.approx(t60, rel=0.05)
        assert not estimate.reduced_confidence

    def test_single_impulse_fails(self):
        with pytest.raises(T60FitError, match="-15 dB"):
            estimate_t60(schroeder_edc(make_impulse(100, 1.0, 22050)))

    def test_scale_invariance_power_of_two_exact(self):
        # 2^7 = +42.1 dB, 2^-7 = -42.1 dB; power-of-two scaling commutes
        # bit-exactly with every float op in the pipeline
        base = synthetic_decay(0.5)
        reference = estimate_t60(schroeder_edc(base)).seconds
        for gain in (128.0, 1.0 / 128.0):
            scaled = AudioBuffer(base.samples * np.float32(gain), base.sample_rate)
            assert estimate_t60(schroeder_edc(scaled)).seconds == reference

    def test_scale_invariance_forty_db(self):
        # literal +-40 dB gains round per-sample in float32 storage; the
        # estimate must still agree to float precision
        base = synthetic_decay(0.5)
        reference = estimate_t60(schroeder_edc(base)).seconds
        for gain in (100.0, 0.01):
            scaled = AudioBuffer(base.samples * np.float32(gain), base.sample_rate)
            assert estimate_t60(schroeder_edc(scaled)).seconds == pytest.approx(reference, rel=1e-6)

    def test_fallback_flags_reduced_confidence(self):
        # decay reaches -18 dB then stays: only the -5..-15 fit is possible
        n = int(0.25 * 22050)
        t = np.arange(n) / 22050
        levels = np.maximum(-60.0 * t / 0.5, -18.0)
        curve = DecayCurve(times=t, levels_db=levels)
        estimate = estimate_t60(curve)
        assert estimate.reduced_confidence
        assert estimate.fit_range_db == (-5.0, -15.0)
        assert estimate.seconds == pytest.approx(0.5, rel=0.05)


def identity_model(config=TINY):
    """Model wired as a pure pass-through: impulse in, impulse out."""
    model = init_model(config, seed=0)
    for block in model.blocks:
        block.conv.weights[...] = 0.0
        block.conv.bias[...] = 0.0
        block.film_w[...] = 0.0
        block.film_b[config.channels:] = 0.0
        block.residual.weights[...] = 0.0
        block.residual.bias[...] = 0.0
        block.residual.weights[0, 0, 0] = 1.0
    model.output.weights[...] = 0.0
    model.output.bias[...] = 0.0
    model.output.weights[0, 0, 0] = 1.0
    return model


class TestGridSweep:
    def test_lattice_definition(self):
        sweep = grid_sweep(identity_model(), make_noise(0.05, 0.5, 22050, seed=1), steps=11)
        np.testing.assert_array_equal(sweep.c0_axis, np.arange(-5.0, 6.0))
        np.testing.assert_array_equal(sweep.c1_axis, np.arange(-5.0, 6.0))
        assert sweep.values.shape == (11, 11)

    def test_zeroed_film_weights_give_constant_grid(self):
        model = init_model(TINY, seed=3)
        for block in model.blocks:
            block.film_w[...] = 0.0
        sweep = grid_sweep(model, make_noise(0.05, 0.5, 22050, seed=1), steps=5, metric="rms")
        assert np.all(sweep.values == sweep.values[0, 0])

    def test_live_conditioning_varies_grid(self):
        model = init_model(TINY, seed=3)
        sweep = grid_sweep(model, make_noise(0.05, 0.5, 22050, seed=1), steps=5, metric="rms")
        assert float(np.nanmax(sweep.values) - np.nanmin(sweep.values)) > 0.0

    def test_reproducible_bit_exact(self):
        model = init_model(TINY, seed=4)
        source = make_noise(0.05, 0.5, 22050, seed=2)
        a = grid_sweep(model, source, steps=4, metric="rms")
        b = grid_sweep(model, source, steps=4, metric="rms")
        np.testing.assert_array_equal(a.values, b.values)

    def test_t60_metric_records_per_cell_failures(self):
        sweep = grid_sweep(identity_model(), make_impulse(400, 1.0, 22050), steps=3, metric="t60")
        assert all("fit_failure" in s for row in sweep.status for s in row)
        assert np.all(np.isnan(sweep.values))

    def test_csv_format(self, tmp_path):
        sweep = grid_sweep(identity_model(), make_noise(0.05, 0.5, 22050, seed=1), steps=3)
        path = tmp_path / "sweep.csv"
        with open(path, "w") as fh:
            sweep.write_csv(fh)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "c0,c1,metric,value,status"
        assert len(lines) == 10
        first = lines[1].split(",")
        assert float(first[0]) == -5.0 and float(first[1]) == -5.0
        assert first[2] == "rms" and first[4] == "ok"

    def test_rejects_degenerate_lattice(self):
        with pytest.raises(ValueError, match="steps"):
            grid_sweep(identity_model(), make_noise(0.05, 0.5, 22050, seed=1), steps=1)
        with pytest.raises(ValueError, match="metric"):
            grid_sweep(identity_model(), make_noise(0.05, 0.5, 22050, seed=1), metric="thd")


class TestDecayConsistency:
    def test_identity_model_always_fails_fit(self):
        results = decay_consistency(identity_model(), [0.25, 0.5, 1.0], ir_length=400)
        assert len(results) == 3
        assert all(r.t60 is None and "15 dB" in r.error for r in results)

    def test_linear_system_scale_free_edc(self):
        results = decay_consistency(identity_model(), [0.1, 1.0], ir_length=200)
        np.testing.assert_array_equal(results[0].curve.levels_db, results[1].curve.levels_db)

    def test_report_csvs(self, tmp_path):
        results = decay_consistency(identity_model(), [0.5, 1.0], ir_length=100)
        curves = tmp_path / "curves.csv"
        summary = tmp_path / "summary.csv"
        write_decay_report(curves, summary, results)
        curve_lines = curves.read_text().strip().split("\n")
        assert curve_lines[0] == "level,time_s,level_db"
        assert len(curve_lines) == 1 + 2 * 100
        summary_lines = summary.read_text().strip().split("\n")
        assert summary_lines[0] == "level,t60_s,fit,status"
        assert all(line.endswith("fit_failure") for line in summary_lines[1:])

    def test_rejects_bad_levels(self):
        with pytest.raises(ValueError, match="levels"):
            decay_consistency(identity_model(), [], ir_length=100)
        with pytest.raises(ValueError, match="levels"):
            decay_consistency(identity_model(), [0.0], ir_length=100)


class TestRms:
    def test_known_value(self):
        buf = AudioBuffer(np.full(1000, 0.5, dtype=np.float32), 22050)
        assert rms_db(buf) == pytest.approx(20 * math.log10(0.5), rel=1e-6)

    def test_silence(self):
        assert rms_db(AudioBuffer(np.zeros(10, dtype=np.float32), 22050)) == float("-inf")
