import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bicilab.ace import PatientMap, ace_encode
from bicilab.corpus import speech_shaped_noise, synthetic_speech
from bicilab.dsp import SampleBuffer
from bicilab.scene import (
    AZIMUTH_GRID,
    BrirRenderer,
    SceneError,
    SceneSpec,
    build_scene,
    ear_snrs,
    fractional_delay,
    mix_at_snr,
    render_brir,
    render_parametric,
    scene_rngs,
    draw_snr,
)

RATE = 16000


def loop_convolve(x, h):
    y = np.zeros(len(x))
    for n in range(len(x)):
        for k in range(len(h)):
            if 0 <= n - k < len(x):
                y[n] += h[k] * x[n - k]
    return y


def phase_delay_samples(ref, delayed, freq):
    """Delay of ``delayed`` w.r.t. ``ref`` from the phase of a pure tone."""
    n = np.arange(len(ref))
    basis = np.exp(-2j * np.pi * freq * n / RATE)
    ph = np.angle(np.sum(ref * basis)) - np.angle(np.sum(delayed * basis))
    ph = (ph + np.pi) % (2 * np.pi) - np.pi
    return ph * RATE / (2 * np.pi * freq)


@pytest.fixture
def speech():
    return synthetic_speech(np.random.default_rng(0), 0.5)


@pytest.fixture
def noise():
    return speech_shaped_noise(np.random.default_rng(1), 0.5)


class TestParametric:
    def test_front_is_identity(self, speech):
        left, right = render_parametric(speech, 0)
        np.testing.assert_array_equal(left, speech.mono)
        np.testing.assert_array_equal(right, speech.mono)

    def test_itd_at_90(self):
        freq = 250.0  # integer number of cycles in the analysis span below
        x = np.sin(2 * np.pi * freq * np.arange(RATE) / RATE)
        left, right = render_parametric(SampleBuffer(x, RATE), 90)
        core = slice(1000, 1000 + 64 * 200)
        lag = phase_delay_samples(right[core], left[core], freq)
        expected = (0.0875 / 343) * (math.pi / 2 + 1) * RATE
        assert expected == pytest.approx(10.493, abs=1e-3)
        assert lag == pytest.approx(expected, abs=0.01)

    def test_ild_at_90(self):
        x = np.sin(2 * np.pi * 250 * np.arange(RATE) / RATE)
        left, right = render_parametric(SampleBuffer(x, RATE), 90)
        core = slice(1000, 15000)
        ild = 10 * np.log10(np.mean(right[core] ** 2) / np.mean(left[core] ** 2))
        assert ild == pytest.approx(6.0, abs=0.01)

    @pytest.mark.parametrize("az", [5, 37.5, 55, 90])
    def test_mirror_symmetry(self, speech, az):
        l1, r1 = render_parametric(speech, az)
        l2, r2 = render_parametric(speech, -az)
        np.testing.assert_array_equal(l1, r2)
        np.testing.assert_array_equal(r1, l2)

    def test_out_of_range(self, speech):
        with pytest.raises(SceneError):
            render_parametric(speech, 95)

    def test_integer_delay_exact(self):
        x = np.arange(10, dtype=float)
        np.testing.assert_array_equal(fractional_delay(x, 3.0), [0, 0, 0, 0, 1, 2, 3, 4, 5, 6])


class TestBrir:
    def test_unit_impulse(self, speech):
        brir = SampleBuffer(np.array([[1.0], [1.0]]), RATE)
        left, right = render_brir(speech, brir)
        np.testing.assert_array_equal(left, speech.mono)
        np.testing.assert_array_equal(right, speech.mono)

    def test_one_sample_delay_right(self, speech):
        brir = SampleBuffer(np.array([[1.0, 0.0], [0.0, 1.0]]), RATE)
        left, right = render_brir(speech, brir)
        np.testing.assert_array_equal(right[1:], left[:-1])

    def test_random_brir_matches_loop(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(100)
        h = rng.standard_normal((2, 16))
        left, right = render_brir(SampleBuffer(x, RATE), SampleBuffer(h, RATE))
        np.testing.assert_allclose(left, loop_convolve(x, h[0]), atol=1e-12)
        np.testing.assert_allclose(right, loop_convolve(x, h[1]), atol=1e-12)

    def test_rate_mismatch(self, speech):
        with pytest.raises(SceneError):
            render_brir(speech, SampleBuffer(np.ones((2, 4)), 44100))


class TestMix:
    def test_zero_db_symmetric(self, speech, noise):
        t = (speech.mono, speech.mono)
        n = (noise.mono, noise.mono)
        pair = mix_at_snr(t, n, 0.0)
        rms = lambda a: np.sqrt(np.mean(a**2))
        assert rms(pair.noise_left) == pytest.approx(rms(speech.mono), rel=1e-12)
        np.testing.assert_array_equal(pair.clean_left, speech.mono)

    def test_plus_10(self, speech, noise):
        pair = mix_at_snr((speech.mono, speech.mono), (noise.mono, noise.mono), 10.0)
        ratio = np.mean(speech.mono**2) / np.mean(pair.noise_left**2)
        assert ratio == pytest.approx(10.0, rel=1e-12)

    def test_asymmetric_55(self, speech, noise):
        tgt = render_parametric(speech, 0)
        nse = render_parametric(noise, 55)
        pair = mix_at_snr(tgt, nse, 2.0)
        snr_l, snr_r = ear_snrs((pair.clean_left, pair.clean_right), (pair.noise_left, pair.noise_right))
        # noise at +55 deg: left ear is shadowed and is the better ear
        assert snr_l == pytest.approx(2.0, abs=1e-9)
        assert snr_r == pytest.approx(2.0 - 6 * math.sin(math.radians(55)), abs=0.1)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-5, 10), st.sampled_from([-90, -55, 0, 20, 90]))
    def test_better_ear_exact(self, snr, az):
        rng = np.random.default_rng(11)
        s = synthetic_speech(rng, 0.25)
        n = speech_shaped_noise(rng, 0.25)
        pair = mix_at_snr(render_parametric(s, 0), render_parametric(n, az), snr)
        snrs = ear_snrs((pair.clean_left, pair.clean_right), (pair.noise_left, pair.noise_right))
        assert abs(max(snrs) - snr) < 1e-9

    def test_mixing_linearity(self, speech, noise):
        pair = mix_at_snr(render_parametric(speech, 0), render_parametric(noise, 30), -3.0)
        np.testing.assert_allclose(pair.left - pair.noise_left, pair.clean_left, rtol=0, atol=1e-15)
        np.testing.assert_allclose(pair.right - pair.noise_right, pair.clean_right, rtol=0, atol=1e-15)

    def test_infinite_snr(self, speech, noise):
        pair = mix_at_snr((speech.mono, speech.mono), (noise.mono, noise.mono), math.inf)
        np.testing.assert_array_equal(pair.left, pair.clean_left)

    def test_pads_shorter(self, speech, noise):
        short = np.random.default_rng(2).standard_normal(100)
        pair = mix_at_snr((short, short), (noise.mono, noise.mono), 0)
        assert len(pair.left) == len(noise)

    def test_zero_noise(self, speech):
        with pytest.raises(SceneError):
            mix_at_snr((speech.mono, speech.mono), (np.zeros(10), np.zeros(10)), 0)


class TestBuildScene:
    pmap = PatientMap.default()

    def test_front_symmetric(self, speech, noise):
        pair, (cl, cr) = build_scene(SceneSpec(speech, noise, 0, 0, 0.0), self.pmap)
        np.testing.assert_array_equal(pair.left, pair.right)
        np.testing.assert_array_equal(cl.amplitudes, cr.amplitudes)

    def test_clean_references_are_ace_of_clean(self, speech, noise):
        pair, (cl, cr) = build_scene(SceneSpec(speech, noise, 0, 40, 5.0), self.pmap)
        ref, _ = ace_encode(SampleBuffer(pair.clean_right, RATE), self.pmap)
        np.testing.assert_array_equal(cr.amplitudes, ref.amplitudes)
        assert cl.side == "left" and cr.side == "right"

    def test_noiseless_override(self, speech, noise):
        pair, _ = build_scene(SceneSpec(speech, noise, 0, 30, math.inf), self.pmap)
        np.testing.assert_array_equal(pair.left, pair.clean_left)
        np.testing.assert_array_equal(pair.right, pair.clean_right)

    def test_brir_renderer(self, speech, noise):
        brir = SampleBuffer(np.array([[1.0, 0.0], [0.0, 1.0]]), RATE)
        pair, _ = build_scene(SceneSpec(speech, noise, renderer=BrirRenderer(brir, brir)), self.pmap)
        np.testing.assert_array_equal(pair.clean_right[1:], pair.clean_left[:-1])

    def test_seeded_batch_reproducible(self):
        def batch(seed):
            out = []
            for rng in scene_rngs(seed, 16):
                spec = SceneSpec(synthetic_speech(rng, 0.1), speech_shaped_noise(rng, 0.1),
                                 0, float(rng.choice(AZIMUTH_GRID)), draw_snr(rng))
                out.append(build_scene(spec, self.pmap)[0].left)
            return np.stack(out)

        a, b = batch(9), batch(9)
        assert a.tobytes() == b.tobytes()
        assert not np.array_equal(a, batch(10))

    def test_snr_draw_range(self):
        rng = np.random.default_rng(0)
        draws = [draw_snr(rng) for _ in range(2000)]
        assert -5 <= min(draws) and max(draws) <= 10

    def test_azimuth_grid(self):
        assert len(AZIMUTH_GRID) == 37 and AZIMUTH_GRID[0] == -90 and AZIMUTH_GRID[-1] == 90

    def test_spec_validation(self, speech, noise):
        with pytest.raises(SceneError):
            SceneSpec(speech, noise, noise_azimuth=120)
        with pytest.raises(SceneError):
            SceneSpec(SampleBuffer(np.zeros(10), 8000), noise)
