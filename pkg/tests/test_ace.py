import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bicilab.ace import (
    AceError,
    BandTable,
    Electrodogram,
    LgfParams,
    PatientMap,
    ace_analyse,
    ace_encode,
    band_envelopes,
    egf_dumps,
    egf_loads,
    lgf_compress,
    map_to_current,
    read_egf,
    select_n_of_m,
    write_egf,
)
from bicilab.dsp import FrameSpec, SampleBuffer, frame_signal

RATE = 16000


def tone(freq, seconds=1.0, amp=0.1):
    t = np.arange(int(RATE * seconds)) / RATE
    return amp * np.sin(2 * np.pi * freq * t)


def hann_frames(x):
    return frame_signal(x, FrameSpec(128, 16, "hann"))


class TestBandTable:
    def test_22_channel_layout(self):
        table = BandTable.for_channels(22)
        ranges = table.bin_ranges
        assert ranges[0] == (2, 3)
        assert ranges[9] == (11, 12)
        assert ranges[10] == (12, 14)
        assert ranges[-1] == (52, 60)
        assert sum(table.widths) == 58

    def test_20_channel_span_matches_22(self):
        assert BandTable.for_channels(20).bin_ranges[-1][1] == BandTable.for_channels(22).bin_ranges[-1][1]

    def test_unsupported_m(self):
        with pytest.raises(AceError, match=r"\[20, 22\]"):
            BandTable.for_channels(16)

    def test_uniform_table(self):
        t = BandTable.uniform(4)
        assert t.m_channels == 4 and sum(t.widths) == 58


class TestBandEnvelopes:
    def test_silence(self):
        env = band_envelopes(hann_frames(np.zeros(1000)), 22)
        assert env.shape[0] == 22
        assert np.all(env == 0)

    def test_1khz_tone_lands_in_its_band(self):
        env = band_envelopes(hann_frames(tone(1000)), 22)
        # 1 kHz = bin 8 of a 128-point FFT at 16 kHz; single-bin bands start at bin 2.
        assert int(np.argmax(env.mean(axis=1))) == 8 - 2
        assert BandTable.for_channels(22).band_of_frequency(1000) == 6

    def test_unit_tone_gives_unit_envelope(self):
        env = band_envelopes(hann_frames(tone(1000, amp=1.0)), 22)
        np.testing.assert_allclose(env[6], 1.0, rtol=1e-9)

    def test_white_noise_positive(self):
        x = np.random.default_rng(0).standard_normal(128)
        env = band_envelopes(hann_frames(x), 22)
        assert np.all(env > 0)

    def test_bad_m(self):
        with pytest.raises(AceError):
            band_envelopes(np.zeros((3, 128)), 12)

    def test_gain_scaling(self):
        x = np.random.default_rng(1).standard_normal(2000)
        e1 = band_envelopes(hann_frames(x), 22)
        e2 = band_envelopes(hann_frames(3.5 * x), 22)
        np.testing.assert_allclose(e2, 3.5 * e1, rtol=1e-12)


class TestSelectNofM:
    def test_ordering(self):
        np.testing.assert_array_equal(select_n_of_m([0.9, 0.5, 0.3, 0.1], 2), [1, 1, 0, 0])

    def test_all_zero(self):
        np.testing.assert_array_equal(select_n_of_m(np.zeros(5), 3), np.zeros(5))

    def test_tie_goes_to_lowest_index(self):
        np.testing.assert_array_equal(select_n_of_m([0.5, 0.5, 0.2], 1), [1, 0, 0])

    def test_fewer_positive_than_n(self):
        np.testing.assert_array_equal(select_n_of_m([0.0, 0.3, 0.0, 0.1], 3), [0, 1, 0, 1])

    def test_matrix_matches_columnwise(self):
        e = np.random.default_rng(2).random((22, 30))
        m = select_n_of_m(e, 8)
        for t in range(30):
            np.testing.assert_array_equal(m[:, t], select_n_of_m(e[:, t], 8))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.integers(0, 30))
    def test_selects_largest(self, values, n):
        e = np.array(values)
        n = min(n, len(e))
        mask = select_n_of_m(e, n)
        assert mask.sum() == min(n, np.count_nonzero(e > 0))
        if mask.sum() and (mask == 0).any():
            assert e[mask == 1].min() >= e[mask == 0].max()


class TestLgf:
    def test_boundaries(self):
        p = LgfParams()
        assert lgf_compress(p.base_level, p) == 0.0
        assert lgf_compress(p.saturation_level, p) == 1.0
        assert lgf_compress(0.0, p) == 0.0
        assert lgf_compress(5.0, p) == 1.0

    def test_midpoint(self):
        p = LgfParams(rho=416.2)
        e = p.base_level + 0.5 * (p.saturation_level - p.base_level)
        expected = math.log(1 + 208.1) / math.log(417.2)
        assert lgf_compress(e, p) == pytest.approx(expected, abs=1e-12)
        assert lgf_compress(e, p) == pytest.approx(0.885515, abs=1e-6)

    def test_monotone(self):
        p = LgfParams()
        e = np.linspace(p.base_level, p.saturation_level, 500)[1:-1]
        assert np.all(np.diff(lgf_compress(e, p)) > 0)

    @pytest.mark.parametrize("kw", [dict(base_level=0.0), dict(saturation_level=0.001), dict(rho=0)])
    def test_invalid_params(self, kw):
        with pytest.raises(AceError):
            LgfParams(**kw)

    def test_negative_envelope(self):
        with pytest.raises(AceError):
            lgf_compress(-0.1)


class TestMapToCurrent:
    pmap = PatientMap.default(m_channels=4, n_select=2)

    def test_levels(self):
        frame = map_to_current([0.0, 1.0, 0.5, 0.7], [1, 1, 1, 0], PatientMap.default(4, 3))
        np.testing.assert_array_equal(frame.levels, [100, 200, 150, 0])

    def test_active_set_base_to_apex(self):
        frame = map_to_current([0.2, 0.0, 0.9, 0.4], [1, 0, 1, 0], self.pmap)
        assert frame.active_set == (2, 0)

    def test_channel_mismatch(self):
        with pytest.raises(AceError):
            map_to_current(np.zeros(5), np.zeros(5), self.pmap)


class TestPatientMap:
    def test_comfort_below_threshold(self):
        with pytest.raises(AceError):
            PatientMap(np.array([100.0]), np.array([90.0]), 1)

    def test_n_bounds(self):
        with pytest.raises(AceError):
            PatientMap.default(4, 5)


class TestAceEncode:
    pmap = PatientMap.default()

    def test_silence(self):
        egram, currents = ace_encode(SampleBuffer(np.zeros(4 * RATE), RATE), self.pmap)
        assert egram.amplitudes.shape == (22, 4000)
        assert np.all(egram.amplitudes == 0)
        assert all(not c.active_set for c in currents)

    def test_tone_selection_matches_independent_chain(self):
        x = tone(1000, amp=0.1)
        egram, currents = ace_encode(SampleBuffer(x, RATE), self.pmap)
        # Independent oracle: frame with the same causal padding, envelopes, selection.
        padded = np.concatenate([np.zeros(112), x])
        env = band_envelopes(frame_signal(padded, FrameSpec(128, 16, "hann")), 22)
        mask = select_n_of_m(env, 8)
        band = 6
        voiced = range(8, egram.frames)  # first frames still hold the zero padding
        for t in voiced:
            assert len(currents[t].active_set) == 8
            assert np.count_nonzero(currents[t].levels) == 8
            np.testing.assert_array_equal(currents[t].levels > 0, mask[:, t] > 0)
            assert band in currents[t].active_set
            assert egram.amplitudes[band, t] > 0
            assert set(np.flatnonzero(egram.amplitudes[:, t])) <= set(np.flatnonzero(mask[:, t]))

    def test_exactly_n_for_broadband_input(self):
        x = 0.3 * np.random.default_rng(3).standard_normal(RATE // 4)
        egram, _ = ace_encode(SampleBuffer(x, RATE), self.pmap)
        counts = np.count_nonzero(egram.amplitudes[:, 8:], axis=0)
        assert np.all(counts == 8)

    def test_deterministic(self):
        x = np.random.default_rng(4).standard_normal(RATE) * 0.1
        a, _ = ace_encode(SampleBuffer(x, RATE), self.pmap)
        b, _ = ace_encode(SampleBuffer(x, RATE), self.pmap)
        assert a.amplitudes.tobytes() == b.amplitudes.tobytes()

    def test_csr_must_divide_rate(self):
        with pytest.raises(AceError, match="CSR"):
            ace_encode(SampleBuffer(np.zeros(RATE), RATE), PatientMap.default(csr=900))

    def test_rate_check(self):
        with pytest.raises(AceError):
            ace_encode(SampleBuffer(np.zeros(100), 8000), self.pmap)

    def test_current_consistency(self):
        x = 0.05 * np.random.default_rng(5).standard_normal(RATE // 10)
        res = ace_analyse(SampleBuffer(x, RATE), self.pmap)
        _, currents = ace_encode(SampleBuffer(x, RATE), self.pmap)
        for t, frame in enumerate(currents):
            np.testing.assert_array_equal(frame.levels > 0, res.mask[:, t] > 0)
            nz = res.electrodogram.amplitudes[:, t] > 0
            assert np.all(res.mask[nz, t] == 1)

    def test_gain_invariant_masks(self):
        x = 0.05 * np.random.default_rng(6).standard_normal(RATE // 4)
        a = ace_analyse(SampleBuffer(x, RATE), self.pmap)
        b = ace_analyse(SampleBuffer(4.0 * x, RATE), self.pmap)
        np.testing.assert_array_equal(a.mask, b.mask)
        np.testing.assert_allclose(b.envelopes, 4.0 * a.envelopes, rtol=1e-12)

    def test_custom_table(self):
        pmap = PatientMap.default(m_channels=4, n_select=2, csr=4000)
        res = ace_analyse(SampleBuffer(tone(1000), RATE), pmap, table=BandTable.uniform(4))
        assert res.electrodogram.amplitudes.shape == (4, 4000)


class TestEgf:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        amps = rng.random((22, 40)) * (rng.random((22, 40)) < 0.4)
        egram = Electrodogram(amps, 1000, "left")
        write_egf(tmp_path / "a.egf", egram)
        back = read_egf(tmp_path / "a.egf")
        assert back.side == "left" and back.csr == 1000
        np.testing.assert_allclose(back.amplitudes, amps, rtol=5e-9, atol=0)
        write_egf(tmp_path / "b.egf", back)
        assert (tmp_path / "a.egf").read_bytes() == (tmp_path / "b.egf").read_bytes()
        np.testing.assert_array_equal(read_egf(tmp_path / "b.egf").amplitudes, back.amplitudes)

    def test_header(self):
        text = egf_dumps(Electrodogram(np.zeros((3, 2)), 1000, "right"))
        assert text.splitlines()[0] == "EGF1 m=3 csr=1000 side=r frames=2"
        assert text.splitlines()[1] == "0,0,0"

    def test_bad_header(self):
        with pytest.raises(AceError):
            egf_loads("EGF2 m=1\n")

    def test_frame_count_mismatch(self):
        with pytest.raises(AceError):
            egf_loads("EGF1 m=2 csr=1000 side=m frames=3\n0,0\n")

    def test_out_of_range_rejected(self):
        with pytest.raises(AceError):
            Electrodogram(np.full((2, 2), 1.5), 1000)
