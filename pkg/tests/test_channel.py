import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdrelay.channel import (DESK_PROFILE, PAPER_PROFILE, SystemConfig, TapVector, build_grid,
                             config_from_mapping, config_to_mapping, dbm_per_hz_to_w_per_hz, dbm_to_w,
                             draw_channels, load_config, response_on_grid, sample_taps, w_to_dbm)


class TestUnits:
    def test_noise_floor(self):
        assert dbm_per_hz_to_w_per_hz(-145.0) == pytest.approx(10 ** -17.5, rel=1e-12)
        assert 10 ** -17.5 == pytest.approx(3.1623e-18, rel=1e-4)

    def test_budgets(self):
        assert dbm_to_w(30.0) == pytest.approx(1.0)
        assert dbm_to_w(0.0) == pytest.approx(1e-3)
        assert w_to_dbm(1e-3) == pytest.approx(0.0)

    def test_array_input(self):
        np.testing.assert_allclose(dbm_to_w(np.array([0.0, 30.0])), [1e-3, 1.0])


class TestConfig:
    def test_rejects_alpha_one(self):
        with pytest.raises(ValueError):
            SystemConfig(loopback_alpha=1.0)

    @pytest.mark.parametrize("field,value", [("bandwidth_w", 0.0), ("num_subchannels", 0),
                                             ("noise_psd_n0", 0.0), ("source_budget_p", -1.0),
                                             ("loopback_tau", -1e-9)])
    def test_rejects_bad_values(self, field, value):
        with pytest.raises(ValueError):
            SystemConfig(**{field: value})

    def test_profiles(self):
        assert PAPER_PROFILE.num_subchannels == 1024
        assert PAPER_PROFILE.delta_f == pytest.approx(10e3)
        assert DESK_PROFILE.num_subchannels == 256
        assert PAPER_PROFILE.effective_tap_spacing == pytest.approx(1 / 10.24e6)

    def test_mapping_round_trip(self):
        cfg = PAPER_PROFILE.with_(loopback_alpha=0.3, seed=9, tap_spacing=2e-7)
        back, extra = config_from_mapping(config_to_mapping(cfg))
        assert extra == {}
        for name in ("bandwidth_w", "noise_psd_n0", "source_budget_p", "loopback_alpha", "tap_spacing"):
            assert getattr(back, name) == pytest.approx(getattr(cfg, name), rel=1e-12)
        assert back.seed == 9

    def test_load_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# example\nnum_subchannels = 8\nsource_power_dbm = 20  # budget\n"
                        "alpha = 0.5\ntrials = 3\n")
        cfg, extra = load_config(path)
        assert cfg.num_subchannels == 8
        assert cfg.source_budget_p == pytest.approx(0.1)
        assert cfg.loopback_alpha == 0.5
        assert extra == {"trials": "3"}


class TestGrid:
    def test_default_spacing(self):
        assert build_grid(PAPER_PROFILE).delta_f == pytest.approx(10e3)

    def test_single_bin(self):
        g = build_grid(SystemConfig(bandwidth_w=1.0, num_subchannels=1))
        np.testing.assert_allclose(g.centers, [0.0])

    def test_offset_centers(self):
        g = build_grid(SystemConfig(bandwidth_w=8.0, num_subchannels=4, center_freq=100.0))
        np.testing.assert_allclose(g.centers, [97.0, 99.0, 101.0, 103.0])

    @given(st.floats(1.0, 1e9), st.integers(1, 4096), st.floats(-1e9, 1e9))
    def test_partition(self, w, n, fc):
        g = build_grid(SystemConfig(bandwidth_w=w, num_subchannels=n, center_freq=fc))
        assert len(g) == n
        assert g.delta_f * n == pytest.approx(w, rel=1e-9)
        assert g.centers[0] == pytest.approx(fc - w / 2 + g.delta_f / 2, rel=1e-9, abs=1e-9 * w)
        assert g.centers[-1] == pytest.approx(fc + w / 2 - g.delta_f / 2, rel=1e-9, abs=1e-9 * w)


class TestTaps:
    def test_variance(self):
        t = sample_taps(10**6, -100.0, np.random.default_rng(0))
        assert np.mean(np.abs(t.taps) ** 2) == pytest.approx(1e-10, rel=0.01)

    def test_circular(self):
        t = sample_taps(10**5, 0.0, np.random.default_rng(1))
        assert np.var(t.taps.real) == pytest.approx(0.5, rel=0.03)
        assert abs(np.mean(t.taps.real * t.taps.imag)) < 0.01

    def test_zero_variance(self):
        t = sample_taps(1, -math.inf, np.random.default_rng(0))
        assert t.taps[0] == 0

    def test_deterministic(self):
        a = sample_taps(8, -100.0, np.random.default_rng(5))
        b = sample_taps(8, -100.0, np.random.default_rng(5))
        np.testing.assert_array_equal(a.taps, b.taps)

    def test_invalid(self):
        with pytest.raises(ValueError):
            sample_taps(0, 0.0, np.random.default_rng(0))
        with pytest.raises(ValueError):
            TapVector(np.array([np.nan]), 1.0)


class TestResponse:
    def test_flat(self, grid16):
        h = response_on_grid(TapVector(np.array([0.3 - 0.2j]), 1e-7), grid16)
        np.testing.assert_allclose(h, 0.3 - 0.2j)

    def test_two_tap_comb(self):
        g = build_grid(SystemConfig(bandwidth_w=8.0, num_subchannels=8, center_freq=0.0))
        ts = 0.5
        h = response_on_grid(TapVector(np.array([1.0, 1.0]), ts), g)
        np.testing.assert_allclose(h, 1 + np.exp(-2j * np.pi * g.centers * ts), atol=1e-14)
        # f*ts integer at f = +-2 Hz
        k = np.isclose(np.mod(g.centers * ts, 1.0), 0.0)
        np.testing.assert_allclose(np.abs(h[k]), 2.0)

    def test_matches_double_loop(self, rng, grid16):
        taps = sample_taps(8, 0.0, rng, tap_spacing=1 / 10.24e6)
        h = response_on_grid(taps, grid16)
        ref = np.zeros(len(grid16), dtype=complex)
        for k, f in enumerate(grid16.centers):
            for m, t in enumerate(taps.taps):
                ref[k] += t * np.exp(-2j * np.pi * f * m * taps.tap_spacing)
        np.testing.assert_allclose(h, ref, rtol=1e-12)

    @settings(max_examples=25)
    @given(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False), st.integers(0, 2**32 - 1))
    def test_linear(self, a, seed):
        r = np.random.default_rng(seed)
        g = build_grid(SystemConfig(bandwidth_w=1e6, num_subchannels=32))
        t1, t2 = sample_taps(5, 0.0, r, 1e-6), sample_taps(5, 0.0, r, 1e-6)
        lhs = response_on_grid(TapVector(a * t1.taps + t2.taps, 1e-6), g)
        rhs = a * response_on_grid(t1, g) + response_on_grid(t2, g)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * (1 + abs(a)))


def test_draw_reproducible():
    cfg = PAPER_PROFILE.with_(num_subchannels=64)
    a = draw_channels(cfg, np.random.default_rng(11))
    b = draw_channels(cfg, np.random.default_rng(11))
    for x, y in zip((a.h_sd, a.h_sr, a.h_rd), (b.h_sd, b.h_sr, b.h_rd)):
        np.testing.assert_array_equal(x, y)
    assert len(a) == 64
