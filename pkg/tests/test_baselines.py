import math

import numpy as np
import pytest

from fdrelay.baselines import (ResidualSiModel, conventional_sic, equal_power, relay_only, run_scheme,
                               source_only)
from fdrelay.channel import ChannelSet, draw_channels
from fdrelay.dual_solver import joint_optimize
from fdrelay.relay_model import rate_density_reformulated, relay_power_density, total_rate


def _rate(alloc, ch, cfg):
    return total_rate(alloc, ch, cfg).rate_bps_hz


def _flat(n, sd=1e-5, sr=1e-4, rd=1e-4):
    return ChannelSet(np.full(n, sd + 0j), np.full(n, sr + 0j), np.full(n, rd + 0j))


class TestEqualPower:
    def test_budgets_exact(self, small_config, small_channels):
        a = equal_power(small_channels, small_config)
        df = small_config.delta_f
        assert np.sum(a.p) * df == pytest.approx(small_config.source_budget_p, rel=1e-12)
        q = np.sum(relay_power_density(a.p, a.xi_bar, small_channels, small_config.noise_psd_n0)) * df
        assert q == pytest.approx(small_config.relay_budget_q, rel=1e-12)

    def test_relay_off(self, small_config, small_channels):
        a = equal_power(small_channels, small_config.with_(relay_budget_q=0.0))
        assert np.all(a.xi_bar == 0)

    def test_flat_channels_uniform(self, small_config):
        a = equal_power(_flat(16), small_config)
        assert np.ptp(a.p) == 0 and np.ptp(a.xi_bar) == 0


class TestSourceOnly:
    def test_relay_off_is_water_filling(self, small_config, small_channels):
        cfg = small_config.with_(relay_budget_q=0.0)
        a = source_only(small_channels, cfg)
        gain = np.abs(small_channels.h_sd) ** 2 / cfg.noise_psd_n0
        # water level from the KKT condition on the active set
        total = cfg.source_budget_p / cfg.delta_f
        inv = np.sort(1 / gain)
        for m in range(len(inv), 0, -1):
            level = (total + inv[:m].sum()) / m
            if level > inv[m - 1]:
                break
        p_ref = np.maximum(0.0, level - 1 / gain)
        np.testing.assert_allclose(a.p, p_ref, rtol=1e-8, atol=1e-8 * p_ref.max())

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_not_below_equal(self, small_config, seed):
        ch = draw_channels(small_config, np.random.default_rng(seed))
        assert _rate(source_only(ch, small_config), ch, small_config) >= \
            _rate(equal_power(ch, small_config), ch, small_config) - 1e-9

    def test_feasible(self, small_config, small_channels):
        for refine in (False, True):
            a = source_only(small_channels, small_config, refine_xi=refine)
            df = small_config.delta_f
            q = np.sum(relay_power_density(a.p, a.xi_bar, small_channels, small_config.noise_psd_n0)) * df
            assert np.sum(a.p) * df <= small_config.source_budget_p * (1 + 1e-9)
            assert q <= small_config.relay_budget_q * (1 + 1e-9)


class TestRelayOnly:
    def test_single_bin_grid(self, small_config):
        cfg = small_config.with_(num_subchannels=1)
        for ch in (_flat(1), _flat(1, sd=3e-5, sr=2e-5, rd=5e-6), _flat(1, sd=0.0)):
            a = relay_only(ch, cfg)
            p = cfg.source_budget_p / cfg.bandwidth_w
            g = np.abs(ch.h_sr[0]) ** 2
            xmax = math.sqrt(cfg.relay_budget_q / (cfg.delta_f * (g * p + cfg.noise_psd_n0)))
            xs = np.linspace(0, xmax, 200001)
            r = rate_density_reformulated(np.full_like(xs, p), xs, ChannelSet(*(np.repeat(h, xs.size) for h in
                                                                                 (ch.h_sd, ch.h_sr, ch.h_rd))),
                                          cfg.noise_psd_n0)
            got = rate_density_reformulated(a.p, a.xi_bar, ch, cfg.noise_psd_n0)[0]
            assert got >= r.max() - 1e-10

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_not_below_equal(self, small_config, seed):
        ch = draw_channels(small_config, np.random.default_rng(seed))
        assert _rate(relay_only(ch, small_config), ch, small_config) >= \
            _rate(equal_power(ch, small_config), ch, small_config) - 1e-12


class TestConventional:
    def test_zero_alpha_equals_joint(self, small_config, small_channels):
        design = joint_optimize(small_channels, small_config)
        rep = conventional_sic(small_channels, small_config, zeta=1e9, alpha=0.0, design=design)
        assert rep.rate_bps_hz == pytest.approx(design.report.rate_bps_hz, rel=1e-12)

    def test_perfect_cancellation_limit(self, small_config, small_channels):
        design = joint_optimize(small_channels, small_config)
        rep = conventional_sic(small_channels, small_config, zeta=1e300, alpha=0.5, design=design)
        assert rep.rate_bps_hz == pytest.approx(design.report.rate_bps_hz, rel=1e-12)

    def test_residual_hurts(self, small_config, small_channels):
        design = joint_optimize(small_channels, small_config)
        rates = [conventional_sic(small_channels, small_config, zeta=1e9, alpha=a, design=design).rate_bps_hz
                 for a in (0.0, 0.01, 0.1, 1.0)]
        assert all(b < a for a, b in zip(rates, rates[1:]))

    def test_rescale_respects_budget(self, small_config, small_channels):
        design = joint_optimize(small_channels, small_config)
        rep = conventional_sic(small_channels, small_config, zeta=1e6, alpha=1.0, design=design, rescale=True)
        assert rep.relay_power_used <= small_config.relay_budget_q * (1 + 1e-12)

    def test_residual_model(self, small_config):
        m = ResidualSiModel.from_config(small_config, zeta=1e9, alpha=0.5)
        assert m.si_psd == pytest.approx(small_config.relay_budget_q * 0.25 / (small_config.bandwidth_w * 1e9))
        with pytest.raises(ValueError):
            ResidualSiModel.from_config(small_config, zeta=0.0)


def test_run_scheme(small_config, small_channels):
    for name in ("equal", "source_only", "relay_only"):
        assert run_scheme(name, small_channels, small_config).rate_bps_hz > 0
    with pytest.raises(ValueError):
        run_scheme("nope", small_channels, small_config)
