import math

import numpy as np
import pytest

import fdrelay.harness as harness
from fdrelay.channel import PAPER_PROFILE
from fdrelay.cli import main
from fdrelay.harness import (CSV_HEADER, ExperimentSpec, lemma_to_csv, mean_by, read_csv, rows_to_csv,
                             run_experiment, run_rate_vs_alpha, trial_channels, write_csv)
from fdrelay.timesim import LoopCheck

SMALL = PAPER_PROFILE.with_(num_subchannels=16, seed=5)


def _power_spec(**kw):
    args = dict(kind="rate_vs_power", sweep=[0.0, 20.0, 40.0], trials=3, base_config=SMALL)
    args.update(kw)
    return ExperimentSpec(**args)


@pytest.fixture(scope="module")
def power_rows():
    return run_experiment(_power_spec())


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(kind="bogus", sweep=[1.0])
    with pytest.raises(ValueError):
        ExperimentSpec(kind="rate_vs_power", sweep=[])
    with pytest.raises(ValueError):
        ExperimentSpec(kind="rate_vs_power", sweep=[1.0], trials=0)
    with pytest.raises(ValueError):
        run_experiment(_power_spec(schemes=["conventional"]))
    with pytest.raises(ValueError):
        run_rate_vs_alpha(ExperimentSpec(kind="rate_vs_alpha", sweep=[2.0], base_config=SMALL))


def test_channels_shared_and_seeded():
    a, b = trial_channels(SMALL, 1), trial_channels(SMALL, 1)
    np.testing.assert_array_equal(a.h_sd, b.h_sd)
    assert not np.array_equal(trial_channels(SMALL, 2).h_sd, a.h_sd)


def test_deterministic_csv(power_rows):
    again = run_experiment(_power_spec())
    assert rows_to_csv(again) == rows_to_csv(power_rows)


def test_csv_round_trip(power_rows, tmp_path):
    text = rows_to_csv(power_rows)
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    path = write_csv(power_rows, tmp_path / "r.csv")
    back = read_csv(path)
    assert [r.as_tuple() for r in back] == [r.as_tuple() for r in power_rows]


def test_row_order_and_coverage(power_rows):
    assert len(power_rows) == 3 * 4 * 3
    assert [r.sweep_value for r in power_rows] == sorted(r.sweep_value for r in power_rows)


def test_budget_monotone_and_joint_best(power_rows):
    means = mean_by(power_rows)
    for s in ("joint", "equal", "source_only", "relay_only"):
        vals = [means[(s, v)] for v in (0.0, 20.0, 40.0)]
        assert vals == sorted(vals)
    by = {r.key(): r.rate_bps_hz for r in power_rows}
    for (v, s, t), rate in by.items():
        if s != "joint":
            assert by[(v, "joint", t)] >= rate * (1 - 1e-4)


def test_failure_is_flagged_not_fatal(monkeypatch):
    real = harness.run_scheme

    def flaky(name, *a, **k):
        if name == "relay_only":
            raise FloatingPointError("boom, twice")
        return real(name, *a, **k)

    monkeypatch.setattr(harness, "run_scheme", flaky)
    rows = run_experiment(_power_spec(trials=1, sweep=[10.0]))
    bad = [r for r in rows if r.scheme == "relay_only"]
    assert len(bad) == 1 and bad[0].flag.startswith("error:FloatingPointError")
    assert "," not in bad[0].flag and math.isnan(bad[0].rate_bps_hz)
    assert all(not r.flag.startswith("error") for r in rows if r.scheme != "relay_only")
    assert len(rows_to_csv(rows).splitlines()) == len(rows) + 1


def test_alpha_sweep_properties():
    spec = ExperimentSpec(kind="rate_vs_alpha", sweep=[1e-4, 1e-2, 1.0], trials=2, base_config=SMALL,
                          schemes=["joint", "conventional"])
    rows = run_experiment(spec)
    by = {r.key(): r.rate_bps_hz for r in rows}
    for t in range(2):
        j = [by[(v, "joint", t)] for v in spec.sweep]
        assert max(j) - min(j) <= 1e-9 * max(j)
        for z in (90, 120):
            c = [by[(v, f"conventional_zeta{z}", t)] for v in spec.sweep]
            assert c == sorted(c, reverse=True)
        assert by[(1.0, "conventional_zeta120", t)] >= by[(1.0, "conventional_zeta90", t)]
        assert by[(1.0, "joint", t)] > by[(1.0, "conventional_zeta90", t)]


def test_single_solve():
    spec = ExperimentSpec(kind="single_solve", sweep=[0.0], trials=1, base_config=SMALL,
                          schemes=["joint", "equal", "conventional"])
    rows = run_experiment(spec)
    assert [r.scheme for r in rows] == ["joint", "equal", "conventional_zeta90", "conventional_zeta120"]
    assert all(r.sweep_value == pytest.approx(30.0) for r in rows)


def test_lemma_csv():
    text = lemma_to_csv([LoopCheck("f0", 1e-3, 1e-2, 1e-2, 1e-2, 0.5, 10)])
    assert text.splitlines()[1].startswith("f0,")


class TestCli:
    def _cfg(self, tmp_path):
        p = tmp_path / "small.cfg"
        p.write_text("num_subchannels = 16\nseed = 3\n")
        return p

    def test_fig3_plot(self, tmp_path):
        out = tmp_path / "fig3.csv"
        code = main(["fig3", "--config", str(self._cfg(tmp_path)), "--trials", "1", "--sweep", "0.01,1",
                     "--zeta-db", "90", "--out", str(out), "--plot"])
        assert code == 0
        rows = read_csv(out)
        assert {r.scheme for r in rows} == {"joint", "conventional_zeta90"}
        png = out.with_suffix(".png")
        assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_fig2_plot(self, tmp_path):
        out = tmp_path / "fig2.csv"
        assert main(["fig2", "--config", str(self._cfg(tmp_path)), "--trials", "1", "--sweep", "10,30",
                     "--out", str(out), "--plot"]) == 0
        assert out.with_suffix(".png").stat().st_size > 1000

    def test_solve_stdout(self, tmp_path, capsys):
        assert main(["solve", "--config", str(self._cfg(tmp_path)), "--schemes", "equal,relay_only"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == ",".join(CSV_HEADER) and len(lines) == 3

    def test_plot_needs_out(self, tmp_path):
        assert main(["solve", "--config", str(self._cfg(tmp_path)), "--schemes", "equal", "--plot"]) == 2

    def test_verify_small(self, tmp_path):
        cfg = tmp_path / "v.cfg"
        cfg.write_text("num_segments = 64\nnoise_segments = 64\n")
        out = tmp_path / "lemma.csv"
        code = main(["verify-lemma1", "--config", str(cfg), "--out", str(out)])
        assert code in (0, 1)
        assert len(out.read_text().splitlines()) == 11
