import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gapblowup import experiments as ex
from gapblowup import rates

SMALL_SWEEP = ex.ExperimentConfig(
    experiment="sweep", n=(3,), eps_values=(1e-2, 5e-3, 2.5e-3, 1.25e-3), grid=(129, 17), tol_grid=0.05
)


# ---------------------------------------------------------------- fits


def test_fit_exact_power():
    x = np.geomspace(1e-4, 1, 10)
    f = ex.fit_rate(list(zip(x, x**0.5)))
    assert f.slope == pytest.approx(0.5, abs=1e-13)
    assert f.max_residual < 1e-13


def test_fit_six_decades():
    x = np.geomspace(1e-6, 1, 7)
    f = ex.fit_rate(list(zip(x, 3 * x**-0.2929)))
    assert abs(f.slope + 0.2929) <= 1e-12
    assert math.exp(f.intercept) == pytest.approx(3.0, rel=1e-12)


def test_fit_perturbed_power():
    x = np.geomspace(1e-5, 1e-2, 8)
    f = ex.fit_rate(list(zip(x, x**0.5 * (1 + 0.1 * x))))
    assert abs(f.slope - 0.5) < 0.01


def test_fit_errors():
    with pytest.raises(ValueError):
        ex.fit_rate([(1, 1), (2, 2), (3, 3)])
    with pytest.raises(ValueError):
        ex.fit_rate([(1, 1), (2, -2), (3, 3), (4, 4)])


def test_fit_window():
    x = np.geomspace(1e-5, 1, 11)
    y = np.where(x > 0.1, 1.0, x**0.3)
    f = ex.fit_rate(list(zip(x, y)), window=(1e-5, 0.1))
    assert f.slope == pytest.approx(0.3, abs=1e-12)


def test_trimmed_fit_drops_outlying_largest_point():
    x = np.geomspace(1e-5, 1e-2, 6)
    y = x**0.2
    y[-1] *= 1.5
    f = ex.fit_rate_trimmed(list(zip(x, y)))
    assert f.excluded == [pytest.approx(1e-2)]
    assert f.slope == pytest.approx(0.2, abs=1e-12)
    clean = ex.fit_rate_trimmed(list(zip(x, x**0.2 * (1 + 1e-3 * np.sin(np.arange(6))))))
    assert not clean.excluded


@given(st.floats(-2, 2), st.floats(0.1, 10))
def test_fit_recovers_any_power(p, c):
    x = np.geomspace(1e-4, 1, 6)
    f = ex.fit_rate(list(zip(x, c * x**p)))
    assert f.slope == pytest.approx(p, abs=1e-10)


# ---------------------------------------------------------------- config


def test_config_round_trip(tmp_path):
    cfg = ex.ExperimentConfig(experiment="local-gap", n=(3, 4), eps_values=(1e-3, 1e-4), grid=(257, 17), R0=0.7)
    p = tmp_path / "cfg.ini"
    p.write_text(ex.config_to_text(cfg))
    assert ex.load_config(p) == cfg


def test_default_round_trip():
    cfg = ex.ExperimentConfig()
    assert ex.parse_config(ex.config_to_text(cfg)) == cfg
    assert len(cfg.eps_schedule) == 6
    assert cfg.eps_schedule[0] == pytest.approx(1e-2) and cfg.eps_schedule[-1] == pytest.approx(1e-5)
    assert cfg.fine_grid == (1025, 129)


@given(
    st.lists(st.integers(3, 9), min_size=1, max_size=3, unique=True),
    st.lists(st.floats(1e-8, 0.2), min_size=1, max_size=5, unique=True),
    st.integers(8, 2000),
    st.floats(0.01, 0.99),
)
def test_config_round_trip_property(ns, eps, g, r0):
    cfg = ex.ExperimentConfig(
        experiment="sweep", n=tuple(ns), eps_values=tuple(sorted(eps, reverse=True)), grid=(g, g), R0=r0
    )
    assert ex.parse_config(ex.config_to_text(cfg)) == cfg


def test_empty_schedule_rejected():
    with pytest.raises(ex.ConfigError, match="empty"):
        ex.ExperimentConfig(eps_count=0)
    with pytest.raises(ex.ConfigError, match="empty"):
        ex.parse_config("[experiment]\neps_count = 0\n")


def test_schedule_must_decrease():
    with pytest.raises(ex.ConfigError):
        ex.ExperimentConfig(eps_values=(1e-3, 1e-2))


def test_config_errors_carry_line():
    text = "[experiment]\nexperiment = sweep\nbogus = 1\n"
    with pytest.raises(ex.ConfigError, match="line 3"):
        ex.parse_config(text, source="x.ini")
    with pytest.raises(ex.ConfigError, match="line 2"):
        ex.parse_config("[experiment]\ngrid = big\n")
    with pytest.raises(ex.ConfigError, match="section"):
        ex.parse_config("n = 3\n")
    with pytest.raises(ex.ConfigError):
        ex.parse_config("[experiment]\nn = 2\n")


def test_config_keys_case_sensitive_and_comments():
    cfg = ex.parse_config("[experiment]\nR0 = 0.6   ; patch radius\nn = 3, 4\ngrid = 65x17\n")
    assert cfg.R0 == 0.6 and cfg.n == (3, 4) and cfg.grid == (65, 17)


def test_overrides():
    cfg = ex.parse_config("[experiment]\nn = 3\n", n=(4,), threads=None)
    assert cfg.n == (4,)


def test_mode_decay_rejects_k0():
    with pytest.raises(ex.ConfigError):
        ex.ExperimentConfig(experiment="mode-decay", k=(0, 1))


def test_u11_tolerance():
    cfg = ex.ExperimentConfig()
    assert cfg.u11_tolerance(3) == 0.03 and cfg.u11_tolerance(4) == 0.05
    assert cfg.replace(tol_u11_slope=0.01).u11_tolerance(3) == 0.01


def test_dyadic_radii():
    r = ex.dyadic_radii(1e-3, 0.8)
    assert r[0] == pytest.approx(math.sqrt(1e-3))
    assert r[-1] <= 0.4 and 2 * r[-1] > 0.4
    assert len(r) == 4


# ---------------------------------------------------------------- runs and output


@pytest.fixture(scope="module")
def small_sweep():
    return ex.run(SMALL_SWEEP)


def test_sweep_record(small_sweep):
    assert len(small_sweep.points) == 4
    for p in small_sweep.points:
        assert p["converged"]
        assert p["subsolution_margin"] >= -1e-8
        assert p["u11"] >= p["sqrt_eps"]
        assert p["C1"] > 0
        assert p["triangle"] < 0.05
    assert {"u11_n3", "grad_n3"} <= set(small_sweep.fits)
    assert small_sweep.checks["subsolution_n3"]["passed"]
    assert small_sweep.checks["u11_monotone_n3"]["passed"]


def test_emit_results(tmp_path, small_sweep):
    paths = ex.emit_results(small_sweep, tmp_path)
    names = {p.split("/")[-1] for p in paths}
    assert {"results.csv", "summary.json", "config.snapshot", "fit_u11_n3.csv", "fit_grad_n3.csv"} <= names
    rows = (tmp_path / "results.csv").read_text().splitlines()
    assert rows[0] == ",".join(ex.SWEEP_COLUMNS)
    assert len(rows) - 1 == len(SMALL_SWEEP.eps_schedule)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary) >= {"experiment", "passed", "checks", "fits"}
    assert summary["checks"]["u11_slope_n3"]["target"] == pytest.approx(rates.alpha(3) / 2, abs=1e-11)
    assert ex.load_config(tmp_path / "config.snapshot") == SMALL_SWEEP


def test_emit_is_byte_stable(tmp_path, small_sweep):
    again = ex.run(SMALL_SWEEP)
    a, b = tmp_path / "a", tmp_path / "b"
    ex.emit_results(small_sweep, a)
    ex.emit_results(again, b)
    for name in ("results.csv", "summary.json", "config.snapshot"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_float_format():
    assert ex._fmt(1.0 / 3.0) == "0.333333333333"
    assert ex._fmt(True) == "true"
    assert ex._fmt(float("nan")) == "nan"
    assert ex._jsonable({"x": float("inf"), "y": np.float64(2.0) / 3}) == {"x": None, "y": 0.666666666667}


def test_h_certification_run(tmp_path):
    cfg = ex.ExperimentConfig(experiment="h-certify", n=(3,), eps_values=(1e-2, 1e-3))
    rec = ex.run(cfg)
    assert rec.passed, rec.checks
    assert rec.checks["rejects_below_beta_star_n3"]["passed"]
    ex.emit_results(rec, tmp_path)
    assert (tmp_path / "h_profile_n3_eps0.01.csv").read_text().startswith("r,h,r^alpha,lower_envelope,ratio")


def test_h_certification_bad_beta():
    cfg = ex.ExperimentConfig(experiment="h-certify", n=(3,), eps_values=(1e-2,), beta="1.0")
    rec = ex.run(cfg)
    assert not rec.passed
    assert any("beta_star" in n for n in rec.notes)


def test_mode_decay_run():
    cfg = ex.ExperimentConfig(experiment="mode-decay", n=(3,), k=(1, 2), eps_values=(1e-3,))
    rec = ex.run(cfg)
    assert rec.passed, rec.checks
    assert len(rec.points) == 2
    assert "omega_n3.csv" in rec.extras


def test_local_gap_run():
    cfg = ex.ExperimentConfig(
        experiment="local-gap", n=(3,), eps_values=(1e-3,), grid=(257, 17), shapes=("unit_ball",)
    )
    rec = ex.run(cfg)
    assert len(rec.points) == 4
    assert rec.checks["slope_unit_ball_n3_eps0.001"]["passed"]


def test_rates_run():
    rec = ex.run(ex.ExperimentConfig(experiment="rates", n=(3,), n_max=5, k_max=3))
    assert rec.passed and len(rec.points) == 3
    assert "rates.csv" in rec.extras


def test_threads_give_same_points():
    cfg = ex.ExperimentConfig(experiment="mode-decay", n=(3, 4), k=(1, 2), eps_values=(1e-2,))
    a = ex.run(cfg)
    b = ex.run(cfg.replace(threads=3))
    assert a.points == b.points
