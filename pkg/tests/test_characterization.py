from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dynamic_iv import characterization as ch
from dynamic_iv.panel import NEVER, PanelDataset
from dynamic_iv.simulation import DgpConfig, LatentType, population_panel, preset, sample_dataset

X = "baseline_score"


def with_covariate(d: PanelDataset, name: str, values) -> PanelDataset:
    return PanelDataset(ids=d.ids, z=d.z, revasc_wave=d.revasc_wave, y=d.y, present=d.present,
                        covariates=np.column_stack([d.covariates, values]),
                        covariate_names=(*d.covariate_names, name), population=d.population)


def late_complier_cfg():
    base = preset("refA")
    return DgpConfig(w_bar=3, lam=base.lam, types=(*base.types[:4], LatentType("late_complier", 0.1, 2, NEVER, 47.0)))


# --- refA population values ------------------------------------------------------------

@pytest.mark.parametrize("fn, args, expected", [
    (ch.immediate_complier_mean, {}, (0.5 * 50 + 0.1 * 48) / 0.6),
    (ch.immediate_at_mean, {}, 35.0),
    (ch.later_at_mean, {"wave": 3}, 38.0),
    (ch.marginal_at_mean, {"wave": 3}, 36.5),
    (ch.disaggregated_complier_mean, {"wave": 3, "t": 1}, 48.0),
    (ch.disaggregated_complier_mean, {"wave": 3, "t": 0}, 50.0),
    (ch.disaggregated_at_nt_mean, {"wave": 3, "t": 0}, 45.0),
    (ch.disaggregated_at_nt_mean, {"wave": 3, "t": 2}, 38.0),
])
def test_refA_covariate_means(refA_population, fn, args, expected):
    res = fn(refA_population, x=X, **args)
    assert res.estimate == pytest.approx(expected, abs=1e-9)
    assert res.se == 0.0


def test_marginal_at_mixing_weight(refA_population):
    res = ch.marginal_at_mean(refA_population, 3, X)
    assert res.extra["pi"] == pytest.approx(0.5, abs=1e-12)
    assert res.extra["at_share"] == pytest.approx(0.2, abs=1e-12)
    assert res.estimate == pytest.approx(0.5 * 35 + 0.5 * 38, abs=1e-9)


def test_marginal_at_wave1_is_immediate(refA_population):
    res = ch.marginal_at_mean(refA_population, 1, X)
    assert res.extra["pi"] == 1.0
    assert res.estimate == pytest.approx(ch.immediate_at_mean(refA_population, X).estimate, abs=1e-12)


def test_marginal_at_without_later_always_takers():
    base = preset("refA")
    types = [t for t in base.types if t.name != "later_always_taker"]
    types[1] = LatentType("never_taker", 0.3, NEVER, NEVER, 45.0)
    cfg = DgpConfig(w_bar=3, lam=base.lam, types=tuple(types))
    d = population_panel(cfg)
    res = ch.marginal_at_mean(d, 3, X)
    assert res.extra["pi"] == pytest.approx(1.0)
    assert res.estimate == pytest.approx(35.0, abs=1e-9)


def test_outcome_forms(refA_population, refA_oracle):
    # immediate always-takers at wave 3 have three years of exposure
    assert ch.immediate_at_mean(refA_population, None, wave=3).estimate == pytest.approx(40.5, abs=1e-9)
    og = refA_oracle.outcome_groups
    for w in (1, 2, 3):
        got = ch.immediate_complier_mean(refA_population, None, wave=w).estimate
        assert got == pytest.approx(og[w]["immediate_complier"], abs=1e-9)
        got = ch.marginal_at_mean(refA_population, w, None).estimate
        assert got == pytest.approx(og[w]["marginal_at"], abs=1e-9)
    got = ch.disaggregated_complier_mean(refA_population, 3, 1, None).estimate
    assert got == pytest.approx(og[3]["disaggregated_complier"][1], abs=1e-9)


def test_matches_oracle_groups(refA_population, refA_oracle):
    for w in (1, 2, 3):
        g = refA_oracle.groups[w]
        assert ch.marginal_at_mean(refA_population, w, X).estimate == pytest.approx(g["marginal_at"], abs=1e-9)
        ae = ch.any_exposure_group_means(refA_population, w, X)
        assert ae.complier.estimate == pytest.approx(g["any_complier"], abs=1e-9)
        assert ae.always_taker.estimate == pytest.approx(g["any_at"], abs=1e-9)
        assert ae.at_share_treated == pytest.approx(g["any_at_share_treated"], abs=1e-12)


def test_any_exposure_groups(refA_population):
    w2 = ch.any_exposure_group_means(refA_population, 2, X)
    assert w2.complier.estimate == pytest.approx(49.6666666667, abs=1e-9)
    assert w2.complier_share == pytest.approx(0.6)
    assert w2.always_taker.estimate == pytest.approx(36.5, abs=1e-9)
    assert w2.at_share == pytest.approx(0.2)
    w3 = ch.any_exposure_group_means(refA_population, 3, X)
    assert w3.complier.estimate == pytest.approx(50.0, abs=1e-9)
    assert w3.always_taker.estimate == pytest.approx(121 / 3, abs=1e-9)
    assert w3.at_share == pytest.approx(0.3)


# --- properties ---------------------------------------------------------------------

def test_constant_covariate_gives_one(refA_sample):
    d = with_covariate(refA_sample, "one", np.ones(refA_sample.n))
    for res in (ch.immediate_complier_mean(d, "one"), ch.immediate_at_mean(d, "one"),
                ch.marginal_at_mean(d, 3, "one"), ch.later_at_mean(d, 2, "one")):
        assert res.estimate == pytest.approx(1.0, abs=1e-12)
    tab = ch.group_means_table(d, ["one"])
    vals = tab.frame[["immediate_complier", "immediate_at", "marginal_at", "any_at_mean"]].to_numpy()
    assert_allclose(vals, 1.0, atol=1e-12)


def test_mixture_identity(refA_population):
    """Sample mean is the share-weighted average of complier, AT and NT means at wave 1."""
    d = refA_population
    c = ch.immediate_complier_mean(d, X)
    a = ch.immediate_at_mean(d, X)
    n = ch.disaggregated_at_nt_mean(d, 1, 0, X)
    pc = c.extra["denominator"]
    pa = a.extra["share"]
    total = pc * c.estimate + pa * a.estimate + (1 - pc - pa) * n.estimate
    assert total == pytest.approx(d.covariate(X).mean(), abs=1e-9)


def test_no_always_takers():
    cfg = DgpConfig(w_bar=2, lam=(4.0, 0.0), types=(
        LatentType("complier", 0.7, 1, NEVER, 50.0), LatentType("never", 0.3, NEVER, NEVER, 40.0)))
    d = sample_dataset(cfg, 3000, seed=2)
    res = ch.immediate_complier_mean(d, X)
    T1 = d.exposure_matrix()[:, 0]
    sel = (d.z == 1) & (T1 == 1)
    assert res.estimate == pytest.approx(d.covariate(X)[sel].mean(), rel=1e-12)
    with pytest.raises(ch.EmptyCell, match="empty cell"):
        ch.immediate_at_mean(d, X)


def test_thin_cell(refA_population):
    # nobody sits at exposure 1 in wave 2 because of assignment
    with pytest.raises(ch.ThinCell, match="cell too thin"):
        ch.disaggregated_complier_mean(refA_population, 2, 1, X)


def test_empty_cell(refA_population):
    with pytest.raises(ch.EmptyCell):
        ch.disaggregated_at_nt_mean(refA_population, 3, 1, X)


def test_later_at_undefined_for_wave1(refA_population):
    with pytest.raises(ValueError, match="undefined for wave 1"):
        ch.later_at_mean(refA_population, 1, X)


def test_unknown_covariate(refA_population):
    with pytest.raises(KeyError):
        ch.immediate_complier_mean(refA_population, "nope")


def test_large_sample_close_to_population():
    d = sample_dataset(preset("refA", covariate_noise_sd=5.0), 100_000, seed=17)
    c = ch.immediate_complier_mean(d, X)
    m = ch.marginal_at_mean(d, 3, X)
    assert abs(c.estimate - 149 / 3) < 4 * c.se
    assert abs(m.estimate - 36.5) < 4 * m.se


@pytest.mark.slow
def test_delta_method_se_calibrated():
    cfg = preset("refA", covariate_noise_sd=5.0)
    est, se = [], []
    for i in range(200):
        d = sample_dataset(cfg, 2000, seed=np.random.SeedSequence(99, spawn_key=(i,)))
        r = ch.immediate_complier_mean(d, X)
        est.append(r.estimate)
        se.append(r.se)
    assert np.std(est, ddof=1) / np.mean(se) == pytest.approx(1.0, abs=0.15)


# --- IMCO diagnostic ------------------------------------------------------------------

def test_imco_refA_not_flagged(refA_population):
    diag = ch.imco_diagnostic(refA_population)
    assert diag.flagged == []
    rows = diag.waves.set_index("wave")
    assert rows.loc[2, "difference"] == pytest.approx(0.0, abs=1e-12)
    assert rows.loc[2, "intermediate_treated"] == pytest.approx(0.1)


def test_imco_late_complier_flagged():
    diag = ch.imco_diagnostic(population_panel(late_complier_cfg()))
    assert diag.flagged == [2, 3]
    d = sample_dataset(late_complier_cfg(), 20_000, seed=4)
    assert set(ch.imco_diagnostic(d).flagged) == {2, 3}


def test_imco_single_wave(refA_sample):
    diag = ch.imco_diagnostic(refA_sample.subset_waves([1]))
    assert diag.flagged == []
    assert set(diag.histogram["exposure"]) == {0, 1}


def test_imco_sample_size_refA():
    d = sample_dataset(preset("refA"), 20_000, seed=6)
    assert ch.imco_diagnostic(d).flagged == []


def test_group_means_table_layout(refA_population):
    tab = ch.group_means_table(refA_population, [X])
    assert list(tab.frame["wave"]) == [1, 2, 3]
    header = tab.to_csv().splitlines()[0].split(",")
    assert header[:2] == ["covariate", "wave"]
    assert header[2:10] == ch.GROUP_MEANS_COLUMNS
    row3 = tab.frame.set_index("wave").loc[3]
    assert row3["marginal_at"] == pytest.approx(36.5, abs=1e-9)
    assert row3["immediate_complier"] == pytest.approx(149 / 3, abs=1e-9)
