"""Trial-specific IV designs: Wald-LATE, incremental and cumulative exposure
effects, any-exposure IV, as-treated OLS and the 2SLS-vs-OLS comparison.

All stacked designs use observed (participant, wave) cells, cluster on the
participant, include an intercept and wave dummies, and instrument with
assignment and assignment x wave dummies.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
import scipy.linalg as sla

from .panel import PanelDataset, PanelError
from .regression import (
    DesignMatrices,
    DifferenceTest,
    EstimateTable,
    RankError,
    TestResult,
    equality_restrictions,
    hansen_j,
    iv_2sls,
    joint_difference_test,
    ols,
    pinv_chi2,
    wald_test,
)

Z95 = 1.959963984540054


class ZeroFirstStage(ValueError):
    pass


class EmptyArm(ValueError):
    pass


def _controls(d: PanelDataset, controls) -> list[str]:
    if controls is None:
        return list(d.control_names)
    if isinstance(controls, str):
        controls = [c for c in controls.split(",") if c]
    for c in controls:
        d.covariate(c)
    return list(controls)


def _long(d: PanelDataset, controls: Sequence[str], waves=None):
    """Observed (i, w) cells as flat arrays, rows with missing controls dropped."""
    obs = d.observed.copy()
    if waves is not None:
        keep = np.zeros(d.w_bar, dtype=bool)
        keep[[w - 1 for w in waves]] = True
        obs &= keep[None, :]
    C = np.column_stack([d.covariate(c) for c in controls]) if controls else np.empty((d.n, 0))
    bad = np.isnan(C).any(axis=1)
    if bad.any():
        warnings.warn(f"dropping {int(bad.sum())} participants with missing controls", stacklevel=3)
        obs &= ~bad[:, None]
    i, wi = np.nonzero(obs)
    T = d.exposure_matrix()[i, wi]
    return {
        "i": i,
        "w": wi + 1,
        "y": d.y[i, wi],
        "z": d.z[i].astype(float),
        "T": T,
        "C": C[i],
        "cluster": i,
    }


def _stacked_design(d: PanelDataset, controls, endog: str, waves=None) -> tuple[DesignMatrices, list[int]]:
    """Stacked design; ``endog`` is 'D' (T_w >= t), 'R' (T_w == t) or 'V' (T_w > 0)."""
    controls = _controls(d, controls)
    L = _long(d, controls, waves)
    if L["y"].size == 0:
        raise PanelError("no observed outcomes")
    wv = sorted(np.unique(L["w"]).tolist())
    n = len(L["y"])
    one = np.ones(n)
    dummies = [(L["w"] == t).astype(float) for t in wv[1:]]
    dnames = [f"wave_{t}" for t in wv[1:]]
    exog = np.column_stack([one, *dummies, L["C"]]) if n else np.empty((0, 0))
    exog_names = ["const", *dnames, *controls]
    z = L["z"]
    inst = np.column_stack([z, *[z * dm for dm in dummies]])
    inst_names = ["z", *[f"z_x_{nm}" for nm in dnames]]

    levels: list[int] = []
    if endog == "V":
        endo = (L["T"] > 0).astype(float)[:, None]
        endo_names = ["V"]
    else:
        cols, endo_names = [], []
        for t in range(1, d.w_bar + 1):
            col = (L["T"] >= t) if endog == "D" else (L["T"] == t)
            if not col.any():
                warnings.warn(f"exposure level t={t} has no support; dropped from design", stacklevel=3)
                continue
            cols.append(col.astype(float))
            endo_names.append(f"{endog}{t}")
            levels.append(t)
        if not cols:
            raise RankError("no exposure level has support", [])
        endo = np.column_stack(cols)
    X = np.column_stack([exog, endo])
    Zm = np.column_stack([exog, inst])
    k0 = exog.shape[1]
    dm = DesignMatrices(L["y"], X, Zm, L["cluster"], exog_names + endo_names,
                        exog_names + inst_names, list(range(k0, X.shape[1])))
    return dm, levels


@dataclass
class ExposureEffects:
    kind: str
    levels: list[int]
    coef: np.ndarray
    vcov: np.ndarray
    equality: TestResult | None
    equality_subset: TestResult | None
    fit: EstimateTable = field(repr=False)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0, None))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "levels": list(self.levels),
            "coef": self.coef.tolist(),
            "se": self.se.tolist(),
            "vcov": self.vcov.tolist(),
            "equality": None if self.equality is None else self.equality.to_dict(),
            "equality_subset": None if self.equality_subset is None else self.equality_subset.to_dict(),
            "fit": self.fit.to_dict(),
        }


def _exposure_effects(d, controls, endog, kind) -> ExposureEffects:
    dm, levels = _stacked_design(d, controls, endog)
    try:
        fit = iv_2sls(dm, meta={"estimand": kind, "waves": list(d.waves),
                                "instruments": "z, z x wave dummies"})
    except RankError as exc:
        bad = [c for c in exc.columns if c[:1] == endog]
        raise RankError(f"{kind} design not identified; offending exposure columns {bad or exc.columns}: {exc}",
                        exc.columns) from None
    names = [f"{endog}{t}" for t in levels]
    sub = fit.subset(names)
    idx = [fit.index(n) for n in names]
    k = len(fit.coef)
    eq = wald_test(fit, equality_restrictions(k, idx)) if len(idx) >= 2 else None
    later = [fit.index(f"{endog}{t}") for t in levels if t >= 2]
    eq2 = wald_test(fit, equality_restrictions(k, later)) if len(later) >= 2 else None
    return ExposureEffects(kind, levels, sub.coef, sub.vcov, eq, eq2, fit)


def incremental_effects(d: PanelDataset, controls=None) -> ExposureEffects:
    """Stacked 2SLS of ``Y_w`` on ``D_wt = 1[T_w >= t]``: incremental effects λ_t.

    Returns the λ vector, its covariance, and Wald tests of equality across
    all levels and across levels 2 and up.
    """
    return _exposure_effects(d, controls, "D", "incremental")


def cumulative_effects(d: PanelDataset, controls=None) -> ExposureEffects:
    """Stacked 2SLS of ``Y_w`` on ``R_wt = 1[T_w == t]``: cumulative effects Λ_t."""
    return _exposure_effects(d, controls, "R", "cumulative")


# --- wave-level quantities -------------------------------------------------------

def _arm_stats(v: np.ndarray, z: np.ndarray):
    out = []
    for arm in (0, 1):
        x = v[z == arm]
        if x.size == 0:
            raise EmptyArm(f"empty arm z={arm}")
        out.append((x.mean(), x.var(ddof=1) if x.size > 1 else 0.0, x.size))
    return out


def wave_summary(d: PanelDataset) -> pd.DataFrame:
    """Per-wave exposure rates by arm, first stage, outcome moments and ITT.

    Rates and means use participants with an observed outcome in the wave.
    ITT standard errors are the unpooled (heteroskedasticity-robust)
    two-sample formula.
    """
    T = d.exposure_matrix()
    rows = []
    for w in d.waves:
        m = d.observed[:, w - 1]
        z = d.z[m]
        y = d.y[m, w - 1]
        v = (T[m, w - 1] > 0).astype(float)
        if not (np.any(z == 0) and np.any(z == 1)):
            raise EmptyArm(f"empty arm in wave {w}")
        (r0, _, n0), (r1, _, n1) = _arm_stats(v, z)
        (y0, s0, _), (y1, s1, _) = _arm_stats(y, z)
        se = 0.0 if d.population else float(np.sqrt(s0 / n0 + s1 / n1))
        rows.append({
            "wave": w, "n_control": n0, "n_treated": n1,
            "rate_control": r0, "rate_treated": r1, "first_stage": r1 - r0,
            "mean": y.mean(), "sd": y.std(ddof=1) if y.size > 1 else 0.0,
            "itt": y1 - y0, "itt_se": se,
        })
    return pd.DataFrame(rows)


def _ratio_se(a: np.ndarray, b: np.ndarray, z: np.ndarray, est: float) -> float:
    """Delta-method SE of (mean a|1 - mean a|0) / (mean b|1 - mean b|0)."""
    num_var = 0.0
    den = 0.0
    for arm, sign in ((0, -1.0), (1, 1.0)):
        aa, bb = a[z == arm], b[z == arm]
        n = aa.size
        if n < 2:
            return float("nan")
        c = np.cov(aa, bb, ddof=1)
        num_var += (c[0, 0] - 2 * est * c[0, 1] + est**2 * c[1, 1]) / n
        den += sign * bb.mean()
    return float(np.sqrt(max(num_var, 0.0)) / abs(den))


def wald_late_wave1(d: PanelDataset) -> EstimateTable:
    """Wave-1 Wald ratio: wave-1 ITT divided by the wave-1 first stage."""
    m = d.observed[:, 0]
    z = d.z[m]
    y = d.y[m, 0]
    t = d.exposure_matrix()[m, 0].astype(float)
    (y0, _, _), (y1, _, _) = _arm_stats(y, z)
    (t0, _, _), (t1, _, _) = _arm_stats(t, z)
    fs = t1 - t0
    if abs(fs) < 1e-6:
        raise ZeroFirstStage(f"wave-1 first stage is {fs:.3g}")
    est = (y1 - y0) / fs
    se = 0.0 if d.population else _ratio_se(y, t, z, est)
    return EstimateTable(["T1"], np.array([est]), np.array([[se**2]]), int(m.sum()), int(m.sum()),
                         {"estimand": "wald_late_wave1", "itt": y1 - y0, "first_stage": fs})


def _wave_design(d: PanelDataset, w: int, controls, endog: str | None):
    controls = _controls(d, controls)
    L = _long(d, controls, waves=[w])
    n = len(L["y"])
    exog = np.column_stack([np.ones(n), L["C"]])
    names = ["const", *controls]
    if endog is None:
        return DesignMatrices.ols_design(L["y"], np.column_stack([exog, L["z"]]), L["cluster"], names + ["z"])
    v = (L["T"] > 0).astype(float) if endog == "V" else L["T"].astype(float)
    X = np.column_stack([exog, v])
    return DesignMatrices(L["y"], X, np.column_stack([exog, L["z"]]), L["cluster"],
                          names + [endog], names + ["z"], [X.shape[1] - 1])


def any_exposure_iv(d: PanelDataset, w: int, controls=None, check_constant: bool = True) -> EstimateTable:
    """Wave-``w`` IV of ``Y_w`` on ``V_w = 1[T_w > 0]`` instrumented by assignment.

    If ``check_constant`` and the panel has several waves, the stacked
    over-identification test is run too; a rejection at 5% attaches a caveat
    that zero incremental effects beyond year one look implausible.
    """
    if not 1 <= w <= d.w_bar:
        raise PanelError(f"wave {w} out of range")
    dm = _wave_design(d, w, controls, "V")
    v, z = dm.X[:, -1], dm.Zmat[:, -1]
    fs = v[z == 1].mean() - v[z == 0].mean()
    if abs(fs) < 1e-6:
        raise ZeroFirstStage(f"any-exposure first stage at wave {w} is {fs:.3g}")
    fit = iv_2sls(dm, meta={"estimand": "any_exposure_tau", "wave": w, "first_stage": fs})
    if check_constant and d.w_bar >= 2:
        try:
            _, j = any_exposure_stacked(d, controls)
            fit.meta["constant_effect_test"] = j.to_dict()
            if j.p < 0.05:
                fit.meta["caveat"] = ("constant any-exposure effects rejected; tau_w mixes "
                                      "exposure levels with nonzero incremental effects")
        except (RankError, ValueError, np.linalg.LinAlgError):
            pass
    return fit


def any_exposure_stacked(d: PanelDataset, controls=None) -> tuple[EstimateTable, TestResult]:
    """Stacked any-exposure 2SLS imposing constant τ, with Hansen's J (dof w̄-1)."""
    dm, _ = _stacked_design(d, controls, "V")
    fit = iv_2sls(dm, meta={"estimand": "any_exposure_stacked"})
    return fit, hansen_j(dm, fit)


def itt(d: PanelDataset, w: int, controls=None) -> EstimateTable:
    """Reduced-form regression of ``Y_w`` on assignment (plus controls)."""
    dm = _wave_design(d, w, controls, None)
    return ols(dm, meta={"estimand": "itt", "wave": w})


def as_treated_ols(d: PanelDataset, controls=None, parameterization: str = "any_exposure",
                   wave: int | None = None) -> EstimateTable:
    """As-treated OLS ignoring assignment.

    ``any_exposure``: wave-``wave`` regression of ``Y_w`` on ``V_w``.
    ``exposure_levels``: stacked regression on ``R_wt`` with wave dummies,
    clustered on participant.
    """
    if parameterization == "any_exposure":
        if wave is None:
            raise ValueError("any_exposure parameterization needs a wave")
        dm = _wave_design(d, wave, controls, "V")
        dm = DesignMatrices.ols_design(dm.y, dm.X, dm.cluster, dm.x_names)
        return ols(dm, meta={"estimand": "as_treated_any_exposure", "wave": wave})
    if parameterization == "exposure_levels":
        dm, _ = _stacked_design(d, controls, "R")
        dm = DesignMatrices.ols_design(dm.y, dm.X, dm.cluster, dm.x_names)
        return ols(dm, meta={"estimand": "as_treated_exposure_levels"})
    raise ValueError(f"unknown parameterization {parameterization!r}")


# --- 2SLS vs OLS -------------------------------------------------------------------

@dataclass
class HausmanTable:
    levels: list[int]
    tsls: np.ndarray
    tsls_se: np.ndarray
    ols: np.ndarray
    ols_se: np.ndarray
    diff: np.ndarray
    diff_se: np.ndarray
    joint: TestResult
    bootstrap_diff_se: np.ndarray | None = None
    bootstrap_joint: TestResult | None = None

    @property
    def t(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.diff / self.diff_se

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({
            "exposure": self.levels, "tsls": self.tsls, "tsls_se": self.tsls_se,
            "ols": self.ols, "ols_se": self.ols_se, "difference": self.diff,
            "difference_se": self.diff_se, "t": self.t,
        })
        if self.bootstrap_diff_se is not None:
            df["difference_se_bootstrap"] = self.bootstrap_diff_se
        return df

    def to_csv(self) -> str:
        df = self.to_frame()
        text = df.to_csv(index=False, lineterminator="\n", float_format="%.10g")
        return text + f"chi2({self.joint.dof}),{self.joint.stat:.10g},p,{self.joint.p:.10g}\n"

    def to_dict(self) -> dict:
        out = {"rows": self.to_frame().to_dict(orient="records"), "joint": self.joint.to_dict()}
        if self.bootstrap_joint is not None:
            out["bootstrap_joint"] = self.bootstrap_joint.to_dict()
        return out


def _pair_fits(d, controls):
    iv = cumulative_effects(d, controls)
    ls = as_treated_ols(d, controls, "exposure_levels")
    names = [f"R{t}" for t in iv.levels if f"R{t}" in ls.names]
    return iv, ls, names


def hausman_table(d: PanelDataset, controls=None, bootstrap: int = 0, seed: int = 0) -> HausmanTable:
    """Cumulative 2SLS vs as-treated OLS by exposure level with a joint test.

    Difference SEs come from stacked per-participant influence functions.
    ``bootstrap > 0`` adds a pairs-cluster bootstrap cross-check that
    resamples participants.
    """
    iv, ls, names = _pair_fits(d, controls)
    dt = joint_difference_test(iv.fit, ls, names)
    ivs = iv.fit.subset(names)
    lss = ls.subset(names)
    tab = HausmanTable([int(n[1:]) for n in names], ivs.coef, ivs.se, lss.coef, lss.se, dt.diff, dt.se, dt.joint)
    if bootstrap:
        rng = np.random.default_rng(seed)
        draws = []
        for _ in range(bootstrap):
            db = resample_participants(d, rng)
            try:
                bi, bl, bn = _pair_fits(db, controls)
            except (RankError, ValueError):
                continue
            if bn != names:
                continue
            draws.append(bi.fit.subset(names).coef - bl.subset(names).coef)
        draws = np.asarray(draws)
        if len(draws) >= 2:
            V = np.cov(draws, rowvar=False, ddof=1).reshape(len(names), len(names))
            tab.bootstrap_diff_se = np.sqrt(np.diag(V))
            tab.bootstrap_joint = pinv_chi2(dt.diff, V, "hausman")
    return tab


def resample_participants(d: PanelDataset, rng: np.random.Generator) -> PanelDataset:
    """Pairs-cluster bootstrap draw: participants sampled with replacement."""
    idx = rng.integers(0, d.n, d.n)
    return PanelDataset(
        ids=np.arange(d.n), z=d.z[idx], revasc_wave=d.revasc_wave[idx], y=d.y[idx],
        present=d.present[idx], covariates=d.covariates[idx],
        covariate_names=d.covariate_names, control_names=d.control_names,
    )


# --- ACR weights -------------------------------------------------------------------

@dataclass
class AcrWeights:
    Pi: np.ndarray
    rho: np.ndarray
    lam: np.ndarray

    def to_dict(self) -> dict:
        return {"Pi": self.Pi.tolist(), "rho": self.rho.tolist(), "lambda": self.lam.tolist()}


def acr_weights(d: PanelDataset) -> AcrWeights:
    """Sample ACR weights ``π_wt`` and reduced forms ``ρ_w``; ``λ = Π⁻¹ρ``.

    Per-wave moments use participants with observed ``Y_w`` so the result
    matches stacked 2SLS without controls on the same rows.
    """
    W = d.w_bar
    T = d.exposure_matrix()
    Pi = np.zeros((W, W))
    rho = np.zeros(W)
    for w in d.waves:
        m = d.observed[:, w - 1]
        z = d.z[m]
        if not (np.any(z == 0) and np.any(z == 1)):
            raise EmptyArm(f"empty arm in wave {w}")
        tw = T[m, w - 1]
        yw = d.y[m, w - 1]
        rho[w - 1] = yw[z == 1].mean() - yw[z == 0].mean()
        for t in range(1, w + 1):
            dt = (tw >= t).astype(float)
            Pi[w - 1, t - 1] = dt[z == 1].mean() - dt[z == 0].mean()
    small = np.flatnonzero(np.abs(np.diag(Pi)) < 1e-6)
    if small.size:
        raise np.linalg.LinAlgError(f"ACR weight matrix singular: diagonal below 1e-6 at waves {(small + 1).tolist()}")
    lam = sla.solve_triangular(Pi, rho, lower=True)
    return AcrWeights(Pi, rho, lam)


# --- plotting series -------------------------------------------------------------------

def any_exposure_series(d: PanelDataset, controls=None) -> pd.DataFrame:
    """Per-wave ITT, any-exposure 2SLS and as-treated OLS with 95% CIs."""
    rows = []
    for w in d.waves:
        fits = {
            "itt": (itt(d, w, controls), "z"),
            "iv": (any_exposure_iv(d, w, controls, check_constant=False), "V"),
            "ols": (as_treated_ols(d, controls, "any_exposure", wave=w), "V"),
        }
        for name, (fit, col) in fits.items():
            b, s = fit[col], fit.se_of(col)
            rows.append({"wave": w, "series": name, "estimate": b, "se": s,
                         "ci_lo": b - Z95 * s, "ci_hi": b + Z95 * s})
    return pd.DataFrame(rows)


def cumulative_series(eff: ExposureEffects) -> pd.DataFrame:
    se = eff.se
    return pd.DataFrame({
        "exposure": eff.levels, "estimate": eff.coef, "se": se,
        "ci_lo": eff.coef - Z95 * se, "ci_hi": eff.coef + Z95 * se,
    })
