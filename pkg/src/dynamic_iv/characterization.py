"""Means of baseline covariates and potential outcomes for dynamic latent groups.

Every operation takes ``x``: a covariate name, or ``None`` for the outcome
``Y_w`` of the requested wave (the potential-outcome form).  The covariate
path uses participants with a row at that wave; the outcome path uses
participants whose ``Y_w`` is observed.

Standard errors come from the delta method on arm-specific means.  On a
population panel (``d.population``) they are zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .panel import PanelDataset, PanelError


class EmptyCell(ValueError):
    pass


class ThinCell(ValueError):
    pass


THIN_FLOOR = 0.005


@dataclass
class GroupMean:
    estimate: float
    se: float
    n: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"estimate": float(self.estimate), "se": float(self.se), "n": int(self.n), **self.extra}


def _rows(d: PanelDataset, x: str | None, wave: int):
    if not 1 <= wave <= d.w_bar:
        raise PanelError(f"wave {wave} out of range 1..{d.w_bar}")
    if x is None:
        m = d.observed[:, wave - 1]
        v = d.y[m, wave - 1]
    else:
        m = d.present[:, wave - 1] & ~np.isnan(d.covariate(x))
        v = d.covariate(x)[m]
    T = d.exposure_matrix()[m, wave - 1]
    return v, T, d.z[m]


def _delta(f: Callable, arms: dict[int, np.ndarray], population: bool) -> tuple[float, float]:
    """Evaluate ``f(means0, means1)`` and its delta-method SE.

    ``arms[z]`` is an (n_z, p_z) matrix of per-participant variables whose
    arm means feed ``f``.
    """
    means = {z: a.mean(axis=0) for z, a in arms.items()}
    est = float(f(means[0], means[1]))
    if population:
        return est, 0.0
    var = 0.0
    for z, a in arms.items():
        n = a.shape[0]
        if a.shape[1] == 0:
            continue
        if n < 2:
            return est, float("nan")
        grad = np.empty(a.shape[1])
        for j in range(a.shape[1]):
            h = 1e-6 * max(1.0, abs(means[z][j]))
            up = {k: v.copy() for k, v in means.items()}
            dn = {k: v.copy() for k, v in means.items()}
            up[z][j] += h
            dn[z][j] -= h
            grad[j] = (f(up[0], up[1]) - f(dn[0], dn[1])) / (2 * h)
        C = np.atleast_2d(np.cov(a, rowvar=False, ddof=1))
        var += grad @ C @ grad / n
    return est, float(np.sqrt(max(var, 0.0)))


def _split(z, *cols):
    A = np.column_stack(cols).astype(float)
    return A[z == 0], A[z == 1]


def _iv_ratio(v, cell, z, population, thin=False) -> GroupMean:
    """(E[cell*v|1] - E[cell*v|0]) / (E[cell|1] - E[cell|0])."""
    if not (np.any(z == 0) and np.any(z == 1)):
        raise EmptyCell("both assignment arms are needed")
    a0, a1 = _split(z, cell * v, cell)
    den = a1[:, 1].mean() - a0[:, 1].mean()
    if thin:
        _, den_se = _delta(lambda m0, m1: m1[1] - m0[1], {0: a0, 1: a1}, population)
        threshold = max(THIN_FLOOR, 2 * den_se)
        if not abs(den) >= threshold:
            raise ThinCell(f"cell too thin: |denominator| {abs(den):.4g} < {threshold:.4g}")
    elif abs(den) < 1e-12:
        raise ZeroDivisionError("zero first stage for the group indicator")
    est, se = _delta(lambda m0, m1: (m1[0] - m0[0]) / (m1[1] - m0[1]), {0: a0, 1: a1}, population)
    return GroupMean(est, se, len(v), {"denominator": float(den)})


def _cond_mean(v, cell, z, arm, population) -> GroupMean:
    sel = cell & (z == arm)
    if not sel.any():
        raise EmptyCell("empty cell")
    x = v[sel]
    se = 0.0 if population or x.size < 2 else float(x.std(ddof=1) / np.sqrt(x.size))
    return GroupMean(float(x.mean()), se, int(x.size), {"share": float(sel.sum() / max((z == arm).sum(), 1))})


def immediate_complier_mean(d: PanelDataset, x: str | None = None, wave: int = 1) -> GroupMean:
    """Mean for participants treated in wave 1 only because of assignment.

    Covariate form for ``x`` a name; ``x=None`` gives ``E[Y_w(w)]`` for the
    same group at ``wave``.  ``T_1 = 1`` and ``T_w = w`` select the same
    participants.
    """
    v, T, z = _rows(d, x, wave)
    try:
        return _iv_ratio(v, (T == wave).astype(float), z, d.population)
    except ZeroDivisionError:
        raise ZeroDivisionError("zero wave-1 first stage") from None


def immediate_at_mean(d: PanelDataset, x: str | None = None, wave: int = 1) -> GroupMean:
    """Mean over controls treated in wave 1 (immediate always-takers)."""
    v, T, z = _rows(d, x, wave)
    return _cond_mean(v, T == wave, z, 0, d.population)


def disaggregated_complier_mean(d: PanelDataset, wave: int, t: int, x: str | None = None) -> GroupMean:
    """Mean for compliers moved from exposure ``t`` (under control) to ``wave``.

    Raises :class:`ThinCell` if the exposure-level first stage is smaller
    than ``max(0.005, 2 SE)`` in absolute value.
    """
    if wave <= 1:
        raise PanelError("disaggregated complier means need wave > 1")
    if not 0 <= t < wave:
        raise PanelError(f"t must lie in 0..{wave - 1}")
    v, T, z = _rows(d, x, wave)
    return _iv_ratio(v, (T == t).astype(float), z, d.population, thin=True)


def later_at_mean(d: PanelDataset, wave: int, x: str | None = None) -> GroupMean:
    """Mean over treated-arm participants first treated after wave 1."""
    if wave <= 1:
        raise PanelError("later always-taker mean is undefined for wave 1")
    v, T, z = _rows(d, x, wave)
    return _cond_mean(v, (T >= 1) & (T < wave), z, 1, d.population)


def marginal_at_mean(d: PanelDataset, wave: int, x: str | None = None) -> GroupMean:
    """Always-taker mean at ``wave`` mixing immediate and later always-takers.

    ``extra['pi']`` is the share of immediate always-takers among all
    always-takers at this wave.
    """
    v, T, z = _rows(d, x, wave)
    imm = (T == wave).astype(float)
    late = ((T >= 1) & (T < wave)).astype(float)
    a0 = np.column_stack([imm * v, imm])[z == 0]
    a1 = np.column_stack([late * v, late])[z == 1]
    if a0.shape[0] == 0 or a1.shape[0] == 0:
        raise EmptyCell("both assignment arms are needed")
    a, b = a0[:, 1].mean(), a1[:, 1].mean()
    if a + b <= 0:
        raise ZeroDivisionError("no always-takers at this wave")
    if a == 0:
        raise EmptyCell("no immediate always-takers")

    def mean_f(m0, m1):
        return (m0[0] + m1[0]) / (m0[1] + m1[1])

    def pi_f(m0, m1):
        return m0[1] / (m0[1] + m1[1])

    est, se = _delta(mean_f, {0: a0, 1: a1}, d.population)
    pi, pi_se = _delta(pi_f, {0: a0, 1: a1}, d.population)
    return GroupMean(est, se, len(v), {"pi": pi, "pi_se": pi_se, "at_share": float(a + b)})


def disaggregated_at_nt_mean(d: PanelDataset, wave: int, t: int, x: str | None = None) -> GroupMean:
    """Mean over treated-arm participants at exposure ``t`` (``t=0``: never-takers)."""
    if not 0 <= t < wave:
        raise PanelError(f"t must lie in 0..{wave - 1}")
    v, T, z = _rows(d, x, wave)
    return _cond_mean(v, T == t, z, 1, d.population)


@dataclass
class AnyExposureGroups:
    complier: GroupMean
    always_taker: GroupMean
    complier_share: float
    at_share: float
    at_share_treated: float

    def to_dict(self) -> dict:
        return {
            "complier": self.complier.to_dict(), "always_taker": self.always_taker.to_dict(),
            "complier_share": self.complier_share, "at_share": self.at_share,
            "at_share_treated": self.at_share_treated,
        }


def any_exposure_group_means(d: PanelDataset, wave: int, x: str | None = None) -> AnyExposureGroups:
    """Complier and always-taker means treating ``V_w = 1[T_w > 0]`` as binary."""
    v, T, z = _rows(d, x, wave)
    V = (T > 0).astype(float)
    comp = _iv_ratio(v, V, z, d.population)
    at = _cond_mean(v, V > 0, z, 0, d.population)
    at_share = float(V[z == 0].mean())
    return AnyExposureGroups(comp, at, float(comp.extra["denominator"]), at_share,
                             at_share / float(V.mean()))


# --- IMCO diagnostic ----------------------------------------------------------------

@dataclass
class ImcoDiagnostic:
    histogram: pd.DataFrame
    waves: pd.DataFrame

    @property
    def flagged(self) -> list[int]:
        return self.waves.loc[self.waves["flag"], "wave"].tolist()

    def to_dict(self) -> dict:
        return {"histogram": self.histogram.to_dict(orient="records"),
                "waves": self.waves.to_dict(orient="records")}


def imco_diagnostic(d: PanelDataset, z_crit: float = 1.959963984540054) -> ImcoDiagnostic:
    """Exposure histograms by arm and per-wave evidence against IMCO.

    With immediate compliers only, treated-arm participants at an
    intermediate exposure ``1 <= t < w`` are always-takers, who sit at the
    same ``t`` under control.  So ``P(T_w=t|Z=1) <= P(T_w=t|Z=0)`` for each
    intermediate ``t``; a wave is flagged when some level breaks this beyond
    sampling error.  ``difference`` is the aggregated intermediate mass under
    treatment minus that under control.
    """
    T = d.exposure_matrix()
    hist, rows = [], []
    for w in d.waves:
        m = d.present[:, w - 1]
        tw, zw = T[m, w - 1], d.z[m]
        n = {arm: max(int((zw == arm).sum()), 1) for arm in (0, 1)}
        share = {}
        for arm in (0, 1):
            for t in range(w + 1):
                c = int(((zw == arm) & (tw == t)).sum())
                share[arm, t] = c / n[arm]
                hist.append({"wave": w, "z": arm, "exposure": t, "count": c, "share": c / n[arm]})
        mid = {arm: sum(share[arm, t] for t in range(1, w)) for arm in (0, 1)}
        worst = 0.0
        flag = False
        for t in range(1, w):
            p1, p0 = share[1, t], share[0, t]
            diff = p1 - p0
            se = 0.0 if d.population else np.sqrt(p1 * (1 - p1) / n[1] + p0 * (1 - p0) / n[0])
            stat = diff / se if se > 0 else (np.inf if diff > 1e-12 else 0.0)
            worst = max(worst, stat)
            flag |= bool(stat > z_crit)
        diff = mid[1] - mid[0]
        se = 0.0 if d.population else float(np.sqrt(mid[1] * (1 - mid[1]) / n[1] + mid[0] * (1 - mid[0]) / n[0]))
        rows.append({"wave": w, "intermediate_treated": mid[1], "intermediate_control": mid[0],
                     "difference": diff, "difference_se": se, "max_level_z": float(worst), "flag": flag})
    return ImcoDiagnostic(pd.DataFrame(hist), pd.DataFrame(rows))


# --- group-means table -------------------------------------------------------------------

GROUP_MEANS_COLUMNS = [
    "sample_mean", "immediate_complier", "any_complier", "at_share_treated",
    "immediate_at", "marginal_at", "any_at_share_treated", "any_at_mean",
]


@dataclass
class GroupMeansTable:
    frame: pd.DataFrame

    def to_csv(self) -> str:
        se_cols = [c for c in self.frame.columns if c.endswith("_se")]
        cols = ["covariate", "wave", *GROUP_MEANS_COLUMNS, *se_cols]
        return self.frame[cols].to_csv(index=False, lineterminator="\n", float_format="%.10g")

    def to_dict(self) -> dict:
        return {"columns": ["covariate", "wave", *GROUP_MEANS_COLUMNS],
                "rows": self.frame.replace({np.nan: None}).to_dict(orient="records")}


def _try(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (EmptyCell, ThinCell, ZeroDivisionError):
        return None


def group_means_table(d: PanelDataset, covariates: Sequence[str], waves: Sequence[int] | None = None) -> GroupMeansTable:
    """Complier and always-taker characteristics by wave, one row per (covariate, wave)."""
    waves = list(waves or d.waves)
    T = d.exposure_matrix()
    rows = []
    for x in covariates:
        d.covariate(x)
        for w in waves:
            m = d.present[:, w - 1]
            xv = d.covariate(x)[m]
            tw, zw = T[m, w - 1], d.z[m]
            row = {"covariate": x, "wave": w, "sample_mean": float(np.nanmean(xv)),
                   "sample_sd": float(np.nanstd(xv, ddof=1)) if xv.size > 1 else 0.0}
            ic = _try(immediate_complier_mean, d, x, w)
            ia = _try(immediate_at_mean, d, x, w)
            ma = _try(marginal_at_mean, d, w, x)
            la = _try(later_at_mean, d, w, x) if w > 1 else None
            ae = _try(any_exposure_group_means, d, w, x)
            at_den = float((tw[zw == 0] == w).mean() + ((tw[zw == 1] >= 1) & (tw[zw == 1] < w)).mean())
            treated = float((tw > 0).mean())
            row.update({
                "immediate_complier": ic.estimate if ic else np.nan,
                "immediate_complier_se": ic.se if ic else np.nan,
                "any_complier": ae.complier.estimate if ae else np.nan,
                "any_complier_se": ae.complier.se if ae else np.nan,
                "at_share_treated": at_den / treated if treated > 0 else np.nan,
                "immediate_at": ia.estimate if ia else np.nan,
                "immediate_at_se": ia.se if ia else np.nan,
                "marginal_at": ma.estimate if ma else np.nan,
                "marginal_at_se": ma.se if ma else np.nan,
                "any_at_share_treated": ae.at_share_treated if ae else np.nan,
                "any_at_mean": ae.always_taker.estimate if ae else np.nan,
                "any_at_mean_se": ae.always_taker.se if ae else np.nan,
                "later_at": la.estimate if la else np.nan,
                "pi": ma.extra["pi"] if ma else np.nan,
            })
            rows.append(row)
    return GroupMeansTable(pd.DataFrame(rows))
