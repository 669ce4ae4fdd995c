"""Synthetic strategy trials with discrete latent compliance types.

A :class:`DgpConfig` fixes a finite distribution of latent types, each with a
first-treatment wave under either assignment and a baseline mean.  Potential
outcomes are ``Y_w(t) = mu + Λ_t (+ drift_w if t >= 1) (+ direct_z_effect * z)``
plus noise, with ``Λ = cumsum(λ)``.

Because the type distribution is finite, every estimand has a closed form:
:func:`population_oracle` computes them by direct enumeration, and
:func:`population_panel` builds an integer-replicated panel on which the
sample estimators reproduce the population values exactly.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .panel import NEVER, PanelDataset, exposure_level

BLOCK = 1 << 15


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LatentType:
    name: str
    share: float
    r1: int  # first exposure wave if assigned treatment, NEVER = 0
    r0: int
    mu: float

    def exposure(self, z: int, w: int) -> int:
        return exposure_level(self.r1 if z else self.r0, w)


def _order(r: int) -> float:
    return math.inf if r == NEVER else r


@dataclass(frozen=True)
class DgpConfig:
    w_bar: int
    types: tuple[LatentType, ...]
    lam: tuple[float, ...]
    p_assign: float = 0.5
    noise_sd: float = 10.0
    noise_rho: float = 0.0
    covariate_noise_sd: float = 0.0
    attrition: tuple | dict = ()
    wave_drift: tuple[float, ...] = ()
    direct_z_effect: float = 0.0
    n_regions: int = 0
    allow_defiers: bool = False
    seed: int = 20250101
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(
            t if isinstance(t, LatentType) else LatentType(**t) for t in self.types))
        object.__setattr__(self, "lam", tuple(float(v) for v in self.lam))
        drift = tuple(float(v) for v in self.wave_drift) or (0.0,) * self.w_bar
        object.__setattr__(self, "wave_drift", drift)
        self.validate()

    @property
    def Lambda(self) -> np.ndarray:
        return np.cumsum(self.lam)

    def attrition_rates(self, z: int) -> np.ndarray:
        a = self.attrition
        if isinstance(a, dict):
            a = a.get(str(z), a.get(z, ()))
        a = np.asarray(a, dtype=float)
        return np.zeros(self.w_bar) if a.size == 0 else a

    def validate(self):
        W = self.w_bar
        if W < 1:
            raise ConfigError("w_bar must be >= 1")
        if len(self.lam) != W or not np.all(np.isfinite(self.lam)):
            raise ConfigError(f"lam must hold {W} finite values")
        if len(self.wave_drift) != W:
            raise ConfigError(f"wave_drift must hold {W} values")
        if not 0 < self.p_assign < 1:
            raise ConfigError("p_assign must lie in (0, 1)")
        shares = np.array([t.share for t in self.types])
        if not self.types or np.any(shares < 0) or np.any(shares > 1) or abs(shares.sum() - 1) > 1e-9:
            raise ConfigError("invalid shares: must lie in [0,1] and sum to 1")
        for t in self.types:
            for r in (t.r1, t.r0):
                if r != NEVER and not 1 <= r <= W:
                    raise ConfigError(f"type {t.name}: revasc wave {r} outside 1..{W}")
            if not self.allow_defiers and _order(t.r1) > _order(t.r0):
                raise ConfigError(f"type {t.name} violates monotonicity (r1 later than r0)")
        for z in (0, 1):
            a = self.attrition_rates(z)
            if a.size != W or np.any(a < 0) or np.any(a > 1):
                raise ConfigError("attrition must hold per-wave probabilities in [0,1]")
        if self.noise_sd < 0 or self.covariate_noise_sd < 0 or not -1 < self.noise_rho < 1:
            raise ConfigError("invalid noise parameters")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["types"] = [{**asdict(t), "r1": t.r1 or None, "r0": t.r0 or None} for t in self.types]
        d["lam"] = list(self.lam)
        d["wave_drift"] = list(self.wave_drift)
        d["attrition"] = self.attrition if isinstance(self.attrition, dict) else list(self.attrition)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DgpConfig":
        d = dict(d)
        d["types"] = tuple(
            LatentType(t["name"], float(t["share"]), int(t.get("r1") or NEVER),
                       int(t.get("r0") or NEVER), float(t["mu"]))
            for t in d["types"])
        for k in ("lam", "wave_drift"):
            if k in d:
                d[k] = tuple(d[k])
        if isinstance(d.get("attrition"), list):
            d["attrition"] = tuple(d["attrition"])
        return cls(**d)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, path) -> "DgpConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _refA(lam, name) -> DgpConfig:
    return DgpConfig(
        w_bar=3, lam=lam, p_assign=0.5, noise_sd=10.0, name=name,
        types=(
            LatentType("immediate_complier", 0.5, 1, NEVER, 50.0),
            LatentType("never_taker", 0.2, NEVER, NEVER, 45.0),
            LatentType("immediate_always_taker", 0.1, 1, 1, 35.0),
            LatentType("later_always_taker", 0.1, 2, 2, 38.0),
            LatentType("delay_complier", 0.1, 1, 3, 48.0),
        ),
    )


def _paper_calibrated() -> DgpConfig:
    # Control exposure rate 0.12 -> 0.29, treated 0.80 -> 0.83 across five waves.
    types = [
        LatentType("immediate_complier", 0.54, 1, NEVER, 72.0),
        LatentType("never_taker", 0.17, NEVER, NEVER, 74.0),
        LatentType("immediate_always_taker", 0.12, 1, 1, 61.0),
    ]
    for r in range(2, 6):
        types.append(LatentType(f"delay_complier_{r}", 0.035, 1, r, 70.0))
        types.append(LatentType(f"later_always_taker_{r}", 0.0075, r, r, 60.0))
    return DgpConfig(
        w_bar=5, lam=(4.0, 0.0, 0.0, 0.0, 0.0), p_assign=0.5, noise_sd=13.0, noise_rho=0.5,
        covariate_noise_sd=15.0, attrition=(0.17, 0.35, 0.55, 0.72, 0.87), n_regions=4,
        types=tuple(types), name="paper_calibrated",
    )


PRESETS = {
    "refA": lambda: _refA((4.0, 1.0, 0.5), "refA"),
    "refB": lambda: _refA((4.0, 0.0, 0.0), "refB"),
    "paper_calibrated": _paper_calibrated,
}


def preset(name: str, **changes) -> DgpConfig:
    try:
        cfg = PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(cfg, **changes) if changes else cfg


# --- sampling --------------------------------------------------------------------

def _potential_means(cfg: DgpConfig, mu: np.ndarray, T: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Noise-free realized outcome ``Y_w(T_w)`` for arrays of mu, T (n, W), z."""
    Lam0 = np.concatenate([[0.0], cfg.Lambda])
    drift = np.asarray(cfg.wave_drift)[None, :]
    return mu[:, None] + Lam0[T] + drift * (T >= 1) + cfg.direct_z_effect * z[:, None]


def _sample_block(cfg: DgpConfig, n: int, ss: np.random.SeedSequence):
    rng = np.random.Generator(np.random.Philox(ss))
    W = cfg.w_bar
    shares = np.array([t.share for t in cfg.types])
    k = np.searchsorted(np.cumsum(shares), rng.random(n) * shares.sum(), side="right")
    k = np.minimum(k, len(shares) - 1)
    z = (rng.random(n) < cfg.p_assign).astype(np.int64)
    r1 = np.array([t.r1 for t in cfg.types])[k]
    r0 = np.array([t.r0 for t in cfg.types])[k]
    mu = np.array([t.mu for t in cfg.types])[k]
    r = np.where(z == 1, r1, r0)
    T = exposure_level(r[:, None], np.arange(1, W + 1)[None, :])
    eps = rng.standard_normal((n, W))
    if cfg.noise_rho:
        c = math.sqrt(1 - cfg.noise_rho**2)
        for w in range(1, W):
            eps[:, w] = cfg.noise_rho * eps[:, w - 1] + c * eps[:, w]
    y = _potential_means(cfg, mu, T, z) + cfg.noise_sd * eps
    x = mu + cfg.covariate_noise_sd * rng.standard_normal(n)
    region = rng.integers(0, max(cfg.n_regions, 1), n)
    u = rng.random((n, W))
    att = np.where(z[:, None] == 1, cfg.attrition_rates(1)[None, :], cfg.attrition_rates(0)[None, :])
    y[u < att] = np.nan
    return z, r, y, x, region, k


def _covariates(cfg: DgpConfig, x: np.ndarray, region: np.ndarray):
    names = ["baseline_score"]
    cols = [x]
    for g in range(1, cfg.n_regions):
        names.append(f"region_{chr(ord('A') + g)}")
        cols.append((region == g).astype(float))
    return np.column_stack(cols), tuple(names)


def sample_dataset(cfg: DgpConfig, n: int, seed=None, jobs: int = 1, return_types: bool = False):
    """Draw ``n`` participants.

    Participants are generated in fixed blocks, each with its own Philox
    stream keyed by ``(seed, block)``, so output does not depend on ``jobs``
    and a smaller sample is a prefix of a larger one with the same seed.
    """
    if n < 1:
        raise ConfigError("n must be positive")
    if seed is None:
        seed = cfg.seed
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    sizes = [min(BLOCK, n - s) for s in range(0, n, BLOCK)]
    keys = [np.random.SeedSequence(root.entropy, spawn_key=tuple(root.spawn_key) + (b,))
            for b in range(len(sizes))]

    def block(m, key):
        # always draw a full block so the first n participants do not depend on n
        return tuple(a[:m] for a in _sample_block(cfg, BLOCK, key))

    if jobs > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(jobs) as ex:
            parts = list(ex.map(lambda a: block(*a), zip(sizes, keys)))
    else:
        parts = [block(m, kk) for m, kk in zip(sizes, keys)]
    z, r, y, x, region, k = (np.concatenate(p) for p in zip(*parts))
    cov, names = _covariates(cfg, x, region)
    d = PanelDataset(
        ids=np.arange(1, n + 1), z=z, revasc_wave=r, y=y,
        present=np.ones_like(y, dtype=bool), covariates=cov, covariate_names=names,
    )
    return (d, k) if return_types else d


def population_panel(cfg: DgpConfig, max_size: int = 2_000_000, min_size: int = 200) -> PanelDataset:
    """Integer-replicated panel whose empirical distribution *is* the population.

    Each (type, assignment, region) cell is repeated in proportion to its
    probability; outcomes and covariates are noise-free.  Attrition is
    ignored (missing completely at random leaves estimands unchanged).
    """
    R = max(cfg.n_regions, 1)
    cells = []
    for k, t in enumerate(cfg.types):
        for z, pz in ((1, cfg.p_assign), (0, 1 - cfg.p_assign)):
            for g in range(R):
                p = Fraction(t.share).limit_denominator(10**6) * Fraction(pz).limit_denominator(10**6) / R
                if p > 0:
                    cells.append((k, z, g, p))
    scale = math.lcm(*(c[3].denominator for c in cells))
    total = sum(int(c[3] * scale) for c in cells)
    # replicate small panels so stacked designs keep residual degrees of freedom
    scale *= max(1, -(-min_size // total))
    total = sum(int(c[3] * scale) for c in cells)
    if total > max_size:
        raise ConfigError(f"population panel would need {total} rows; shares too fine-grained")
    counts = np.array([int(c[3] * scale) for c in cells])
    k = np.repeat([c[0] for c in cells], counts)
    z = np.repeat([c[1] for c in cells], counts)
    g = np.repeat([c[2] for c in cells], counts)
    r = np.where(z == 1, np.array([t.r1 for t in cfg.types])[k], np.array([t.r0 for t in cfg.types])[k])
    mu = np.array([t.mu for t in cfg.types])[k]
    T = exposure_level(r[:, None], np.arange(1, cfg.w_bar + 1)[None, :])
    y = _potential_means(cfg, mu, T, z)
    cov, names = _covariates(cfg, mu.astype(float), g)
    return PanelDataset(
        ids=np.arange(1, len(k) + 1), z=z, revasc_wave=r, y=y, present=np.ones_like(y, dtype=bool),
        covariates=cov, covariate_names=names, population=True,
    )


# --- oracle ----------------------------------------------------------------------

@dataclass
class OracleReport:
    w_bar: int
    rate_control: np.ndarray
    rate_treated: np.ndarray
    first_stage: np.ndarray
    first_stage_exposure: np.ndarray
    rho: np.ndarray
    Pi: np.ndarray
    lam: np.ndarray
    Lambda: np.ndarray
    tau: np.ndarray
    tau_valid: np.ndarray
    lambda_valid: bool
    monotone: bool
    imco_holds: bool
    as_treated_gap: np.ndarray
    groups: dict = field(default_factory=dict)
    outcome_groups: dict = field(default_factory=dict)

    @property
    def itt(self) -> np.ndarray:
        return self.rho

    def to_dict(self) -> dict:
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, dict):
                return {str(k): conv(x) for k, x in v.items()}
            if isinstance(v, (np.bool_, np.floating, np.integer)):
                return v.item()
            if isinstance(v, float) and math.isnan(v):
                return None
            return v
        return {k: conv(v) for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _wmean(vals, wts):
    wts = np.asarray(wts, dtype=float)
    s = wts.sum()
    return float(np.dot(vals, wts) / s) if s > 0 else float("nan")


def population_oracle(cfg: DgpConfig) -> OracleReport:
    """Exact estimands by enumeration over latent types.

    ``λ`` solves ``ρ = Πλ`` with ``π_wt = E[D_wt|Z=1] - E[D_wt|Z=0]``.  Group
    means are share-weighted type means, computed from the type definitions
    rather than the identification formulas.
    """
    W = cfg.w_bar
    p = cfg.p_assign
    s = np.array([t.share for t in cfg.types])
    mu = np.array([t.mu for t in cfg.types])
    waves = np.arange(1, W + 1)
    T1 = exposure_level(np.array([t.r1 for t in cfg.types])[:, None], waves[None, :])
    T0 = exposure_level(np.array([t.r0 for t in cfg.types])[:, None], waves[None, :])
    Lam0 = np.concatenate([[0.0], cfg.Lambda])
    drift = np.asarray(cfg.wave_drift)

    def Y(t, w):  # noise-free potential outcome at wave w (1-based), no direct effect
        return mu + Lam0[t] + drift[w - 1] * (t >= 1)

    rate1 = (s[:, None] * (T1 > 0)).sum(0)
    rate0 = (s[:, None] * (T0 > 0)).sum(0)
    fs_exp = (s[:, None] * (T1 - T0)).sum(0).astype(float)
    Pi = np.zeros((W, W))
    rho = np.zeros(W)
    gap = np.zeros(W)
    for w in waves:
        j = w - 1
        for t in range(1, w + 1):
            Pi[j, t - 1] = np.dot(s, (T1[:, j] >= t).astype(float) - (T0[:, j] >= t))
        y1 = Y(T1[:, j], w) + cfg.direct_z_effect
        y0 = Y(T0[:, j], w)
        rho[j] = np.dot(s, y1 - y0)
        # as-treated contrast over (type, z) cells
        vals = np.concatenate([y1, y0])
        wts = np.concatenate([p * s, (1 - p) * s])
        V = np.concatenate([T1[:, j] > 0, T0[:, j] > 0])
        gap[j] = _wmean(vals[V], wts[V]) - _wmean(vals[~V], wts[~V])
    if np.any(np.abs(np.diag(Pi)) < 1e-12):
        raise np.linalg.LinAlgError("singular Π: no wave-1 compliers")
    lam = np.linalg.solve(Pi, rho)
    fs = rate1 - rate0
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = np.where(np.abs(fs) > 0, rho / fs, np.nan)

    monotone = all(_order(t.r1) <= _order(t.r0) for t in cfg.types)
    clean = monotone and cfg.direct_z_effect == 0 and not np.any(drift)
    lam_in = np.asarray(cfg.lam)
    tau_valid = np.array([clean and bool(np.all(lam_in[1:w] == 0)) for w in waves])
    imco = all(t.r1 == 1 for t in cfg.types if t.r1 != t.r0)

    groups, ogroups = {}, {}
    imm_c = T1[:, 0] > T0[:, 0]
    imm_at = (T1[:, 0] == 1) & (T0[:, 0] == 1)
    for w in waves:
        j = w - 1
        same = T1[:, j] == T0[:, j]
        late_at = same & (T1[:, j] >= 1) & (T1[:, j] < w)
        marg_at = same & (T1[:, j] >= 1)
        imm_w = same & (T1[:, j] == w)
        v1, v0 = T1[:, j] > 0, T0[:, j] > 0
        any_c = v1 & ~v0
        any_at = v1 & v0
        treated = p * np.dot(s, v1) + (1 - p) * np.dot(s, v0)
        g = {
            "immediate_complier": _wmean(mu, s * imm_c),
            "immediate_at": _wmean(mu, s * imm_at),
            "later_at": _wmean(mu, s * late_at),
            "marginal_at": _wmean(mu, s * marg_at),
            "pi": _wmean(imm_w, s * marg_at),
            "at_share": float(np.dot(s, marg_at)),
            "at_share_treated": float(np.dot(s, marg_at) / treated) if treated else float("nan"),
            "complier": _wmean(mu, s * (T1[:, j] > T0[:, j])),
            "any_complier": _wmean(mu, s * any_c),
            "any_at": _wmean(mu, s * any_at),
            "any_complier_share": float(np.dot(s, any_c)),
            "any_at_share": float(np.dot(s, any_at)),
            "any_at_share_treated": float(np.dot(s, any_at) / treated) if treated else float("nan"),
            "disaggregated_complier": {
                t: _wmean(mu, s * ((T1[:, j] == w) & (T0[:, j] == t))) for t in range(w)},
            "disaggregated_at_nt": {
                t: _wmean(mu, s * (same & (T1[:, j] == t))) for t in range(w)},
        }
        groups[w] = g
        yw1 = Y(T1[:, j], w)
        ogroups[w] = {
            "immediate_complier": _wmean(Y(np.full_like(T1[:, j], w), w), s * imm_c),
            "immediate_at": _wmean(yw1, s * imm_at),
            "later_at": _wmean(yw1, s * late_at),
            "marginal_at": _wmean(yw1, s * marg_at),
            "disaggregated_complier": {
                t: _wmean(Y(np.full_like(T1[:, j], t), w), s * ((T1[:, j] == w) & (T0[:, j] == t)))
                for t in range(w)},
            "disaggregated_at_nt": {
                t: _wmean(Y(np.full_like(T1[:, j], t), w), s * (same & (T1[:, j] == t))) for t in range(w)},
        }
    return OracleReport(
        w_bar=W, rate_control=rate0, rate_treated=rate1, first_stage=fs, first_stage_exposure=fs_exp,
        rho=rho, Pi=Pi, lam=lam, Lambda=np.cumsum(lam), tau=tau, tau_valid=tau_valid,
        lambda_valid=clean, monotone=monotone, imco_holds=imco, as_treated_gap=gap,
        groups=groups, outcome_groups=ogroups,
    )


# --- Monte Carlo -------------------------------------------------------------------

ESTIMATORS = ("incremental", "cumulative", "wald", "any_exposure", "hausman")


def _one_rep(cfg: DgpConfig, n: int, rep: int, estimators: Sequence[str], controls):
    from . import estimators as est

    d = sample_dataset(cfg, n, seed=np.random.SeedSequence(cfg.seed, spawn_key=(1, rep)))
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if "incremental" in estimators:
            e = est.incremental_effects(d, controls)
            out["incremental"] = (e.levels, e.coef, e.se, e.equality.p if e.equality else np.nan)
        if "cumulative" in estimators:
            e = est.cumulative_effects(d, controls)
            out["cumulative"] = (e.levels, e.coef, e.se, e.equality.p if e.equality else np.nan)
        if "wald" in estimators:
            e = est.wald_late_wave1(d)
            out["wald"] = ([1], e.coef, e.se, np.nan)
        if "any_exposure" in estimators:
            fit, j = est.any_exposure_stacked(d, controls)
            out["any_exposure"] = ([0], np.array([fit["V"]]), np.array([fit.se_of("V")]), j.p)
        if "hausman" in estimators:
            h = est.hausman_table(d, controls)
            out["hausman"] = (h.levels, h.diff, h.diff_se, h.joint.p)
    return out


def _safe_rep(args):
    try:
        return _one_rep(*args)
    except Exception as exc:  # noqa: BLE001 - failures are tallied, not fatal
        return exc


@dataclass
class McSummary:
    config: str
    n: int
    reps: int
    failures: int
    params: dict
    reject_rate: dict

    def to_dict(self) -> dict:
        return {"config": self.config, "n": self.n, "reps": self.reps, "failures": self.failures,
                "params": self.params, "reject_rate": self.reject_rate}


def mc_study(cfg: DgpConfig, n: int, reps: int, estimators: Sequence[str] = ("incremental", "cumulative"),
             controls=(), alpha: float = 0.05, jobs: int = 1) -> McSummary:
    """Repeated sampling study against the population oracle.

    Replication ``i`` draws from sub-stream ``(cfg.seed, 1, i)``, so results
    do not depend on ``jobs``.  Reports bias, empirical SD, mean reported
    SE and 95% CI coverage per parameter, plus rejection rates at ``alpha``
    for each estimator's test (equality, Hansen J or joint 2SLS-OLS).
    """
    if reps < 2:
        raise ConfigError("mc_study needs reps >= 2")
    unknown = set(estimators) - set(ESTIMATORS)
    if unknown:
        raise ConfigError(f"unknown estimators {sorted(unknown)}")
    oracle = population_oracle(cfg)
    truth = {
        "incremental": oracle.lam, "cumulative": oracle.Lambda, "wald": oracle.lam[:1],
        "any_exposure": oracle.tau[:1], "hausman": None,
    }
    args = [(cfg, n, i, tuple(estimators), controls) for i in range(reps)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_safe_rep, args, chunksize=max(1, reps // (4 * jobs))))
    else:
        results = [_safe_rep(a) for a in args]
    ok = [r for r in results if not isinstance(r, Exception)]
    failures = reps - len(ok)
    if failures > reps / 2:
        errs = sorted({f"{type(r).__name__}: {r}" for r in results if isinstance(r, Exception)})
        raise RuntimeError(f"{failures}/{reps} replications failed; e.g. {errs[:3]}")
    params, reject = {}, {}
    crit = 1.959963984540054
    for name in estimators:
        rows = [r[name] for r in ok]
        pvals = np.array([r[3] for r in rows], dtype=float)
        if np.any(np.isfinite(pvals)):
            key = {"any_exposure": "hansen_j", "hausman": "hausman"}.get(name, f"{name}_equality")
            reject[key] = float(np.mean(pvals[np.isfinite(pvals)] < alpha))
        lv = rows[0][0]
        rows = [r for r in rows if list(r[0]) == list(lv)]
        est_m = np.array([r[1] for r in rows])
        se_m = np.array([r[2] for r in rows])
        tr = truth[name]
        for j, lev in enumerate(lv):
            label = {"incremental": f"lambda_{lev}", "cumulative": f"Lambda_{lev}", "wald": "wald",
                     "any_exposure": "tau", "hausman": f"diff_{lev}"}[name]
            t = 0.0 if tr is None else float(tr[lev - 1] if name in ("incremental", "cumulative") else tr[0])
            b, s = est_m[:, j], se_m[:, j]
            params[label] = {
                "truth": t, "bias": float(b.mean() - t), "emp_sd": float(b.std(ddof=1)),
                "mean_se": float(s.mean()), "coverage": float(np.mean(np.abs(b - t) <= crit * s)),
            }
    return McSummary(cfg.name, n, reps, failures, params, reject)
