"""Trial panel data model: participants, absorbing exposure, CSV ingestion.

A participant is summarised by assignment ``z``, the wave of first
revascularization ``revasc_wave`` (``NEVER`` if untreated through the last
wave), per-wave outcomes and time-invariant baseline covariates.  Exposure in
wave ``w`` is derived, never stored: ``T_w = w - r + 1`` once ``w >= r``.

Storage is columnar (numpy arrays) so that panels with hundreds of thousands
of participants stay cheap; :class:`ParticipantRecord` is a row view.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

NEVER = 0


class PanelError(ValueError):
    """Raised when panel input violates the trial data contract."""


@dataclass(frozen=True)
class ParticipantRecord:
    id: object
    z: int
    revasc_wave: int
    outcomes: dict[int, float | None]
    baseline_covariates: dict[str, float]

    def exposure(self, w: int) -> int:
        return exposure_level(self.revasc_wave, w)


def exposure_level(r, w):
    """Years of exposure at wave ``w`` for first-treatment wave ``r``.

    Works elementwise on arrays.  ``r == NEVER`` gives 0.
    """
    r = np.asarray(r)
    w = np.asarray(w)
    t = np.where((r != NEVER) & (w >= r), w - r + 1, 0)
    return t if t.ndim else int(t)


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Validated collection of participants observed over ``w_bar`` waves.

    Attributes
    ----------
    ids : (n,) array of participant identifiers (cluster keys).
    z : (n,) int array, assignment.
    revasc_wave : (n,) int array, first exposure wave or ``NEVER``.
    y : (n, w_bar) float array, NaN where the outcome is missing.
    present : (n, w_bar) bool array, True where a row exists for (id, wave).
    covariates : (n, k) float array of baseline covariates.
    covariate_names : names of the covariate columns.
    control_names : default controls used by the stacked designs.
    population : True if the panel enumerates a population exactly
        (integer-replicated latent-type cells); sampling errors are then zero.
    """

    ids: np.ndarray
    z: np.ndarray
    revasc_wave: np.ndarray
    y: np.ndarray
    present: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...] = ()
    control_names: tuple[str, ...] = ()
    population: bool = False
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.ids)
        y = np.asarray(self.y, dtype=float).reshape(n, -1)
        present = np.asarray(self.present, dtype=bool).reshape(y.shape)
        cov = np.asarray(self.covariates, dtype=float).reshape(n, len(self.covariate_names))
        object.__setattr__(self, "ids", np.asarray(self.ids))
        object.__setattr__(self, "z", np.asarray(self.z, dtype=np.int64))
        object.__setattr__(self, "revasc_wave", np.asarray(self.revasc_wave, dtype=np.int64))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "present", present)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "control_names", tuple(self.control_names))
        for arr in (self.z, self.revasc_wave, self.y, self.present, self.covariates):
            arr.flags.writeable = False

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def w_bar(self) -> int:
        return self.y.shape[1]

    @property
    def waves(self) -> range:
        return range(1, self.w_bar + 1)

    @property
    def observed(self) -> np.ndarray:
        """(n, w_bar) mask of observed outcomes."""
        return self.present & ~np.isnan(self.y)

    def exposure_matrix(self) -> np.ndarray:
        """(n, w_bar) matrix of ``T_w``."""
        w = np.arange(1, self.w_bar + 1)
        return exposure_level(self.revasc_wave[:, None], w[None, :])

    def covariate(self, name: str) -> np.ndarray:
        try:
            j = self.covariate_names.index(name)
        except ValueError:
            raise KeyError(f"unknown covariate {name!r}; have {list(self.covariate_names)}") from None
        return self.covariates[:, j]

    def position(self, pid) -> int:
        if self._index is None:
            object.__setattr__(self, "_index", {k: i for i, k in enumerate(self.ids.tolist())})
        try:
            return self._index[pid]
        except KeyError:
            raise KeyError(f"unknown participant id {pid!r}") from None

    def record(self, i: int) -> ParticipantRecord:
        outcomes = {
            w: (None if np.isnan(self.y[i, w - 1]) else float(self.y[i, w - 1]))
            for w in self.waves
            if self.present[i, w - 1]
        }
        return ParticipantRecord(
            id=self.ids[i].item() if hasattr(self.ids[i], "item") else self.ids[i],
            z=int(self.z[i]),
            revasc_wave=int(self.revasc_wave[i]),
            outcomes=outcomes,
            baseline_covariates=dict(zip(self.covariate_names, self.covariates[i].tolist())),
        )

    @property
    def participants(self) -> list[ParticipantRecord]:
        return [self.record(i) for i in range(self.n)]

    def subset_waves(self, waves: Sequence[int]) -> "PanelDataset":
        """Restrict to waves ``1..max(waves)``; rows outside ``waves`` are dropped."""
        waves = sorted(set(int(w) for w in waves))
        if not waves or waves[0] < 1 or waves[-1] > self.w_bar:
            raise PanelError(f"waves {waves} not within 1..{self.w_bar}")
        top = waves[-1]
        keep = np.zeros(self.w_bar, dtype=bool)
        keep[[w - 1 for w in waves]] = True
        present = self.present & keep[None, :]
        r = np.where(self.revasc_wave > top, NEVER, self.revasc_wave)
        return PanelDataset(
            ids=self.ids, z=self.z, revasc_wave=r,
            y=self.y[:, :top], present=present[:, :top],
            covariates=self.covariates, covariate_names=self.covariate_names,
            control_names=self.control_names, population=self.population,
        )

    def equals(self, other: "PanelDataset") -> bool:
        return (
            self.covariate_names == other.covariate_names
            and self.w_bar == other.w_bar
            and np.array_equal(self.ids.astype(str), other.ids.astype(str))
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.revasc_wave, other.revasc_wave)
            and np.array_equal(self.present, other.present)
            and np.array_equal(self.y, other.y, equal_nan=True)
            and np.array_equal(self.covariates, other.covariates)
        )


def exposure(d: PanelDataset, pid, w: int) -> int:
    """Exposure ``T_w`` of participant ``pid``."""
    if not 1 <= w <= d.w_bar:
        raise PanelError(f"wave {w} out of range 1..{d.w_bar}")
    return exposure_level(int(d.revasc_wave[d.position(pid)]), w)


def validate_panel(d: PanelDataset) -> list[str]:
    """Return human-readable violations; empty iff the panel is valid."""
    out = []
    if d.w_bar < 1:
        out.append("w_bar must be at least 1")
    ids = d.ids.tolist()
    if len(set(ids)) != len(ids):
        seen = set()
        for pid in ids:
            if pid in seen:
                out.append(f"id={pid}: duplicate id")
            seen.add(pid)
    for i in np.flatnonzero(~np.isin(d.z, (0, 1))):
        out.append(f"id={ids[i]}: assignment not binary (z={d.z[i]})")
    bad = (d.revasc_wave != NEVER) & ((d.revasc_wave < 1) | (d.revasc_wave > d.w_bar))
    for i in np.flatnonzero(bad):
        out.append(f"id={ids[i]}: revasc_wave out of range ({d.revasc_wave[i]})")
    for arm in (0, 1):
        if not np.any(d.z == arm):
            out.append(f"no participant assigned z={arm}")
    return out


def check_panel(d: PanelDataset) -> PanelDataset:
    problems = validate_panel(d)
    if problems:
        head = "; ".join(problems[:5])
        more = f" (+{len(problems) - 5} more)" if len(problems) > 5 else ""
        raise PanelError(f"invalid panel: {head}{more}")
    return d


def from_records(
    records: Iterable[ParticipantRecord],
    w_bar: int,
    control_names: Sequence[str] = (),
) -> PanelDataset:
    records = list(records)
    names = sorted({k for r in records for k in r.baseline_covariates})
    n = len(records)
    y = np.full((n, w_bar), np.nan)
    present = np.zeros((n, w_bar), dtype=bool)
    cov = np.full((n, len(names)), np.nan)
    for i, r in enumerate(records):
        for w, v in r.outcomes.items():
            present[i, w - 1] = True
            if v is not None:
                y[i, w - 1] = v
        for j, k in enumerate(names):
            cov[i, j] = r.baseline_covariates.get(k, np.nan)
    return PanelDataset(
        ids=np.array([r.id for r in records]),
        z=np.array([r.z for r in records]),
        revasc_wave=np.array([r.revasc_wave for r in records]),
        y=y, present=present, covariates=cov, covariate_names=tuple(names),
        control_names=tuple(control_names),
    )


# --- CSV ---------------------------------------------------------------------

DEFAULT_SCHEMA = {"id": "id", "wave": "wave", "z": "z", "t_exposure": "t_exposure",
                  "revasc_wave": "revasc_wave", "y": "y"}


def _revasc_from_exposure(pid, waves: np.ndarray, t: np.ndarray) -> int:
    """Recover the first-exposure wave from a (wave, T_w) sequence."""
    order = np.argsort(waves)
    waves, t = waves[order], t[order]
    if np.any(t < 0) or np.any(t > waves):
        raise PanelError(f"id={pid}: exposure outside 0..wave")
    treated = t > 0
    if not treated.any():
        return NEVER
    r_each = waves[treated] - t[treated] + 1
    r = int(r_each[0])
    if np.any(r_each != r) or np.any(waves[~treated] >= r):
        raise PanelError(f"id={pid}: non-absorbing exposure {t.tolist()} at waves {waves.tolist()}")
    return r


def _to_float(s: pd.Series, errors: str = "raise") -> pd.Series:
    """Numeric conversion that parses text with ``float`` (correctly rounded).

    ``pd.to_numeric`` may be off by one ulp, which breaks exact round trips.
    """
    if s.dtype != object:
        return pd.to_numeric(s, errors=errors).astype(float)

    def conv(v):
        if v is None or (isinstance(v, float) and np.isnan(v)) or v == "":
            return np.nan
        try:
            return float(v)
        except (TypeError, ValueError):
            if errors == "raise":
                raise ValueError(f"could not convert {v!r} to a number") from None
            return np.nan

    return s.map(conv).astype(float)


def _expand_categoricals(df: pd.DataFrame, cols: Sequence[str]) -> tuple[pd.DataFrame, list[str]]:
    """Numeric columns pass through; others become indicators minus the first level."""
    out = {}
    names = []
    for c in cols:
        s = df[c]
        num = _to_float(s, errors="coerce")
        if num.notna().sum() == s.notna().sum():
            out[c] = num
            names.append(c)
            continue
        levels = sorted(s.dropna().astype(str).unique())
        for lev in levels[1:]:
            name = f"{c}_{lev}"
            out[name] = (s.astype(str) == lev).astype(float).where(s.notna())
            names.append(name)
    return pd.DataFrame(out, index=df.index), names


def ingest_frame(
    df: pd.DataFrame,
    schema: Mapping[str, str] | None = None,
    covariates: Sequence[str] | None = None,
    control_names: Sequence[str] = (),
    w_bar: int | None = None,
) -> PanelDataset:
    """Build a validated panel from a long-format frame (one row per id-wave)."""
    sc = dict(DEFAULT_SCHEMA)
    sc.update(schema or {})
    for key in ("id", "wave", "z"):
        if sc[key] not in df.columns:
            raise PanelError(f"missing required column {sc[key]!r}")
    has_t = sc["t_exposure"] in df.columns
    has_r = sc["revasc_wave"] in df.columns
    if not (has_t or has_r):
        raise PanelError(f"need a {sc['t_exposure']!r} or {sc['revasc_wave']!r} column")
    if sc["y"] not in df.columns:
        raise PanelError(f"missing outcome column {sc['y']!r}")

    reserved = {sc[k] for k in sc}
    if covariates is None:
        covariates = [c for c in df.columns if c not in reserved]
    missing = [c for c in covariates if c not in df.columns]
    if missing:
        raise PanelError(f"unknown covariate columns {missing}")

    df = df.copy()
    try:
        df[sc["wave"]] = pd.to_numeric(df[sc["wave"]], errors="raise").astype(np.int64)
        zcol = pd.to_numeric(df[sc["z"]], errors="raise")
        y = _to_float(df[sc["y"]])
    except (ValueError, TypeError) as exc:
        raise PanelError(f"malformed rows: {exc}") from None
    if zcol.isna().any() or not zcol.isin([0, 1]).all():
        raise PanelError("z not in {0,1}")
    df[sc["z"]] = zcol.astype(np.int64)
    df["__y"] = y
    if (df[sc["wave"]] < 1).any():
        raise PanelError("wave index must be >= 1")
    if df.duplicated([sc["id"], sc["wave"]]).any():
        dup = df.loc[df.duplicated([sc["id"], sc["wave"]]), [sc["id"], sc["wave"]]].iloc[0].tolist()
        raise PanelError(f"duplicate (id, wave) {tuple(dup)}")

    cov_frame, cov_names = _expand_categoricals(df, covariates)
    W = int(w_bar or df[sc["wave"]].max())
    if df[sc["wave"]].max() > W:
        raise PanelError(f"wave above w_bar={W}")

    ids, first = np.unique(df[sc["id"]].to_numpy(), return_index=True)
    # keep ids in order of first appearance
    ids = df[sc["id"]].to_numpy()[np.sort(first)]
    pos = {k: i for i, k in enumerate(ids.tolist())}
    n = len(ids)
    row_i = np.array([pos[k] for k in df[sc["id"]].tolist()], dtype=np.int64)
    row_w = df[sc["wave"]].to_numpy()

    z = np.full(n, -1, dtype=np.int64)
    zr = df[sc["z"]].to_numpy()
    z[row_i] = zr
    if np.any(z[row_i] != zr):
        raise PanelError("inconsistent z across waves for one id")

    Y = np.full((n, W), np.nan)
    present = np.zeros((n, W), dtype=bool)
    Y[row_i, row_w - 1] = df["__y"].to_numpy()
    present[row_i, row_w - 1] = True

    cov = np.full((n, len(cov_names)), np.nan)
    cv = cov_frame.to_numpy(dtype=float)
    cov[row_i] = cv
    if len(cov_names) and np.any(~np.isclose(cov[row_i], cv, equal_nan=True)):
        raise PanelError("baseline covariates vary across waves")

    r = np.zeros(n, dtype=np.int64)
    if has_r:
        rv = pd.to_numeric(df[sc["revasc_wave"]].replace("", np.nan), errors="coerce").fillna(NEVER)
        rv = rv.to_numpy().astype(np.int64)
        r[row_i] = rv
        if np.any(r[row_i] != rv):
            raise PanelError("inconsistent revasc_wave across waves for one id")
    if has_t:
        tv = pd.to_numeric(df[sc["t_exposure"]], errors="coerce")
        if tv.isna().any():
            raise PanelError("malformed t_exposure values")
        tv = tv.to_numpy().astype(np.int64)
        order = np.argsort(row_i, kind="stable")
        bounds = np.flatnonzero(np.diff(row_i[order])) + 1
        for grp in np.split(order, bounds):
            i = row_i[grp[0]]
            ri = _revasc_from_exposure(ids[i], row_w[grp], tv[grp])
            if has_r and ri != r[i] and not (ri == NEVER and r[i] > row_w[grp].max()):
                raise PanelError(f"id={ids[i]}: t_exposure disagrees with revasc_wave")
            if not has_r:
                r[i] = ri
    d = PanelDataset(
        ids=ids, z=z, revasc_wave=r, y=Y, present=present,
        covariates=cov, covariate_names=tuple(cov_names),
        control_names=tuple(control_names),
    )
    return check_panel(d)


def ingest_csv(
    path: str | os.PathLike,
    schema: Mapping[str, str] | None = None,
    covariates: Sequence[str] | None = None,
    control_names: Sequence[str] = (),
    w_bar: int | None = None,
) -> PanelDataset:
    """Read a long-format CSV (``id,wave,z,t_exposure,y,<covariates>``).

    Empty ``y`` cells are kept as attrited observations.  Exposure may be given
    per wave (``t_exposure``) or as ``revasc_wave``; either way it is reduced
    to a single first-exposure wave and an inconsistent sequence is an error.
    """
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise PanelError(f"malformed CSV: {exc}") from None
    df = df.replace({"": np.nan}).infer_objects()
    sc = dict(DEFAULT_SCHEMA, **(schema or {}))
    if sc["id"] in df.columns:
        idcol = df[sc["id"]]
        num = pd.to_numeric(idcol, errors="coerce")
        if num.notna().all() and (num == num.round()).all():
            df[sc["id"]] = num.astype(np.int64)
    return ingest_frame(df, schema, covariates, control_names, w_bar)


def _fmt(v: float) -> str:
    if np.isnan(v):
        return ""
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def emit_csv(d: PanelDataset, path: str | os.PathLike | None = None) -> str:
    """Write the panel in long format; returns the CSV text.

    Rows are ordered by participant then wave.  Floats use ``repr`` so the
    output round-trips exactly and is byte-stable for a given dataset.
    """
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["id", "wave", "z", "t_exposure", "y", *d.covariate_names])
    T = d.exposure_matrix()
    cov_txt = [[_fmt(v) for v in row] for row in d.covariates.tolist()]
    ids = d.ids.tolist()
    for i in range(d.n):
        for w in range(d.w_bar):
            if not d.present[i, w]:
                continue
            wr.writerow([ids[i], w + 1, int(d.z[i]), int(T[i, w]), _fmt(d.y[i, w]), *cov_txt[i]])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
