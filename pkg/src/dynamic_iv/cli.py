"""Command-line entry point: ``dynamic-iv {simulate,estimate,characterize,oracle,mc}``.

Every flag can also be set through an environment variable named
``DYNIV_<FLAG>`` (upper case, dashes as underscores), e.g. ``DYNIV_SEED=7``.
Command-line values win.  Outputs are written to temporary files and renamed
into place only after every output of the command has been produced.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import characterization as ch
from . import estimators as est
from .panel import PanelDataset, emit_csv, ingest_csv
from .regression import _jsonable
from .simulation import ConfigError, DgpConfig, mc_study, population_oracle, preset, sample_dataset

ENV_PREFIX = "DYNIV_"
DEFAULT_SEED = 20250101


class Outputs:
    """Collects files and commits them atomically."""

    def __init__(self, out_dir: Path):
        self.dir = Path(out_dir)
        self.pending: list[tuple[Path, Path]] = []

    def add(self, name: str, text: str):
        self.dir.mkdir(parents=True, exist_ok=True)
        target = self.dir / name
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=self.dir)
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        self.pending.append((Path(tmp), target))

    def add_json(self, name: str, obj):
        self.add(name, json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=True) + "\n")

    def commit(self) -> list[Path]:
        for tmp, target in self.pending:
            os.replace(tmp, target)
        done = [t for _, t in self.pending]
        self.pending = []
        return done

    def discard(self):
        for tmp, _ in self.pending:
            tmp.unlink(missing_ok=True)
        self.pending = []


def _env(name, default=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), default)


def parse_waves(text: str | None):
    if not text:
        return None
    text = text.strip()
    if ".." in text:
        a, b = text.split("..")
        return list(range(int(a), int(b) + 1))
    return [int(v) for v in text.split(",") if v]


def _split(text):
    return [c.strip() for c in text.split(",") if c.strip()] if text else []


def _config(args) -> DgpConfig:
    if args.config:
        cfg = DgpConfig.from_json(args.config)
    else:
        cfg = preset(args.preset or "refA")
    if args.seed is not None:
        cfg = replace(cfg, seed=int(args.seed))
    return cfg


def _load(args) -> PanelDataset:
    if not args.input:
        raise ConfigError("--input is required")
    schema = {"y": args.outcome, "id": args.cluster}
    d = ingest_csv(args.input, schema=schema, control_names=_split(args.controls))
    waves = parse_waves(args.waves)
    if waves:
        d = d.subset_waves(waves)
    return d


def _table(df, fmt):
    if fmt == "csv":
        return df.to_csv(index=False, lineterminator="\n", float_format="%.10g")
    return json.dumps(_jsonable(df.to_dict(orient="records")), indent=2) + "\n"


# --- subcommands -------------------------------------------------------------------

def cmd_simulate(args, out: Outputs):
    cfg = _config(args)
    n = int(args.n)
    if n < 1:
        raise ConfigError("--n must be positive")
    d = sample_dataset(cfg, n, jobs=int(args.jobs))
    name = Path(args.output).name if args.output else "simulated.csv"
    stem = name[:-4] if name.endswith(".csv") else name
    out.add(name, emit_csv(d))
    out.add(f"{stem}.oracle.json", population_oracle(cfg).to_json() + "\n")
    out.add(f"{stem}.config.json", cfg.to_json() + "\n")


def cmd_estimate(args, out: Outputs):
    d = _load(args)
    fmt = args.format
    controls = list(d.control_names)
    report = {"waves": list(d.waves), "controls": controls, "n_participants": d.n}
    out.add(f"wave_summary.{fmt}", _table(est.wave_summary(d), fmt))
    report["wald_late_wave1"] = est.wald_late_wave1(d)
    out.add(f"any_exposure_series.{fmt}", _table(est.any_exposure_series(d, controls), fmt))
    if d.w_bar < 2:
        notice = {"notice": "insufficient waves: dynamic effects need at least 2 waves"}
        for key in ("incremental", "cumulative", "any_exposure_stacked", "hausman"):
            report[key] = notice
        out.add(f"cumulative_series.{fmt}", _table(pd.DataFrame([notice]), fmt))
    else:
        inc = est.incremental_effects(d, controls)
        cum = est.cumulative_effects(d, controls)
        report["incremental"] = inc
        report["cumulative"] = cum
        report["acr_weights"] = est.acr_weights(d)
        fit, j = est.any_exposure_stacked(d, controls)
        report["any_exposure_stacked"] = {"fit": fit, "hansen_j": j}
        out.add(f"cumulative_series.{fmt}", _table(est.cumulative_series(cum), fmt))
        h = est.hausman_table(d, controls, bootstrap=int(args.bootstrap), seed=int(args.seed or DEFAULT_SEED))
        report["hausman"] = h
        out.add("hausman_table.csv", h.to_csv())
    out.add_json("estimates.json", report)


def cmd_characterize(args, out: Outputs):
    d = _load(args)
    covs = _split(args.covariates) or list(d.covariate_names[:1])
    for c in covs:
        d.covariate(c)
    fmt = args.format
    tab = ch.group_means_table(d, covs)
    if fmt == "csv":
        out.add("group_means.csv", tab.to_csv())
    else:
        out.add_json("group_means.json", tab.to_dict())
    diag = ch.imco_diagnostic(d)
    out.add(f"exposure_histogram.{fmt}", _table(diag.histogram, fmt))
    out.add_json("imco.json", diag.waves.to_dict(orient="records"))


def cmd_oracle(args, out: Outputs):
    cfg = _config(args)
    out.add("oracle.json", population_oracle(cfg).to_json() + "\n")


def cmd_mc(args, out: Outputs):
    cfg = _config(args)
    names = _split(args.estimators) or ["incremental", "cumulative", "any_exposure"]
    res = mc_study(cfg, int(args.n), int(args.reps), names, controls=_split(args.controls), jobs=int(args.jobs))
    out.add_json("mc_summary.json", res.to_dict())


COMMANDS = {
    "simulate": cmd_simulate, "estimate": cmd_estimate, "characterize": cmd_characterize,
    "oracle": cmd_oracle, "mc": cmd_mc,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynamic-iv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--output-dir", default=_env("output_dir", "."))
        sp.add_argument("--format", choices=("json", "csv"), default=_env("format", "json"))
        sp.add_argument("--seed", default=_env("seed"), type=int)

    def data(sp):
        sp.add_argument("--input", default=_env("input"))
        sp.add_argument("--outcome", default=_env("outcome", "y"))
        sp.add_argument("--controls", default=_env("controls", ""))
        sp.add_argument("--cluster", default=_env("cluster", "id"))
        sp.add_argument("--waves", default=_env("waves"))

    def dgp(sp):
        sp.add_argument("--preset", default=_env("preset"))
        sp.add_argument("--config", default=_env("config"))

    s = sub.add_parser("simulate", help="draw a synthetic trial panel")
    common(s)
    dgp(s)
    s.add_argument("--n", type=int, default=_env("n", 1000))
    s.add_argument("--output", default=_env("output"))
    s.add_argument("--jobs", type=int, default=_env("jobs", 1))

    s = sub.add_parser("estimate", help="wave summary, dynamic IV effects, 2SLS vs OLS")
    common(s)
    data(s)
    s.add_argument("--bootstrap", type=int, default=_env("bootstrap", 0),
                   help="pairs-cluster bootstrap replications for cross-check SEs")

    s = sub.add_parser("characterize", help="complier and always-taker means")
    common(s)
    data(s)
    s.add_argument("--covariates", default=_env("covariates", ""))

    s = sub.add_parser("oracle", help="exact population estimands for a DGP")
    common(s)
    dgp(s)

    s = sub.add_parser("mc", help="Monte Carlo study against the oracle")
    common(s)
    dgp(s)
    s.add_argument("--n", type=int, default=_env("n", 5000))
    s.add_argument("--reps", type=int, default=_env("reps"))
    s.add_argument("--estimators", default=_env("estimators", ""))
    s.add_argument("--controls", default=_env("controls", ""))
    s.add_argument("--jobs", type=int, default=_env("jobs", 1))
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "mc" and args.reps is None:
        parser.error("mc requires --reps")
    out_dir = Path(args.output_dir)
    if getattr(args, "output", None) and Path(args.output).parent != Path("."):
        out_dir = Path(args.output).parent
    out = Outputs(out_dir)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            COMMANDS[args.command](args, out)
        written = out.commit()
    except (ValueError, KeyError, OSError, np.linalg.LinAlgError) as exc:
        out.discard()
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"dynamic-iv {args.command}: error: {msg}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
