"""Command-line front end: ``ris-lab <command> --config FILE [--seed S] [--out DIR]``.

Configuration is TOML. Every accepted key is listed in :data:`KEYS`; unknown
sections or keys are rejected. Each command writes one CSV plus a JSON
manifest next to it.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, mc, snr
from .channel import Geometry, ScenarioConfig
from .errors import (ConfigParseError, ConfigValidationError, DomainError, RisLabError,
                     SeriesConvergenceError)
from .specfun import SeriesControl

EXIT_OK = 0
EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_NONCONVERGENCE = 5
EXIT_RUNTIME = 6
CSV_SCHEMA = "1"


@dataclass(frozen=True)
class Key:
    section: str
    name: str
    kind: type
    default: object
    doc: str


KEYS = (
    Key("experiment", "method", str, "sd_los", "phase design: sd_los | sd_svd | isd | cisd | random"),
    Key("experiment", "layout", str, "C", "user drops: A one cluster, B two clusters, C independent"),
    Key("experiment", "drops", int, 100, "user drops (full-scale studies used 1e4)"),
    Key("experiment", "replicates", int, 1000, "channel replicates per drop (full scale 1e6)"),
    Key("experiment", "seed", int, 0, "master seed; --seed overrides"),
    Key("arrays", "M", int, 16, "BS antennas"),
    Key("arrays", "N", int, 128, "RIS elements"),
    Key("arrays", "K", int, 4, "users, one subsurface each"),
    Key("arrays", "m_x", int, None, "BS elements per row (default: smallest divisor of M >= sqrt M)"),
    Key("arrays", "n_x", int, None, "RIS elements per row (default: smallest divisor of N >= sqrt N)"),
    Key("arrays", "d_b", float, 0.5, "BS element spacing in wavelengths"),
    Key("arrays", "d_r", float, 0.1, "RIS element spacing in wavelengths"),
    Key("arrays", "partition", list, None, "subsurface sizes n_k (default: N/K each; K must divide N)"),
    Key("links", "kappa_d", float, 1.0, "UE-BS Ricean K-factor, linear (inf = pure LoS)"),
    Key("links", "kappa_rb", float, 1.0, "RIS-BS Ricean K-factor, linear"),
    Key("links", "kappa_ur", float, 1.0, "UE-RIS Ricean K-factor, linear"),
    Key("links", "alpha_d", float, 3.5, "UE-BS path-loss exponent"),
    Key("links", "alpha_rb", float, 2.0, "RIS-BS path-loss exponent (LoS value)"),
    Key("links", "alpha_ur", float, 2.8, "UE-RIS path-loss exponent"),
    Key("links", "c0_db", float, -30.0, "path loss at the 1 m reference distance, dB"),
    Key("geometry", "ris_distance", float, 40.0, "BS-RIS distance, m"),
    Key("geometry", "ris_angle", float, math.pi / 4, "RIS bearing from the BS, rad"),
    Key("geometry", "corridor_half_width", float, 2.5, "half width of the user corridor, m"),
    Key("geometry", "corridor_length", float, 16.0, "corridor length from the RIS towards the BS, m"),
    Key("geometry", "exclusion_radius", float, 1.0, "no users within this distance of the RIS, m"),
    Key("cisd", "tol", float, 1e-4, "relative total-SNR change that ends CISD"),
    Key("cisd", "max_iters", int, 50, "CISD sweep cap"),
    Key("calibration", "anchor", str, "none",
        "none | general | general_dr05 | los_rb: set Es/sigma^2 so the anchor's SD mean SNR is 5 dB"),
    Key("calibration", "es_over_sigma2", float, 1.0, "linear Es/sigma^2 used when anchor = none"),
    Key("calibration", "drops", int, 20, "drops averaged by the calibration"),
    Key("analytic", "case", str, "general", "closed form for mean-snr: general | case1 | case2"),
    Key("series", "rel_tol", float, 1e-10, "truncation tolerance of the F_R / G_R series"),
    Key("series", "max_terms", int, 200, "outer-index cap of the series"),
)
SWEEPABLE = ("eta_d", "eta_rb", "eta_ur", "kappa_d", "kappa_rb", "kappa_ur", "d_r", "d_b", "N", "M")
_KEYMAP = {(k.section, k.name): k for k in KEYS}
_SECTIONS = sorted({k.section for k in KEYS} | {"sweep"})


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration: the experiment plus run-level settings."""

    experiment: mc.ExperimentConfig
    anchor: str = "none"
    calibration_drops: int = 20
    case: str = "general"
    series: SeriesControl = field(default_factory=SeriesControl)
    sweep_key: str | None = None
    sweep_values: tuple = ()
    raw: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class RunManifest:
    """Provenance of one CSV."""

    config_digest: str
    tool_version: str
    master_seed: int
    started: str
    finished: str
    outputs: tuple
    command: str
    scale: dict

    def write(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Parsing and validation
# ---------------------------------------------------------------------------

def parse_sweep(text):
    """``"start:step:stop"`` (inclusive) to a tuple of floats."""
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ValueError("sweep must look like start:step:stop")
    a, h, b = (float(p) for p in parts)
    if h == 0 or (b - a) / h < -1e-12:
        raise ValueError("sweep step must be nonzero and point from start to stop")
    n = int(math.floor((b - a) / h + 1e-9)) + 1
    return tuple(round(a + i * h, 12) for i in range(n))


def _check_type(key, v):
    if v is None:
        return None
    if key.kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            return f"{key.section}.{key.name} must be an integer"
    elif key.kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return f"{key.section}.{key.name} must be a number"
    elif key.kind is str:
        if not isinstance(v, str):
            return f"{key.section}.{key.name} must be a string"
    elif key.kind is list:
        if not isinstance(v, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
            return f"{key.section}.{key.name} must be a list of integers"
    return None


def load_toml(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParseError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigParseError(f"{path}: {exc.strerror}") from exc


def build_config(data, seed=None):
    """Validate a parsed TOML mapping into a :class:`RunConfig`.

    Every problem found is reported at once through
    :class:`ConfigValidationError`.
    """
    problems = []
    vals = {(k.section, k.name): k.default for k in KEYS}
    sweep = None
    for sec, body in data.items():
        if sec not in _SECTIONS:
            problems.append(f"unknown section [{sec}]")
            continue
        if not isinstance(body, dict):
            problems.append(f"[{sec}] must be a table")
            continue
        for name, v in body.items():
            if sec == "sweep":
                if name not in SWEEPABLE:
                    problems.append(f"sweep.{name} is not sweepable; choose from {', '.join(SWEEPABLE)}")
                elif sweep is not None:
                    problems.append("only one sweep key is supported")
                else:
                    try:
                        sweep = (name, parse_sweep(v))
                    except ValueError as exc:
                        problems.append(f"sweep.{name}: {exc}")
                continue
            key = _KEYMAP.get((sec, name))
            if key is None:
                problems.append(f"unknown key {sec}.{name}")
                continue
            err = _check_type(key, v)
            if err:
                problems.append(err)
            else:
                vals[(sec, name)] = float(v) if key.kind is float else v

    g = lambda s, n: vals[(s, n)]
    if seed is not None:
        vals[("experiment", "seed")] = seed
    checks = [
        (g("experiment", "drops") >= 1, "experiment.drops must be >= 1"),
        (g("experiment", "replicates") >= 1, "experiment.replicates must be >= 1"),
        (g("experiment", "seed") >= 0, "experiment.seed must be >= 0"),
        (g("arrays", "M") >= 1 and g("arrays", "N") >= 1 and g("arrays", "K") >= 1,
         "arrays.M, arrays.N and arrays.K must be >= 1"),
        (g("arrays", "d_b") > 0 and g("arrays", "d_r") > 0, "element spacings must be positive"),
        (all(g("links", f"kappa_{x}") >= 0 for x in ("d", "rb", "ur")), "K-factors must be >= 0"),
        (all(g("links", f"alpha_{x}") > 0 for x in ("d", "rb", "ur")), "path-loss exponents must be > 0"),
        (g("calibration", "es_over_sigma2") > 0, "calibration.es_over_sigma2 must be > 0"),
        (g("calibration", "drops") >= 1, "calibration.drops must be >= 1"),
        (g("calibration", "anchor") in ("none",) + tuple(mc.ANCHORS),
         f"calibration.anchor must be none or one of {', '.join(mc.ANCHORS)}"),
        (g("analytic", "case") in ("general", "case1", "case2"),
         "analytic.case must be general, case1 or case2"),
    ]
    problems += [msg for ok, msg in checks if not ok]
    M, N, K = g("arrays", "M"), g("arrays", "N"), g("arrays", "K")
    for name, L in (("m_x", M), ("n_x", N)):
        w = g("arrays", name)
        if w is not None and (w < 1 or L % w):
            problems.append(f"arrays.{name}={w} must divide {L}")
    part = g("arrays", "partition")
    if part is None:
        if K >= 1 and N % K:
            problems.append(f"K={K} does not divide N={N}; give arrays.partition")
    elif len(part) != K or sum(part) != N or min(part) < 1:
        problems.append("arrays.partition must list K positive sizes summing to N")
    pieces = {}

    def attempt(label, fn):
        try:
            pieces[label] = fn()
        except DomainError as exc:
            problems.append(f"{label}: {exc}")

    attempt("geometry", lambda: Geometry(
        ris_distance=g("geometry", "ris_distance"), ris_angle=g("geometry", "ris_angle"),
        corridor_half_width=g("geometry", "corridor_half_width"),
        corridor_length=g("geometry", "corridor_length"),
        exclusion_radius=g("geometry", "exclusion_radius")))
    attempt("series", lambda: SeriesControl(rel_tol=g("series", "rel_tol"),
                                            max_terms=g("series", "max_terms")))
    if problems:
        raise ConfigValidationError(problems)
    attempt("arrays", lambda: ScenarioConfig(
        M=M, N=N, K=K, d_b=g("arrays", "d_b"), d_r=g("arrays", "d_r"),
        m_x=g("arrays", "m_x"), n_x=g("arrays", "n_x"),
        kappa_d=g("links", "kappa_d"), kappa_rb=g("links", "kappa_rb"),
        kappa_ur=g("links", "kappa_ur"), alpha_d=g("links", "alpha_d"),
        alpha_rb=g("links", "alpha_rb"), alpha_ur=g("links", "alpha_ur"),
        c0=10.0 ** (g("links", "c0_db") / 10.0),
        partition=tuple(part) if part is not None else None,
        geometry=pieces.get("geometry"), es_over_sigma2=g("calibration", "es_over_sigma2")))
    if "arrays" in pieces:
        attempt("experiment", lambda: mc.ExperimentConfig(
            scenario=pieces["arrays"], method=g("experiment", "method"),
            layout=g("experiment", "layout"), n_drops=g("experiment", "drops"),
            n_replicates=g("experiment", "replicates"), master_seed=g("experiment", "seed"),
            cisd_tol=g("cisd", "tol"), cisd_max_iters=g("cisd", "max_iters")))
    if sweep is not None and "experiment" in pieces:
        for v in sweep[1]:
            attempt(f"sweep.{sweep[0]}={v}", lambda v=v: apply_sweep(pieces["experiment"], sweep[0], v))
    if problems:
        raise ConfigValidationError(problems)
    return RunConfig(
        experiment=pieces["experiment"], anchor=g("calibration", "anchor"),
        calibration_drops=g("calibration", "drops"), case=g("analytic", "case"),
        series=pieces["series"], sweep_key=sweep[0] if sweep else None,
        sweep_values=sweep[1] if sweep else (), raw=data)


def parse_config(path, seed=None):
    """Read and validate a TOML configuration file."""
    return build_config(load_toml(path), seed)


def eta_to_kappa(eta):
    if not 0.0 <= eta <= 1.0:
        raise DomainError(f"eta must lie in [0, 1], got {eta}")
    return math.inf if eta == 1.0 else eta * eta / (1.0 - eta * eta)


def apply_sweep(exp, key, value):
    """Experiment with one swept parameter replaced."""
    sc = exp.scenario
    if key.startswith("eta_"):
        sc = replace(sc, **{"kappa_" + key[4:]: eta_to_kappa(value)})
    elif key in ("N", "M"):
        if value != int(value):
            raise DomainError(f"{key} must be an integer")
        name = "n_x" if key == "N" else "m_x"
        sc = replace(sc, **{key: int(value), name: None, "partition": None})
    else:
        sc = replace(sc, **{key: float(value)})
    return replace(exp, scenario=sc)


# ---------------------------------------------------------------------------
# CSV and manifest output
# ---------------------------------------------------------------------------

def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".9g")
    if v is None:
        return ""
    return str(v)


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def config_digest(cfg):
    blob = json.dumps(cfg.raw, sort_keys=True, default=str).encode()
    extra = json.dumps({"seed": cfg.experiment.master_seed}).encode()
    return hashlib.sha256(blob + extra).hexdigest()


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def emit(out_dir, stem, header, rows, cfg, command, started, scale):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{stem}.csv"
    path.write_text(csv_text(header, rows))
    man = RunManifest(config_digest(cfg), __version__, cfg.experiment.master_seed, started, _now(),
                      (str(path),), command, dict(scale, csv_schema=CSV_SCHEMA))
    man.write(out / f"{stem}.manifest.json")
    return path


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def calibrated(cfg, threads=None):
    """Experiment with ``Es/sigma^2`` set from the configured anchor."""
    exp = cfg.experiment
    if cfg.anchor == "none":
        return exp
    ref = mc.anchor_config(cfg.anchor, exp, cfg.calibration_drops)
    es = mc.calibrate_es(ref, ctl=cfg.series, threads=threads)
    return replace(exp, scenario=replace(exp.scenario, es_over_sigma2=es))


def _sweep_points(cfg, exp):
    if cfg.sweep_key is None:
        return [(None, exp)]
    return [(v, apply_sweep(exp, cfg.sweep_key, v)) for v in cfg.sweep_values]


def _sweep_header(cfg):
    return [f"{cfg.sweep_key} [swept]"] if cfg.sweep_key else []


def cmd_mean_snr(cfg, out_dir, threads=None):
    started = _now()
    exp = calibrated(cfg, threads)
    header = _sweep_header(cfg) + ["drop", "user"] + [f"{t} [linear]" for t in snr.TERMS] + [
        "es_over_sigma2 [linear]", "mean_snr [linear]", "mean_snr [dB]"]
    rows = []
    fn = {"general": lambda s: snr.mean_snr_general(s, ctl=cfg.series),
          "case1": snr.mean_snr_case1, "case2": snr.mean_snr_case2}[cfg.case]
    for v, e in _sweep_points(cfg, exp):
        reports = mc._map_drops(lambda d: fn(mc.drop_scenario(e, d)), e.n_drops, threads)
        for d, rep in enumerate(reports):
            for k, br in zip(rep.users, rep.terms):
                lead = [v] if v is not None else []
                rows.append(lead + [d, k] + list(br.as_array())
                            + [br.es_over_sigma2, br.total, 10 * math.log10(br.total)])
    return emit(out_dir, "mean_snr", header, rows, cfg, "mean-snr", started,
                {"drops": exp.n_drops})


def _result_rows(res, lead):
    rows = [lead + ["all", res.method, res.mean_snr, res.mean_snr_db, res.mean_snr_db_se,
                    res.mean_sum_rate, res.mean_sum_rate_se, res.mean_iterations,
                    res.mean_iterations_se, res.excluded]]
    for k, (m, se) in enumerate(zip(res.mean_snr_user, res.mean_snr_user_se)):
        db_se = 10 / math.log(10) * se / m
        rows.append(lead + [k, res.method, m, 10 * math.log10(m), db_se,
                            None, None, None, None, None])
    return rows


def cmd_simulate(cfg, out_dir, threads=None):
    started = _now()
    exp = calibrated(cfg, threads)
    header = _sweep_header(cfg) + [
        "user", "method", "mean_snr [linear]", "mean_snr [dB]", "mean_snr_stderr [dB]",
        "sum_rate [bit/s/Hz]", "sum_rate_stderr [bit/s/Hz]", "mean_iterations [count]",
        "mean_iterations_stderr [count]", "excluded_replicates [count]"]
    rows = []
    for v, e in _sweep_points(cfg, exp):
        res = mc.run_experiment(e, threads)
        rows += _result_rows(res, [v] if v is not None else [])
    return emit(out_dir, "simulate", header, rows, cfg, "simulate", started,
                {"drops": exp.n_drops, "replicates": exp.n_replicates})


def cmd_compare(cfg, out_dir, threads=None):
    started = _now()
    exp = replace(calibrated(cfg, threads), method="sd_los")
    header = _sweep_header(cfg) + ["user", "term", "analytic [linear]", "simulated [linear]",
                                   "stderr [linear]", "z [sigma]"]
    rows = []
    for v, e in _sweep_points(cfg, exp):
        comp, _ = mc.compare_analytic_vs_mc(e, cfg.series, threads)
        lead = [v] if v is not None else []
        rows += [lead + [c.user, c.term, c.analytic, c.simulated, c.stderr, c.z] for c in comp]
    return emit(out_dir, "compare", header, rows, cfg, "compare", started,
                {"drops": exp.n_drops, "replicates": exp.n_replicates})


TABLE1 = {  # (N, d_r) -> (SD dB, CISD dB)
    (4, 0.1): (-3.24, -3.18), (8, 0.1): (-1.05, -0.76), (16, 0.1): (0.85, 1.23),
    (32, 0.1): (2.82, 3.23), (64, 0.1): (5.23, 5.55), (128, 0.1): (8.65, 9.48),
    (4, 0.5): (-3.19, -3.17), (8, 0.5): (-2.52, -2.45), (16, 0.5): (-1.08, -0.89),
    (32, 0.5): (0.13, 0.72), (64, 0.5): (1.66, 2.51), (128, 0.5): (5.00, 6.24),
}
TABLE3 = {
    (4, 0.1): 2.40, (8, 0.1): 2.65, (16, 0.1): 2.96, (32, 0.1): 3.50, (64, 0.1): 4.12, (128, 0.1): 5.42,
    (4, 0.5): 2.35, (8, 0.5): 2.56, (16, 0.5): 2.96, (32, 0.5): 3.96, (64, 0.5): 5.04, (128, 0.5): 6.60,
}
TABLE5 = {(8, 256): 2.62, (8, 128): 2.18, (8, 64): 1.62, (32, 256): 1.39, (32, 128): 1.16}
N_GRID = (4, 8, 16, 32, 64, 128)
TARGETS = ("table1", "table3", "table5-trend", "fig3-curve")


def _with(exp, **kw):
    sc = replace(exp.scenario, m_x=None, n_x=None, partition=None, **kw)
    return replace(exp, scenario=sc)


def _es(cfg, anchor, threads):
    ref = mc.anchor_config(anchor, cfg.experiment, cfg.calibration_drops)
    return mc.calibrate_es(ref, ctl=cfg.series, threads=threads)


def cmd_reproduce(cfg, target, out_dir, threads=None):
    """Desk-scale version of a published table or curve, with the published values alongside."""
    if target not in TARGETS:
        raise DomainError(f"unknown target {target!r}; choose from {', '.join(TARGETS)}")
    started = _now()
    exp = cfg.experiment
    base = dict(M=16, d_b=0.5, kappa_d=1.0, kappa_rb=1.0, kappa_ur=1.0)
    rows = []
    if target in ("table1", "table3"):
        anchor = "general_dr05"
        es = _es(cfg, anchor, threads)
        header = (["N [count]", "d_r [wavelength]", "method", "mean_snr [dB]", "stderr [dB]",
                   "paper_value [dB]"] if target == "table1" else
                  ["N [count]", "d_r [wavelength]", "mean_iterations [count]", "stderr [count]",
                   "paper_value [count]"])
        for dr in (0.1, 0.5):
            for N in N_GRID:
                e = _with(exp, N=N, d_r=dr, es_over_sigma2=es, **base)
                if target == "table1":
                    res = mc.run_methods(e, ["sd_los", "cisd"], threads)
                    for i, m in enumerate(("sd_los", "cisd")):
                        r = res[m]
                        rows.append([N, dr, m, r.mean_snr_db, r.mean_snr_db_se, TABLE1[(N, dr)][i]])
                else:
                    r = mc.run_experiment(replace(e, method="cisd"), threads)
                    rows.append([N, dr, r.mean_iterations, r.mean_iterations_se, TABLE3[(N, dr)]])
    elif target == "table5-trend":
        anchor = "los_rb"
        es = _es(cfg, anchor, threads)
        header = ["M [count]", "N [count]", "sum_rate_eta0 [bit/s/Hz]", "sum_rate_eta1 [bit/s/Hz]",
                  "increase [bit/s/Hz]", "stderr [bit/s/Hz]", "paper_value [bit/s/Hz]"]
        for (M, N), published in TABLE5.items():
            rates = []
            for kr in (0.0, math.inf):
                e = _with(exp, N=N, d_r=0.1, es_over_sigma2=es,
                          **dict(base, M=M, kappa_rb=kr))
                T = mc.analytic_drop_terms(e, cfg.series, threads)
                tot = snr.totals_from_terms(T, es)
                rates.append(np.log2(1.0 + tot).mean(axis=1))
            inc = rates[1] - rates[0]
            se = inc.std(ddof=1) / math.sqrt(len(inc)) if len(inc) > 1 else math.nan
            rows.append([M, N, rates[0].mean(), rates[1].mean(), inc.mean(), se, published])
    else:
        anchor = "general_dr05"
        es = _es(cfg, anchor, threads)
        header = ["N [count]", "analytic_sd [dB]", "sd [dB]", "sd_stderr [dB]", "isd [dB]",
                  "isd_stderr [dB]", "cisd [dB]", "cisd_stderr [dB]"]
        for N in N_GRID:
            e = _with(exp, N=N, d_r=0.5, es_over_sigma2=es, **base)
            A = snr.totals_from_terms(mc.analytic_drop_terms(e, cfg.series, threads), es)
            res = mc.run_methods(e, ["sd_los", "isd", "cisd"], threads)
            row = [N, 10 * math.log10(A.mean())]
            for m in ("sd_los", "isd", "cisd"):
                row += [res[m].mean_snr_db, res[m].mean_snr_db_se]
            rows.append(row)
    return emit(out_dir, f"reproduce_{target}", header, rows, cfg, f"reproduce {target}", started,
                {"drops": exp.n_drops, "replicates": exp.n_replicates,
                 "full_scale_drops": 10_000, "full_scale_replicates": 1_000_000,
                 "calibration_anchor": anchor, "calibration_drops": cfg.calibration_drops})


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

# Keys whose defaults come from the published simulation setup; the rest are this tool's choices.
PUBLISHED = {
    ("arrays", "M"), ("arrays", "N"), ("arrays", "K"), ("arrays", "d_b"), ("arrays", "d_r"),
    ("links", "kappa_d"), ("links", "kappa_rb"), ("links", "kappa_ur"), ("links", "alpha_d"),
    ("links", "alpha_ur"), ("links", "c0_db"), ("geometry", "ris_distance"),
    ("geometry", "ris_angle"), ("cisd", "tol"), ("experiment", "layout"),
}


def key_listing():
    lines = ["configuration keys (TOML; section.key = default  [provenance] description):"]
    for k in KEYS:
        d = "unset" if k.default is None else repr(k.default)
        src = "published" if (k.section, k.name) in PUBLISHED else "tool"
        lines.append(f"  {k.section}.{k.name} = {d}  [{src}] {k.doc}")
    lines.append(f"  sweep.<key> = \"start:step:stop\"  one of {', '.join(SWEEPABLE)}; eta_* is "
                 "the LoS amplitude sqrt(kappa/(1+kappa))")
    lines.append("")
    lines.append("defaults follow the published setup: RIS 40 m from the BS at pi/4 rad, "
                 "C0 = -30 dB at 1 m, exponents 3.5 (UE-BS) and 2.8 (UE-RIS), sinc(2d) "
                 "correlation, "
                 "CISD tolerance 1e-4. Corridor size is not published; 16 m x 5 m is this "
                 "tool's choice.")
    lines.append("")
    lines.append(f"exit codes: {EXIT_OK} ok, {EXIT_PARSE} parse error, {EXIT_VALIDATION} "
                 f"invalid config, {EXIT_NONCONVERGENCE} series non-convergence, "
                 f"{EXIT_RUNTIME} runtime failure")
    lines.append("environment: RIS_LAB_THREADS caps worker threads (0 = all cores)")
    return "\n".join(lines)


def make_parser():
    p = argparse.ArgumentParser(
        prog="ris-lab", description="RIS subsurface phase design: analysis and simulation.",
        epilog=key_listing(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)
    for name, hlp in (("validate", "check a configuration"),
                      ("mean-snr", "closed-form per-user SNR terms"),
                      ("simulate", "Monte-Carlo mean SNR, rate and iterations"),
                      ("compare", "closed form vs Monte-Carlo, per term"),
                      ("reproduce", "desk-scale tables and curves")):
        sp = sub.add_parser(name, help=hlp, epilog=key_listing(),
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        if name == "reproduce":
            sp.add_argument("target", choices=TARGETS)
            sp.add_argument("--config", help="TOML file (optional; defaults otherwise)")
        else:
            sp.add_argument("--config", required=True, help="TOML file")
        sp.add_argument("--seed", type=int, help="override experiment.seed")
        sp.add_argument("--out", default=".", help="output directory (default: .)")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: RIS_LAB_THREADS, 0 = all cores)")
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        if args.config:
            cfg = parse_config(args.config, args.seed)
        else:
            cfg = build_config({}, args.seed)
        if args.command == "validate":
            e = cfg.experiment
            print(f"ok: M={e.scenario.M} N={e.scenario.N} K={e.scenario.K} method={e.method} "
                  f"drops={e.n_drops} replicates={e.n_replicates} seed={e.master_seed}")
            return EXIT_OK
        if args.command == "mean-snr":
            path = cmd_mean_snr(cfg, args.out, args.threads)
        elif args.command == "simulate":
            path = cmd_simulate(cfg, args.out, args.threads)
        elif args.command == "compare":
            path = cmd_compare(cfg, args.out, args.threads)
        else:
            path = cmd_reproduce(cfg, args.target, args.out, args.threads)
        print(path)
        return EXIT_OK
    except ConfigParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ConfigValidationError as exc:
        print("invalid configuration:", file=sys.stderr)
        for p in exc.problems:
            print(f"  - {p}", file=sys.stderr)
        return EXIT_VALIDATION
    except SeriesConvergenceError as exc:
        print(f"series did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (RisLabError, ArithmeticError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
