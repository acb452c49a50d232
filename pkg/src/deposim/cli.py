"""Command-line experiment runner.

Subcommands
-----------
validate            structural rate-condition report for a model
stats               one-site equilibrium statistics as JSON
sample-equilibrium  draws from the single-site law, one integer per line
simulate            replicated ring runs -> observable CSV + manifest
second-class        coupled-pair runs -> displacement CSV + histogram
oracle              exact small-ring residual checks -> JSON reports
check               Monte Carlo identity checks -> JSON reports
verify-all          validation, oracles, and the Monte Carlo battery

Configuration files are plain ``key = value`` text plus one braced section
naming the model::

    asep { p = 1.0 }
    theta = 0.0
    L = 512
    t = 4.0
    replicates = 100000
    seed = 7
    checks = [flux-variance, sum-rule]
    output_dir = "out"

Flags mirror the file keys and win over them.  Every data-producing run
writes a JSON manifest echoing the full configuration together with a
content hash, so outputs can be reproduced from the manifest alone.  With
``threads = 1`` (the default) repeated runs are byte-identical; replicate
seeds are derived from (seed, replicate index), so higher thread counts
change only the wall time.

Exit codes: 0 everything passed, 1 at least one check failed,
2 configuration error, 3 internal consistency assertion.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import re
import sys
import time
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .models import MODEL_NAMES, RateSpec, all_conditions_pass, build_named, validate
from .equilibrium import (
    Marginal,
    build_marginal,
    equilibrium_stats,
    sample_site,
    size_biased_marginal,
    solve_theta_for_rho,
)
from .dynamics import (
    RingSimulator,
    SimulationAssertionError,
    bracket_offset,
    light_cone_check,
    observer_flux,
    replicate_rng,
    two_point_products,
)
from .coupling import CoupledSimulator
from . import oracle as oracle_mod
from .checks import (
    _map_chunks,
    check_coupling_soundness,
    check_flux_variance_quadrature,
    check_flux_variance_second_class,
    check_flux_variance_two_point,
    check_second_class_speed,
    check_sum_rule,
    check_two_point_drift,
    check_two_point_second_class,
    default_offsets,
    run_coupled_ensemble,
    run_plain_ensemble,
    suggest_half_width,
)
from .stats import IdentityReport, all_passed

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_ASSERTION = 3

# distinct master seeds keep independently-analyzed ensembles independent
COUPLED_SEED_OFFSET = 10_000_019
SMALL_RING_SEED_OFFSET = 20_000_033

VERIFY_STAGES = (
    "validate",
    "stationarity",
    "adjoint",
    "flux-identity",
    "second-class-law",
    "flux-variance",
    "drift",
    "two-point-law",
    "flux-q",
    "speed",
    "sum-rule",
)
ORACLE_TOKENS = ("stationarity", "adjoint", "flux-identity",
                 "two-point", "q-dist", "var-j")
CHECK_TOKENS = ("flux-variance", "drift", "two-point-law", "flux-q",
                "speed", "sum-rule", "soundness", "quadrature")
# quadrature needs a ring small enough for the matrix oracle: opt-in only
DEFAULT_CHECK_TOKENS = CHECK_TOKENS[:-1]

STATIONARITY_TOL = 1e-12
ADJOINT_TOL = 1e-10
FLUX_IDENTITY_TOL_BOUNDED = 1e-14
FLUX_IDENTITY_TOL_TRUNCATED = 1e-10
TWO_POINT_SUM_TOL = 1e-10
SECOND_CLASS_LAW_TOL = 1e-8
VAR_J_RING_TOL = 1e-4
VALIDATE_TOL = 1e-12


class ConfigError(Exception):
    """Carries every configuration problem found, not just the first."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# ---------------------------------------------------------------------------
# config text: tokenizer and parser

_TOKEN_RE = re.compile(
    r"""[ \t\r]+
      | \#[^\n]*
      | (?P<nl>\n)
      | (?P<string>"(?:[^"\\\n]|\\.)*")
      | (?P<number>[+-]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
      | (?P<ident>[A-Za-z_][A-Za-z0-9_\-]*)
      | (?P<punct>[={}\[\],])
    """,
    re.VERBOSE,
)


def _tokenize(text: str):
    toks = []
    errors = []
    line = 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            errors.append(f"line {line}: unexpected character {text[pos]!r}")
            pos += 1
            continue
        pos = m.end()
        kind = m.lastgroup
        if kind is None:
            continue
        if kind == "nl":
            toks.append(("nl", "\n", line))
            line += 1
        else:
            toks.append((kind, m.group(), line))
    toks.append(("end", "", line))
    return toks, errors


def _num(text: str):
    if re.fullmatch(r"[+-]?\d+", text):
        return int(text)
    return float(text)


class _Parser:
    """Recursive-descent parser for the key = value / section format.

    Collects errors and resynchronizes at the next newline so one pass
    reports everything wrong with the file.
    """

    def __init__(self, toks):
        self.toks = toks
        self.i = 0
        self.errors = []
        self.pairs = []      # (key, value, line)
        self.sections = []   # (name, {key: value}, line)

    def _peek(self):
        return self.toks[self.i]

    def _next(self):
        tok = self.toks[self.i]
        if tok[0] != "end":
            self.i += 1
        return tok

    def _error(self, msg, line):
        self.errors.append(f"line {line}: {msg}")

    def _resync(self):
        while self._peek()[0] not in ("nl", "end"):
            self._next()

    def _skip_separators(self):
        while self._peek()[0] == "nl" or self._peek()[:2] == ("punct", ","):
            self._next()

    def _value(self):
        kind, text, line = self._peek()
        if kind == "number":
            self._next()
            return _num(text)
        if kind == "string":
            self._next()
            return text[1:-1].replace('\\"', '"').replace("\\\\", "\\")
        if kind == "ident":
            self._next()
            if text == "true":
                return True
            if text == "false":
                return False
            return text
        if (kind, text) == ("punct", "["):
            self._next()
            items = []
            self._skip_separators()
            while self._peek()[:2] != ("punct", "]"):
                if self._peek()[0] == "end":
                    self._error("unterminated list", line)
                    return items
                items.append(self._value())
                self._skip_separators()
            self._next()
            return items
        self._error(f"expected a value, found {text!r}" if text else
                    "expected a value", line)
        raise _Bail()

    def _section_body(self, line):
        body = {}
        self._skip_separators()
        while self._peek()[:2] != ("punct", "}"):
            kind, text, kline = self._peek()
            if kind == "end":
                self._error("unterminated section", line)
                return body
            if kind != "ident":
                self._error(f"expected a parameter name, found {text!r}", kline)
                self._next()
                continue
            self._next()
            if self._peek()[:2] != ("punct", "="):
                self._error(f"expected '=' after {text!r}", kline)
                continue
            self._next()
            if text in body:
                self._error(f"duplicate parameter {text!r}", kline)
            try:
                body[text] = self._value()
            except _Bail:
                self._resync()
            self._skip_separators()
        self._next()
        return body

    def parse(self):
        while True:
            self._skip_separators()
            kind, text, line = self._peek()
            if kind == "end":
                break
            if kind != "ident":
                self._error(f"expected a key or model name, found {text!r}", line)
                self._next()
                self._resync()
                continue
            self._next()
            nkind, ntext, nline = self._peek()
            if (nkind, ntext) == ("punct", "="):
                self._next()
                try:
                    self.pairs.append((text, self._value(), line))
                except _Bail:
                    self._resync()
            elif (nkind, ntext) == ("punct", "{"):
                self._next()
                self.sections.append((text, self._section_body(line), line))
            else:
                self._error(f"expected '=' or '{{' after {text!r}", line)
                self._resync()
        return self.pairs, self.sections, self.errors


class _Bail(Exception):
    pass


# ---------------------------------------------------------------------------
# experiment configuration

@dataclass
class ExperimentConfig:
    model: str
    model_params: dict = field(default_factory=dict)
    theta: Optional[float] = None
    rho: Optional[float] = None
    L: int = 512
    t: float = 4.0
    V: float = 0.0
    replicates: int = 10_000
    seed: int = 1
    checks: Optional[tuple] = None   # None: each subcommand's full set
    output_dir: str = "out"
    eps: float = 1e-12
    state_cap: int = 200_000
    threads: int = 1


_SCALAR_KEYS = {
    "theta": float, "rho": float, "L": int, "t": float, "V": float,
    "replicates": int, "seed": int, "output_dir": str, "eps": float,
    "state_cap": int, "threads": int,
}


def _coerce(key, value, errors):
    want = _SCALAR_KEYS[key]
    if want is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif want is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif want is str:
        if isinstance(value, str):
            return value
    errors.append(f"{key}: expected {want.__name__}, got {value!r}")
    return None


def _raw_from_text(text: str):
    toks, errors = _tokenize(text)
    pairs, sections, perrors = _Parser(toks).parse()
    errors += perrors
    raw: dict[str, Any] = {}
    seen = set()
    for key, value, line in pairs:
        if key in seen:
            errors.append(f"line {line}: duplicate key {key!r}")
            continue
        seen.add(key)
        if key == "checks":
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                errors.append(f"line {line}: checks must be a list of names")
            else:
                raw["checks"] = tuple(value)
        elif key in _SCALAR_KEYS:
            raw[key] = value
        elif key == "model":
            errors.append(
                f"line {line}: give the model as a section, e.g. asep {{ p = 1.0 }}")
        else:
            errors.append(f"line {line}: unknown key {key!r}")
    if len(sections) > 1:
        lines = ", ".join(str(line) for _, _, line in sections)
        errors.append(f"multiple model sections (lines {lines})")
    if sections:
        raw["model"] = sections[0][0]
        raw["model_params"] = dict(sections[0][1])
    return raw, errors


def _finalize(raw: dict, *, require_theta: bool = True):
    """Type- and range-check a raw key dict into an ExperimentConfig,
    returning (config or None, all errors)."""
    errors: list[str] = []
    out: dict[str, Any] = {}
    for key, value in raw.items():
        if key in _SCALAR_KEYS:
            v = _coerce(key, value, errors)
            if v is not None:
                out[key] = v
        elif key in ("model", "model_params", "checks"):
            out[key] = value

    if "model" not in out:
        errors.append("no model given (add a section like asep { p = 1.0 })")
        out["model"] = ""

    has_theta = out.get("theta") is not None
    has_rho = out.get("rho") is not None
    if has_theta and has_rho:
        errors.append("both theta and rho given; pick one")
    elif not has_theta and not has_rho and require_theta:
        errors.append("one of theta or rho is required")
    for key in ("theta", "rho", "t", "V", "eps"):
        v = out.get(key)
        if v is not None and not math.isfinite(v):
            errors.append(f"{key} must be finite, got {v!r}")

    cfg = ExperimentConfig(**{**{"model": out.pop("model")}, **out})
    if cfg.L < 2:
        errors.append(f"L must be at least 2, got {cfg.L}")
    if cfg.t < 0:
        errors.append(f"t must be nonnegative, got {cfg.t}")
    if cfg.replicates < 1:
        errors.append(f"replicates must be positive, got {cfg.replicates}")
    if cfg.seed < 0:
        errors.append(f"seed must be nonnegative, got {cfg.seed}")
    if not 0 < cfg.eps < 0.5:
        errors.append(f"eps must lie in (0, 0.5), got {cfg.eps}")
    if cfg.state_cap < 4:
        errors.append(f"state_cap must be at least 4, got {cfg.state_cap}")
    if cfg.threads < 1:
        errors.append(f"threads must be positive, got {cfg.threads}")
    if cfg.checks is not None:
        known = set(VERIFY_STAGES) | set(ORACLE_TOKENS) | set(CHECK_TOKENS)
        for name in cfg.checks:
            if name not in known:
                errors.append(f"unknown check name {name!r}")
    return (None if errors else cfg), errors


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate configuration text; raises ConfigError carrying
    the complete error list."""
    raw, errors = _raw_from_text(text)
    cfg, more = _finalize(raw)
    errors += more
    if errors:
        raise ConfigError(errors)
    return cfg


def _render_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        escaped = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_config(cfg: ExperimentConfig) -> str:
    """Inverse of parse_config: text that parses back to an equal config."""
    inner = ", ".join(f"{k} = {_render_value(v)}" for k, v in cfg.model_params.items())
    lines = [f"{cfg.model} {{ {inner} }}" if inner else f"{cfg.model} {{ }}"]
    for key in ("theta", "rho"):
        v = getattr(cfg, key)
        if v is not None:
            lines.append(f"{key} = {_render_value(v)}")
    for key in ("L", "t", "V", "replicates", "seed", "output_dir", "eps",
                "state_cap", "threads"):
        lines.append(f"{key} = {_render_value(getattr(cfg, key))}")
    if cfg.checks is not None:
        lines.append(f"checks = [{', '.join(cfg.checks)}]")
    return "\n".join(lines) + "\n"


def config_dict(cfg: ExperimentConfig) -> dict:
    d = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    d["checks"] = list(cfg.checks) if cfg.checks is not None else None
    d["model_params"] = dict(cfg.model_params)
    return d


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# shared runtime plumbing

@dataclass
class RunContext:
    cfg: ExperimentConfig
    spec: RateSpec
    theta: float
    marginal: Marginal


def build_context(cfg: ExperimentConfig) -> RunContext:
    spec = build_named(cfg.model, cfg.model_params)
    theta = cfg.theta if cfg.theta is not None else solve_theta_for_rho(
        spec, cfg.rho, eps=cfg.eps)
    marginal = build_marginal(spec, theta, eps=cfg.eps)
    return RunContext(cfg=cfg, spec=spec, theta=theta, marginal=marginal)


def _ranges(n: int, pieces: int):
    edges = np.linspace(0, n, max(1, pieces) + 1).astype(int)
    return [range(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_manifest(outdir: Path, command: str, cfg: ExperimentConfig,
                   outputs: list[str], extras: Optional[dict] = None) -> Path:
    d = config_dict(cfg)
    manifest = {
        "command": command,
        "package": "deposim",
        "version": __version__,
        "config": d,
        "config_hash": config_hash(d),
        "outputs": outputs,
    }
    if extras:
        manifest["run"] = extras
    path = outdir / "manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _emit_reports(reports, outdir: Optional[Path]):
    for r in reports:
        print(r.to_json(indent=None))
    if outdir is not None:
        with open(outdir / "reports.jsonl", "w") as f:
            for r in reports:
                f.write(r.to_json(indent=None) + "\n")


def _residual_report(identity: str, spec: RateSpec, theta: float,
                     residual: float, tol: float, seed: int, t0: float,
                     extra: Optional[dict] = None, lhs=None, rhs=None) -> IdentityReport:
    """Wrap an exact residual as a report: z is the residual in units of
    its tolerance, so pass means z <= 1."""
    e = {"tolerance": tol}
    if extra:
        e.update(extra)
    return IdentityReport(
        identity=identity,
        model=spec.name,
        params={**spec.params, "theta": theta},
        lhs=residual if lhs is None else lhs,
        rhs=0.0 if rhs is None else rhs,
        se_lhs=0.0, se_rhs=0.0,
        z=residual / tol,
        passed=bool(residual < tol),
        replicates=0,
        seed=seed,
        runtime_seconds=time.perf_counter() - t0,
        extra=e,
    )


def _resolve_checks(cfg: ExperimentConfig, allowed: tuple, default: tuple):
    if cfg.checks is None:
        return default
    bad = [c for c in cfg.checks if c not in allowed]
    if bad:
        raise ConfigError(
            [f"unknown check {c!r}; valid names: {', '.join(allowed)}" for c in bad])
    # run in canonical order regardless of listing order
    requested = set(cfg.checks)
    return tuple(c for c in allowed if c in requested)


# ---------------------------------------------------------------------------
# subcommands

def cmd_validate(cfg: ExperimentConfig) -> int:
    spec = build_named(cfg.model, cfg.model_params)
    reports = validate(spec)
    for r in reports:
        verdict = "pass" if r.passed else "FAIL"
        print(f"{r.condition}: {verdict} (max residual {r.max_residual:.3g})")
    return EXIT_OK if all_conditions_pass(reports) else EXIT_CHECK_FAILED


def cmd_stats(cfg: ExperimentConfig) -> int:
    ctx = build_context(cfg)
    eq = equilibrium_stats(ctx.spec, ctx.marginal)
    out = {
        "rho": eq.rho,
        "var_omega": eq.var_omega,
        "hydro_flux": eq.hydro_flux,
        "char_speed": eq.char_speed,
        "theta": eq.theta,
        "truncation_mass": eq.truncation_mass,
    }
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_sample_equilibrium(cfg: ExperimentConfig) -> int:
    ctx = build_context(cfg)
    rng = replicate_rng(cfg.seed, 0)
    draws = sample_site(ctx.marginal, rng, size=cfg.replicates)
    sys.stdout.write("\n".join(str(int(v)) for v in draws) + "\n")
    return EXIT_OK


def _simulate_chunk(spec, z_lo, z_hi, marginal, L, t, v, mode, offsets,
                    reps, seed):
    sim = RingSimulator(spec, z_lo, z_hi)
    rows = []
    for rep in reps:
        rng = replicate_rng(seed, rep)
        state = sim.sample_state(marginal, L, rng)
        sim.run(state, t, rng)
        if mode == "flux":
            rows.append((rep, "flux", observer_flux(state, v)))
        elif mode == "snapshot":
            rows.extend((rep, f"omega_{i}", int(state.omega[i]))
                        for i in range(L))
        else:
            vals = two_point_products(state, offsets)
            rows.extend((rep, f"pair_{n}", float(x))
                        for n, x in zip(offsets, vals))
    return rows


def cmd_simulate(cfg: ExperimentConfig, observables: str,
                 window: Optional[int]) -> int:
    ctx = build_context(cfg)
    probe = RingSimulator.for_marginal(ctx.spec, ctx.marginal)
    offsets = None
    if observables == "two-point":
        w = window if window is not None else suggest_half_width(probe.c_max, cfg.t)
        if not light_cone_check(probe.c_max, cfg.t, w, cfg.L):
            raise ValueError(
                f"ring too short for a two-point window of {w} sites at t={cfg.t}")
        offsets = np.arange(-w, w + 1)
    elif observables == "flux":
        m = bracket_offset(cfg.V, cfg.t)
        if 2 * abs(m) >= cfg.L:
            raise ValueError(
                f"observer bond {m} outside the safe half ring (L={cfg.L})")

    args = [(ctx.spec, probe.z_lo, probe.z_hi, ctx.marginal, cfg.L, cfg.t,
             cfg.V, observables, offsets, r, cfg.seed)
            for r in _ranges(cfg.replicates, max(cfg.threads * 4, 1))]
    t0 = time.perf_counter()
    rows = [row for chunk in _map_chunks(_simulate_chunk, args, cfg.threads)
            for row in chunk]
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / "observables.csv"
    _write_csv(csv_path, ("replicate", "observable", "value"), rows)
    extras = {"observables": observables}
    if offsets is not None:
        extras["window"] = int(offsets.max())
    write_manifest(outdir, "simulate", cfg, [csv_path.name], extras)
    print(f"wrote {csv_path} ({len(rows)} rows) and manifest.json "
          f"in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK


def _second_class_chunk(spec, z_lo, z_hi, marginal, hat, L, t, reps, seed):
    sim = CoupledSimulator(spec, z_lo, z_hi)
    rows = []
    for rep in reps:
        rng = replicate_rng(seed, rep)
        state = sim.sample_state(marginal, hat, L, rng)
        sim.run(state, t, rng)
        rows.append((rep, "q", int(state.q_disp)))
    return rows


def cmd_second_class(cfg: ExperimentConfig) -> int:
    ctx = build_context(cfg)
    probe = CoupledSimulator.for_marginal(ctx.spec, ctx.marginal)
    if not light_cone_check(probe.c_max, cfg.t, 0, cfg.L):
        raise ValueError(
            f"ring too short: the discrepancy can wrap within t={cfg.t} at L={cfg.L}")
    hat = size_biased_marginal(ctx.spec, ctx.marginal)
    args = [(ctx.spec, probe.z_lo, probe.z_hi, ctx.marginal, hat, cfg.L,
             cfg.t, r, cfg.seed)
            for r in _ranges(cfg.replicates, max(cfg.threads * 4, 1))]
    t0 = time.perf_counter()
    rows = [row for chunk in _map_chunks(_second_class_chunk, args, cfg.threads)
            for row in chunk]

    counts = Counter(q for _, _, q in rows)
    lo = -((cfg.L - 1) // 2)
    hist_rows = [(site, counts.get(site, 0) / cfg.replicates)
                 for site in range(lo, cfg.L // 2 + 1)]

    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    q_path = outdir / "q_values.csv"
    h_path = outdir / "histogram.csv"
    _write_csv(q_path, ("replicate", "observable", "value"), rows)
    _write_csv(h_path, ("site", "relative_frequency"), hist_rows)
    write_manifest(outdir, "second-class", cfg, [q_path.name, h_path.name])
    print(f"wrote {q_path} and {h_path} ({cfg.replicates} replicates) "
          f"in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK


def cmd_oracle(cfg: ExperimentConfig) -> int:
    tokens = _resolve_checks(cfg, ORACLE_TOKENS, ORACLE_TOKENS)
    if not tokens:
        return EXIT_OK
    ctx = build_context(cfg)
    oracle_mod.STATE_CAP = cfg.state_cap
    spec, marginal = ctx.spec, ctx.marginal
    bounded = spec.space.bounded
    reports = []
    for token in tokens:
        t0 = time.perf_counter()
        if token == "stationarity":
            res = oracle_mod.stationarity_residual(spec, marginal, cfg.L)
            rep = _residual_report(token, spec, ctx.theta, res,
                                   STATIONARITY_TOL, cfg.seed, t0,
                                   extra={"L": cfg.L})
        elif token == "adjoint":
            res = oracle_mod.adjoint_residual(spec, marginal, cfg.L,
                                              trials=100, seed=cfg.seed)
            rep = _residual_report(token, spec, ctx.theta, res, ADJOINT_TOL,
                                   cfg.seed, t0, extra={"L": cfg.L, "trials": 100})
        elif token == "flux-identity":
            tol = FLUX_IDENTITY_TOL_BOUNDED if bounded else FLUX_IDENTITY_TOL_TRUNCATED
            res = oracle_mod.flux_identity_residual(spec, marginal)
            rep = _residual_report(token, spec, ctx.theta, res, tol, cfg.seed, t0)
        elif token == "two-point":
            res = oracle_mod.two_point_sum_residual(spec, marginal, cfg.L, cfg.t)
            rep = _residual_report(token, spec, ctx.theta, res,
                                   TWO_POINT_SUM_TOL, cfg.seed, t0,
                                   extra={"L": cfg.L, "t": cfg.t})
        elif token == "q-dist":
            res = oracle_mod.second_class_law_residual(spec, marginal, cfg.L, cfg.t)
            rep = _residual_report(token, spec, ctx.theta, res,
                                   SECOND_CLASS_LAW_TOL, cfg.seed, t0,
                                   extra={"L": cfg.L, "t": cfg.t})
        else:  # var-j
            quad = oracle_mod.flux_variance_quadrature(spec, marginal, cfg.L, cfg.t)
            wsum = oracle_mod.flux_variance_weighted_sum(spec, marginal, cfg.L, cfg.t)
            rep = _residual_report(token, spec, ctx.theta, abs(quad - wsum),
                                   VAR_J_RING_TOL, cfg.seed, t0,
                                   extra={"L": cfg.L, "t": cfg.t},
                                   lhs=quad, rhs=wsum)
        reports.append(rep)
    _emit_reports(reports, None)
    return EXIT_OK if all_passed(reports) else EXIT_CHECK_FAILED


def _run_mc_checks(ctx: RunContext, tokens) -> list:
    """Run the requested Monte Carlo checks, sharing one plain and one
    coupled ensemble across all of them."""
    cfg = ctx.cfg
    need_plain = {"flux-variance", "drift", "two-point-law", "flux-q", "sum-rule"}
    need_coupled = {"two-point-law", "flux-q", "speed", "soundness"}
    plain = coupled = None
    if any(t in need_plain for t in tokens) or any(t in need_coupled for t in tokens):
        probe = RingSimulator.for_marginal(ctx.spec, ctx.marginal)
        offsets = default_offsets(probe.c_max, cfg.t, (cfg.V,))
    if any(t in need_plain for t in tokens):
        plain = run_plain_ensemble(
            ctx.spec, ctx.marginal, cfg.L, cfg.t, cfg.replicates, cfg.seed,
            v_list=(cfg.V,), offsets=offsets, threads=cfg.threads)
    if any(t in need_coupled for t in tokens):
        coupled = run_coupled_ensemble(
            ctx.spec, ctx.marginal, cfg.L, cfg.t, cfg.replicates,
            cfg.seed + COUPLED_SEED_OFFSET, offsets=offsets,
            v_list=(cfg.V,), threads=cfg.threads)
    reports = []
    for token in tokens:
        if token == "flux-variance":
            reports.append(check_flux_variance_two_point(plain, cfg.V))
        elif token == "drift":
            reports.append(check_two_point_drift(plain))
        elif token == "two-point-law":
            reports.append(check_two_point_second_class(plain, coupled))
        elif token == "flux-q":
            reports.append(check_flux_variance_second_class(plain, coupled, cfg.V))
        elif token == "speed":
            reports.append(check_second_class_speed(coupled))
        elif token == "sum-rule":
            reports.append(check_sum_rule(plain))
        elif token == "soundness":
            reports.append(check_coupling_soundness(coupled))
        elif token == "quadrature":
            reports.append(check_flux_variance_quadrature(
                ctx.spec, ctx.marginal, cfg.L, cfg.t, cfg.replicates,
                cfg.seed + SMALL_RING_SEED_OFFSET, threads=cfg.threads))
    return reports


def cmd_check(cfg: ExperimentConfig) -> int:
    tokens = _resolve_checks(cfg, CHECK_TOKENS, DEFAULT_CHECK_TOKENS)
    if not tokens:
        return EXIT_OK
    ctx = build_context(cfg)
    reports = _run_mc_checks(ctx, tokens)
    _emit_reports(reports, None)
    return EXIT_OK if all_passed(reports) else EXIT_CHECK_FAILED


def _fit_ring(m: int, cap: int, want: int, per_state: int = 1) -> Optional[int]:
    """Largest ring length <= want whose enumerated (coupled) state count
    stays under the cap; None when even L=3 exceeds it."""
    for L in range(want, 2, -1):
        if (m ** L) * (L if per_state > 1 else 1) <= cap:
            return L
    return None


def cmd_verify_all(cfg: ExperimentConfig) -> int:
    tokens = _resolve_checks(cfg, VERIFY_STAGES, VERIFY_STAGES)
    if not tokens:
        return EXIT_OK
    ctx = build_context(cfg)
    oracle_mod.STATE_CAP = cfg.state_cap
    spec, marginal = ctx.spec, ctx.marginal
    bounded = spec.space.bounded
    m = marginal.z_hi - marginal.z_lo + 1
    reports = []

    def note(msg):
        print(msg, file=sys.stderr)

    for token in tokens:
        if token in ("flux-variance", "drift", "two-point-law", "flux-q",
                     "speed", "sum-rule"):
            continue  # batched below so the ensembles are shared
        t0 = time.perf_counter()
        if token == "validate":
            vreports = validate(spec)
            worst = max(r.max_residual for r in vreports)
            rep = _residual_report(
                "model-validation", spec, ctx.theta, worst, VALIDATE_TOL,
                cfg.seed, t0,
                extra={c.condition: c.passed for c in vreports})
            rep.passed = all_conditions_pass(vreports)
            reports.append(rep)
            print(rep.summary_line())
            continue
        if token in ("stationarity", "adjoint", "second-class-law") and not bounded:
            note(f"skipping {token}: the value interval is unbounded, so the "
                 "matrix oracle does not apply")
            continue
        if token == "stationarity":
            L = _fit_ring(m, cfg.state_cap, 6)
            if L is None:
                note(f"skipping {token}: {m} site values exceed the state cap "
                     "even on a 3-ring")
                continue
            res = oracle_mod.stationarity_residual(spec, marginal, L)
            rep = _residual_report(token, spec, ctx.theta, res,
                                   STATIONARITY_TOL, cfg.seed, t0,
                                   extra={"L": L})
        elif token == "adjoint":
            L = _fit_ring(m, cfg.state_cap, 6)
            if L is None:
                note(f"skipping {token}: state cap")
                continue
            res = oracle_mod.adjoint_residual(spec, marginal, L,
                                              trials=100, seed=cfg.seed)
            rep = _residual_report(token, spec, ctx.theta, res, ADJOINT_TOL,
                                   cfg.seed, t0, extra={"L": L, "trials": 100})
        elif token == "flux-identity":
            tol = FLUX_IDENTITY_TOL_BOUNDED if bounded else FLUX_IDENTITY_TOL_TRUNCATED
            res = oracle_mod.flux_identity_residual(spec, marginal)
            rep = _residual_report(token, spec, ctx.theta, res, tol, cfg.seed, t0)
        else:  # second-class-law
            L = _fit_ring(m, cfg.state_cap, 8, per_state=2)
            if L is None:
                note(f"skipping {token}: state cap")
                continue
            t_exact = 0.5
            res = oracle_mod.second_class_law_residual(spec, marginal, L, t_exact)
            rep = _residual_report(token, spec, ctx.theta, res,
                                   SECOND_CLASS_LAW_TOL, cfg.seed, t0,
                                   extra={"L": L, "t": t_exact})
        reports.append(rep)
        print(rep.summary_line())

    mc_tokens = [t for t in tokens if t in
                 ("flux-variance", "drift", "two-point-law", "flux-q",
                  "speed", "sum-rule")]
    if mc_tokens:
        for rep in _run_mc_checks(ctx, mc_tokens):
            reports.append(rep)
            print(rep.summary_line())

    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "reports.jsonl", "w") as f:
        for r in reports:
            f.write(r.to_json(indent=None) + "\n")
    write_manifest(outdir, "verify-all", cfg, ["reports.jsonl"],
                   {"stages_run": [r.identity for r in reports]})
    ok = all_passed(reports)
    print(f"{'all checks passed' if ok else 'CHECKS FAILED'} "
          f"({sum(r.passed for r in reports)}/{len(reports)})")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# argument wiring

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="FILE", help="configuration file")
    p.add_argument("--model", help="model name (%s)" % ", ".join(MODEL_NAMES))
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="model parameter; repeatable")
    p.add_argument("--theta", type=float, help="tilt of the product measure")
    p.add_argument("--rho", type=float, help="target density (inverts theta)")
    p.add_argument("--L", type=int, help="ring length")
    p.add_argument("--t", type=float, help="horizon time")
    p.add_argument("--V", type=float, help="observer speed")
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--checks", help="comma-separated check names")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--eps", type=float, help="marginal truncation tolerance")
    p.add_argument("--state-cap", dest="state_cap", type=int,
                   help="max enumerated states for exact oracles")
    p.add_argument("--threads", type=int)


def _parse_param(text: str, errors: list):
    if "=" not in text:
        errors.append(f"--param needs KEY=VALUE, got {text!r}")
        return None, None
    key, _, vtext = text.partition("=")
    key = key.strip()
    toks, terr = _tokenize(vtext.strip())
    if terr or len(toks) != 2:
        errors.append(f"--param {key}: cannot parse value {vtext!r}")
        return None, None
    try:
        return key, _Parser(toks)._value()
    except _Bail:
        errors.append(f"--param {key}: cannot parse value {vtext!r}")
        return None, None


def _config_from_args(args, *, require_theta: bool = True) -> ExperimentConfig:
    errors: list[str] = []
    raw: dict[str, Any] = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as e:
            raise ConfigError([f"cannot read config file: {e}"])
        raw, errors = _raw_from_text(text)

    if args.model:
        if raw.get("model") and raw["model"] != args.model:
            raw["model_params"] = {}
        raw["model"] = args.model
        raw.setdefault("model_params", {})
    for item in args.param or []:
        key, value = _parse_param(item, errors)
        if key is not None:
            raw.setdefault("model_params", {})[key] = value
    if args.theta is not None and args.rho is not None:
        errors.append("both --theta and --rho given; pick one")
    elif args.theta is not None:
        raw.pop("rho", None)
        raw["theta"] = args.theta
    elif args.rho is not None:
        raw.pop("theta", None)
        raw["rho"] = args.rho
    for key in ("L", "t", "V", "replicates", "seed", "output_dir", "eps",
                "state_cap", "threads"):
        v = getattr(args, key)
        if v is not None:
            raw[key] = v
    if args.checks is not None:
        raw["checks"] = tuple(c.strip() for c in args.checks.split(",") if c.strip())

    cfg, more = _finalize(raw, require_theta=require_theta)
    errors += more
    if errors:
        raise ConfigError(errors)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="deposim",
        description="Stationary deposition models: simulation and identity checks.")
    ap.add_argument("--version", action="version", version=f"deposim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, desc in (
        ("validate", "check the structural rate conditions for a model"),
        ("stats", "print one-site equilibrium statistics as JSON"),
        ("sample-equilibrium", "print draws from the single-site law"),
        ("simulate", "run replicated ring trajectories and write CSV"),
        ("second-class", "run coupled pairs and write displacement CSV"),
        ("oracle", "run exact small-ring residual checks"),
        ("check", "run Monte Carlo identity checks"),
        ("verify-all", "run validation, oracles, and the Monte Carlo battery"),
    ):
        p = sub.add_parser(name, help=desc, description=desc)
        _add_common(p)
        if name == "simulate":
            p.add_argument("--observables",
                           choices=("flux", "snapshot", "two-point"),
                           default="flux")
            p.add_argument("--window", type=int,
                           help="half width of the two-point offset window")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            cfg = _config_from_args(args, require_theta=False)
            return cmd_validate(cfg)
        cfg = _config_from_args(args)
        if args.command == "stats":
            return cmd_stats(cfg)
        if args.command == "sample-equilibrium":
            return cmd_sample_equilibrium(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.observables, args.window)
        if args.command == "second-class":
            return cmd_second_class(cfg)
        if args.command == "oracle":
            return cmd_oracle(cfg)
        if args.command == "check":
            return cmd_check(cfg)
        return cmd_verify_all(cfg)
    except ConfigError as e:
        for msg in e.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationAssertionError as e:
        print(f"internal assertion: {e}", file=sys.stderr)
        return EXIT_ASSERTION


if __name__ == "__main__":
    sys.exit(main())
