"""Batch entry point: ``navleray {run,constants,contraction,compare-schemes,roundtrip}``.

Configuration is an INI file with sections [grid], [scheme], [control] and
[run]; every key can be overridden with ``--set section.key=value``.
Precedence is command line > file > built-in defaults.

Exit codes: 0 success, 1 check failed, 2 scheme divergence, 3 config error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .control import ControlMode
from .diagnostics import (
    contraction_table,
    dumps_report,
    fit_bound,
    report_document,
    rows_to_csv,
    steps_to_csv,
    table_passes,
)
from .errors import ConfigError, SchemeError
from .fields import GridSpec, VectorField, hm_cm_norm, load_field, save_field, sobolev_norm
from .kernels import HeatParams, compute_constants
from .presets import preset_field, solenoidal_noise
from .scheme import (
    SchemeConfig,
    StepReport,
    local_solve,
    nonstar_local_solve,
    select_rho,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_DIVERGED, EXIT_CONFIG = 0, 1, 2, 3

# section -> key -> parser; every accepted key is listed here
_SCHEMA = {
    "grid": {"n": int, "half_width": float},
    "scheme": {"nu": float, "m": int, "c_bound": float, "c_n": int, "max_subiter": int,
               "tol": float, "M": int, "step_policy": str, "rho": float,
               "dealias": "bool", "c_kp": float},
    "control": {"kind": str, "C": float, "C_factor": float, "eps": float},
    "run": {"preset": str, "n_steps": int, "checkpoint_every": int, "seed": int,
            "noise_amplitude": float},
}


@dataclass
class RunConfig:
    scheme: SchemeConfig
    preset: str = "taylor_green"
    n_steps: int = 1
    checkpoint_every: int = 0
    seed: int = 0
    noise_amplitude: float = 0.0
    raw: dict = field(default_factory=dict)

    def initial_field(self) -> VectorField:
        h = preset_field(self.preset, self.scheme.grid)
        if self.noise_amplitude > 0:
            h = h + solenoidal_noise(h.grid, self.noise_amplitude, self.seed)
        return h


def _parse_value(section: str, key: str, text: str):
    kind = _SCHEMA[section][key]
    text = text.strip()
    if text.lower() in ("", "none") and kind is not str:
        return None
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {text!r}") from None


def load_settings(config_path=None, overrides=()) -> dict:
    """Merged {section: {key: value}} from an INI file and section.key=value overrides."""
    settings: dict = {s: {} for s in _SCHEMA}
    if config_path is not None:
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        cp.optionxform = str  # keys such as M and C are case-sensitive
        try:
            with open(config_path) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {config_path}: {exc}") from None
        for section in cp.sections():
            for key, text in cp.items(section):
                _store(settings, section, key, text)
    for item in overrides:
        name, sep, text = item.partition("=")
        section, dot, key = name.partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        _store(settings, section.strip(), key.strip(), text)
    return settings


def _store(settings, section, key, text):
    if section not in _SCHEMA:
        raise ConfigError(f"unknown config section [{section}]")
    if key not in _SCHEMA[section]:
        raise ConfigError(f"unknown key {key!r} in [{section}]")
    settings[section][key] = _parse_value(section, key, text)


def build_run_config(settings: dict) -> RunConfig:
    g, s, c, r = (settings.get(k, {}) for k in ("grid", "scheme", "control", "run"))
    try:
        grid = GridSpec(g.get("n", 32), g.get("half_width", math.pi))
        run = {k: v for k, v in r.items() if v is not None}
        preset = run.get("preset", "taylor_green")
        kind = c.get("kind") or "none"
        C = c.get("C")
        if C is None and c.get("C_factor") is not None and kind != "none":
            # scale relative to the initial H^m and C^m norm
            probe = preset_field(preset, grid)
            C = c["C_factor"] * hm_cm_norm(probe, s.get("m") or 2)
        mode = ControlMode(kind, C, c.get("eps"))
        scheme = SchemeConfig(grid=grid, control=mode,
                              **{k: v for k, v in s.items() if v is not None or k == "c_bound"})
        cfg = RunConfig(scheme=scheme, raw=settings, **run)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.n_steps < 1:
        raise ConfigError("run.n_steps must be >= 1")
    if cfg.checkpoint_every < 0:
        raise ConfigError("run.checkpoint_every must be >= 0")
    if cfg.noise_amplitude < 0:
        raise ConfigError("run.noise_amplitude must be >= 0")
    return cfg


def _run_config_dict(cfg: RunConfig) -> dict:
    d = cfg.scheme.to_dict()
    d["run"] = {"preset": cfg.preset, "n_steps": cfg.n_steps,
                "checkpoint_every": cfg.checkpoint_every, "seed": cfg.seed,
                "noise_amplitude": cfg.noise_amplitude}
    return d


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from None
    return out


# -- commands -------------------------------------------------------------------

def cmd_run(cfg: RunConfig, out) -> int:
    """Run the global scheme; write report.json, steps.csv, contraction.csv."""
    from .scheme import run_global

    out = _out_dir(out)
    h = cfg.initial_field()

    def checkpoint(l, vr, r):
        if cfg.checkpoint_every and l % cfg.checkpoint_every == 0:
            name = f"v_r_{l:05d}.lrsf"
            save_field(out / name, vr)
            save_field(out / f"r_{l:05d}.lrsf", r)
            return name
        return None

    try:
        ledger = run_global(h, cfg.n_steps, cfg.scheme, on_step=checkpoint)
    except SchemeError as exc:
        log.error("scheme diverged: %s", exc)
        return EXIT_DIVERGED
    ledger.config = _run_config_dict(cfg)
    rows = contraction_table(ledger.reports)
    fits = {
        "velocity_hm_cm_uniform": fit_bound(
            [max(r.hm_norm_end, r.cm_norm_end) for r in ledger.reports], "uniform"),
        "control_norm_linear": fit_bound(ledger.series("control_norm"), "linear"),
        "control_norm_sqrt": fit_bound(ledger.series("control_norm"), "sqrt"),
        "leray_sup_linear": fit_bound(ledger.series("leray_sup"), "linear"),
    }
    flags = {
        "contraction": table_passes(rows),
        "divergence_free": all(r.div_norm <= 1e-6 * r.hm_norm_end**2 for r in ledger.reports),
    }
    if cfg.scheme.control.C is not None:
        flags["velocity_bound"] = all(max(r.hm_norm_end, r.cm_norm_end) <= cfg.scheme.control.C
                                      for r in ledger.reports)
    (out / "report.json").write_text(dumps_report(report_document(ledger, fits, flags)))
    (out / "steps.csv").write_text(steps_to_csv(ledger))
    (out / "contraction.csv").write_text(rows_to_csv(rows))
    print(f"{len(ledger.reports)} steps, physical time {ledger.physical_time:.6g}; "
          f"report written to {out / 'report.json'}")
    return EXIT_OK


def cmd_constants(nu: float, rho: float, c_n: int = 16) -> int:
    consts = compute_constants(HeatParams(nu, rho), None, c_n)
    print(dumps_report(consts.as_dict()), end="")
    return EXIT_OK


def _first_step(cfg: RunConfig):
    h = cfg.initial_field()
    sc = cfg.scheme
    c_prev = sobolev_norm(h, sc.m) ** 2 if sc.c_bound is None else sc.c_bound
    consts = compute_constants(HeatParams(sc.nu, 1.0), sc.grid, sc.c_n)
    return h, c_prev, select_rho(sc, c_prev, consts, h)


def cmd_contraction(cfg: RunConfig, out=None) -> int:
    """One time step; print the contraction table; 0 iff every ratio <= 1/2."""
    h, c_prev, rho = _first_step(cfg)
    try:
        sol = local_solve(h, cfg.scheme, rho)
    except SchemeError as exc:
        log.error("scheme diverged: %s", exc)
        return EXIT_DIVERGED
    report = StepReport(
        l=1, rho=rho, ratios=sol.ratios, squared_ratios=sol.squared_ratios,
        n_subiter=sol.n_subiter, status=sol.status,
        first_increment_norm=sol.first_increment_norm, c_prev=c_prev,
        hm_norm_end=math.nan, cm_norm_end=math.nan, control_hm_norm=0.0,
        control_cm_norm=0.0, velocity_sq_norm=math.nan, leray_sup=math.nan,
        leray_sup_controlled=math.nan, div_norm=math.nan, elapsed_time=rho)
    rows = contraction_table([report])
    text = rows_to_csv(rows)
    print(text, end="")
    if out is not None:
        (_out_dir(out) / "contraction.csv").write_text(text)
    ok = all(q <= 0.5 for q in sol.ratios)
    return EXIT_OK if ok else EXIT_FAILED


def cmd_compare_schemes(cfg: RunConfig) -> int:
    """Star and non-star limits from the same data; 0 iff H^2 distance <= 1e-6."""
    h, _, rho = _first_step(cfg)
    try:
        star = local_solve(h, cfg.scheme, rho)
        ref = nonstar_local_solve(h, cfg.scheme, rho)
    except SchemeError as exc:
        log.error("scheme diverged: %s", exc)
        return EXIT_DIVERGED
    diff = star.trajectory - ref.trajectory
    dist = max(sobolev_norm(diff.state(j), 2) for j in range(diff.M + 1))
    print(dumps_report({"rho": rho, "star_subiter": star.n_subiter,
                        "nonstar_subiter": ref.n_subiter, "h2_distance": dist}), end="")
    return EXIT_OK if dist <= 1e-6 else EXIT_FAILED


def cmd_checkpoint_roundtrip(path=None, cfg: RunConfig | None = None) -> int:
    """Write a field and read it back; 0 iff bit-identical.

    With a path that already holds a checkpoint, that field is re-written to
    a temporary file; otherwise the configured initial field is written to
    `path` (or a temporary file).
    """
    if path is not None and Path(path).is_file():
        f = load_field(path)
        with tempfile.TemporaryDirectory() as tmp:
            return _roundtrip(f, Path(tmp) / "copy.lrsf")
    f = (cfg or build_run_config({})).initial_field()
    if path is not None:
        return _roundtrip(f, Path(path))
    with tempfile.TemporaryDirectory() as tmp:
        return _roundtrip(f, Path(tmp) / "field.lrsf")


def _roundtrip(f, target: Path) -> int:
    save_field(target, f)
    back = load_field(target)
    a = f.data if isinstance(f, VectorField) else f.values
    b = back.data if isinstance(back, VectorField) else back.values
    same = (type(f) is type(back) and back.grid == f.grid
            and a.shape == b.shape and a.tobytes() == b.tobytes())
    print(json.dumps({"path": str(target), "bit_identical": same}))
    return EXIT_OK if same else EXIT_FAILED


# -- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [grid] [scheme] [control] [run]")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override one config entry")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="navleray", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="global run with reports and checkpoints")
    c = sub.add_parser("constants", parents=[common], help="print the a priori constants")
    c.add_argument("--nu", type=float, default=None)
    c.add_argument("--rho", type=float, default=1.0)
    sub.add_parser("contraction", parents=[common], help="one step, contraction table")
    sub.add_parser("compare-schemes", parents=[common], help="star vs non-star limits")
    r = sub.add_parser("roundtrip", parents=[common], help="checkpoint write/read check")
    r.add_argument("path", nargs="?", default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_run_config(load_settings(args.config, args.overrides))
        if args.command == "run":
            return cmd_run(cfg, args.out)
        if args.command == "constants":
            nu = cfg.scheme.nu if args.nu is None else args.nu
            return cmd_constants(nu, args.rho, cfg.scheme.c_n)
        if args.command == "contraction":
            return cmd_contraction(cfg, args.out)
        if args.command == "compare-schemes":
            return cmd_compare_schemes(cfg)
        return cmd_checkpoint_roundtrip(args.path, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # invalid parameter values reaching the library (e.g. rho <= 0)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
