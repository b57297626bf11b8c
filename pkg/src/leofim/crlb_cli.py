"""Batch front end: CRLB sweeps, feasibility tables, oracle checks.

Usage::

    leofim sweep    --config configs/figures.yaml --out results
    leofim tables   --config configs/tables.yaml --jobs 8
    leofim validate --seed 3
    leofim explain  --cell "p+phi|K1B2U4|frequency"

Every subcommand takes ``--config``, ``--out``, ``--seed`` and ``--jobs``;
the flags override the corresponding config keys.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import efim_engine as E
from . import oracle
from .channel_fim import OFFSET_NAMES, OffsetConfig, assemble_channel_fim
from .feasibility import (MODES, ScenarioGrid, explain, failures, plane_geometry,
                          random_geometry, scan, scan_tables)
from .location_transform import build_jacobian
from .signal_model import SignalSpec

METRICS = {"position": ("p", "m"), "velocity": ("v", "m/s"), "orientation": ("phi", "rad")}
AXES = ("N_U", "Delta_t", "f_c", "SNR")
GEOMETRIES = {"plane": plane_geometry, "random": random_geometry}

SWEEP_COLUMNS = ("sweep", "axis", "value", "metric", "unit", "mode", "N_B", "N_K", "N_U",
                 "Delta_t", "f_c", "snr_db", "offsets", "seed", "bound", "feasible")
TABLE_COLUMNS = ("mode", "N_B", "N_K", "N_U", "offsets", "target", "verdict", "n_feasible",
                 "draws", "margin_min", "margin_median", "margin_max", "seed")
COMPARE_COLUMNS = ("table", "mode", "N_K", "N_B", "N_U", "offsets", "expected", "computed",
                   "agrees")


class ConfigError(ValueError):
    pass


# configuration --------------------------------------------------------------

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer", "minimum": 1}
_INTS = {"type": "array", "items": _INT}

_POINT = {
    "N_B": _INT, "N_K": _INT, "N_U": _INT, "Delta_t": _POS, "f_c": _POS, "snr_db": _NUM,
    "offsets": {"enum": list(OFFSET_NAMES)},
    "mode": {"enum": list(MODES)},
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "jobs": _INT,
        "out": {"type": "string"},
        "signal": {
            "type": "object", "additionalProperties": False,
            "properties": {"alpha1": {"type": "number", "minimum": 0},
                           "alpha2": {"type": "number", "minimum": -1, "maximum": 1},
                           "T": _POS, "t2_eff": {"type": ["number", "null"], "minimum": 0}},
        },
        "geometry": {
            "type": "object", "additionalProperties": False,
            "properties": {"kind": {"enum": list(GEOMETRIES)}, "rx_speed": {"type": "number", "minimum": 0},
                           "cone_deg": {"type": "number", "exclusiveMinimum": 0, "maximum": 90},
                           "spacing_deg": _POS, "offset_deg": {"type": "number", "minimum": 0}},
        },
        "defaults": {"type": "object", "additionalProperties": False, "properties": _POINT},
        "sweeps": {
            "type": "array",
            "items": {
                "type": "object", "additionalProperties": False,
                "required": ["axis", "values", "metric"],
                "properties": {"name": {"type": "string"}, "axis": {"enum": list(AXES)},
                               "values": {"type": "array", "items": _NUM, "minItems": 1},
                               "metric": {"enum": list(METRICS)}, **_POINT},
            },
        },
        "tables": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "published": {"type": "boolean"},
                "modes": {"type": "array", "items": {"enum": list(MODES)}},
                "n_sats": _INTS, "n_slots": _INTS, "n_antennas": _INTS,
                "offsets": {"type": "array", "items": {"enum": list(OFFSET_NAMES)}},
                "draws": _INT, "dt": _POS, "f_c": _POS, "alpha1": {"type": "number", "minimum": 0},
                "T": _POS,
            },
        },
        "validate": {
            "type": "object", "additionalProperties": False,
            "properties": {"scenarios": _INT, "tolerance": _POS, "jacobian_tolerance": _POS},
        },
    },
}

DEFAULT_CONFIG = {
    "seed": 0,
    "jobs": 1,
    "out": "results",
    # t2_eff and the single-plane layout reproduce the published -20 dB anchors
    "signal": {"alpha1": 1.0e5, "alpha2": 0.0, "T": 1.0e-3, "t2_eff": 3.0e4},
    "geometry": {"kind": "plane", "rx_speed": 20.0, "spacing_deg": 15.0, "offset_deg": 20.0,
                 "cone_deg": 60.0},
    "defaults": {"N_B": 3, "N_K": 3, "N_U": 4, "Delta_t": 0.025, "f_c": 1.0e9, "snr_db": -20.0,
                 "offsets": "none", "mode": "9d"},
    "sweeps": [],
    "tables": {"published": True, "draws": 16, "dt": 60.0, "f_c": 1.0e9, "alpha1": 1.0e5,
               "T": 1.0e-2},
    "validate": {"scenarios": 100, "tolerance": 1e-8, "jacobian_tolerance": 1e-5},
}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e9`` and ``3.0e4`` as floats (YAML 1.2 rule)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                  |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                  |\.[0-9_]+(?:[eE][-+][0-9]+)?
                  |[-+]?\.(?:inf|Inf|INF)
                  |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Read YAML, validate it against ``CONFIG_SCHEMA`` and fill defaults."""
    raw = {}
    if path is not None:
        try:
            raw = yaml.load(Path(path).read_text(), Loader=_Loader) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    validate_config(raw)
    cfg = _merge(DEFAULT_CONFIG, raw)
    cfg = _merge(cfg, {k: v for k, v in (overrides or {}).items() if v is not None})
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from exc


# sweeps ---------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    """One curve: a swept axis over an otherwise fixed scenario."""

    axis: str
    values: tuple
    metric: str = "position"
    mode: str = "9d"
    n_sats: int = 3
    n_slots: int = 3
    n_antennas: int = 4
    dt: float = 0.025
    f_c: float = 1e9
    snr_db: float = -20.0
    offsets: str = "none"
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {tuple(METRICS)}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        target = METRICS[self.metric][0]
        if target not in MODES[self.mode]:
            raise ValueError(f"mode {self.mode!r} does not estimate {self.metric}")
        OffsetConfig.from_name(self.offsets)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0 or np.any(np.diff(vals) <= 0):
            raise ValueError("axis values must be strictly increasing")
        if self.axis != "SNR" and np.any(vals <= 0):
            raise ValueError(f"{self.axis} values must be positive")
        if self.axis == "N_U" and np.any(vals != np.round(vals)):
            raise ValueError("N_U values must be integers")
        object.__setattr__(self, "values", tuple(float(v) for v in vals))

    @classmethod
    def from_config(cls, entry: dict, defaults: dict, seed: int) -> "SweepSpec":
        point = {**defaults, **{k: v for k, v in entry.items() if k in _POINT}}
        return cls(axis=entry["axis"], values=tuple(entry["values"]), metric=entry["metric"],
                   mode=point["mode"], n_sats=point["N_B"], n_slots=point["N_K"],
                   n_antennas=point["N_U"], dt=point["Delta_t"], f_c=point["f_c"],
                   snr_db=point["snr_db"], offsets=point["offsets"], seed=seed,
                   name=entry.get("name", ""))

    def point(self, value: float) -> dict:
        p = {"N_U": self.n_antennas, "Delta_t": self.dt, "f_c": self.f_c, "snr_db": self.snr_db}
        key = {"N_U": "N_U", "Delta_t": "Delta_t", "f_c": "f_c", "SNR": "snr_db"}[self.axis]
        p[key] = int(value) if key == "N_U" else float(value)
        return p


def crlb(J: np.ndarray) -> float:
    """``sqrt(trace(J^-1))``; raises ``ValueError`` unless ``J`` is positive definite."""
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ValueError("EFIM must be square")
    if not E.is_pd(J):
        raise ValueError("EFIM is not positive definite")
    return float(np.sqrt(np.trace(E.inv_pd(J))))


def sweep_scenario(spec: SweepSpec, point: dict, cfg: dict) -> E.Scenario:
    geo = dict(cfg["geometry"])
    kind = geo.pop("kind")
    if kind == "plane":
        geo.pop("cone_deg", None)
    else:
        geo.pop("spacing_deg", None)
        geo.pop("offset_deg", None)
    # one geometry per seed, shared by every point of the sweep
    rng = np.random.default_rng([spec.seed, 0])
    rx, cs = GEOMETRIES[kind](rng, spec.n_sats, spec.n_slots, point["N_U"], point["Delta_t"],
                              point["f_c"], **geo)
    sig = cfg["signal"]
    signal = SignalSpec.from_db(point["snr_db"], f_c=point["f_c"], alpha1=sig["alpha1"],
                                alpha2=sig["alpha2"], T=sig["T"], t2_eff=sig.get("t2_eff"))
    return E.Scenario(rx, cs, signal, OffsetConfig.from_name(spec.offsets))


def evaluate_point(spec: SweepSpec, value: float, cfg: dict) -> dict:
    point = spec.point(value)
    scn = sweep_scenario(spec, point, cfg)
    target, unit = METRICS[spec.metric]
    interest, nuisance = MODES[spec.mode][target]
    feasible = E.is_estimable(scn, interest, nuisance)
    bound = float("inf")
    if feasible:
        try:
            bound = crlb(E.sqrt_efim(scn, interest, nuisance))
        except ValueError:
            feasible = False
    return {
        "sweep": spec.name, "axis": spec.axis, "value": _fmt(value), "metric": spec.metric,
        "unit": unit, "mode": spec.mode, "N_B": spec.n_sats, "N_K": spec.n_slots,
        "N_U": point["N_U"], "Delta_t": _fmt(point["Delta_t"]), "f_c": _fmt(point["f_c"]),
        "snr_db": _fmt(point["snr_db"]), "offsets": spec.offsets, "seed": spec.seed,
        "bound": _fmt(bound), "feasible": int(feasible),
    }


def _fmt(x: float) -> str:
    return repr(float(x))


def _map(fn, args: list, jobs: int) -> list:
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, *zip(*args)))
    return [fn(*a) for a in args]


def run_sweep(specs, cfg: dict, jobs: int = 1) -> list[dict]:
    """Rows for every (sweep, axis value), in input order at any ``jobs``."""
    if isinstance(specs, SweepSpec):
        specs = [specs]
    args = [(s, v, cfg) for s in specs for v in s.values]
    return _map(evaluate_point, args, jobs)


def sweeps_from_config(cfg: dict) -> list[SweepSpec]:
    return [SweepSpec.from_config(e, cfg["defaults"], cfg["seed"]) for e in cfg["sweeps"]]


def write_csv(path: Path, rows: list[dict], columns) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    path.write_text(buf.getvalue())


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# tables ---------------------------------------------------------------------

def grid_from_config(cfg: dict) -> ScenarioGrid:
    t = cfg["tables"]
    kw = {k: tuple(t[k]) for k in ("modes", "n_sats", "n_slots", "n_antennas", "offsets") if k in t}
    return ScenarioGrid(draws=t["draws"], seed=cfg["seed"], dt=t["dt"], f_c=t["f_c"],
                        alpha1=t["alpha1"], T=t["T"], **kw)


def text_grid(rows: list[dict]) -> str:
    """Human-readable verdict grid: one line per (mode, cell, target)."""
    offs = [o for o in OFFSET_NAMES if any(r["offsets"] == o for r in rows)]
    glyph = {"feasible": "F", "infeasible": "-", "mixed": "?"}
    seen, lines = {}, []
    for r in rows:
        key = (r["mode"], r["N_K"], r["N_B"], r["N_U"], r["target"])
        seen.setdefault(key, {})[r["offsets"]] = glyph[r["verdict"]]
    head = f"{'mode':6s} {'cell':10s} {'target':7s} " + " ".join(f"{o:>9s}" for o in offs)
    lines.append(head)
    for (mode, k, b, u, target), v in seen.items():
        cell = f"K{k}B{b}U{u}"
        lines.append(f"{mode:6s} {cell:10s} {target:7s} "
                     + " ".join(f"{v.get(o, ' '):>9s}" for o in offs))
    return "\n".join(lines) + "\n"


def run_tables(grid: ScenarioGrid | None, cfg: dict, out: Path, jobs: int = 1) -> dict:
    """Scan a grid, or the published tables when ``grid`` is None, and write reports.

    Returns a summary with the number of cells and, for the published
    tables, the number of disagreeing cells.
    """
    out = Path(out)
    summary = {}
    if grid is None:
        report, comparison = scan_tables(grid_from_config(cfg), jobs=jobs)
        rows = []
        for c in comparison:
            cell = c["cell"]
            rows.append({"table": c["table"], "mode": cell.mode, "N_K": cell.n_slots,
                         "N_B": cell.n_sats, "N_U": cell.n_antennas, "offsets": cell.offsets,
                         "expected": " ".join(sorted(c["expected"])) or "-",
                         "computed": " ".join(f"{t}={v}" for t, v in c["computed"].items()),
                         "agrees": int(c["agrees"])})
        write_csv(out / "tables_comparison.csv", rows, COMPARE_COLUMNS)
        summary["disagreements"] = sum(1 for c in comparison if not c["agrees"])
    else:
        report = scan(grid, jobs=jobs)
    rows = report.rows()
    write_csv(out / "feasibility.csv", rows, TABLE_COLUMNS)
    (out / "feasibility.txt").write_text(text_grid(rows) if rows else "")
    summary["cells"] = len(report.results)
    return summary


# oracle suite ---------------------------------------------------------------

def random_case(rng: np.random.Generator) -> E.Scenario:
    """Small random scenario with per-link SNRs and random offsets."""
    n_b, n_k, n_u = (int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 5)))
    f_c = float(rng.uniform(1e9, 40e9))
    rx, cs = random_geometry(rng, n_b, n_k, n_u, float(rng.uniform(0.01, 10.0)), f_c)
    spec = SignalSpec.from_db(rng.uniform(-20, 40, size=(n_b, n_k, n_u)), f_c=f_c,
                              alpha1=float(rng.uniform(0, 1e7)), alpha2=float(rng.uniform(-1, 1)),
                              T=float(rng.uniform(1e-4, 1e-2)))
    offsets = OffsetConfig.from_name(OFFSET_NAMES[int(rng.integers(4))],
                                     eps=rng.uniform(-1e3, 1e3, size=n_b))
    return E.Scenario(rx, cs, spec, offsets)


def _oracle_fim(scn: E.Scenario):
    """Congruence FIM from the numeric Jacobian and a measurement-built channel FIM."""
    jac = oracle.numeric_jacobian(scn.rx, scn.cs)
    chan = assemble_channel_fim(scn.rx, scn.cs, scn.spec, scn.offsets)
    n_b = scn.cs.n_sats
    eps = scn.offsets.eps_per_sat(n_b)
    x = [oracle.mpmath.mpf(float(t)) for t in np.concatenate([scn.rx.p, scn.rx.phi, scn.rx.v])]
    obs = oracle.observables(x, scn.rx, scn.cs)
    blocks = []
    for b in range(n_b):
        nu = np.array([float(t) for t in obs[b][-scn.cs.n_slots:]])
        f_ob = scn.spec.f_c * (1 - nu) + eps[b]
        blocks.append(oracle.channel_fim_from_measurements(scn.spec, scn.snr[b], f_ob))
    chan = replace(chan, blocks=tuple(blocks))
    return jac, oracle.congruence_fim(jac, chan)


def oracle_errors(scn: E.Scenario) -> dict:
    """Closed form versus oracle for one scenario.

    ``jacobian`` is the worst per-row relative error, ``blocks`` and
    ``losses`` are diagonal-scaled errors of the 9x9 blocks.
    """
    jac, J = _oracle_fim(scn)
    ana = build_jacobian(scn.rx, scn.cs).matrix[:9]
    num = jac.matrix[:9]
    scale = np.max(np.abs(num), axis=1)
    jac_err = float(np.max(np.where(scale > 0, np.max(np.abs(ana - num), axis=1)
                                    / np.where(scale > 0, scale, 1.0), 0.0)))
    F = E.location_fim(scn)
    lem = oracle.scaled_error(F, J[:9, :9])
    n_b = scn.cs.n_sats
    nuis = []
    if scn.offsets.time_unknown:
        nuis += [9 + 3 * b + 1 for b in range(n_b)]
    if scn.offsets.freq_unknown:
        nuis += [9 + 3 * b + 2 for b in range(n_b)]
    keep = list(range(9))
    sub = J[np.ix_(keep + nuis, keep + nuis)]
    G_ref = oracle.schur_loss(sub, keep)
    G = E.loss_matrix(scn)
    loss = oracle.scaled_error(G, G_ref, diag=np.diag(J)[:9])
    return {"jacobian": jac_err, "blocks": lem, "losses": loss}


def _case_errors(seed: int, i: int) -> dict:
    return oracle_errors(random_case(np.random.default_rng([seed, i])))


def oracle_suite(n: int = 100, seed: int = 0, jobs: int = 1) -> dict:
    """Worst errors over ``n`` random scenarios."""
    errs = _map(_case_errors, [(seed, i) for i in range(n)], jobs)
    return {k: max(e[k] for e in errs) for k in ("jacobian", "blocks", "losses")}


# command line ---------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, help="geometry seed (overrides config)")
    common.add_argument("--jobs", type=int, help="worker processes (overrides config)")
    p = argparse.ArgumentParser(prog="leofim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("sweep", parents=[common], help="CRLB sweeps to CSV")
    sub.add_parser("tables", parents=[common], help="feasibility tables to CSV and text")
    sub.add_parser("validate", parents=[common], help="closed form versus oracle")
    ex = sub.add_parser("explain", parents=[common], help="necessary-condition trace of a cell")
    ex.add_argument("--cell", required=True, help='cell key such as "9d|K3B3U4|both"')
    ex.add_argument("--draw", type=int, default=0)
    return p


def _overrides(args) -> dict:
    out = {"seed": args.seed, "jobs": args.jobs}
    if args.out is not None:
        out["out"] = str(args.out)
    return out


def _cmd_sweep(cfg, out: Path) -> int:
    specs = sweeps_from_config(cfg)
    rows = run_sweep(specs, cfg, jobs=cfg["jobs"])
    write_csv(out / "sweep.csv", rows, SWEEP_COLUMNS)
    n_bad = sum(1 for r in rows if not r["feasible"])
    print(f"{len(rows)} sweep points written to {out / 'sweep.csv'} ({n_bad} infeasible)")
    return 0


def _cmd_tables(cfg, out: Path) -> int:
    published = cfg["tables"].get("published", True)
    grid = None if published else grid_from_config(cfg)
    summary = run_tables(grid, cfg, out, jobs=cfg["jobs"])
    msg = f"{summary['cells']} cells written to {out / 'feasibility.csv'}"
    if "disagreements" in summary:
        msg += f"; {summary['disagreements']} disagree with the published tables"
    print(msg)
    return 0


def _cmd_validate(cfg, out: Path) -> int:
    v = cfg["validate"]
    t0 = time.perf_counter()
    errs = oracle_suite(v["scenarios"], cfg["seed"], cfg["jobs"])
    tol = {"jacobian": v["jacobian_tolerance"], "blocks": v["tolerance"], "losses": v["tolerance"]}
    ok = True
    for k, e in errs.items():
        good = e <= tol[k]
        ok &= good
        print(f"{'PASS' if good else 'FAIL'} {k:9s} max error {e:.3e} (tolerance {tol[k]:.0e})")
    print(f"{v['scenarios']} scenarios in {time.perf_counter() - t0:.1f} s")
    return 0 if ok else 1


def _cmd_explain(cfg, out: Path, cell: str, draw: int) -> int:
    from .feasibility import Cell, FeasibilityReport, evaluate_cell
    try:
        mode, size, offsets = cell.split("|")
        k, rest = size[1:].split("B")
        b, u = rest.split("U")
        c = Cell(mode, int(b), int(k), int(u), offsets)
    except ValueError as exc:
        print(f"bad cell key {cell!r}: {exc}", file=sys.stderr)
        return 2
    grid = grid_from_config(cfg)
    report = FeasibilityReport(grid, (evaluate_cell(grid, c),))
    for t, tr in report[c].targets.items():
        print(f"{t}: {tr.verdict} ({tr.n_feasible}/{tr.draws} draws)")
    trace = explain(report, c, draw)
    for label, held in trace:
        print(f"  [{'ok' if held else 'FAIL'}] {label}")
    bad = failures(trace)
    print(f"draw {draw}: {len(bad)} failed condition(s)")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg["out"])
    if args.command == "sweep":
        try:
            return _cmd_sweep(cfg, out)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    if args.command == "tables":
        return _cmd_tables(cfg, out)
    if args.command == "validate":
        return _cmd_validate(cfg, out)
    return _cmd_explain(cfg, out, args.cell, args.draw)


if __name__ == "__main__":
    sys.exit(main())
