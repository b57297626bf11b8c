"""Identifiability scan over satellites, slots, antennas and offsets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel_fim import OffsetConfig
from .efim_engine import NINE_D_ORDER, PARAM_NAMES, RANK_TOL, Scenario, estimability_margin
from .geometry import C, ConstellationState, ReceiverState
from .signal_model import SignalSpec

EARTH_RADIUS = 6_371_000.0
ALTITUDE = 550_000.0
SAT_SPEED = 7_560.0
CONE_DEG = 60.0


def square_array(n: int, spacing: float) -> np.ndarray:
    """First ``n`` points of a centred square grid."""
    side = int(np.ceil(np.sqrt(n)))
    ij = np.array([(i, j) for i in range(side) for j in range(side)][:n], dtype=float)
    pts = np.column_stack([ij * spacing, np.zeros(n)])
    return pts - pts.mean(axis=0)


def _rotate(x, axis, angle):
    """Rodrigues rotation of rows of ``x`` about unit ``axis``."""
    c, s = np.cos(angle), np.sin(angle)
    return x * c + np.cross(axis, x) * s + np.outer(x @ axis, axis) * (1 - c)


def circular_tracks(p_ref, v_ref, n_slots: int, dt: float) -> ConstellationState:
    """Circular orbits about the Earth centre through ``p_ref`` with velocity ``v_ref``.

    The local frame has the receiver near the origin and the Earth centre at
    ``(0, 0, -EARTH_RADIUS)``.
    """
    centre = np.array([0.0, 0.0, -EARTH_RADIUS])
    pos = np.empty((len(p_ref), n_slots, 3))
    vel = np.empty_like(pos)
    for b, (p, v) in enumerate(zip(p_ref, v_ref)):
        r = p - centre
        axis = np.cross(r, v)
        axis /= np.linalg.norm(axis)
        rate = np.linalg.norm(v) / np.linalg.norm(r)
        for k in range(n_slots):
            ang = rate * k * dt
            pos[b, k] = centre + _rotate(r[None], axis, ang)[0]
            vel[b, k] = _rotate(v[None], axis, ang)[0]
    return ConstellationState(pos, vel, dt)


def random_receiver(rng: np.random.Generator, n_antennas: int, f_c: float,
                    rx_speed: float = 20.0) -> ReceiverState:
    d = rng.normal(size=3)
    return ReceiverState(
        p=rng.uniform(-100, 100, size=3),
        phi=rng.uniform(-np.pi, np.pi, size=3) * 0.999,
        v=rx_speed * d / np.linalg.norm(d),
        s_tilde=square_array(n_antennas, C / f_c / 2),
    )


def _on_shell(u):
    """Point where the ray from the origin along unit ``u`` meets the orbit shell."""
    centre = np.array([0.0, 0.0, -EARTH_RADIUS])
    shell = EARTH_RADIUS + ALTITUDE
    bq = -2 * u @ centre
    cq = centre @ centre - shell**2
    return (-bq + np.sqrt(bq * bq - 4 * cq)) / 2 * u


def random_geometry(rng: np.random.Generator, n_sats: int, n_slots: int, n_antennas: int,
                    dt: float, f_c: float, rx_speed: float = 20.0, cone_deg: float = CONE_DEG):
    """Generic receiver and constellation.

    Satellites sit on the 550 km shell inside a cone (60 degrees by
    default) around the receiver zenith and move at 7.56 km/s in random
    tangential directions. The array is a square half-wavelength grid.
    """
    rx = random_receiver(rng, n_antennas, f_c, rx_speed)
    centre = np.array([0.0, 0.0, -EARTH_RADIUS])
    p_ref, v_ref = [], []
    cos_min = np.cos(np.radians(cone_deg))
    for _ in range(n_sats):
        cz = rng.uniform(cos_min, 1.0)
        az = rng.uniform(0, 2 * np.pi)
        sz = np.sqrt(1 - cz * cz)
        p = _on_shell(np.array([sz * np.cos(az), sz * np.sin(az), cz]))
        radial = (p - centre) / np.linalg.norm(p - centre)
        w = rng.normal(size=3)
        w -= (w @ radial) * radial
        p_ref.append(p)
        v_ref.append(SAT_SPEED * w / np.linalg.norm(w))
    cs = circular_tracks(np.array(p_ref), np.array(v_ref), n_slots, dt)
    return rx, cs


def plane_geometry(rng: np.random.Generator, n_sats: int, n_slots: int, n_antennas: int,
                   dt: float, f_c: float, rx_speed: float = 20.0,
                   spacing_deg: float = 15.0, offset_deg: float = 20.0):
    """Consecutive satellites of one orbital plane.

    Neighbours are ``spacing_deg`` apart in orbit angle and the plane passes
    ``offset_deg`` (Earth-central angle) from the receiver zenith. Only the
    receiver and the plane heading are random.
    """
    rx = random_receiver(rng, n_antennas, f_c, rx_speed)
    centre = np.array([0.0, 0.0, -EARTH_RADIUS])
    shell = EARTH_RADIUS + ALTITUDE
    az = rng.uniform(0, 2 * np.pi)
    along = np.array([np.cos(az), np.sin(az), 0.0])
    cross = np.cross(along, [0.0, 0.0, 1.0])
    tilt = np.radians(offset_deg)
    e1 = np.cos(tilt) * np.array([0.0, 0.0, 1.0]) + np.sin(tilt) * cross
    p_ref, v_ref = [], []
    for j in range(n_sats):
        a = np.radians(spacing_deg) * (j - (n_sats - 1) / 2)
        p_ref.append(centre + shell * (np.cos(a) * e1 + np.sin(a) * along))
        v_ref.append(SAT_SPEED * (-np.sin(a) * e1 + np.cos(a) * along))
    return rx, circular_tracks(np.array(p_ref), np.array(v_ref), n_slots, dt)


# scan -----------------------------------------------------------------------

# mode -> {target: (interest, unknown nuisance blocks)}
MODES = {
    "p": {"p": (("p",), ())},
    "phi": {"phi": (("phi",), ())},
    "v": {"v": (("v",), ())},
    "p+v": {"p": (("p",), ("v",)), "v": (("v",), ("p",)), "joint": (("p", "v"), ())},
    "p+phi": {"p": (("p",), ("phi",)), "phi": (("phi",), ("p",)), "joint": (("p", "phi"), ())},
    "phi+v": {"phi": (("phi",), ("v",)), "v": (("v",), ("phi",)), "joint": (("phi", "v"), ())},
    "9d": {"p": (("p",), ("phi", "v")), "phi": (("phi",), ("p", "v")), "v": (("v",), ("p", "phi"))},
}


@dataclass(frozen=True)
class Cell:
    mode: str
    n_sats: int
    n_slots: int
    n_antennas: int
    offsets: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if min(self.n_sats, self.n_slots, self.n_antennas) < 1:
            raise ValueError("cell sizes must be >= 1")
        OffsetConfig.from_name(self.offsets)

    @property
    def key(self) -> str:
        return f"{self.mode}|K{self.n_slots}B{self.n_sats}U{self.n_antennas}|{self.offsets}"


@dataclass(frozen=True)
class ScenarioGrid:
    """Cartesian grid of cells plus geometry settings shared by every draw."""

    modes: tuple = ("p",)
    n_sats: tuple = (1,)
    n_slots: tuple = (1,)
    n_antennas: tuple = (1,)
    offsets: tuple = ("none", "time", "frequency", "both")
    draws: int = 16
    seed: int = 0
    dt: float = 60.0
    f_c: float = 1e9
    alpha1: float = 1e5
    T: float = 1e-2
    snr: float = 1.0

    def __post_init__(self):
        if self.draws < 1:
            raise ValueError("draws must be >= 1")

    def cells(self) -> list[Cell]:
        return [Cell(m, b, k, u, o) for m in self.modes for k in self.n_slots
                for b in self.n_sats for u in self.n_antennas for o in self.offsets]

    def spec(self) -> SignalSpec:
        return SignalSpec(f_c=self.f_c, alpha1=self.alpha1, snr=self.snr, T=self.T)


@dataclass(frozen=True)
class TargetResult:
    verdict: str  # "feasible", "infeasible" or "mixed"
    n_feasible: int
    draws: int
    margin_min: float
    margin_median: float
    margin_max: float


@dataclass(frozen=True)
class CellResult:
    cell: Cell
    targets: dict

    def verdict(self, target: str) -> str:
        return self.targets[target].verdict

    def feasible(self, target: str) -> bool:
        return self.targets[target].verdict == "feasible"


def draw_scenario(grid: ScenarioGrid, cell: Cell, draw: int) -> Scenario:
    # one stream per (seed, draw): a cell with more satellites or slots
    # extends the same receiver and tracks
    rng = np.random.default_rng([grid.seed, draw])
    rx, cs = random_geometry(rng, cell.n_sats, cell.n_slots, cell.n_antennas, grid.dt, grid.f_c)
    return Scenario(rx, cs, grid.spec(), OffsetConfig.from_name(cell.offsets))


def _verdict(n_ok: int, draws: int) -> str:
    if n_ok == draws:
        return "feasible"
    return "infeasible" if n_ok == 0 else "mixed"


def evaluate_cell(grid: ScenarioGrid, cell: Cell) -> CellResult:
    margins = {t: [] for t in MODES[cell.mode]}
    for draw in range(grid.draws):
        scn = draw_scenario(grid, cell, draw)
        for t, (interest, nuisance) in MODES[cell.mode].items():
            margins[t].append(estimability_margin(scn, interest, nuisance))
    targets = {}
    for t, ms in margins.items():
        ms = np.asarray(ms)
        n_ok = int(np.sum(ms > RANK_TOL))
        targets[t] = TargetResult(_verdict(n_ok, grid.draws), n_ok, grid.draws,
                                  float(ms.min()), float(np.median(ms)), float(ms.max()))
    return CellResult(cell, targets)


@dataclass(frozen=True)
class FeasibilityReport:
    grid: ScenarioGrid
    results: tuple

    def __getitem__(self, key) -> CellResult:
        for r in self.results:
            if r.cell == key or r.cell.key == key:
                return r
        raise KeyError(key)

    def rows(self) -> list[dict]:
        out = []
        for r in self.results:
            c = r.cell
            for t, tr in r.targets.items():
                out.append({
                    "mode": c.mode, "N_B": c.n_sats, "N_K": c.n_slots, "N_U": c.n_antennas,
                    "offsets": c.offsets, "target": t, "verdict": tr.verdict,
                    "n_feasible": tr.n_feasible, "draws": tr.draws,
                    "margin_min": f"{tr.margin_min:.6e}", "margin_median": f"{tr.margin_median:.6e}",
                    "margin_max": f"{tr.margin_max:.6e}", "seed": self.grid.seed,
                })
        return out


def scan(grid: ScenarioGrid, jobs: int = 1) -> FeasibilityReport:
    """Evaluate every cell; results are ordered like ``grid.cells()``."""
    cells = grid.cells()
    if jobs > 1 and len(cells) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(evaluate_cell, [grid] * len(cells), cells))
    else:
        results = [evaluate_cell(grid, c) for c in cells]
    return FeasibilityReport(grid, tuple(results))


def explain(report: FeasibilityReport, cell: Cell | str, draw: int = 0) -> list[tuple[str, bool]]:
    """Ordered necessary-condition trace for one scanned cell.

    Each entry is ``(condition, held)`` evaluated on geometry ``draw``. The
    conditions mirror the inner-block requirements of the 3D, 6D and 9D
    results; a feasible cell yields no failed entries.
    """
    result = report[cell]
    cell = result.cell
    scn = draw_scenario(report.grid, cell, draw)
    trace = []

    def check(label, interest, nuisance):
        ok = estimability_margin(scn, interest, nuisance) > RANK_TOL
        trace.append((label, ok))
        return ok

    mode = cell.mode
    if mode in ("p", "phi", "v"):
        check(f"{PARAM_NAMES[mode]} EFIM positive definite", [mode], [])
    elif mode == "9d":
        for which, (y, z) in NINE_D_ORDER.items():
            tag = f"{PARAM_NAMES[which]} target:"
            check(f"{tag} inner {PARAM_NAMES[y]} block positive definite", [y], [])
            check(f"{tag} S invertible", [z], [y])
            check(f"{PARAM_NAMES[which]} EFIM positive definite", [which], [y, z])
    else:
        a, b = mode.split("+")
        check(f"inner {PARAM_NAMES[b]} EFIM positive definite", [b], [])
        check(f"inner {PARAM_NAMES[a]} EFIM positive definite", [a], [])
        check(f"{PARAM_NAMES[a]} Schur complement positive definite", [a], [b])
        check(f"{PARAM_NAMES[b]} Schur complement positive definite", [b], [a])
        check("joint EFIM positive definite", [a, b], [])
    return trace


def failures(trace) -> list[str]:
    """Failure tags for the conditions that did not hold."""
    out = []
    for label, ok in trace:
        if not ok:
            label = label.replace("S invertible", "S not invertible")
            out.append(label.replace("positive definite", "singular"))
    return out


# published tables -----------------------------------------------------------

OFFSET_COLUMNS = ("none", "time", "frequency", "both")
_ALL = {"p+v": "p v joint", "p+phi": "p phi joint", "phi+v": "phi v joint", "9d": "p phi v"}


def _row(table, mode, k, b, u, *cols):
    """``cols`` hold one entry per offset column: 'F'/'I' for 3D tables, or a
    space-separated list of targets listed as estimable ('' for '-')."""
    expected = {}
    for off, c in zip(OFFSET_COLUMNS, cols):
        if c in ("F", "I"):
            expected[off] = frozenset([mode]) if c == "F" else frozenset()
        else:
            expected[off] = frozenset(_ALL[mode].split() if c == "all" else c.split())
    return {"table": table, "mode": mode, "n_slots": k, "n_sats": b, "n_antennas": u,
            "expected": expected}


REFERENCE_TABLES = [
    _row("position", "p", 1, 1, 4, "F", "I", "F", "I"),
    _row("position", "p", 1, 2, 1, "F", "I", "I", "I"),
    _row("position", "p", 1, 2, 4, "F", "I", "F", "I"),
    _row("position", "p", 1, 3, 1, "F", "F", "F", "I"),
    _row("position", "p", 1, 3, 4, "F", "F", "F", "I"),
    _row("position", "p", 2, 1, 1, "F", "I", "I", "I"),
    _row("position", "p", 2, 1, 4, "F", "I", "F", "I"),
    _row("position", "p", 3, 1, 1, "F", "F", "F", "I"),
    _row("position", "p", 3, 1, 4, "F", "F", "F", "I"),
    _row("position", "p", 4, 1, 1, "F", "F", "F", "F"),
    _row("position", "p", 4, 1, 4, "F", "F", "F", "F"),
    _row("orientation", "phi", 1, 2, 4, "F", "F", "F", "F"),
    _row("orientation", "phi", 2, 1, 4, "F", "F", "F", "F"),
    _row("velocity", "v", 1, 3, 1, "F", "F", "I", "I"),
    _row("velocity", "v", 2, 2, 1, "F", "F", "F", "F"),
    _row("velocity", "v", 4, 1, 1, "F", "F", "F", "F"),
    _row("6D orientation known", "p+v", 1, 3, 1, "p", "", "", ""),
    _row("6D orientation known", "p+v", 1, 6, 1, "all", "all", "", ""),
    _row("6D orientation known", "p+v", 4, 1, 1, "all", "all", "all", "all"),
    _row("6D orientation known", "p+v", 3, 2, 1, "all", "all", "all", "all"),
    _row("6D orientation known", "p+v", 2, 3, 1, "all", "all", "all", "all"),
    _row("6D orientation known", "p+v", 3, 3, 1, "all", "all", "all", "all"),
    _row("6D velocity known", "p+phi", 1, 2, 4, "all", "", "all", ""),
    _row("6D velocity known", "p+phi", 2, 1, 4, "all", "", "all", ""),
    _row("6D velocity known", "p+phi", 2, 2, 4, "all", "all", "all", "all"),
    _row("6D velocity known", "p+phi", 3, 2, 4, "all", "all", "all", "all"),
    _row("6D velocity known", "p+phi", 2, 3, 4, "all", "all", "all", "all"),
    _row("6D position known", "phi+v", 3, 2, 4, "all", "all", "all", "all"),
    _row("6D position known", "phi+v", 2, 3, 4, "all", "all", "all", "all"),
    _row("9D", "9d", 3, 3, 4, "all", "all", "all", "all"),
]


def table_cells() -> list[tuple[dict, str, Cell]]:
    out = []
    for row in REFERENCE_TABLES:
        for off in OFFSET_COLUMNS:
            out.append((row, off, Cell(row["mode"], row["n_sats"], row["n_slots"],
                                       row["n_antennas"], off)))
    return out


def agrees(result: CellResult, expected: frozenset) -> bool:
    """Listed targets must be feasible; an empty entry means nothing is."""
    if expected:
        return all(result.feasible(t) for t in expected)
    return all(tr.verdict == "infeasible" for tr in result.targets.values())


def scan_tables(grid: ScenarioGrid | None = None, jobs: int = 1):
    """Scan every published table cell.

    Returns ``(report, comparison)`` where ``comparison`` lists one dict per
    (row, offset column) with the published and computed verdicts.
    """
    grid = grid or ScenarioGrid()
    entries = table_cells()
    cells = [c for _, _, c in entries]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(evaluate_cell, [grid] * len(cells), cells))
    else:
        results = [evaluate_cell(grid, c) for c in cells]
    report = FeasibilityReport(grid, tuple(results))
    comparison = []
    for (row, off, cell), res in zip(entries, results):
        exp = row["expected"][off]
        comparison.append({
            "table": row["table"], "cell": cell, "expected": exp,
            "computed": {t: tr.verdict for t, tr in res.targets.items()},
            "agrees": agrees(res, exp),
        })
    return report, comparison
