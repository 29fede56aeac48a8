"""Phasor-domain model of a two-source three-phase line with shunt faults.

The line sits between bus 1 and bus 2; each bus is fed by a source behind
its own R-L impedance and bus 2 also carries a constant-impedance load.
Pre-fault and faulted steady states are solved by nodal analysis and then
stitched into sampled waveforms at the fault instant.
"""

from __future__ import annotations

import csv
import itertools
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .codes import FaultType
from .errors import SolverError, ValidationError

F_NOMINAL = 60.0
OMEGA = 2.0 * math.pi * F_NOMINAL
SAMPLE_RATE = 1200.0
SAMPLES_PER_CYCLE = int(SAMPLE_RATE / F_NOMINAL)
MIN_POST_SAMPLES = 36
SUPPORTED_LENGTHS = (12.5, 25.0, 50.0, 100.0, 200.0, 400.0, 800.0)
REFERENCE_LENGTH = 100.0

_PHASE_SHIFT = np.exp(-2j * np.pi / 3 * np.arange(3))
_PHASES = "abc"


@dataclass(frozen=True)
class LineParams:
    """Per-km sequence parameters; r in ohm/km, l in mH/km, c in uF/km."""

    r0: float = 0.3864
    r1: float = 0.01273
    l0: float = 4.1264
    l1: float = 0.9337
    c0: float = 7.751e-3
    c1: float = 12.74e-3
    length: float = REFERENCE_LENGTH

    def __post_init__(self):
        for name in ("r0", "r1", "l0", "l1", "c0", "c1", "length"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValidationError(f"LineParams.{name} must be positive, got {value}")
        if not any(math.isclose(self.length, ok) for ok in SUPPORTED_LENGTHS):
            raise ValidationError(
                f"line length {self.length} km not in {SUPPORTED_LENGTHS}"
            )

    def with_length(self, length: float) -> "LineParams":
        return replace(self, length=float(length))


@dataclass(frozen=True)
class SourceParams:
    v_ll: float = 240.0  # kV rms, phase to phase
    freq: float = F_NOMINAL
    r_src: float = 0.08929  # ohm
    l_src: float = 16.58  # mH
    phase: float = 0.0  # degrees

    def __post_init__(self):
        if self.freq != F_NOMINAL:
            raise ValidationError(f"source frequency must be {F_NOMINAL} Hz")
        if not self.v_ll > 0:
            raise ValidationError("source voltage must be positive")
        if not (self.r_src > 0 and self.l_src > 0):
            raise ValidationError("source impedance must be positive")

    def emf(self) -> np.ndarray:
        """Peak phase-to-neutral EMF phasors (V) for phases a, b, c."""
        peak = self.v_ll * 1e3 * math.sqrt(2.0 / 3.0)
        return peak * np.exp(1j * math.radians(self.phase)) * _PHASE_SHIFT

    @property
    def impedance(self) -> complex:
        return complex(self.r_src, OMEGA * self.l_src * 1e-3)


@dataclass(frozen=True)
class FaultSpec:
    fault_type: FaultType
    distance: float = float("nan")  # km from bus 1
    inception_angle: float = 0.0  # degrees past the phase-A positive zero crossing
    resistance: float = float("nan")  # ohm
    phase_diff: float = 0.0  # degrees, source 1 leads source 2
    voltage_fluct: float = 0.0  # kV, V1 - V2

    def __post_init__(self):
        object.__setattr__(self, "fault_type", FaultType.parse(self.fault_type))

    @property
    def is_fault(self) -> bool:
        return self.fault_type != FaultType.NO_FAULT

    def validate(self, length: float) -> None:
        if not self.is_fault:
            return
        if not 0.0 < self.distance < length:
            raise ValidationError(
                f"fault distance {self.distance} km outside (0, {length})"
            )
        if not self.resistance > 0:
            raise ValidationError(f"fault resistance must be positive, got {self.resistance}")


@dataclass(frozen=True)
class LoadParams:
    """Constant-impedance wye load at bus 2, sized at nominal voltage."""

    p_kw: float = 100.0
    q_kvar: float = 50.0
    v_ll: float = 240.0

    def admittance(self) -> complex:
        s = complex(self.p_kw, self.q_kvar) * 1e3
        z = (self.v_ll * 1e3) ** 2 / s.conjugate()
        return 1.0 / z


@dataclass(frozen=True)
class PhaseImpedanceMatrix:
    matrix: np.ndarray
    per_km: bool = True

    @property
    def self_term(self) -> complex:
        return complex(self.matrix[0, 0])

    @property
    def mutual_term(self) -> complex:
        return complex(self.matrix[0, 1])


def _symmetric_matrix(zs: complex, zm: complex) -> np.ndarray:
    m = np.full((3, 3), zm, dtype=complex)
    np.fill_diagonal(m, zs)
    return m


def sequence_to_phase(p: LineParams, per_km: bool = True) -> PhaseImpedanceMatrix:
    """Series phase impedance matrix at 60 Hz from zero/positive sequence values."""
    z0 = complex(p.r0, OMEGA * p.l0 * 1e-3)
    z1 = complex(p.r1, OMEGA * p.l1 * 1e-3)
    zs = (z0 + 2.0 * z1) / 3.0
    zm = (z0 - z1) / 3.0
    m = _symmetric_matrix(zs, zm)
    if not per_km:
        m = m * p.length
    return PhaseImpedanceMatrix(m, per_km=per_km)


def phase_to_sequence(z: PhaseImpedanceMatrix) -> tuple[complex, complex]:
    """Inverse of the symmetric transform: returns (z0, z1)."""
    zs, zm = z.self_term, z.mutual_term
    return zs + 2.0 * zm, zs - zm


def shunt_admittance(p: LineParams, length_km: float) -> np.ndarray:
    """Total shunt admittance matrix (S) of a line segment."""
    y0 = 1j * OMEGA * p.c0 * 1e-6 * length_km
    y1 = 1j * OMEGA * p.c1 * 1e-6 * length_km
    return _symmetric_matrix((y0 + 2.0 * y1) / 3.0, (y0 - y1) / 3.0)


def sources_for(fault: FaultSpec | None, base: SourceParams = SourceParams()) -> tuple[SourceParams, SourceParams]:
    """Split the phase difference and voltage fluctuation symmetrically across the two sources."""
    if fault is None:
        return base, base
    dphi, dv = fault.phase_diff, fault.voltage_fluct
    s1 = replace(base, v_ll=base.v_ll + dv / 2.0, phase=base.phase + dphi / 2.0)
    s2 = replace(base, v_ll=base.v_ll - dv / 2.0, phase=base.phase - dphi / 2.0)
    return s1, s2


@dataclass
class Branch:
    name: str
    from_nodes: tuple[str, ...]
    to_nodes: tuple[str, ...]
    admittance: np.ndarray  # square, terminal-to-terminal


@dataclass
class PhasorSolution:
    """Node voltages and branch currents (peak phasors, V and A).

    Nodes are named ``<bus>.<phase>``; ``gnd`` is the reference. Branch
    currents flow from ``from_nodes`` to ``to_nodes``.
    """

    voltages: dict[str, complex]
    branches: list[Branch]
    currents: dict[str, np.ndarray]
    source_emf: np.ndarray  # source 1, phases a-c
    condition: float = 1.0

    def bus_voltages(self, bus: str) -> np.ndarray:
        return np.array([self.voltages[f"{bus}.{ph}"] for ph in _PHASES])

    @property
    def v_measured(self) -> np.ndarray:
        return self.bus_voltages("bus2")

    @property
    def i_measured(self) -> np.ndarray:
        """Current flowing from bus 2 into the line terminal."""
        return -self.currents["line2"] + self.currents["shunt_bus2"]

    def kcl_residual(self) -> float:
        """Largest node current imbalance relative to the largest branch current."""
        net: dict[str, complex] = {}
        scale = 0.0
        for b in self.branches:
            cur = self.currents[b.name]
            scale = max(scale, float(np.max(np.abs(cur))))
            for node, c in zip(b.from_nodes, cur):
                net[node] = net.get(node, 0j) + c
            for node, c in zip(b.to_nodes, cur):
                net[node] = net.get(node, 0j) - c
        worst = max(
            (abs(v) for n, v in net.items() if n != "gnd" and not n.startswith("src")),
            default=0.0,
        )
        return worst / scale if scale > 0 else worst


def _three(bus: str) -> tuple[str, ...]:
    return tuple(f"{bus}.{ph}" for ph in _PHASES)


def build_branches(
    lp: LineParams,
    s1: SourceParams,
    s2: SourceParams,
    fault: FaultSpec | None,
    load: LoadParams,
) -> list[Branch]:
    zs_km = sequence_to_phase(lp).matrix
    gnd3 = ("gnd",) * 3
    eye = np.eye(3)
    branches = [
        Branch("src1", _three("src1"), _three("bus1"), eye / s1.impedance),
        Branch("src2", _three("src2"), _three("bus2"), eye / s2.impedance),
        Branch("load", _three("bus2"), gnd3, eye * load.admittance()),
    ]
    split = fault is not None and np.isfinite(fault.distance)
    if split:
        segments = [
            ("line1", "bus1", "fault", fault.distance, "shunt_bus1", "shunt_f1"),
            ("line2", "fault", "bus2", lp.length - fault.distance, "shunt_f2", "shunt_bus2"),
        ]
    else:
        segments = [("line2", "bus1", "bus2", lp.length, "shunt_bus1", "shunt_bus2")]
    for name, a, b, seg_len, sh_a, sh_b in segments:
        half = shunt_admittance(lp, seg_len) / 2.0
        branches.append(Branch(name, _three(a), _three(b), np.linalg.inv(zs_km * seg_len)))
        branches.append(Branch(sh_a, _three(a), gnd3, half))
        branches.append(Branch(sh_b, _three(b), gnd3, half))
    if fault is not None and fault.is_fault:
        target = "gnd" if fault.fault_type.grounded else "fault.p"
        g = np.array([[1.0 / fault.resistance]])
        for k in fault.fault_type.phases:
            branches.append(Branch(f"rf_{_PHASES[k]}", (f"fault.{_PHASES[k]}",), (target,), g))
    return branches


def solve_network(
    lp: LineParams,
    s1: SourceParams,
    s2: SourceParams,
    fault: FaultSpec | None = None,
    load: LoadParams = LoadParams(),
) -> PhasorSolution:
    """Nodal solution of the two-source line, optionally with a shunt fault.

    A ``fault`` of type NO_FAULT with a finite distance still splits the line
    at that point (no fault branches), which makes it directly comparable to
    a faulted solution at the same location.
    """
    if fault is not None:
        fault.validate(lp.length)
        if not fault.is_fault and np.isfinite(fault.distance) and not 0 < fault.distance < lp.length:
            fault = None
    branches = build_branches(lp, s1, s2, fault, load)

    known = {}
    for bus, src in (("src1", s1), ("src2", s2)):
        for node, e in zip(_three(bus), src.emf()):
            known[node] = e
    known["gnd"] = 0j

    unknown: list[str] = []
    for b in branches:
        for node in b.from_nodes + b.to_nodes:
            if node not in known and node not in unknown:
                unknown.append(node)
    index = {n: i for i, n in enumerate(unknown)}
    n = len(unknown)
    Y = np.zeros((n, n), dtype=complex)
    rhs = np.zeros(n, dtype=complex)
    for b in branches:
        # Stamp a multi-terminal branch: I = Yb (V_from - V_to).
        k = len(b.from_nodes)
        incidence = []  # (node, sign, terminal)
        for t in range(k):
            incidence.append((b.from_nodes[t], 1.0, t))
            incidence.append((b.to_nodes[t], -1.0, t))
        for node_i, sign_i, ti in incidence:
            if node_i not in index:
                continue
            row = index[node_i]
            for node_j, sign_j, tj in incidence:
                val = sign_i * sign_j * b.admittance[ti, tj]
                if node_j in index:
                    Y[row, index[node_j]] += val
                else:
                    rhs[row] -= val * known[node_j]

    cond = float(np.linalg.cond(Y))
    if not np.isfinite(cond) or cond > 1e14:
        raise SolverError(f"nodal matrix is singular (condition number {cond:.3e})", cond)
    try:
        v = np.linalg.solve(Y, rhs)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"nodal solve failed ({exc}); condition number {cond:.3e}", cond) from exc

    voltages = dict(known)
    voltages.update({node: complex(v[i]) for node, i in index.items()})
    currents = {}
    for b in branches:
        vf = np.array([voltages[x] for x in b.from_nodes])
        vt = np.array([voltages[x] for x in b.to_nodes])
        currents[b.name] = b.admittance @ (vf - vt)
    return PhasorSolution(voltages, branches, currents, s1.emf(), cond)


# ---------------------------------------------------------------- waveforms


@dataclass
class WaveformRecord:
    voltages: np.ndarray  # (3, n) bus-2 phase voltages, V
    currents: np.ndarray  # (3, n) bus-2 line currents, A
    inception_index: int
    fault: FaultSpec
    line: LineParams
    t0: float = 0.0  # time of sample 0 relative to a source-1 phase-A cosine peak
    seed: int = 0
    sample_rate: float = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise ValidationError(f"sample rate must be {SAMPLE_RATE} Hz")
        if self.voltages.shape != self.currents.shape or self.voltages.shape[0] != 3:
            raise ValidationError("voltages and currents must both be (3, n)")
        if self.n_samples - self.inception_index < MIN_POST_SAMPLES:
            raise ValidationError(
                f"need {MIN_POST_SAMPLES} samples after inception, "
                f"got {self.n_samples - self.inception_index}"
            )

    @property
    def n_samples(self) -> int:
        return self.voltages.shape[1]

    @property
    def channels(self) -> np.ndarray:
        return np.vstack([self.voltages, self.currents])


def sample_phasor(x: np.ndarray | complex, n: int, t0: float = 0.0, fs: float = SAMPLE_RATE) -> np.ndarray:
    """Sample |X| cos(w t + angle X) at t = t0 + k/fs."""
    t = t0 + np.arange(n) / fs
    x = np.atleast_1d(np.asarray(x, dtype=complex))
    return np.abs(x)[:, None] * np.cos(OMEGA * t[None, :] + np.angle(x)[:, None])


def inception_time(angle_deg: float, emf_a: complex) -> float:
    """First t in [0, T) where the phase-A EMF sits ``angle_deg`` past its positive zero crossing."""
    # e(t) = |E| cos(wt + a) = |E| sin(wt + a + 90deg)
    phase = (angle_deg - 90.0 - math.degrees(np.angle(emf_a))) % 360.0
    return phase / 360.0 / F_NOMINAL


def synthesize_waveforms(
    pre: PhasorSolution,
    post: PhasorSolution,
    fault: FaultSpec,
    n_pre: int,
    n_post: int,
    line: LineParams | None = None,
    snr_db: float | None = None,
    rng: np.random.Generator | None = None,
    seed: int = 0,
) -> WaveformRecord:
    if n_post < MIN_POST_SAMPLES:
        raise ValidationError(f"n_post must be at least {MIN_POST_SAMPLES}")
    if n_pre < 0:
        raise ValidationError("n_pre must be non-negative")
    n = n_pre + n_post
    t0 = inception_time(fault.inception_angle, pre.source_emf[0]) - n_pre / SAMPLE_RATE
    v = sample_phasor(pre.v_measured, n, t0)
    i = sample_phasor(pre.i_measured, n, t0)
    if post is not pre:
        t_post = t0 + n_pre / SAMPLE_RATE
        v[:, n_pre:] = sample_phasor(post.v_measured, n_post, t_post)
        i[:, n_pre:] = sample_phasor(post.i_measured, n_post, t_post)
    if snr_db is not None:
        if rng is None:
            rng = np.random.default_rng(seed)
        v = _add_noise(v, snr_db, rng)
        i = _add_noise(i, snr_db, rng)
    return WaveformRecord(v, i, n_pre, fault, line or LineParams(), t0=t0, seed=seed)


def _add_noise(x: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    rms = np.sqrt(np.mean(x**2, axis=1, keepdims=True))
    sigma = rms * 10.0 ** (-snr_db / 20.0)
    return x + sigma * rng.standard_normal(x.shape)


# --------------------------------------------------------------------- grid


@dataclass(frozen=True)
class GridAxes:
    """Dataset grid. Distances are given for the 100 km reference line and scale with length."""

    distances_ref: tuple[float, ...] = (1.2, 10.0, 24.0, 40.0, 60.0, 95.0)
    angles: tuple[float, ...] = (1.0, 20.0, 50.0, 100.0, 150.0)
    resistances: tuple[float, ...] = (0.1, 1.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0)
    phase_diffs: tuple[float, ...] = (-30.0, 0.0, 30.0)
    voltage_flucts: tuple[float, ...] = (-40.0, 0.0, 40.0)
    no_fault_replicates: int = 240
    fault_types: tuple[int, ...] = tuple(range(1, 11))

    def __post_init__(self):
        for name in ("distances_ref", "angles", "resistances", "phase_diffs", "voltage_flucts", "fault_types"):
            value = tuple(getattr(self, name))
            if not value:
                raise ValidationError(f"grid axis {name!r} is empty")
            object.__setattr__(self, name, value)
        if self.no_fault_replicates < 0:
            raise ValidationError("no_fault_replicates must be >= 0")

    @classmethod
    def full(cls) -> "GridAxes":
        return cls()

    @classmethod
    def reduced(cls) -> "GridAxes":
        """2 distances x 2 angles x 2 resistances x full source variations."""
        return cls(
            distances_ref=(10.0, 60.0),
            angles=(20.0, 100.0),
            resistances=(1.0, 40.0),
            no_fault_replicates=72,
        )

    @property
    def per_class(self) -> int:
        return (
            len(self.distances_ref)
            * len(self.angles)
            * len(self.resistances)
            * len(self.phase_diffs)
            * len(self.voltage_flucts)
        )

    def to_dict(self) -> dict:
        return {
            "distances_ref": list(self.distances_ref),
            "angles": list(self.angles),
            "resistances": list(self.resistances),
            "phase_diffs": list(self.phase_diffs),
            "voltage_flucts": list(self.voltage_flucts),
            "no_fault_replicates": self.no_fault_replicates,
            "fault_types": list(self.fault_types),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridAxes":
        known = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**known)


def scaled_distance(d_ref: float, length: float) -> float:
    d = d_ref / REFERENCE_LENGTH * length
    if not 0.0 < d < length:
        raise ValidationError(f"scaled fault distance {d} km not inside (0, {length})")
    return d


def record_seed(master_seed: int, index: int) -> int:
    ss = np.random.SeedSequence([int(master_seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def fault_specs(lp: LineParams, grid: GridAxes) -> list[FaultSpec]:
    """Every grid point in generation order: faulted classes first, then no-fault replicates."""
    distances = [scaled_distance(d, lp.length) for d in grid.distances_ref]
    specs = []
    for ft in grid.fault_types:
        for d, ang, rf, dphi, dv in itertools.product(
            distances, grid.angles, grid.resistances, grid.phase_diffs, grid.voltage_flucts
        ):
            specs.append(FaultSpec(FaultType(ft), d, ang, rf, dphi, dv))
    combos = list(itertools.product(grid.phase_diffs, grid.voltage_flucts))
    for r in range(grid.no_fault_replicates):
        dphi, dv = combos[r % len(combos)]
        # Each pass over the source combos shifts the window by one sample.
        offset = (r // len(combos)) % SAMPLES_PER_CYCLE
        specs.append(FaultSpec(FaultType.NO_FAULT, inception_angle=offset * 360.0 / SAMPLES_PER_CYCLE,
                               phase_diff=dphi, voltage_fluct=dv))
    return specs


def generate_grid(
    lp: LineParams,
    grid: GridAxes = GridAxes(),
    seed: int = 0,
    snr_db: float | None = 60.0,
    n_pre: int = 20,
    n_post: int = 40,
    base_source: SourceParams = SourceParams(),
    load: LoadParams = LoadParams(),
) -> list[WaveformRecord]:
    specs = fault_specs(lp, grid)
    pre_cache: dict[tuple, PhasorSolution] = {}
    records = []
    for idx, spec in enumerate(specs):
        s1, s2 = sources_for(spec, base_source)
        key = (spec.distance if spec.is_fault else None, spec.phase_diff, spec.voltage_fluct)
        pre = pre_cache.get(key)
        if pre is None:
            split = FaultSpec(FaultType.NO_FAULT, distance=spec.distance) if spec.is_fault else None
            pre = solve_network(lp, s1, s2, split, load)
            pre_cache[key] = pre
        post = solve_network(lp, s1, s2, spec, load) if spec.is_fault else pre
        rseed = record_seed(seed, idx)
        rng = np.random.default_rng(rseed)
        records.append(
            synthesize_waveforms(pre, post, spec, n_pre, n_post, lp, snr_db, rng, seed=rseed)
        )
    return records


# ----------------------------------------------------------------------- io

META_COLUMNS = (
    "length",
    "fault_type",
    "distance",
    "angle",
    "resistance",
    "phase_diff",
    "voltage_fluct",
    "seed",
    "inception_index",
    "t0",
)
CHANNEL_NAMES = ("va", "vb", "vc", "ia", "ib", "ic")
WAVEFORM_MAGIC = b"TLWF"
WAVEFORM_VERSION = 1


def _meta_row(rec: WaveformRecord) -> list:
    f = rec.fault
    return [
        rec.line.length,
        int(f.fault_type),
        f.distance,
        f.inception_angle,
        f.resistance,
        f.phase_diff,
        f.voltage_fluct,
        rec.seed,
        rec.inception_index,
        rec.t0,
    ]


def _record_from_row(meta: Sequence, samples: np.ndarray) -> WaveformRecord:
    length, ft, d, ang, rf, dphi, dv, seed, inc, t0 = meta
    fault = FaultSpec(FaultType(int(ft)), float(d), float(ang), float(rf), float(dphi), float(dv))
    samples = samples.reshape(6, -1)
    return WaveformRecord(
        samples[:3].copy(), samples[3:].copy(), int(inc), fault,
        LineParams().with_length(float(length)), t0=float(t0), seed=int(seed),
    )


def write_waveforms(records: Sequence[WaveformRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".csv":
        _write_csv(records, path)
    else:
        _write_binary(records, path)
    return path


def read_waveforms(path: str | Path) -> list[WaveformRecord]:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == WAVEFORM_MAGIC:
        return _read_binary(path)
    return _read_csv(path)


def _write_csv(records: Sequence[WaveformRecord], path: Path) -> None:
    n = records[0].n_samples if records else 0
    header = list(META_COLUMNS) + [f"{ch}_{k}" for ch in CHANNEL_NAMES for k in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for rec in records:
            row = [repr(x) if isinstance(x, float) else x for x in _meta_row(rec)]
            row += [repr(float(x)) for x in rec.channels.ravel()]
            w.writerow(row)


def _read_csv(path: Path) -> list[WaveformRecord]:
    records = []
    try:
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r, [])
            if tuple(header[: len(META_COLUMNS)]) != META_COLUMNS:
                raise ValidationError(f"{path}: neither a waveform CSV nor a TLWF file")
            m = len(META_COLUMNS)
            for row in r:
                records.append(_record_from_row(row[:m], np.array(row[m:], dtype=float)))
    except UnicodeDecodeError:
        raise ValidationError(f"{path}: neither a waveform CSV nor a TLWF file") from None
    except (ValueError, IndexError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"{path}: malformed waveform row ({exc})") from None
    return records


# Binary layout (little endian): magic "TLWF", u16 version, u32 record count,
# u32 samples per channel, then per record 10 f64 metadata values (seed and
# inception index stored as u64 in place of f64) and 6*n f64 samples.
_HEADER = struct.Struct("<4sHII")


def _write_binary(records: Sequence[WaveformRecord], path: Path) -> None:
    n = records[0].n_samples if records else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(WAVEFORM_MAGIC, WAVEFORM_VERSION, len(records), n))
        for rec in records:
            meta = _meta_row(rec)
            fh.write(struct.pack("<7dQQd", *[float(x) for x in meta[:7]], int(meta[7]), int(meta[8]), float(meta[9])))
            fh.write(np.ascontiguousarray(rec.channels, dtype="<f8").tobytes())


def _read_binary(path: Path) -> list[WaveformRecord]:
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise ValidationError(f"{path}: truncated header")
    magic, version, count, n = _HEADER.unpack_from(data, 0)
    if version != WAVEFORM_VERSION:
        raise ValidationError(f"{path}: unsupported waveform format version {version}")
    meta_fmt = struct.Struct("<7dQQd")
    rec_size = meta_fmt.size + 6 * n * 8
    if len(data) != _HEADER.size + count * rec_size:
        raise ValidationError(f"{path}: size does not match header ({count} records)")
    records = []
    off = _HEADER.size
    for _ in range(count):
        meta = meta_fmt.unpack_from(data, off)
        samples = np.frombuffer(data, dtype="<f8", count=6 * n, offset=off + meta_fmt.size)
        records.append(_record_from_row(meta, samples.astype(float)))
        off += rec_size
    return records
