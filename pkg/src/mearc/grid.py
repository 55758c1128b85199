"""Electrode-array geometry shared by every stage of the pipeline.

The array is a fixed 64x64 grid (4096 channels). Channels are indexed
row-major. Stimulation is bipolar: a positive and a negative electrode,
normally grid-adjacent (Chebyshev distance 1). A stimulus pattern is a
labeled set of such pairs plus one current waveform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

GRID_SIZE = 64
N_CHANNELS = GRID_SIZE * GRID_SIZE

MONOPHASIC = "monophasic"
BIPHASIC = "biphasic"


class BoundsError(ValueError):
    """Coordinate or channel index outside the 64x64 grid."""


@dataclass(frozen=True, order=True)
class ElectrodeCoord:
    """One electrode position. May be constructed out of bounds; validation
    is explicit so invalid patterns can be inspected rather than rejected at
    construction time."""

    row: int
    col: int

    def in_bounds(self) -> bool:
        return 0 <= self.row < GRID_SIZE and 0 <= self.col < GRID_SIZE

    def chebyshev(self, other: "ElectrodeCoord") -> int:
        return max(abs(self.row - other.row), abs(self.col - other.col))

    def shifted(self, drow: int, dcol: int) -> "ElectrodeCoord":
        return ElectrodeCoord(self.row + drow, self.col + dcol)


@dataclass(frozen=True)
class BipolarPair:
    positive: ElectrodeCoord
    negative: ElectrodeCoord

    def electrodes(self) -> tuple[ElectrodeCoord, ElectrodeCoord]:
        return (self.positive, self.negative)


@dataclass(frozen=True)
class Waveform:
    """Rectangular current pulse: amplitude in uA per pair, phase durations
    in us. Monophasic pulses have no negative phase."""

    shape: str
    amplitude_uA: float
    delta_plus_us: float
    delta_minus_us: float = 0.0

    @staticmethod
    def monophasic(amplitude_uA: float, delta_us: float) -> "Waveform":
        return Waveform(MONOPHASIC, amplitude_uA, delta_us, 0.0)

    @staticmethod
    def biphasic(amplitude_uA: float, delta_plus_us: float = 100.0,
                 delta_minus_us: float = 100.0) -> "Waveform":
        return Waveform(BIPHASIC, amplitude_uA, delta_plus_us, delta_minus_us)


@dataclass(frozen=True)
class StimPattern:
    """One input symbol in electrode space."""

    label: object
    pairs: tuple[BipolarPair, ...]
    waveform: Waveform
    # Set on patterns whose pairs are deliberately non-adjacent.
    allow_nonadjacent: bool = field(default=False, compare=False)

    def electrodes(self) -> list[ElectrodeCoord]:
        out = []
        for p in self.pairs:
            out.extend(p.electrodes())
        return out


def channel_index(c: ElectrodeCoord) -> int:
    """Row-major channel index of an electrode, in [0, 4095]."""
    if not c.in_bounds():
        raise BoundsError(f"electrode ({c.row},{c.col}) outside {GRID_SIZE}x{GRID_SIZE} grid")
    return c.row * GRID_SIZE + c.col


def coord_of(index: int) -> ElectrodeCoord:
    """Inverse of channel_index."""
    if not 0 <= index < N_CHANNELS:
        raise BoundsError(f"channel index {index} outside [0,{N_CHANNELS - 1}]")
    return ElectrodeCoord(index // GRID_SIZE, index % GRID_SIZE)


def validate_waveform(wf: Waveform) -> list[str]:
    problems = []
    if wf.shape not in (MONOPHASIC, BIPHASIC):
        problems.append(f"unknown waveform shape {wf.shape!r}")
    if not wf.amplitude_uA > 0:
        problems.append(f"amplitude must be positive, got {wf.amplitude_uA}")
    if not wf.delta_plus_us > 0:
        problems.append(f"positive phase duration must be positive, got {wf.delta_plus_us}")
    if wf.shape == MONOPHASIC and wf.delta_minus_us != 0:
        problems.append("monophasic waveform must have zero negative phase duration")
    if wf.shape == BIPHASIC and not wf.delta_minus_us > 0:
        problems.append("biphasic waveform must have positive negative phase duration")
    if wf.delta_minus_us < 0:
        problems.append(f"negative phase duration must be non-negative, got {wf.delta_minus_us}")
    return problems


def validate_pattern(p: StimPattern) -> list[str]:
    """Full list of invariant violations; empty list means the pattern is valid.

    Violations are data, not exceptions: generators may legitimately produce
    degenerate patterns (e.g. an all-white image maps to zero pairs) that the
    caller wants to inspect and redraw.
    """
    problems = list(validate_waveform(p.waveform))
    if not p.pairs:
        problems.append("empty pattern: no bipolar pairs")
    seen: dict[ElectrodeCoord, int] = {}
    for i, pair in enumerate(p.pairs):
        for e in pair.electrodes():
            if not e.in_bounds():
                problems.append(f"pair {i}: electrode ({e.row},{e.col}) out of bounds")
            if e in seen and seen[e] != i:
                problems.append(f"electrode ({e.row},{e.col}) reused across pairs {seen[e]} and {i}")
            seen.setdefault(e, i)
        if pair.positive == pair.negative:
            problems.append(f"pair {i}: positive and negative electrodes coincide")
        elif not p.allow_nonadjacent and pair.positive.chebyshev(pair.negative) != 1:
            problems.append(
                f"pair {i}: electrodes not grid-adjacent "
                f"(Chebyshev distance {pair.positive.chebyshev(pair.negative)})"
            )
    return problems


# --- serialization: one pattern per line, JSON records -----------------------

def pattern_to_record(p: StimPattern) -> dict:
    return {
        "label": p.label,
        "waveform": {
            "shape": p.waveform.shape,
            "amplitude_uA": p.waveform.amplitude_uA,
            "delta_plus_us": p.waveform.delta_plus_us,
            "delta_minus_us": p.waveform.delta_minus_us,
        },
        "pairs": [
            [q.positive.row, q.positive.col, q.negative.row, q.negative.col]
            for q in p.pairs
        ],
    }


def pattern_from_record(rec: dict) -> StimPattern:
    wf = rec["waveform"]
    return StimPattern(
        label=rec["label"],
        pairs=tuple(
            BipolarPair(ElectrodeCoord(pr, pc), ElectrodeCoord(nr, nc))
            for pr, pc, nr, nc in rec["pairs"]
        ),
        waveform=Waveform(wf["shape"], wf["amplitude_uA"],
                          wf["delta_plus_us"], wf["delta_minus_us"]),
    )


def save_patterns(path, patterns) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in patterns:
            f.write(json.dumps(pattern_to_record(p), sort_keys=True) + "\n")


def load_patterns(path) -> list[StimPattern]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(pattern_from_record(json.loads(line)))
    return out
