"""Grid geometry: channel indexing, pattern validation, serialization."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mearc.grid import (
    GRID_SIZE,
    N_CHANNELS,
    BipolarPair,
    BoundsError,
    ElectrodeCoord,
    StimPattern,
    Waveform,
    channel_index,
    coord_of,
    load_patterns,
    save_patterns,
    validate_pattern,
)


def brute_force_index(row, col):
    """Oracle: enumerate coordinates in row-major order and find the rank."""
    rank = 0
    for r in range(GRID_SIZE):
        for c in range(GRID_SIZE):
            if (r, c) == (row, col):
                return rank
            rank += 1
    raise AssertionError("coordinate not on grid")


def test_channel_index_corners():
    assert channel_index(ElectrodeCoord(0, 0)) == 0
    assert channel_index(ElectrodeCoord(63, 63)) == 4095


def test_channel_index_matches_enumeration_oracle():
    assert channel_index(ElectrodeCoord(1, 2)) == brute_force_index(1, 2) == 66
    for r, c in [(0, 5), (7, 0), (12, 40), (63, 1)]:
        assert channel_index(ElectrodeCoord(r, c)) == brute_force_index(r, c)


def test_channel_index_out_of_bounds():
    for r, c in [(-1, 0), (0, -1), (64, 0), (0, 64)]:
        with pytest.raises(BoundsError):
            channel_index(ElectrodeCoord(r, c))
    with pytest.raises(BoundsError):
        coord_of(4096)
    with pytest.raises(BoundsError):
        coord_of(-1)


def test_index_coord_bijection_exhaustive():
    seen = set()
    for i in range(N_CHANNELS):
        c = coord_of(i)
        assert channel_index(c) == i
        seen.add((c.row, c.col))
    assert len(seen) == N_CHANNELS


WF_OK = Waveform.monophasic(10.0, 20.0)


def _pair(r, c, dr=0, dc=1):
    return BipolarPair(ElectrodeCoord(r, c), ElectrodeCoord(r + dr, c + dc))


def test_validate_pattern_accepts_paper_pointwise():
    p = StimPattern(label="x", pairs=(_pair(10, 10),), waveform=WF_OK)
    assert validate_pattern(p) == []


def test_validate_pattern_empty():
    p = StimPattern(label="x", pairs=(), waveform=WF_OK)
    assert any("empty pattern" in v for v in validate_pattern(p))


def test_validate_pattern_electrode_reuse():
    p = StimPattern(label="x", pairs=(_pair(10, 10), _pair(10, 10, dr=1, dc=0)),
                    waveform=WF_OK)
    assert any("reused" in v for v in validate_pattern(p))


def test_validate_pattern_out_of_bounds():
    p = StimPattern(label="x", pairs=(_pair(0, 63),), waveform=WF_OK)
    assert any("out of bounds" in v for v in validate_pattern(p))


def test_validate_pattern_nonadjacent():
    far = BipolarPair(ElectrodeCoord(0, 0), ElectrodeCoord(0, 5))
    p = StimPattern(label="x", pairs=(far,), waveform=WF_OK)
    assert any("not grid-adjacent" in v for v in validate_pattern(p))
    p_ok = StimPattern(label="x", pairs=(far,), waveform=WF_OK, allow_nonadjacent=True)
    assert validate_pattern(p_ok) == []


def test_validate_waveform_rules():
    bad_mono = Waveform("monophasic", 10.0, 20.0, delta_minus_us=5.0)
    p = StimPattern(label="x", pairs=(_pair(5, 5),), waveform=bad_mono)
    assert any("monophasic" in v for v in validate_pattern(p))
    bad_bi = Waveform("biphasic", 4.0, 100.0, delta_minus_us=0.0)
    p = StimPattern(label="x", pairs=(_pair(5, 5),), waveform=bad_bi)
    assert any("biphasic" in v for v in validate_pattern(p))
    bad_amp = Waveform("monophasic", 0.0, 20.0)
    p = StimPattern(label="x", pairs=(_pair(5, 5),), waveform=bad_amp)
    assert any("amplitude" in v for v in validate_pattern(p))


coords = st.builds(ElectrodeCoord, st.integers(-2, 65), st.integers(-2, 65))
pairs = st.builds(BipolarPair, coords, coords)
waveforms = st.one_of(
    st.builds(Waveform.monophasic, st.floats(0.1, 20), st.floats(1, 200)),
    st.builds(Waveform.biphasic, st.floats(0.1, 20), st.floats(1, 200), st.floats(1, 200)),
)
patterns = st.builds(
    lambda label, ps, wf: StimPattern(label=label, pairs=tuple(ps), waveform=wf),
    st.integers(0, 9), st.lists(pairs, max_size=5), waveforms)


@given(patterns)
def test_validate_pattern_empty_iff_invariants_hold(p):
    """Property: empty violation list exactly when every type invariant holds."""
    ok = bool(p.pairs)
    seen = set()
    for pair in p.pairs:
        for e in pair.electrodes():
            ok &= e.in_bounds()
        if pair.positive == pair.negative or pair.positive.chebyshev(pair.negative) != 1:
            ok = False
    flat = [e for pair in p.pairs for e in pair.electrodes()]
    ok &= len(flat) == len(set(flat))
    assert (validate_pattern(p) == []) == ok


def test_pattern_roundtrip(tmp_path):
    ps = [
        StimPattern(label="a", pairs=(_pair(1, 1), _pair(4, 4)), waveform=WF_OK),
        StimPattern(label=7, pairs=(_pair(20, 20),),
                    waveform=Waveform.biphasic(4.0, 100.0, 100.0)),
    ]
    path = tmp_path / "patterns.jsonl"
    save_patterns(path, ps)
    back = load_patterns(path)
    assert back == ps
