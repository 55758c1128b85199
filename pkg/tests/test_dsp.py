"""Detection, artifact filtering and state extraction against independent
oracles: inserted-spike logs, brute-force recounts, enumerated masks."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mearc.culture import SPIKE_TEMPLATE
from mearc.dsp import (
    DetectorConfig,
    SpikeEvent,
    detect_all,
    detect_spikes,
    extract_state,
    normalized_area,
    remove_artifacts,
    stim_mask,
)
from mearc.grid import BipolarPair, ElectrodeCoord, StimPattern, Waveform

WF = Waveform.monophasic(10.0, 20.0)


def _pattern(*poles):
    return StimPattern(label="t", waveform=WF, pairs=tuple(
        BipolarPair(ElectrodeCoord(r, c), ElectrodeCoord(r, c + 1)) for r, c in poles))


# --- detect_spikes -----------------------------------------------------------------

def test_all_zero_trace_no_events():
    assert detect_spikes(np.zeros(1000)) == []


def test_constant_trace_no_events():
    assert detect_spikes(np.full(1000, 3.5)) == []


def test_short_trace_rejected():
    with pytest.raises(ValueError):
        detect_spikes(np.array([1.0]))


def test_inserted_spike_recovered_against_insertion_log():
    """Ground-truth oracle: insert one template spike into Gaussian noise and
    require exactly one event within +-2 samples, >= 99/100 seeds."""
    cfg = DetectorConfig()
    template = SPIKE_TEMPLATE * 60.0
    peak_off = int(np.argmax(np.abs(template)))
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        trace = rng.normal(0.0, 5.0, 4000)
        t0 = 1500 + int(rng.integers(0, 800))
        trace[t0:t0 + template.size] += template
        events = detect_spikes(trace, cfg)
        window_events = [e for e in events if abs(e.t_sample - (t0 + peak_off)) <= 2]
        hits += (len(window_events) == 1)
    assert hits >= 99


def test_huge_threshold_kills_detection():
    rng = np.random.default_rng(0)
    trace = rng.normal(0.0, 5.0, 4000)
    trace[2000:2000 + SPIKE_TEMPLATE.size] += SPIKE_TEMPLATE * 60.0
    assert detect_spikes(trace, DetectorConfig(thr_l=3.0, thr_h=1000.0)) == []


def test_threshold_monotonicity():
    rng = np.random.default_rng(1)
    trace = rng.normal(0.0, 5.0, 8000)
    for t0 in (1000, 3000, 5000):
        trace[t0:t0 + SPIKE_TEMPLATE.size] += SPIKE_TEMPLATE * np.float32(rng.uniform(30, 90))
    counts = [len(detect_spikes(trace, DetectorConfig(thr_h=h))) for h in (3.0, 4.0, 5.0, 7.0, 12.0)]
    assert counts == sorted(counts, reverse=True)


def test_refractory_dedup_keeps_largest():
    rng = np.random.default_rng(2)
    trace = rng.normal(0.0, 2.0, 4000)
    trace[2000] = 50.0
    trace[2010] = 80.0   # 0.5 ms apart: only the larger peak survives
    events = detect_spikes(trace)
    near = [e for e in events if 1990 <= e.t_sample <= 2020]
    assert len(near) == 1
    assert near[0].t_sample == 2010
    assert near[0].peak_uV == pytest.approx(80.0)


def test_event_peak_matches_snippet():
    rng = np.random.default_rng(3)
    trace = rng.normal(0.0, 4.0, 4000)
    trace[1234] = -70.0
    events = detect_spikes(trace)
    ev = next(e for e in events if e.t_sample == 1234)
    assert abs(ev.peak_uV) == pytest.approx(np.max(np.abs(ev.snippet)))
    assert ev.peak_uV == pytest.approx(-70.0)


def test_detect_all_matches_single_channel():
    rng = np.random.default_rng(4)
    traces = rng.normal(0.0, 5.0, (16, 5000)).astype(np.float32)
    for ch in range(0, 16, 3):
        t0 = 500 + 250 * ch
        traces[ch, t0:t0 + SPIKE_TEMPLATE.size] += SPIKE_TEMPLATE * 65.0
    multi = detect_all(traces)
    for ch in range(16):
        single = detect_spikes(traces[ch].astype(np.float64), channel=ch)
        mine = sorted((e.t_sample, round(e.peak_uV, 6)) for e in multi if e.channel == ch)
        ref = sorted((e.t_sample, round(e.peak_uV, 6)) for e in single)
        assert mine == ref


# --- normalized area ----------------------------------------------------------------

def test_normalized_area_single_sample():
    assert normalized_area([5.0]) == 1.0


def test_normalized_area_constant():
    assert normalized_area(np.full(30, 500.0)) == pytest.approx(30.0)


def test_normalized_area_direct_sum():
    assert normalized_area([0.0, 100.0, 0.0]) == pytest.approx(1.0)


def test_normalized_area_all_zero_error():
    with pytest.raises(ValueError):
        normalized_area(np.zeros(10))
    with pytest.raises(ValueError):
        normalized_area([])


@given(st.lists(st.floats(-1000, 1000), min_size=1, max_size=200),
       st.floats(0.01, 100.0), st.sampled_from([-1.0, 1.0]))
def test_normalized_area_scale_invariant(vals, k, sign):
    v = np.asarray(vals)
    if not np.any(v):
        return
    assert normalized_area(v * k * sign) == pytest.approx(normalized_area(v))


def test_spike_template_area_is_narrow():
    s = normalized_area(SPIKE_TEMPLATE)
    assert 2.0 <= s <= 8.0  # typical transient: well under the artifact bound of 25


# --- artifact filter ----------------------------------------------------------------

def _event(peak, snippet, ch=0, t=100):
    return SpikeEvent(channel=ch, t_sample=t, peak_uV=peak,
                      snippet=np.asarray(snippet, dtype=np.float32))


def test_amplitude_rule():
    ev = _event(800.0, [0, 800.0, 0])
    kept, rejected = remove_artifacts([ev])
    assert kept == [] and rejected == [ev]


def test_area_rule():
    snippet = np.full(40, 300.0)  # S = 40 > 25, peak 300 < 500
    ev = _event(300.0, snippet)
    kept, rejected = remove_artifacts([ev])
    assert kept == [] and rejected == [ev]


def test_typical_spike_kept():
    snippet = np.zeros(81, dtype=np.float32)
    snippet[38:42] = [-20.0, -60.0, -25.0, 10.0]  # S ~ 1.9
    ev = _event(-60.0, snippet)
    kept, rejected = remove_artifacts([ev])
    assert kept == [ev] and rejected == []


def test_filter_is_partition_and_idempotent():
    rng = np.random.default_rng(5)
    events = []
    for i in range(200):
        kind = i % 3
        if kind == 0:
            sn = rng.normal(0, 5, 81); sn[40] = rng.uniform(30, 90) * np.sign(rng.normal())
        elif kind == 1:
            sn = rng.normal(0, 5, 81); sn[40] = rng.uniform(600, 1500)
        else:
            sn = np.full(81, rng.uniform(100, 400))
        events.append(_event(float(sn[40]), sn, ch=i, t=i * 50))
    kept, rejected = remove_artifacts(events)
    assert len(kept) + len(rejected) == len(events)
    assert set(map(id, kept)).isdisjoint(set(map(id, rejected)))
    kept2, rejected2 = remove_artifacts(kept)
    assert kept2 == kept and rejected2 == []


# --- stim mask ------------------------------------------------------------------------

def mask_oracle(electrodes, margin):
    """Enumerate the union of squares around each electrode."""
    out = set()
    for (r, c) in electrodes:
        for rr in range(r - margin, r + margin + 1):
            for cc in range(c - margin, c + margin + 1):
                if 0 <= rr < 64 and 0 <= cc < 64:
                    out.add(rr * 64 + cc)
    return out


def test_stim_mask_single_pair_margin2():
    p = _pattern((20, 20))
    mask = stim_mask(p, margin=2)
    oracle = mask_oracle([(20, 20), (20, 21)], 2)
    assert mask.sum() == len(oracle) == 30
    assert set(np.nonzero(mask)[0]) == oracle


def test_stim_mask_margin0():
    p = _pattern((20, 20))
    mask = stim_mask(p, margin=0)
    assert set(np.nonzero(mask)[0]) == {20 * 64 + 20, 20 * 64 + 21}


def test_stim_mask_corner_clipped():
    p = _pattern((0, 0))
    mask = stim_mask(p, margin=2)
    oracle = mask_oracle([(0, 0), (0, 1)], 2)
    assert set(np.nonzero(mask)[0]) == oracle


# --- state extraction -------------------------------------------------------------------

def _events_at(ch, samples):
    return [SpikeEvent(channel=ch, t_sample=t, peak_uV=-50.0,
                       snippet=np.array([-50.0], dtype=np.float32)) for t in samples]


def test_extract_window_arithmetic():
    mask = np.zeros(4096, dtype=bool)
    t0 = 1000
    events = _events_at(7, [t0 + 20, t0 + 60, t0 + 140])  # +1, +3, +7 ms
    s5 = extract_state(events, t0, 5.0, mask)
    assert s5.counts[7] == 2
    s10 = extract_state(events, t0, 10.0, mask)
    assert s10.counts[7] == 3


def test_extract_window_inclusive_bounds():
    mask = np.zeros(4096, dtype=bool)
    t0 = 1000
    events = _events_at(3, [t0, t0 + 100, t0 - 1, t0 + 101])
    s = extract_state(events, t0, 5.0, mask)
    assert s.counts[3] == 2  # both endpoints inclusive, outside excluded


def test_extract_masked_channel_zero():
    mask = np.zeros(4096, dtype=bool)
    mask[7] = True
    events = _events_at(7, [1020, 1060])
    s = extract_state(events, 1000, 5.0, mask)
    assert s.counts[7] == 0
    assert s.counts.sum() == 0


def brute_force_recount(events, t_stim, W_ms, mask):
    """Independent double loop over (channel, event)."""
    counts = np.zeros(4096, dtype=np.int64)
    hi = t_stim + int(round(W_ms * 20))
    for ch in range(4096):
        for ev in events:
            if ev.channel == ch and t_stim <= ev.t_sample <= hi and not mask[ch]:
                counts[ch] += 1
    return counts


def test_extract_matches_brute_force_oracle():
    rng = np.random.default_rng(8)
    for _ in range(20):
        events = []
        for _ in range(rng.integers(0, 300)):
            events.append(SpikeEvent(channel=int(rng.integers(0, 4096)),
                                     t_sample=int(rng.integers(0, 4000)),
                                     peak_uV=-40.0,
                                     snippet=np.array([-40.0], dtype=np.float32)))
        t0 = int(rng.integers(0, 2000))
        W = float(rng.choice([1.0, 5.0, 10.0, 50.0]))
        mask = rng.random(4096) < 0.1
        state = extract_state(events, t0, W, mask)
        assert np.array_equal(state.counts, brute_force_recount(events, t0, W, mask))


def test_extract_rejects_bad_window():
    with pytest.raises(ValueError):
        extract_state([], 0, 0.0, np.zeros(4096, dtype=bool))
