"""Acquisition pipeline: double-threshold spike detection, artifact removal
by amplitude and normalized area, and spike-count state extraction with a
stimulated-region exclusion mask.

Detection runs in two passes per channel. Pass 1 estimates the noise floor
as the standard deviation of the whole trace and flags local extrema above
thr_l * sigma as candidates. Pass 2 excises +-w_s around every low-threshold
crossing, re-estimates the noise on the remainder (sigma_n) and confirms
candidates whose absolute peak exceeds thr_h * sigma_n, then de-duplicates
to one event per 1 ms refractory window, keeping the largest peak.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter1d

from .grid import GRID_SIZE, N_CHANNELS, StimPattern

SAMPLE_RATE_HZ = 20_000
REFRACTORY_MS = 1.0


@dataclass(frozen=True)
class DetectorConfig:
    thr_l: float = 3.0          # low threshold multiplier (candidates)
    thr_h: float = 5.0          # high threshold multiplier (confirmation)
    w_s_ms: float = 2.0         # excision half-width around low crossings
    snippet_ms: float = 2.0     # snippet half-width around confirmed peaks

    def __post_init__(self):
        if not self.thr_l > 0:
            raise ValueError("thr_l must be positive")
        if self.thr_h < self.thr_l:
            raise ValueError("thr_h must be >= thr_l")


@dataclass(frozen=True)
class SpikeEvent:
    channel: int
    t_sample: int
    peak_uV: float              # signed voltage at the peak sample
    snippet: np.ndarray = field(repr=False, compare=False, default=None)


@dataclass(frozen=True)
class ReservoirState:
    """Per-stimulus spike counts over the full array, excluded channels zeroed."""

    counts: np.ndarray          # (4096,) non-negative ints
    mask: np.ndarray            # (4096,) bool, True = excluded
    label: object = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.counts.shape != (N_CHANNELS,) or self.mask.shape != (N_CHANNELS,):
            raise ValueError("counts and mask must have length 4096")


def _nms_refractory(idx: np.ndarray, absv: np.ndarray, radius: int) -> np.ndarray:
    """Keep at most one index per refractory window, preferring larger |peak|."""
    if idx.size <= 1:
        return idx
    order = idx[np.argsort(absv[idx], kind="stable")[::-1]]
    kept: list[int] = []
    for i in order:
        if all(abs(i - j) > radius for j in kept):
            kept.append(int(i))
    return np.asarray(sorted(kept), dtype=np.int64)


def _assemble_events(v: np.ndarray, absv: np.ndarray, confirmed: np.ndarray,
                     channel: int, cfg: DetectorConfig) -> list[SpikeEvent]:
    radius = int(round(REFRACTORY_MS * SAMPLE_RATE_HZ / 1000.0))
    half = int(round(cfg.snippet_ms * SAMPLE_RATE_HZ / 1000.0))
    idx = _nms_refractory(confirmed, absv, radius)
    events = []
    for i in idx:
        lo = max(0, i - half)
        snippet = v[lo: i + half + 1].astype(np.float32).copy()
        events.append(SpikeEvent(channel=channel, t_sample=int(i),
                                 peak_uV=float(v[i]), snippet=snippet))
    return events


def detect_spikes(trace, cfg: DetectorConfig = DetectorConfig(),
                  channel: int = 0) -> list[SpikeEvent]:
    """Two-pass detection on one channel. A constant trace has no noise floor
    and yields no events."""
    v = np.asarray(trace, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise ValueError("trace must be a 1-D array of at least 2 samples")
    sigma = float(v.std())
    if sigma == 0.0:
        return []
    absv = np.abs(v)
    extrema = np.zeros(v.size, dtype=bool)
    extrema[1:-1] = (absv[1:-1] > absv[:-2]) & (absv[1:-1] >= absv[2:])
    crossing = absv > cfg.thr_l * sigma
    candidates = extrema & crossing

    w = int(round(cfg.w_s_ms * SAMPLE_RATE_HZ / 1000.0))
    excised = maximum_filter1d(crossing.view(np.uint8), size=2 * w + 1,
                               mode="constant", cval=0) > 0
    remainder = v[~excised]
    sigma_n = float(remainder.std()) if remainder.size >= 2 else sigma
    if sigma_n == 0.0:
        sigma_n = sigma
    confirmed = np.nonzero(candidates & (absv > cfg.thr_h * sigma_n))[0]
    return _assemble_events(v, absv, confirmed, channel, cfg)


def detect_all(traces: np.ndarray, cfg: DetectorConfig = DetectorConfig()) -> list[SpikeEvent]:
    """Vectorized multi-channel detection; matches detect_spikes channel-wise."""
    traces = np.asarray(traces)
    n_ch, n_s = traces.shape
    s1 = np.einsum("ij->i", traces, dtype=np.float64)
    s2 = np.einsum("ij,ij->i", traces, traces, dtype=np.float64)
    sigma = np.sqrt(np.maximum(s2 / n_s - (s1 / n_s) ** 2, 0.0))
    absv = np.abs(traces)
    extrema = np.zeros(traces.shape, dtype=bool)
    extrema[:, 1:-1] = (absv[:, 1:-1] > absv[:, :-2]) & (absv[:, 1:-1] >= absv[:, 2:])
    crossing = absv > (cfg.thr_l * sigma)[:, None]
    candidates = extrema & crossing

    w = int(round(cfg.w_s_ms * SAMPLE_RATE_HZ / 1000.0))
    excised = maximum_filter1d(crossing.view(np.uint8), size=2 * w + 1,
                               axis=1, mode="constant", cval=0) > 0
    keep_f = (~excised).astype(np.float32)
    cnt = np.einsum("ij->i", keep_f, dtype=np.float64)
    k1 = np.einsum("ij,ij->i", traces, keep_f, dtype=np.float64)
    k2 = np.einsum("ij,ij,ij->i", traces, traces, keep_f, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        denom = np.maximum(cnt, 1.0)
        var = k2 / denom - (k1 / denom) ** 2
    sigma_n = np.sqrt(np.maximum(var, 0.0))
    sigma_n = np.where((cnt >= 2) & (sigma_n > 0), sigma_n, sigma)

    confirmed = candidates & (absv > (cfg.thr_h * sigma_n)[:, None])
    confirmed[sigma == 0.0, :] = False
    events: list[SpikeEvent] = []
    for ch in np.nonzero(confirmed.any(axis=1))[0]:
        v = traces[ch].astype(np.float64)
        events.extend(_assemble_events(v, np.abs(v),
                                       np.nonzero(confirmed[ch])[0], int(ch), cfg))
    return events


def normalized_area(snippet) -> float:
    """Width-versus-height measure of a transient: sum(|V|) / max(|V|).

    Dimensionless, in [1, len(snippet)]; scale-invariant. Narrow spikes score
    low, long or plateau-like artifacts score high.
    """
    v = np.abs(np.asarray(snippet, dtype=np.float64))
    if v.size == 0:
        raise ValueError("empty snippet")
    peak = v.max()
    if peak == 0.0:
        raise ValueError("all-zero snippet has no normalized area")
    return float(v.sum() / peak)


def remove_artifacts(events: list[SpikeEvent], V_thr_uV: float = 500.0,
                     w_thr: float = 25.0) -> tuple[list[SpikeEvent], list[SpikeEvent]]:
    """Partition events into (kept, rejected).

    An event is rejected iff its absolute peak exceeds V_thr_uV or the
    normalized area of its snippet exceeds w_thr.
    """
    kept, rejected = [], []
    for ev in events:
        if abs(ev.peak_uV) > V_thr_uV or normalized_area(ev.snippet) > w_thr:
            rejected.append(ev)
        else:
            kept.append(ev)
    return kept, rejected


def stim_mask(pattern: StimPattern, margin: int = 2) -> np.ndarray:
    """Boolean mask over the 4096 channels: True within Chebyshev distance
    `margin` of any electrode of any pair, clipped at the grid edges."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    mask2d = np.zeros((GRID_SIZE, GRID_SIZE), dtype=bool)
    for e in pattern.electrodes():
        r0, r1 = max(0, e.row - margin), min(GRID_SIZE, e.row + margin + 1)
        c0, c1 = max(0, e.col - margin), min(GRID_SIZE, e.col + margin + 1)
        mask2d[r0:r1, c0:c1] = True
    return mask2d.reshape(-1)


def extract_state(events, t_stim_sample: int, W_ms: float, mask: np.ndarray,
                  label=None, meta: dict | None = None) -> ReservoirState:
    """Count kept events per channel inside [t_stim, t_stim + W] (both ends
    inclusive), then zero the excluded channels."""
    if W_ms <= 0:
        raise ValueError("W_ms must be positive")
    w_samples = int(round(W_ms * SAMPLE_RATE_HZ / 1000.0))
    counts = np.zeros(N_CHANNELS, dtype=np.int64)
    for ev in events:
        if t_stim_sample <= ev.t_sample <= t_stim_sample + w_samples:
            counts[ev.channel] += 1
    counts[np.asarray(mask, dtype=bool)] = 0
    full_meta = {"W_ms": W_ms, "t_stim_sample": int(t_stim_sample)}
    full_meta.update(meta or {})
    return ReservoirState(counts=counts, mask=np.asarray(mask, dtype=bool),
                          label=label, meta=full_meta)


# --- exports -------------------------------------------------------------------

def write_events(path, kept: list[SpikeEvent], rejected: list[SpikeEvent]) -> None:
    """Line-delimited event records with the artifact-filter verdict."""
    with open(path, "w", encoding="utf-8") as f:
        for events, verdict in ((kept, True), (rejected, False)):
            for ev in events:
                f.write(json.dumps({
                    "channel": ev.channel,
                    "t_sample": ev.t_sample,
                    "peak_uV": round(ev.peak_uV, 6),
                    "S": round(normalized_area(ev.snippet), 6),
                    "kept": verdict,
                }, sort_keys=True) + "\n")


def states_to_csv(path, states: list[ReservoirState], float_features: bool = False) -> None:
    """One row per stimulus: label, metadata columns, then 4096 feature columns."""
    meta_keys = sorted({k for s in states for k in s.meta})
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        header = ["label"] + meta_keys + [f"ch{c:04d}" for c in range(N_CHANNELS)]
        f.write(",".join(header) + "\n")
        for s in states:
            cells = [str(s.label)]
            cells += [_fmt(s.meta.get(k, "")) for k in meta_keys]
            if float_features:
                cells += [_fmt(float(x)) for x in s.counts]
            else:
                cells += [str(int(x)) for x in s.counts]
            f.write(",".join(cells) + "\n")


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)
