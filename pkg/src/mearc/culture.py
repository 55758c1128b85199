"""Synthetic stand-in for the living reservoir.

A leaky integrate-and-fire network is spatially embedded over the electrode
grid: neuron positions are continuous in pitch units, connection probability
decays as a Gaussian of distance, 20% of neurons are inhibitory. Stimulation
couples current pulses into neurons near the positive poles; extracellular
traces are synthesized from the ground-truth spike log (biphasic templates
attenuated by distance, plus Gaussian noise) and stimulation artifacts are
injected near the stimulated electrodes so the downstream filters have real
work. A day-drift step rewires part of the synapse set for cross-day runs.

Everything is deterministic given (config, seeds): the same call returns a
bit-identical recording.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .dsp import stim_mask
from .grid import GRID_SIZE, N_CHANNELS, BIPHASIC, StimPattern, validate_pattern
from .seeds import substream

SAMPLE_RATE_HZ = 20_000
DT_MS = 0.1                     # simulation step
SAMPLES_PER_STEP = 2            # 20 kHz traces vs 0.1 ms steps


@dataclass(frozen=True)
class CultureConfig:
    n_neurons: int = 4096
    frac_inhibitory: float = 0.2
    connect_sigma: float = 4.0          # Gaussian connectivity length, pitch units
    mean_out_degree: float = 40.0
    syn_weight_mean_mV: float = 2.0
    syn_weight_std_mV: float = 0.7
    inhib_gain: float = 5.0             # inhibitory weight magnitude multiplier
    membrane_tau_ms: float = 10.0
    refractory_ms: float = 2.0
    threshold_mV: float = 12.0          # relative to rest
    reset_mV: float = 0.0
    spont_rate_hz: float = 2.0          # background Poisson drive per neuron
    v_noise_mV: float = 2.2             # stationary std of membrane background noise
    v_noise_interval_ms: float = 0.5    # how often the membrane noise is refreshed
    noise_uV: float = 5.0               # trace noise std
    warmup_ms: float = 100.0            # settle time before each recording window
    # extracellular rendering
    spike_amp_uV: float = 60.0
    spike_atten_sigma: float = 0.7      # pitch units
    spike_reach: float = 2.0            # template placed on channels within this radius
    # stimulation coupling
    stim_radius: float = 8.0            # pitch units around each positive pole
    stim_gain_mV: float = 260.0         # membrane kick per uA per 100 us at distance 0
    excitability_cv: float = 0.3        # per-trial lognormal gain on evoked coupling
    # artifact synthesis
    artifact_margin: int = 2            # Chebyshev radius around stimulated electrodes
    artifact_train: int = 8             # transients per affected channel per stimulus
    artifact_spacing_ms: float = 1.2
    artifact_frac_sharp: float = 0.5
    artifact_sharp_uV: tuple = (700.0, 1300.0)   # peak range, amplitude-rule artifacts
    artifact_long_uV: tuple = (150.0, 400.0)     # peak range, area-rule artifacts
    seed: int = 0

    def validate(self) -> None:
        if self.n_neurons <= 0:
            raise ValueError("n_neurons must be positive")
        if not 0.0 <= self.frac_inhibitory <= 1.0:
            raise ValueError("frac_inhibitory must be in [0,1]")
        for name in ("connect_sigma", "membrane_tau_ms", "refractory_ms", "warmup_ms"):
            if getattr(self, name) <= 0 and name != "warmup_ms":
                raise ValueError(f"{name} must be positive")
        if self.spont_rate_hz < 0 or self.noise_uV < 0:
            raise ValueError("rates and noise levels must be non-negative")
        if self.mean_out_degree >= self.n_neurons:
            raise ValueError(
                f"mean_out_degree {self.mean_out_degree} infeasible for "
                f"{self.n_neurons} neurons")


@dataclass(frozen=True)
class RawRecording:
    """Multi-channel voltage traces for one window, with ground truth attached.

    traces are microvolts, shape (4096, n_samples) float32 at 20 kHz.
    true_spikes holds (neuron id, time ms relative to window start) rows;
    true_spike_samples the matching expected peak sample per spike.
    artifact_truth holds (channel, t_sample) rows for injected transients.
    """

    traces: np.ndarray
    t_stim_sample: int
    label: object = None
    sample_rate_hz: int = SAMPLE_RATE_HZ
    meta: dict = field(default_factory=dict)
    true_spikes: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    true_spike_samples: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    artifact_truth: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))

    @property
    def n_samples(self) -> int:
        return self.traces.shape[1]


@dataclass
class Culture:
    """Grown network: immutable during stimulation, replaced by advance_day."""

    cfg: CultureConfig
    positions: np.ndarray           # (n, 2) float, (row, col) in pitch units
    is_inhibitory: np.ndarray       # (n,) bool
    weights: sp.csr_matrix          # (n, n) signed, row = presynaptic
    day_index: int = 0
    # flattened per-neuron recording coupling (channel ids + attenuation)
    rec_indptr: np.ndarray = None
    rec_channels: np.ndarray = None
    rec_atten: np.ndarray = None
    _tree: cKDTree = None

    def out_degrees(self) -> np.ndarray:
        return np.diff(self.weights.indptr)

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.positions)
        return self._tree

    def clone(self) -> "Culture":
        return replace(self, weights=self.weights.copy())


def spike_template() -> np.ndarray:
    """Unit-peak biphasic extracellular template, ~1 ms at 20 kHz."""
    t = np.arange(21) / SAMPLE_RATE_HZ * 1000.0   # ms
    neg = -np.exp(-0.5 * ((t - 0.30) / 0.06) ** 2)
    pos = 0.30 * np.exp(-0.5 * ((t - 0.55) / 0.10) ** 2)
    v = neg + pos
    return (v / np.max(np.abs(v))).astype(np.float32)


SPIKE_TEMPLATE = spike_template()
SPIKE_TEMPLATE_PEAK_OFFSET = int(np.argmax(np.abs(SPIKE_TEMPLATE)))


def grow_culture(cfg: CultureConfig) -> Culture:
    """Sample positions, types and Gaussian-kernel connectivity from cfg.seed."""
    cfg.validate()
    n = cfg.n_neurons
    rng = substream(cfg.seed, "grow")
    positions = rng.uniform(0.0, float(GRID_SIZE), size=(n, 2))
    is_inhib = np.zeros(n, dtype=bool)
    is_inhib[rng.permutation(n)[: int(round(cfg.frac_inhibitory * n))]] = True

    two_sigma_sq = 2.0 * cfg.connect_sigma ** 2
    rows_i = []
    rows_j = []
    block = 256
    for start in range(0, n, block):
        stop = min(start + block, n)
        d2 = (
            (positions[start:stop, None, 0] - positions[None, :, 0]) ** 2
            + (positions[start:stop, None, 1] - positions[None, :, 1]) ** 2
        )
        kernel = np.exp(-d2 / two_sigma_sq)
        idx = np.arange(start, stop)
        kernel[idx - start, idx] = 0.0      # no autapses
        mass = kernel.sum(axis=1)
        scale = np.where(mass > 0, cfg.mean_out_degree / np.maximum(mass, 1e-12), 0.0)
        prob = np.clip(kernel * scale[:, None], 0.0, 1.0)
        hit = rng.random(prob.shape) < prob
        bi, bj = np.nonzero(hit)
        rows_i.append(bi + start)
        rows_j.append(bj)
    src = np.concatenate(rows_i)
    dst = np.concatenate(rows_j)
    mags = np.abs(rng.normal(cfg.syn_weight_mean_mV, cfg.syn_weight_std_mV, size=src.size))
    signed = np.where(is_inhib[src], -cfg.inhib_gain * mags, mags)
    W = sp.csr_matrix((signed, (src, dst)), shape=(n, n))

    rec_indptr, rec_channels, rec_atten = _recording_coupling(positions, cfg)
    return Culture(cfg=cfg, positions=positions, is_inhibitory=is_inhib, weights=W,
                   rec_indptr=rec_indptr, rec_channels=rec_channels, rec_atten=rec_atten)


def _recording_coupling(positions: np.ndarray, cfg: CultureConfig):
    """For each neuron, the channels within spike_reach and their attenuation."""
    n = positions.shape[0]
    indptr = np.zeros(n + 1, dtype=np.int64)
    ch_parts = []
    at_parts = []
    reach = cfg.spike_reach
    inv = 1.0 / (2.0 * cfg.spike_atten_sigma ** 2)
    for i in range(n):
        y, x = positions[i]
        r_lo, r_hi = max(0, int(np.ceil(y - reach))), min(GRID_SIZE - 1, int(np.floor(y + reach)))
        c_lo, c_hi = max(0, int(np.ceil(x - reach))), min(GRID_SIZE - 1, int(np.floor(x + reach)))
        rr, cc = np.meshgrid(np.arange(r_lo, r_hi + 1), np.arange(c_lo, c_hi + 1), indexing="ij")
        d2 = (rr - y) ** 2 + (cc - x) ** 2
        keep = d2 <= reach ** 2
        ch_parts.append((rr[keep] * GRID_SIZE + cc[keep]).astype(np.int32))
        at_parts.append(np.exp(-d2[keep] * inv).astype(np.float32))
        indptr[i + 1] = indptr[i] + ch_parts[-1].size
    return indptr, np.concatenate(ch_parts), np.concatenate(at_parts)


def stimulation_kick(culture: Culture, pattern: StimPattern) -> np.ndarray:
    """Membrane kick (mV) per neuron for one positive phase of the waveform.

    Each positive pole injects into neurons within stim_radius, weighted by
    1/(1+d^2); the kick scales with amplitude and phase duration (charge).
    """
    cfg = culture.cfg
    kick = np.zeros(cfg.n_neurons, dtype=np.float64)
    charge = pattern.waveform.amplitude_uA * (pattern.waveform.delta_plus_us / 100.0)
    tree = culture.tree()
    for pair in pattern.pairs:
        pole = (float(pair.positive.row), float(pair.positive.col))
        idx = tree.query_ball_point(pole, cfg.stim_radius)
        if not idx:
            continue
        idx = np.asarray(idx, dtype=np.int64)
        d2 = ((culture.positions[idx] - pole) ** 2).sum(axis=1)
        kick[idx] += cfg.stim_gain_mV * charge / (1.0 + d2)
    return kick


def _simulate(culture: Culture, total_steps: int, record_start: int, rng,
              stim_schedule: dict[int, np.ndarray] | None = None):
    """Run the LIF dynamics; returns (spike_steps, spike_neurons) within the
    recorded part of the window (steps relative to record_start)."""
    cfg = culture.cfg
    n = cfg.n_neurons
    v = rng.uniform(cfg.reset_mV, cfg.threshold_mV, size=n)
    refrac_until = np.full(n, -1, dtype=np.int64)
    refrac_steps = max(1, int(round(cfg.refractory_ms / DT_MS)))
    decay = np.exp(-DT_MS / cfg.membrane_tau_ms)
    thr = cfg.threshold_mV
    reset = cfg.reset_mV

    # Ongoing background depolarization noise, refreshed every few steps; the
    # per-kick scale is chosen so the stationary std equals v_noise_mV.
    noise_every = max(1, int(round(cfg.v_noise_interval_ms / DT_MS)))
    noise_decay = np.exp(-noise_every * DT_MS / cfg.membrane_tau_ms)
    noise_step_mV = cfg.v_noise_mV * np.sqrt(max(1.0 - noise_decay ** 2, 0.0))

    # Background drive: one homogeneous Poisson process over (step, neuron).
    lam = cfg.spont_rate_hz * n * (total_steps * DT_MS / 1000.0)
    n_spont = int(rng.poisson(lam)) if lam > 0 else 0
    spont_step = np.sort(rng.integers(0, total_steps, size=n_spont))
    spont_neuron = rng.integers(0, n, size=n_spont)
    spont_bounds = np.searchsorted(spont_step, np.arange(total_steps + 1))

    W = culture.weights
    indptr, indices, data = W.indptr, W.indices, W.data
    syn_next = np.zeros(n, dtype=np.float64)
    pending = False
    stim_schedule = stim_schedule or {}

    out_steps: list[np.ndarray] = []
    out_neurons: list[np.ndarray] = []
    for t in range(total_steps):
        v *= decay
        if noise_step_mV > 0.0 and t % noise_every == 0:
            v += rng.normal(0.0, noise_step_mV, size=n)
        if pending:
            v += syn_next
            syn_next[:] = 0.0
            pending = False
        kick = stim_schedule.get(t)
        if kick is not None:
            v += kick
        fired_mask = (v >= thr) & (refrac_until <= t)
        s0, s1 = spont_bounds[t], spont_bounds[t + 1]
        if s1 > s0:
            cand = spont_neuron[s0:s1]
            fired_mask[cand[refrac_until[cand] <= t]] = True
        fired = np.nonzero(fired_mask)[0]
        if fired.size:
            v[fired] = reset
            refrac_until[fired] = t + refrac_steps
            if t >= record_start:
                out_steps.append(np.full(fired.size, t - record_start, dtype=np.int64))
                out_neurons.append(fired.astype(np.int64))
            if fired.size == 1:
                i = fired[0]
                tgt = indices[indptr[i]:indptr[i + 1]]
                syn_next[tgt] += data[indptr[i]:indptr[i + 1]]
            else:
                tgt = np.concatenate([indices[indptr[i]:indptr[i + 1]] for i in fired])
                val = np.concatenate([data[indptr[i]:indptr[i + 1]] for i in fired])
                np.add.at(syn_next, tgt, val)
            pending = True
    if out_steps:
        return np.concatenate(out_steps), np.concatenate(out_neurons)
    return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)


def _render_traces(culture: Culture, spike_steps, spike_neurons, n_samples, rng) -> np.ndarray:
    cfg = culture.cfg
    traces = rng.standard_normal((N_CHANNELS, n_samples), dtype=np.float32)
    if cfg.noise_uV != 1.0:
        traces *= np.float32(cfg.noise_uV)
    tpl = SPIKE_TEMPLATE * np.float32(cfg.spike_amp_uV)
    L = tpl.size
    indptr, channels, atten = culture.rec_indptr, culture.rec_channels, culture.rec_atten
    for step, neuron in zip(spike_steps, spike_neurons):
        a = int(step) * SAMPLES_PER_STEP
        b = min(a + L, n_samples)
        if b <= a:
            continue
        chs = channels[indptr[neuron]:indptr[neuron + 1]]
        if chs.size == 0:
            continue
        att = atten[indptr[neuron]:indptr[neuron + 1]]
        traces[chs[:, None], np.arange(a, b)[None, :]] += tpl[: b - a] * att[:, None]
    return traces


def _long_artifact_shape(rng) -> np.ndarray:
    """Low-amplitude plateau transient: wide (normalized area > 25), peak < 500 uV."""
    plateau = int(rng.integers(30, 38))
    decay = np.exp(-np.arange(14) / 8.0)
    shape = np.concatenate([np.linspace(0.3, 1.0, 3), np.ones(plateau), decay])
    return shape.astype(np.float32)


def _sharp_artifact_shape() -> np.ndarray:
    """High-amplitude narrow transient: caught by the voltage rule."""
    t = np.arange(9) - 4.0
    return np.exp(-0.5 * (t / 1.4) ** 2).astype(np.float32)


def _inject_artifacts(traces: np.ndarray, pattern: StimPattern, t_stim_sample: int,
                      cfg: CultureConfig, rng) -> np.ndarray:
    """Append artifact trains to channels near the stimulated electrodes.

    Returns (m, 2) rows of (channel, expected peak sample) ground truth.
    """
    region = np.nonzero(stim_mask(pattern, cfg.artifact_margin))[0]
    n_samples = traces.shape[1]
    spacing = cfg.artifact_spacing_ms * SAMPLE_RATE_HZ / 1000.0
    log = []
    for ch in region:
        for k in range(cfg.artifact_train):
            t0 = t_stim_sample + int(round(k * spacing)) + int(rng.integers(0, 4))
            sign = -1.0 if rng.random() < 0.5 else 1.0
            if rng.random() < cfg.artifact_frac_sharp:
                shape = _sharp_artifact_shape()
                amp = rng.uniform(*cfg.artifact_sharp_uV)
            else:
                shape = _long_artifact_shape(rng)
                amp = rng.uniform(*cfg.artifact_long_uV)
            b = min(t0 + shape.size, n_samples)
            if b <= t0:
                continue
            traces[ch, t0:b] += np.float32(sign * amp) * shape[: b - t0]
            log.append((ch, t0 + int(np.argmax(shape[: b - t0]))))
    return np.asarray(log, dtype=np.int64).reshape(-1, 2)


def _finish_recording(culture, spike_steps, spike_neurons, n_samples, t_stim_sample,
                      label, meta, rng, pattern=None) -> RawRecording:
    traces = _render_traces(culture, spike_steps, spike_neurons, n_samples, rng)
    if pattern is not None:
        artifact_truth = _inject_artifacts(traces, pattern, t_stim_sample, culture.cfg, rng)
    else:
        artifact_truth = np.empty((0, 2), dtype=np.int64)
    peak_samples = spike_steps * SAMPLES_PER_STEP + SPIKE_TEMPLATE_PEAK_OFFSET
    true_spikes = np.column_stack([
        spike_neurons.astype(float),
        peak_samples / SAMPLE_RATE_HZ * 1000.0,
    ]) if spike_steps.size else np.empty((0, 2))
    return RawRecording(
        traces=traces, t_stim_sample=t_stim_sample, label=label, meta=dict(meta),
        true_spikes=true_spikes, true_spike_samples=peak_samples,
        artifact_truth=artifact_truth,
    )


def spontaneous_window(culture: Culture, duration_ms: float, seed: int,
                       meta: dict | None = None) -> RawRecording:
    """Unstimulated window: spontaneous dynamics, no artifact components."""
    if duration_ms <= 0:
        raise ValueError("duration_ms must be positive")
    cfg = culture.cfg
    rng = substream(seed, "spont")
    warm = int(round(cfg.warmup_ms / DT_MS))
    steps = int(round(duration_ms / DT_MS))
    spike_steps, spike_neurons = _simulate(culture, warm + steps, warm, rng)
    return _finish_recording(culture, spike_steps, spike_neurons,
                             steps * SAMPLES_PER_STEP, 0, None,
                             meta or {}, rng, pattern=None)


def stimulate(culture: Culture, pattern: StimPattern, seed: int,
              pre_ms: float = 500.0, post_ms: float = 200.0,
              meta: dict | None = None) -> RawRecording:
    """Deliver one stimulus and record pre_ms before / post_ms after onset.

    The network is settled by a warm-up from a randomized state, standing in
    for the inter-stimulus relaxation interval.
    """
    problems = validate_pattern(pattern)
    if problems:
        raise ValueError("invalid pattern: " + "; ".join(problems))
    cfg = culture.cfg
    rng = substream(seed, "stim")
    warm = int(round(cfg.warmup_ms / DT_MS))
    pre_steps = int(round(pre_ms / DT_MS))
    post_steps = int(round(post_ms / DT_MS))
    t_stim_step = warm + pre_steps
    kick = stimulation_kick(culture, pattern)
    if cfg.excitability_cv > 0:
        # trial-level network state: slow excitability fluctuations modulate
        # how strongly the same pulse drives the tissue
        sig2 = np.log1p(cfg.excitability_cv ** 2)
        kick = kick * rng.lognormal(mean=-sig2 / 2.0, sigma=np.sqrt(sig2))
    schedule = {t_stim_step: kick}
    if pattern.waveform.shape == BIPHASIC:
        ratio = pattern.waveform.delta_minus_us / max(pattern.waveform.delta_plus_us, 1e-12)
        schedule[t_stim_step + 1] = -kick * ratio
    spike_steps, spike_neurons = _simulate(
        culture, warm + pre_steps + post_steps, warm, rng, stim_schedule=schedule)
    return _finish_recording(
        culture, spike_steps, spike_neurons,
        (pre_steps + post_steps) * SAMPLES_PER_STEP,
        pre_steps * SAMPLES_PER_STEP,
        pattern.label, meta or {}, rng, pattern=pattern)


def advance_day(culture: Culture, rewire_frac: float = 0.15,
                weight_jitter_cv: float = 0.2) -> Culture:
    """One day of drift: rewire a fraction of synapses to fresh Gaussian-kernel
    targets and jitter surviving weights by a unit-mean lognormal factor."""
    if not 0.0 <= rewire_frac <= 1.0:
        raise ValueError("rewire_frac must be in [0,1]")
    if weight_jitter_cv < 0:
        raise ValueError("weight_jitter_cv must be non-negative")
    cfg = culture.cfg
    rng = substream(cfg.seed, "drift", culture.day_index)
    if rewire_frac == 0.0 and weight_jitter_cv == 0.0:
        return replace(culture, day_index=culture.day_index + 1)

    coo = culture.weights.tocoo()
    src, dst, val = coo.row.copy(), coo.col.copy(), coo.data.copy()
    rewire = rng.random(src.size) < rewire_frac
    survive = ~rewire
    if weight_jitter_cv > 0 and survive.any():
        sig2 = np.log1p(weight_jitter_cv ** 2)
        factors = rng.lognormal(mean=-sig2 / 2.0, sigma=np.sqrt(sig2), size=int(survive.sum()))
        val[survive] *= factors

    if rewire.any():
        tree = culture.tree()
        existing = {(int(i), int(j)) for i, j in zip(src[survive], dst[survive])}
        new_src = src[rewire]
        keep_new_src = []
        keep_new_dst = []
        for i in new_src:
            i = int(i)
            target = -1
            for _ in range(10):
                disp = rng.normal(0.0, cfg.connect_sigma, size=2)
                point = np.clip(culture.positions[i] + disp, 0.0, GRID_SIZE - 1e-9)
                j = int(tree.query(point)[1])
                if j != i and (i, j) not in existing:
                    target = j
                    break
            if target >= 0:
                existing.add((i, target))
                keep_new_src.append(i)
                keep_new_dst.append(target)
        new_mag = np.abs(rng.normal(cfg.syn_weight_mean_mV, cfg.syn_weight_std_mV,
                                    size=len(keep_new_src)))
        new_signed = np.where(culture.is_inhibitory[keep_new_src],
                              -cfg.inhib_gain * new_mag, new_mag)
        src = np.concatenate([src[survive], np.asarray(keep_new_src, dtype=src.dtype)])
        dst = np.concatenate([dst[survive], np.asarray(keep_new_dst, dtype=dst.dtype)])
        val = np.concatenate([val[survive], new_signed])
    W = sp.csr_matrix((val, (src, dst)), shape=culture.weights.shape)
    return replace(culture, weights=W, day_index=culture.day_index + 1, _tree=culture._tree)


# --- binary trace format ------------------------------------------------------

TRACE_MAGIC = b"BRC1"


def write_raw_traces(path, rec: RawRecording) -> None:
    """Bit-exact binary dump: magic, u32 LE header, channel-major f32 LE."""
    tr = np.ascontiguousarray(rec.traces, dtype="<f4")
    with open(path, "wb") as f:
        f.write(TRACE_MAGIC)
        f.write(struct.pack("<IIII", tr.shape[0], tr.shape[1],
                            rec.sample_rate_hz, rec.t_stim_sample))
        f.write(tr.tobytes(order="C"))


def read_raw_traces(path) -> RawRecording:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != TRACE_MAGIC:
            raise ValueError(f"bad trace file magic {magic!r}")
        n_channels, n_samples, rate, t_stim = struct.unpack("<IIII", f.read(16))
        data = np.frombuffer(f.read(n_channels * n_samples * 4), dtype="<f4")
        if data.size != n_channels * n_samples:
            raise ValueError("truncated trace file")
    return RawRecording(traces=data.reshape(n_channels, n_samples).copy(),
                        t_stim_sample=t_stim, sample_rate_hz=rate)


def write_spike_log(path, rec: RawRecording) -> None:
    """Ground-truth spike log: one 'neuron_id time_ms' line per spike."""
    with open(path, "w", encoding="utf-8") as f:
        for neuron, t_ms in rec.true_spikes:
            f.write(f"{int(neuron)} {t_ms:.6f}\n")


def read_spike_log(path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                neuron, t_ms = line.split()
                rows.append((int(neuron), float(t_ms)))
    return np.asarray(rows, dtype=float).reshape(-1, 2)
