"""Experiment orchestration: sessions, families, ablations, cross-day runs.

A "session" is one stimulation run of a culture: the delivery sequence is
built as N repetitions of each pattern, globally shuffled, and each delivery
goes through stimulate -> detect -> artifact filter -> state extraction.
Sessions map to (replicate, day) pairs; replicates are independently grown
cultures and days apply the drift step in between.

All randomness is drawn from named substreams of the root seed, so serial
and parallel execution produce identical outputs.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import culture as culture_mod
from . import dsp
from . import esn as esn_mod
from . import patterns as patterns_mod
from . import readout as readout_mod
from .config import WorkbenchConfig
from .grid import ElectrodeCoord, StimPattern, Waveform, validate_pattern
from .readout import LabeledDataset
from .seeds import derive_seed, substream

FAMILIES = ("pointwise", "bars", "clock", "mnist")

POINTWISE_CENTERS = ((22, 22), (22, 42), (42, 22), (42, 42))
BAR_CENTER = (32, 32)
CLOCK_ORIGIN = (28, 28)

POINT_WAVEFORM = Waveform.monophasic(amplitude_uA=10.0, delta_us=20.0)
CLOCK_WAVEFORM = Waveform.biphasic(amplitude_uA=4.0)
MNIST_WAVEFORM = Waveform.biphasic(amplitude_uA=5.0)


def default_W_ms(family: str) -> float:
    return 10.0 if family == "mnist" else 5.0


def family_patterns(family: str, cfg: WorkbenchConfig,
                    session_key: tuple = (), mnist_images=None) -> list[StimPattern]:
    """Canonical patterns for one session of a family.

    The static families are identical across sessions; the image family
    redraws its pixel Bernoulli samples per session (and redraws any empty
    pattern from the next substream).
    """
    if family == "pointwise":
        return [patterns_mod.make_pointwise(ElectrodeCoord(r, c), POINT_WAVEFORM,
                                            label=f"point{i}")
                for i, (r, c) in enumerate(POINTWISE_CENTERS)]
    if family == "bars":
        return [patterns_mod.make_bar(deg, ElectrodeCoord(*BAR_CENTER), POINT_WAVEFORM,
                                      label=f"bar{deg}")
                for deg in (0, 45, 90, 135)]
    if family == "clock":
        geom = patterns_mod.ClockGeometry.default(ElectrodeCoord(*CLOCK_ORIGIN))
        return [patterns_mod.make_clock_digit(d, geom, CLOCK_WAVEFORM) for d in range(10)]
    if family == "mnist":
        if not mnist_images:
            raise ValueError("mnist family needs loaded images")
        proto = cfg.protocol
        origin = ElectrodeCoord(*proto.mnist_region_origin)
        out = []
        for i, img in enumerate(mnist_images):
            for attempt in range(100):
                p = patterns_mod.map_mnist(
                    img, origin, MNIST_WAVEFORM,
                    seed=derive_seed(cfg.seed, "mnist-map", *session_key, i, attempt),
                    target_res=proto.mnist_target_res)
                if p.pairs:
                    out.append(p)
                    break
            else:
                raise ValueError(f"image {i} drew an empty pattern 100 times")
        return out
    raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")


def load_family_images(cfg: WorkbenchConfig) -> list[patterns_mod.MnistImage]:
    proto = cfg.protocol
    if not proto.mnist_images_path or not proto.mnist_labels_path:
        raise ValueError("mnist family needs mnist_images_path and mnist_labels_path")
    images = patterns_mod.load_mnist_idx(proto.mnist_images_path, proto.mnist_labels_path)
    if proto.mnist_invert:
        images = [patterns_mod.MnistImage(pixels=255 - im.pixels, label=im.label)
                  for im in images]
    if proto.mnist_subset and proto.mnist_subset < len(images):
        images = patterns_mod.sample_mnist_subset(
            images, proto.mnist_subset, seed=derive_seed(cfg.seed, "mnist-subset"),
            min_per_class=cfg.readout.k_folds)
    return images


# --- one session ------------------------------------------------------------------


@dataclass
class DeliveryRecord:
    """Detector output of one delivery, small enough to cache for re-windowing."""

    label: object
    meta: dict
    t_stim_sample: int
    mask: np.ndarray
    kept_channels: np.ndarray
    kept_samples: np.ndarray
    event_rows: list = None         # (channel, t_sample, peak_uV, S, kept) tuples

    def counts(self, W_ms: float) -> np.ndarray:
        w = int(round(W_ms * dsp.SAMPLE_RATE_HZ / 1000.0))
        sel = (self.kept_samples >= self.t_stim_sample) & \
              (self.kept_samples <= self.t_stim_sample + w)
        counts = np.bincount(self.kept_channels[sel], minlength=len(self.mask))
        counts[self.mask] = 0
        return counts.astype(np.int64)


@dataclass
class SessionResult:
    tag: dict
    states: list[dsp.ReservoirState]
    deliveries: list[DeliveryRecord]

    @property
    def dataset(self) -> LabeledDataset:
        return LabeledDataset.from_states(self.states)


def delivery_sequence(patterns: list[StimPattern], repetitions: int, seed: int) -> list[int]:
    """Indices into `patterns`: `repetitions` copies of each, globally shuffled."""
    seq = np.repeat(np.arange(len(patterns)), repetitions)
    return substream(seed, "order").permutation(seq).tolist()


def run_session(culture: culture_mod.Culture, patterns: list[StimPattern],
                cfg: WorkbenchConfig, seed: int, repetitions: int | None = None,
                W_ms: float = 5.0, tag: dict | None = None,
                collect_event_rows: bool = False) -> SessionResult:
    """Deliver one randomized session and return labeled states plus the
    cached per-delivery detector output."""
    proto = cfg.protocol
    reps = proto.repetitions_per_pattern if repetitions is None else repetitions
    tag = dict(tag or {})
    for p in patterns:
        problems = validate_pattern(p)
        if problems:
            raise ValueError(f"pattern {p.label!r}: " + "; ".join(problems))
    order = delivery_sequence(patterns, reps, seed)
    masks = [dsp.stim_mask(p, proto.mask_margin) for p in patterns]

    states = []
    deliveries = []
    for stim_index, pat_i in enumerate(order):
        pattern = patterns[pat_i]
        meta = dict(tag)
        meta["stim_index"] = stim_index
        meta["isi_s"] = proto.isi_s
        rec = culture_mod.stimulate(
            culture, pattern, seed=derive_seed(seed, "stim", stim_index),
            pre_ms=proto.pre_ms, post_ms=proto.post_ms, meta=meta)
        events = dsp.detect_all(rec.traces, cfg.detector)
        kept, rejected = dsp.remove_artifacts(events, proto.V_thr_uV, proto.w_thr)
        mask = masks[pat_i]
        state = dsp.extract_state(kept, rec.t_stim_sample, W_ms, mask,
                                  label=pattern.label, meta=meta)
        states.append(state)
        rows = None
        if collect_event_rows:
            rows = [(ev.channel, ev.t_sample, round(ev.peak_uV, 6),
                     round(dsp.normalized_area(ev.snippet), 6), keep_flag)
                    for evs, keep_flag in ((kept, True), (rejected, False))
                    for ev in evs]
        deliveries.append(DeliveryRecord(
            label=pattern.label, meta=meta, t_stim_sample=rec.t_stim_sample,
            mask=mask, kept_channels=np.asarray([e.channel for e in kept], dtype=np.int64),
            kept_samples=np.asarray([e.t_sample for e in kept], dtype=np.int64),
            event_rows=rows))
    return SessionResult(tag=tag, states=states, deliveries=deliveries)


def dataset_from_deliveries(deliveries: list[DeliveryRecord], W_ms: float) -> LabeledDataset:
    feats = np.stack([d.counts(W_ms) for d in deliveries]).astype(np.float64)
    labels = [d.label for d in deliveries]
    tags = [dict(d.meta) for d in deliveries]
    return LabeledDataset(feats, labels, tags)


# --- replicates, days, families ----------------------------------------------------


def build_day_cultures(cfg: WorkbenchConfig) -> dict[tuple[int, int], culture_mod.Culture]:
    """Grow one culture per replicate and advance it through the day sequence."""
    proto = cfg.protocol
    out = {}
    for r in range(proto.n_replicates):
        c = culture_mod.grow_culture(
            replace(cfg.culture, seed=derive_seed(cfg.seed, "culture", r)))
        out[(r, 0)] = c
        for d in range(1, proto.n_days):
            c = culture_mod.advance_day(c, proto.drift_rewire_frac,
                                        proto.drift_weight_jitter_cv)
            out[(r, d)] = c
    return out


def spontaneous_counts(culture: culture_mod.Culture, cfg: WorkbenchConfig,
                       seed: int, n_windows: int | None = None) -> np.ndarray:
    """Per-channel spike counts over repeated unstimulated windows, using the
    same detection pipeline as stimulated recordings."""
    proto = cfg.protocol
    n_windows = proto.noise_windows if n_windows is None else n_windows
    rows = []
    for w in range(n_windows):
        rec = culture_mod.spontaneous_window(
            culture, proto.noise_window_ms, seed=derive_seed(seed, "noise-window", w))
        events = dsp.detect_all(rec.traces, cfg.detector)
        kept, _ = dsp.remove_artifacts(events, proto.V_thr_uV, proto.w_thr)
        counts = np.bincount(np.asarray([e.channel for e in kept], dtype=np.int64),
                             minlength=rec.traces.shape[0])
        rows.append(counts)
    return np.asarray(rows, dtype=np.float64)


def _culture_session_job(args) -> tuple:
    key, culture, patterns, cfg, seed, reps, W_ms, tag, collect = args
    result = run_session(culture, patterns, cfg, seed, repetitions=reps,
                         W_ms=W_ms, tag=tag, collect_event_rows=collect)
    return key, result


def _run_jobs(fn, arg_list, jobs: int) -> list:
    if jobs <= 1 or len(arg_list) <= 1:
        return [fn(a) for a in arg_list]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, arg_list))


def _summary(values) -> dict:
    vals = [float(v) for v in values]
    return {"mean": round(float(np.mean(vals)), 10),
            "std": round(float(np.std(vals)), 10),
            "n": len(vals)}


def _sem_summary(values) -> dict:
    vals = np.asarray([float(v) for v in values])
    sem = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
    return {"mean": round(float(vals.mean()), 10), "sem": round(sem, 10), "n": int(vals.size)}


@dataclass
class FamilyRun:
    """In-memory products of run_family, for callers that post-process."""

    report: dict
    session_results: dict           # (r, d) -> SessionResult
    ar_datasets: dict               # (r, d) -> LabeledDataset
    patterns_by_session: dict       # (r, d) -> list[StimPattern]
    W_ms: float


def _session_keys(cfg: WorkbenchConfig) -> list[tuple[int, int]]:
    proto = cfg.protocol
    return [(r, d) for r in range(proto.n_replicates) for d in range(proto.n_days)]


def run_family(family: str, cfg: WorkbenchConfig, substrate: str = "both",
               jobs: int = 1, out_dir=None, save_events: bool = False,
               save_traces: bool = False, collect_event_rows: bool | None = None,
               mnist_images=None, evaluate: bool = True) -> FamilyRun:
    """Run every (replicate, day) session of a family end to end.

    For substrate "both" (default) the artificial reservoir consumes the
    identical per-session pattern sequences, and the spatial-shuffle baseline
    is computed from the culture states. Reports cross-validated accuracy per
    session, per day and overall.
    """
    cfg.validate()
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if substrate not in ("culture", "ar", "both"):
        raise ValueError("substrate must be culture, ar or both")
    t0 = time.time()
    proto = cfg.protocol
    W_ms = proto.W_ms if proto.W_ms is not None else default_W_ms(family)
    if W_ms > proto.post_ms:
        raise ValueError(f"W={W_ms} ms exceeds recorded post-window {proto.post_ms} ms")
    reps = proto.mnist_repetitions if family == "mnist" else proto.repetitions_per_pattern
    if mnist_images is None and family == "mnist":
        mnist_images = load_family_images(cfg)

    keys = _session_keys(cfg)
    cultures = build_day_cultures(cfg)
    pats = {key: family_patterns(family, cfg, session_key=key, mnist_images=mnist_images)
            for key in keys}
    collect = save_events if collect_event_rows is None else collect_event_rows

    session_results: dict = {}
    if substrate in ("culture", "both"):
        args = [(key, cultures[key], pats[key], cfg,
                 derive_seed(cfg.seed, "session", *key), reps, W_ms,
                 {"replicate": key[0], "day": key[1]}, collect)
                for key in keys]
        for key, result in _run_jobs(_culture_session_job, args, jobs):
            session_results[key] = result

    ar_datasets: dict = {}
    if substrate in ("ar", "both"):
        reservoir = esn_mod.init_esn(replace(cfg.esn, seed=derive_seed(cfg.seed, "esn")))
        noise_by_replicate = {}
        for r in range(proto.n_replicates):
            windows = spontaneous_counts(cultures[(r, 0)], cfg,
                                         seed=derive_seed(cfg.seed, "noise", r))
            noise_by_replicate[r] = esn_mod.estimate_noise(windows)
        for key in keys:
            session_seed = derive_seed(cfg.seed, "session", *key)
            order = delivery_sequence(pats[key], reps, session_seed)
            feats = []
            labels = []
            tags = []
            for stim_index, pat_i in enumerate(order):
                pattern = pats[key][pat_i]
                x = esn_mod.ar_state(reservoir, pattern, noise_by_replicate[key[0]],
                                     seed=derive_seed(session_seed, "ar", stim_index))
                feats.append(x)
                labels.append(pattern.label)
                tags.append({"replicate": key[0], "day": key[1], "stim_index": stim_index})
            ar_datasets[key] = LabeledDataset(np.asarray(feats), labels, tags)

    # --- evaluation ---------------------------------------------------------
    report: dict = {
        "experiment": family,
        "W_ms": W_ms,
        "repetitions": reps,
        "substrates": {},
        "config": cfg.to_dict(),
        "seeds": {"root": cfg.seed},
    }
    k = cfg.readout.k_folds
    train_kwargs = cfg.readout.train_kwargs()

    def evaluate_substrate(name: str, datasets: dict) -> None:
        sessions = []
        for key in keys:
            if key not in datasets:
                continue
            cv = readout_mod.cross_validate(
                datasets[key], k=k, seed=derive_seed(cfg.seed, "cv", name, *key),
                **train_kwargs)
            sessions.append({"replicate": key[0], "day": key[1], "cv": cv.to_dict()})
        if not sessions:
            return
        per_day = {}
        for d in sorted({s["day"] for s in sessions}):
            per_day[str(d)] = _summary([s["cv"]["mean"]["mean"]
                                        for s in sessions if s["day"] == d])
        report["substrates"][name] = {
            "sessions": sessions,
            "per_day": per_day,
            "overall": _summary([s["cv"]["mean"]["mean"] for s in sessions]),
        }

    if evaluate and session_results:
        evaluate_substrate("culture",
                           {key: r.dataset for key, r in session_results.items()})
        shuffled = {key: readout_mod.shuffle_baseline(
                        r.dataset, seed=derive_seed(cfg.seed, "shuffle", *key))
                    for key, r in session_results.items()}
        evaluate_substrate("shuffle", shuffled)
    if evaluate and ar_datasets:
        evaluate_substrate("ar", ar_datasets)
        if not session_results:
            evaluate_substrate("shuffle", {key: readout_mod.shuffle_baseline(
                ds, seed=derive_seed(cfg.seed, "shuffle", *key))
                for key, ds in ar_datasets.items()})

    report["timing"] = {"wall_s": round(time.time() - t0, 3)}
    run = FamilyRun(report=report, session_results=session_results,
                    ar_datasets=ar_datasets, patterns_by_session=pats, W_ms=W_ms)
    if out_dir is not None:
        write_run_dir(out_dir, cfg, run, save_events=save_events,
                      save_traces=save_traces)
    return run


# --- ablations and cross-day ---------------------------------------------------------


def ablate_window(family: str, cfg: WorkbenchConfig,
                  W_list=(5.0, 10.0, 20.0, 30.0, 40.0, 50.0), jobs: int = 1,
                  out_dir=None, mnist_images=None) -> dict:
    """Accuracy-vs-W curve. Recordings are made once per session; only the
    count window changes between W values."""
    cfg.validate()
    proto = cfg.protocol
    W_list = [float(w) for w in W_list]
    if max(W_list) > proto.post_ms:
        raise ValueError(f"W={max(W_list)} ms exceeds recorded post-window "
                         f"{proto.post_ms} ms; raise protocol.post_ms")
    t0 = time.time()
    reps = proto.mnist_repetitions if family == "mnist" else proto.repetitions_per_pattern
    if mnist_images is None and family == "mnist":
        mnist_images = load_family_images(cfg)
    keys = _session_keys(cfg)
    cultures = build_day_cultures(cfg)
    pats = {key: family_patterns(family, cfg, session_key=key, mnist_images=mnist_images)
            for key in keys}
    base_W = proto.W_ms if proto.W_ms is not None else default_W_ms(family)
    args = [(key, cultures[key], pats[key], cfg,
             derive_seed(cfg.seed, "session", *key), reps, base_W,
             {"replicate": key[0], "day": key[1]}, False)
            for key in keys]
    results = dict(_run_jobs(_culture_session_job, args, jobs))

    k = cfg.readout.k_folds
    train_kwargs = cfg.readout.train_kwargs()
    curve = []
    for W in W_list:
        accs = []
        for key in keys:
            ds = dataset_from_deliveries(results[key].deliveries, W)
            cv = readout_mod.cross_validate(
                ds, k=k, seed=derive_seed(cfg.seed, "cv", "culture", *key), **train_kwargs)
            accs.append(cv.mean)
        point = {"W_ms": W}
        point.update(_sem_summary(accs))
        curve.append(point)
    report = {
        "experiment": family,
        "ablation": "post-stimulus window",
        "W_list_ms": W_list,
        "curve": curve,
        "config": cfg.to_dict(),
        "seeds": {"root": cfg.seed},
        "timing": {"wall_s": round(time.time() - t0, 3)},
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_report(os.path.join(out_dir, "report.json"), report)
        with open(os.path.join(out_dir, "w_sweep.csv"), "w", encoding="utf-8") as f:
            f.write("W_ms,mean,sem,n\n")
            for p in curve:
                f.write(f"{p['W_ms']:.10g},{p['mean']:.10g},{p['sem']:.10g},{p['n']}\n")
    return report


def cross_day_eval(family: str, cfg: WorkbenchConfig, jobs: int = 1,
                   out_dir=None, mnist_images=None) -> dict:
    """Train the readout on pooled Day-1 sessions, evaluate the frozen model
    on each later day, with a per-day spatial-shuffle baseline."""
    cfg.validate()
    if cfg.protocol.n_days < 2:
        raise ValueError("cross-day evaluation needs protocol.n_days >= 2")
    t0 = time.time()
    run = run_family(family, cfg, substrate="culture", jobs=jobs,
                     mnist_images=mnist_images)
    by_day: dict[int, list] = {}
    for (r, d), result in sorted(run.session_results.items()):
        by_day.setdefault(d, []).append(((r, d), result.dataset))

    day0 = [ds for _, ds in by_day[0]]
    pooled = LabeledDataset(
        np.concatenate([ds.features for ds in day0]),
        np.concatenate([ds.labels for ds in day0]),
        [t for ds in day0 for t in ds.tags])
    model = readout_mod.train_slp(pooled, seed=derive_seed(cfg.seed, "xday-train"),
                                  **cfg.readout.train_kwargs())
    day0_cv = readout_mod.cross_validate(
        pooled, k=cfg.readout.k_folds, seed=derive_seed(cfg.seed, "cv", "xday", 0),
        **cfg.readout.train_kwargs())

    transfer = {}
    for d in sorted(by_day):
        if d == 0:
            continue
        accs = []
        shuffle_accs = []
        for (key, ds) in by_day[d]:
            accs.append(readout_mod.accuracy(model, ds))
            shuffled = readout_mod.shuffle_baseline(
                ds, seed=derive_seed(cfg.seed, "xday-shuffle", *key))
            shuffle_accs.append(readout_mod.accuracy(model, shuffled))
        transfer[str(d)] = {
            "accuracy": _summary(accs),
            "shuffle": _summary(shuffle_accs),
            "session_accuracies": [round(a, 10) for a in accs],
        }
    report = {
        "experiment": family,
        "evaluation": "cross-day",
        "train_day_cv": day0_cv.to_dict(),
        "transfer": transfer,
        "config": cfg.to_dict(),
        "seeds": {"root": cfg.seed},
        "timing": {"wall_s": round(time.time() - t0, 3)},
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_report(os.path.join(out_dir, "report.json"), report)
    return report


# --- low-dimensional embedding --------------------------------------------------------


def pca_embed(states, dims: int = 2) -> np.ndarray:
    """Mean-centered principal-component projection of state vectors.

    Components are ordered by descending variance; each component's sign is
    fixed so its largest-magnitude loading is positive. If the data has lower
    rank than `dims`, the missing coordinates are zero and a warning is issued.
    """
    if hasattr(states[0], "counts"):
        X = np.stack([np.asarray(s.counts, dtype=np.float64) for s in states])
    else:
        X = np.asarray(states, dtype=np.float64)
    if X.shape[0] < dims + 1:
        raise ValueError(f"need at least {dims + 1} samples for a {dims}-D embedding")
    Xc = X - X.mean(axis=0)
    U, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    rank = int(np.sum(S > S[0] * 1e-12)) if S.size and S[0] > 0 else 0
    if rank < dims:
        warnings.warn(f"data rank {rank} below requested {dims} components; "
                      "extra coordinates are zero")
    take = min(dims, S.size)
    signs = np.ones(take)
    for j in range(take):
        lead = np.argmax(np.abs(Vt[j]))
        if Vt[j, lead] < 0:
            signs[j] = -1.0
    coords = U[:, :take] * S[:take] * signs
    if take < dims:
        coords = np.pad(coords, ((0, 0), (0, dims - take)))
    return coords


# --- run-directory output --------------------------------------------------------------


def write_report(path, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")


def write_run_dir(out_dir, cfg: WorkbenchConfig, run: FamilyRun,
                  save_events: bool = False, save_traces: bool = False) -> None:
    from .config import save_config

    os.makedirs(out_dir, exist_ok=True)
    save_config(os.path.join(out_dir, "config.json"), cfg)
    write_report(os.path.join(out_dir, "report.json"), run.report)
    states_dir = os.path.join(out_dir, "states")
    os.makedirs(states_dir, exist_ok=True)
    for (r, d), result in sorted(run.session_results.items()):
        dsp.states_to_csv(os.path.join(states_dir, f"culture_r{r}d{d}.csv"), result.states)
    for (r, d), ds in sorted(run.ar_datasets.items()):
        _dataset_to_csv(os.path.join(states_dir, f"ar_r{r}d{d}.csv"), ds)
    if save_events:
        events_dir = os.path.join(out_dir, "events")
        os.makedirs(events_dir, exist_ok=True)
        for (r, d), result in sorted(run.session_results.items()):
            path = os.path.join(events_dir, f"culture_r{r}d{d}.jsonl")
            with open(path, "w", encoding="utf-8") as f:
                for i, rec in enumerate(result.deliveries):
                    for ch, t, peak, area, kept_flag in (rec.event_rows or []):
                        f.write(json.dumps({
                            "stim_index": i, "channel": int(ch), "t_sample": int(t),
                            "peak_uV": peak, "S": area, "kept": kept_flag,
                        }, sort_keys=True) + "\n")
    if save_traces:
        warnings.warn("save_traces was requested but traces are not retained by "
                      "run_family; use culture.stimulate + culture.write_raw_traces "
                      "for raw dumps")


def _dataset_to_csv(path, ds: LabeledDataset) -> None:
    meta_keys = sorted({k for t in ds.tags for k in t})
    n_features = ds.features.shape[1]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        header = ["label"] + meta_keys + [f"ch{c:04d}" for c in range(n_features)]
        f.write(",".join(header) + "\n")
        for i in range(len(ds)):
            cells = [str(ds.labels[i])]
            cells += [_fmt_cell(ds.tags[i].get(k, "")) for k in meta_keys]
            cells += [f"{x:.10g}" for x in ds.features[i]]
            f.write(",".join(cells) + "\n")


def _fmt_cell(x) -> str:
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def load_dataset_csv(path) -> LabeledDataset:
    """Read a state CSV (culture or reservoir schema) back into a dataset."""
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split(",")
        first_feat = next(i for i, h in enumerate(header) if h.startswith("ch"))
        meta_keys = header[1:first_feat]
        feats = []
        labels = []
        tags = []
        for line in f:
            cells = line.rstrip("\n").split(",")
            labels.append(cells[0])
            tags.append(dict(zip(meta_keys, cells[1:first_feat])))
            feats.append([float(x) for x in cells[first_feat:]])
    return LabeledDataset(np.asarray(feats), labels, tags)
