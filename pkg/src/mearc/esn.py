"""Artificial-reservoir baseline: a sparse rate-based recurrent network.

4096 tanh units, recurrent matrix drawn at 10% sparsity and rescaled to a
fixed spectral radius of 0.9. The reservoir is driven from rest by the same
spatial stimulus patterns as the simulated culture, plus input noise sampled
from a model of spontaneous activity calibrated on recorded windows.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grid import N_CHANNELS, StimPattern, channel_index, validate_pattern
from .seeds import derive_seed, substream


@dataclass(frozen=True)
class EsnConfig:
    n_units: int = N_CHANNELS
    sparsity: float = 0.10
    rho: float = 0.9
    input_gain: float = 1.0
    leak: float = 1.0               # 1 = plain rate units, no leaky integration
    k_steps: int = 3                # recurrent iterations from rest per stimulus
    noise_gain: float = 1.0         # scale of sampled spontaneous counts on the input
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.sparsity <= 1.0:
            raise ValueError("sparsity must be in (0,1]")
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if not 0.0 < self.leak <= 1.0:
            raise ValueError("leak must be in (0,1]")
        if self.k_steps < 1:
            raise ValueError("k_steps must be >= 1")


@dataclass(frozen=True)
class EsnReservoir:
    cfg: EsnConfig
    W_rec: sp.csr_matrix

    @property
    def nonzero_fraction(self) -> float:
        return self.W_rec.nnz / float(self.cfg.n_units ** 2)


class PowerIterationError(ArithmeticError):
    """Power iteration failed to converge; message carries the residual."""


def _subspace_radius(Hk: np.ndarray, width: int) -> float:
    """Radius contributed by an exhausted (invariant) Krylov subspace.

    Defective zero eigenvalues round to ~eps**(1/index) under a direct
    eigensolve, so nilpotency is decided by powering the normalized block:
    a genuinely nilpotent block annihilates to rounding level, while any
    real eigenvalue of magnitude r leaves ||(H/h)^w|| ~ (r/h)^w far above it.
    """
    hnorm = float(np.max(np.abs(Hk))) if Hk.size else 0.0
    if hnorm == 0.0:
        return 0.0
    P = np.linalg.matrix_power(Hk / hnorm, width)
    if np.max(np.abs(P)) <= width * 1e-12:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(Hk))))


def spectral_radius(M, tol: float = 1e-9, max_restarts: int = 40,
                    krylov_dim: int | None = None, seed: int = 0) -> float:
    """Largest eigenvalue magnitude via Krylov-accelerated power iteration.

    Repeated applications of M build an orthonormal Krylov basis; the
    dominant Ritz value of the projected matrix estimates the radius and a
    blend of the top Ritz vectors restarts the iteration. The subspace tracks
    complex conjugate dominant pairs and clustered moduli, which defeat the
    plain one-vector scheme; if restarts stagnate the subspace dimension is
    escalated. Basis breakdown (an invariant subspace) is handled by
    deflation: the iteration restarts orthogonally to what it has already
    seen, and a nilpotent exhausted subspace contributes radius zero.
    """
    n, m = M.shape
    if n != m:
        raise ValueError("matrix must be square")
    data = M.data if sp.issparse(M) else np.asarray(M)
    if data.size and not np.all(np.isfinite(data)):
        raise ValueError("matrix entries must be finite")
    if n == 0 or data.size == 0 or not np.any(data):
        return 0.0

    rng = np.random.default_rng(seed)
    if krylov_dim is None:
        krylov_dim = 128 if n > 512 else 64
    last_residual = np.inf
    best = 0.0
    for k in [int(min(n, krylov_dim)), int(min(n, 2 * krylov_dim)),
              int(min(n, 4 * krylov_dim))]:
        x = rng.standard_normal(n)
        x /= np.linalg.norm(x)
        deflated: list[np.ndarray] = []
        for _ in range(max_restarts):
            V = np.empty((k + 1, n))
            H = np.zeros((k + 1, k))
            V[0] = x
            width = k
            broke = False
            for j in range(k):
                w = M @ V[j]
                for i in range(j + 1):      # modified Gram-Schmidt, one re-pass
                    H[i, j] = w @ V[i]
                    w -= H[i, j] * V[i]
                for i in range(j + 1):
                    c = w @ V[i]
                    H[i, j] += c
                    w -= c * V[i]
                h = np.linalg.norm(w)
                H[j + 1, j] = h
                if h <= 1e-12 * max(1.0, abs(H[: j + 1, : j + 1]).max()):
                    width = j + 1
                    broke = True
                    break
                V[j + 1] = w / h
            Hk = H[:width, :width]

            if broke:
                # invariant subspace exhausted: its radius is exact; deflate
                # and probe the orthogonal complement for anything larger
                best = max(best, _subspace_radius(Hk, width))
                if len(deflated) + width >= n or len(deflated) >= 3 * k:
                    return best
                deflated.extend(V[:width])
                x = rng.standard_normal(n)
                for q in deflated:
                    x -= (x @ q) * q
                nx = np.linalg.norm(x)
                if nx < 1e-12:
                    return best
                x = x / nx
                continue

            theta, vecs = np.linalg.eig(Hk)
            order = np.argsort(-np.abs(theta))
            est = float(np.abs(theta[order[0]]))
            best = max(best, est)
            z = vecs[:, order[0]]
            last_residual = float(H[width, width - 1] * abs(z[-1]))
            if last_residual <= tol * max(est, 1e-300):
                return est
            # restart from a blend of the top Ritz vectors so a clustered or
            # complex dominant group is not lost between restarts
            y = np.zeros(n)
            for idx in order[: min(4, len(order))]:
                zi = vecs[:, idx]
                y += V[:width].T @ zi.real + V[:width].T @ zi.imag
            ny = np.linalg.norm(y)
            if ny < 1e-12:
                x = rng.standard_normal(n)
                x /= np.linalg.norm(x)
            else:
                x = y / ny
    raise PowerIterationError(
        f"no convergence up to Krylov dimension {k} "
        f"(radius ~ {best:.6g}, residual {last_residual:.3g})")


def init_esn(cfg: EsnConfig = EsnConfig()) -> EsnReservoir:
    """Draw the sparse Gaussian recurrent matrix and rescale it to cfg.rho."""
    cfg.validate()
    n = cfg.n_units
    rng = substream(cfg.seed, "esn")
    rows = []
    cols = []
    block = max(1, min(n, (1 << 21) // max(n, 1)))
    for start in range(0, n, block):
        stop = min(start + block, n)
        hit = rng.random((stop - start, n)) < cfg.sparsity
        bi, bj = np.nonzero(hit)
        rows.append(bi + start)
        cols.append(bj)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = rng.standard_normal(rows.size)
    W = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    if cfg.rho == 0.0:
        W.data[:] = 0.0
        return EsnReservoir(cfg=cfg, W_rec=W)
    raw = spectral_radius(W, seed=derive_seed(cfg.seed, "esn-power"))
    if raw <= 0.0:
        raise ValueError("unscaled reservoir matrix has numerically zero spectral radius")
    W.data *= cfg.rho / raw
    return EsnReservoir(cfg=cfg, W_rec=W)


@dataclass(frozen=True)
class NoiseModel:
    """Per-channel spontaneous spike-count statistics fitted on recorded windows."""

    means: np.ndarray
    family: str = "poisson"
    stds: np.ndarray = None

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.family == "poisson":
            return rng.poisson(self.means).astype(np.float64)
        if self.family == "gaussian":
            draw = rng.normal(self.means, self.stds)
            return np.maximum(draw, 0.0)
        raise ValueError(f"unknown noise family {self.family!r}")


def estimate_noise(windows, family: str = "poisson") -> NoiseModel:
    """Fit per-channel means from spontaneous windows; needs more than 20."""
    W = np.asarray(windows, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError("windows must be a 2-D (n_windows, n_channels) array")
    if W.shape[0] < 21:
        raise ValueError(f"need more than 20 spontaneous windows, got {W.shape[0]}")
    if np.any(W < 0):
        raise ValueError("spike counts must be non-negative")
    return NoiseModel(means=W.mean(axis=0), family=family, stds=W.std(axis=0))


def pattern_input(pattern: StimPattern) -> np.ndarray:
    """Input vector: +1 on positive-pole channels, -1 on negative-pole channels."""
    u = np.zeros(N_CHANNELS, dtype=np.float64)
    for pair in pattern.pairs:
        u[channel_index(pair.positive)] += 1.0
        u[channel_index(pair.negative)] -= 1.0
    return u


def ar_state(esn: EsnReservoir, pattern: StimPattern, noise: NoiseModel | None,
             seed: int) -> np.ndarray:
    """Reservoir state for one stimulus, iterated k_steps from rest."""
    problems = validate_pattern(pattern)
    if problems:
        raise ValueError("invalid pattern: " + "; ".join(problems))
    cfg = esn.cfg
    u = pattern_input(pattern)
    if noise is not None and cfg.noise_gain != 0.0:
        u = u + cfg.noise_gain * noise.sample(substream(seed, "ar-noise"))
    drive = cfg.input_gain * u
    x = np.zeros(cfg.n_units, dtype=np.float64)
    for _ in range(cfg.k_steps):
        x = (1.0 - cfg.leak) * x + cfg.leak * np.tanh(drive + esn.W_rec @ x)
    return x


# --- persistence ----------------------------------------------------------------

ESN_MAGIC = b"ESN1"


def save_esn(path, esn: EsnReservoir) -> None:
    """Binary dump: header, config echo, then little-endian COO triplets."""
    coo = esn.W_rec.tocoo()
    order = np.lexsort((coo.col, coo.row))
    rows = coo.row[order].astype("<u4")
    cols = coo.col[order].astype("<u4")
    vals = coo.data[order].astype("<f8")
    cfg_blob = json.dumps(esn.cfg.__dict__, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(ESN_MAGIC)
        f.write(struct.pack("<IQI", esn.cfg.n_units, rows.size, len(cfg_blob)))
        f.write(cfg_blob)
        trip = np.empty(rows.size, dtype=[("r", "<u4"), ("c", "<u4"), ("v", "<f8")])
        trip["r"], trip["c"], trip["v"] = rows, cols, vals
        f.write(trip.tobytes())


def load_esn(path) -> EsnReservoir:
    with open(path, "rb") as f:
        if f.read(4) != ESN_MAGIC:
            raise ValueError("bad reservoir file magic")
        n, nnz, blob_len = struct.unpack("<IQI", f.read(16))
        cfg = EsnConfig(**json.loads(f.read(blob_len).decode("utf-8")))
        trip = np.frombuffer(f.read(nnz * 16), dtype=[("r", "<u4"), ("c", "<u4"), ("v", "<f8")])
        if trip.size != nnz:
            raise ValueError("truncated reservoir file")
    W = sp.csr_matrix((trip["v"], (trip["r"], trip["c"])), shape=(n, n))
    return EsnReservoir(cfg=cfg, W_rec=W)
