"""Artificial reservoir: spectral radius numerics, construction invariants,
noise calibration, state determinism."""

import numpy as np
import pytest
import scipy.sparse as sp

from mearc.esn import (
    EsnConfig,
    EsnReservoir,
    NoiseModel,
    ar_state,
    estimate_noise,
    init_esn,
    load_esn,
    pattern_input,
    save_esn,
    spectral_radius,
)
from mearc.grid import BipolarPair, ElectrodeCoord, StimPattern, Waveform, channel_index

WF = Waveform.biphasic(4.0)


def _pattern(*poles, label="p"):
    return StimPattern(label=label, waveform=WF, pairs=tuple(
        BipolarPair(ElectrodeCoord(r, c), ElectrodeCoord(r, c + 1)) for r, c in poles))


# --- spectral radius ------------------------------------------------------------

def test_radius_identity():
    for n in (1, 3, 17):
        assert spectral_radius(np.eye(n)) == pytest.approx(1.0, abs=1e-9)


def test_radius_zero_matrix():
    assert spectral_radius(np.zeros((5, 5))) == 0.0


def test_radius_nilpotent_by_hand():
    # characteristic polynomial of [[0,2],[0,0]] is x^2: both eigenvalues 0
    assert spectral_radius(np.array([[0.0, 2.0], [0.0, 0.0]])) == 0.0
    shift = np.zeros((6, 6))
    shift[np.arange(5), np.arange(1, 6)] = 3.0
    assert spectral_radius(shift) == 0.0


def test_radius_against_dense_oracle_up_to_64():
    rng = np.random.default_rng(0)
    for n in (2, 3, 5, 8, 16, 33, 64):
        for trial in range(4):
            M = rng.normal(size=(n, n))
            if trial % 2:
                M[rng.random((n, n)) < 0.5] = 0.0
            want = float(np.max(np.abs(np.linalg.eigvals(M))))
            got = spectral_radius(M, seed=trial)
            assert got == pytest.approx(want, rel=1e-6, abs=1e-9)


def test_radius_complex_dominant_pair():
    # rotation * scale: eigenvalues 0.8 * exp(+-i theta), no real dominant one
    theta = 0.7
    R = 0.8 * np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    M = np.zeros((4, 4))
    M[:2, :2] = R
    M[2, 3] = 0.1
    assert spectral_radius(M) == pytest.approx(0.8, rel=1e-6)


def test_radius_rejects_non_square_and_nonfinite():
    with pytest.raises(ValueError):
        spectral_radius(np.zeros((3, 4)))
    with pytest.raises(ValueError):
        spectral_radius(np.array([[np.nan, 0], [0, 1.0]]))


def test_radius_homogeneous_under_scaling():
    rng = np.random.default_rng(3)
    M = rng.normal(size=(32, 32))
    r = spectral_radius(M)
    assert spectral_radius(M * 2.5) == pytest.approx(2.5 * r, rel=1e-9)


# --- construction -----------------------------------------------------------------

def test_init_small_dense_rho():
    esn = init_esn(EsnConfig(n_units=4, sparsity=1.0, rho=0.9, seed=5))
    dense = esn.W_rec.toarray()
    assert dense.size == 16 and np.count_nonzero(dense) == 16
    want = float(np.max(np.abs(np.linalg.eigvals(dense))))
    assert want == pytest.approx(0.9, rel=1e-9)


def test_init_rho_zero_gives_zero_matrix():
    esn = init_esn(EsnConfig(n_units=8, sparsity=0.5, rho=0.0, seed=1))
    assert esn.W_rec.nnz == 0 or not np.any(esn.W_rec.data)


def test_init_deterministic_in_seed():
    a = init_esn(EsnConfig(n_units=64, sparsity=0.2, seed=9))
    b = init_esn(EsnConfig(n_units=64, sparsity=0.2, seed=9))
    assert (a.W_rec != b.W_rec).nnz == 0


def test_init_full_size_construction():
    esn = init_esn(EsnConfig(seed=0))
    n = esn.cfg.n_units
    assert esn.W_rec.shape == (n, n)
    assert abs(esn.nonzero_fraction - 0.10) < 0.005
    assert spectral_radius(esn.W_rec, seed=123) == pytest.approx(0.9, abs=1e-6)
    # independent route: ARPACK largest-magnitude eigenvalue
    from scipy.sparse.linalg import eigs
    lam = eigs(esn.W_rec.astype(np.float64), k=1, which="LM",
               return_eigenvectors=False, maxiter=5000, tol=1e-10)
    assert abs(lam[0]) == pytest.approx(0.9, abs=1e-5)


def test_init_validates_config():
    with pytest.raises(ValueError):
        init_esn(EsnConfig(sparsity=0.0))
    with pytest.raises(ValueError):
        init_esn(EsnConfig(rho=-1.0))


# --- noise model -------------------------------------------------------------------

def test_estimate_noise_needs_more_than_20():
    with pytest.raises(ValueError):
        estimate_noise(np.zeros((20, 16)))
    model = estimate_noise(np.zeros((21, 16)))
    assert np.all(model.means == 0)


def test_noise_all_zero_samples_zero():
    model = estimate_noise(np.zeros((25, 8)))
    assert np.all(model.sample(np.random.default_rng(0)) == 0)


def test_noise_mean_recovery_monte_carlo():
    rng = np.random.default_rng(1)
    true_mean = 2.0
    fitted = []
    for rep in range(40):
        windows = rng.poisson(true_mean, size=(30, 12))
        fitted.append(estimate_noise(windows).means.mean())
    assert abs(np.mean(fitted) - true_mean) < 0.1
    assert all(abs(f - true_mean) < 0.5 for f in fitted)


def test_noise_families():
    windows = np.abs(np.random.default_rng(2).normal(2.0, 1.0, size=(30, 6)))
    g = estimate_noise(windows, family="gaussian")
    draw = g.sample(np.random.default_rng(3))
    assert np.all(draw >= 0)
    with pytest.raises(ValueError):
        NoiseModel(means=np.ones(4), family="cauchy").sample(np.random.default_rng(0))


# --- reservoir state -----------------------------------------------------------------

def test_ar_state_zero_input_zero_state():
    esn = init_esn(EsnConfig(n_units=4096, sparsity=0.01, seed=3))
    p = _pattern((10, 10))
    x = ar_state(esn, p, noise=None, seed=0)
    u = pattern_input(p)
    assert x.shape == (4096,)
    # channels drive themselves through tanh; zero everywhere without input or noise
    empty = np.zeros(4096)
    assert np.allclose(np.tanh(empty), 0.0)
    assert np.any(x != 0.0)


def test_ar_state_deterministic():
    esn = init_esn(EsnConfig(n_units=4096, sparsity=0.01, seed=3))
    noise = NoiseModel(means=np.full(4096, 0.5))
    p = _pattern((20, 20), (30, 30))
    a = ar_state(esn, p, noise, seed=77)
    b = ar_state(esn, p, noise, seed=77)
    assert np.array_equal(a, b)
    c = ar_state(esn, p, noise, seed=78)
    assert not np.array_equal(a, c)


def test_pattern_input_poles():
    p = _pattern((5, 5))
    u = pattern_input(p)
    assert u[channel_index(ElectrodeCoord(5, 5))] == 1.0
    assert u[channel_index(ElectrodeCoord(5, 6))] == -1.0
    assert np.count_nonzero(u) == 2


def test_ar_states_distinct_over_canonical_patterns():
    esn = init_esn(EsnConfig(n_units=4096, sparsity=0.01, seed=4))
    pats = [_pattern((10, 10), label="a"), _pattern((10, 40), label="b"),
            _pattern((40, 10), label="c"), _pattern((40, 40), label="d")]
    states = [ar_state(esn, p, noise=None, seed=0) for p in pats]
    for i in range(len(states)):
        for j in range(i + 1, len(states)):
            assert not np.allclose(states[i], states[j])


# --- persistence -----------------------------------------------------------------------

def test_esn_roundtrip_bit_exact(tmp_path):
    esn = init_esn(EsnConfig(n_units=256, sparsity=0.1, seed=6))
    path = tmp_path / "reservoir.bin"
    save_esn(path, esn)
    back = load_esn(path)
    assert back.cfg == esn.cfg
    assert (back.W_rec != esn.W_rec).nnz == 0
    assert np.array_equal(np.sort(back.W_rec.data), np.sort(esn.W_rec.data))
    save_esn(tmp_path / "again.bin", back)
    assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()
