"""Reservoir-computing workbench on a simulated high-density electrode array.

The pipeline mirrors a stimulate / record / detect / de-artifact /
extract-state / train-readout / evaluate loop over a seeded spiking-network
stand-in for a cultured reservoir, plus an echo-state-network baseline.
"""

from .config import ProtocolConfig, ReadoutConfig, WorkbenchConfig, load_config, save_config
from .culture import Culture, CultureConfig, RawRecording, advance_day, grow_culture, spontaneous_window, stimulate
from .dsp import DetectorConfig, ReservoirState, SpikeEvent, detect_all, detect_spikes, extract_state, normalized_area, remove_artifacts, stim_mask
from .esn import EsnConfig, EsnReservoir, NoiseModel, ar_state, estimate_noise, init_esn, spectral_radius
from .grid import GRID_SIZE, N_CHANNELS, BipolarPair, ElectrodeCoord, StimPattern, Waveform, channel_index, coord_of, validate_pattern
from .harness import FAMILIES, ablate_window, cross_day_eval, pca_embed, run_family, run_session
from .patterns import ClockGeometry, MnistImage, load_mnist_idx, make_bar, make_clock_digit, make_pointwise, map_mnist
from .readout import LabeledDataset, ReadoutModel, cross_validate, predict, shuffle_baseline, train_slp
from .seeds import derive_seed, substream

__version__ = "0.1.0"
