"""Label-noise robust modulation classification with a prototype teacher and a corrected student."""
from . import distiller, evalbench, gradnet, mvs, noiselab, protomind, sigsynth
from .distiller import LossConfig, TrainConfig, train_tshn
from .evalbench import evaluate, sweep, train_baseline
from .noiselab import NoiseSpec, TransitionMatrix, corrupt
from .sigsynth import DatasetRequest, SignalSet, generate_dataset, load_dataset, split_dataset

__version__ = "0.1.0"

__all__ = [
    "DatasetRequest",
    "LossConfig",
    "NoiseSpec",
    "SignalSet",
    "TrainConfig",
    "TransitionMatrix",
    "corrupt",
    "distiller",
    "evalbench",
    "evaluate",
    "generate_dataset",
    "gradnet",
    "load_dataset",
    "mvs",
    "noiselab",
    "protomind",
    "sigsynth",
    "split_dataset",
    "sweep",
    "train_baseline",
    "train_tshn",
]
