"""bytecnn: malware family classification from raw bytes.

Pipeline: parse hex dumps or raw binaries, resample each file to a
fixed-length 10,000-value sequence, and classify it into one of nine
families with a small 1D CNN, CNN-UniLSTM, or CNN-BiLSTM trained from
scratch on CPU.
"""

from .ingest import FAMILY_NAMES, NUM_CLASSES, ByteSequence, LabeledSample, load_corpus
from .models import ModelConfig, Model, build_model, load_model, reference_config, save_model
from .resample import TARGET_LEN, ResampledSequence, resample_linear
from .train_eval import EvalReport, TrainConfig, compute_metrics, cross_validate, train_final, train_fold

__version__ = "0.1.0"

__all__ = [
    "FAMILY_NAMES",
    "NUM_CLASSES",
    "TARGET_LEN",
    "ByteSequence",
    "EvalReport",
    "LabeledSample",
    "Model",
    "ModelConfig",
    "ResampledSequence",
    "TrainConfig",
    "build_model",
    "compute_metrics",
    "cross_validate",
    "load_corpus",
    "load_model",
    "reference_config",
    "resample_linear",
    "save_model",
    "train_final",
    "train_fold",
]
