"""Active few-shot text labeling: query selection, label-tuning and
logistic-regression classifiers over pluggable text encoders, a stopping
predictor, a simulation harness and a REST annotation service."""

__version__ = "0.1.0"

from .corpus import LabelSet, TextInstance, UnbalanceSpec, cap_pool, compute_stats, ingest, make_unbalanced
from .encoder import EmbeddingCache, EncoderDescriptor, HashedNgramEncoder, LookupEncoder, encode_batch_cached, load_precomputed
from .fsl import LabelTuningModel, LogRegModel, Posterior, TrainConfig, predict, train_from_scratch, zero_shot_init
from .perfpred import ForestConfig, ForestModel, IterationSnapshot, StoppingRule, evaluate_predictor, forest_fit, forest_predict, normalize_curve, sample_T, snapshot
from .selection import STRATEGIES, PoolView, SelectionConfig, select, uncertainty_score
from .simulate import Dataset, ExperimentPlan, SynthSpec, aggregate, macro_f1, run_trial, synth_dataset

__all__ = [
    "LabelSet", "TextInstance", "UnbalanceSpec", "cap_pool", "compute_stats",
    "ingest", "make_unbalanced",
    "EmbeddingCache", "EncoderDescriptor", "HashedNgramEncoder", "LookupEncoder",
    "encode_batch_cached", "load_precomputed",
    "LabelTuningModel", "LogRegModel", "Posterior", "TrainConfig", "predict",
    "train_from_scratch", "zero_shot_init",
    "ForestConfig", "ForestModel", "IterationSnapshot", "StoppingRule",
    "evaluate_predictor", "forest_fit", "forest_predict", "normalize_curve",
    "sample_T", "snapshot",
    "STRATEGIES", "PoolView", "SelectionConfig", "select", "uncertainty_score",
    "Dataset", "ExperimentPlan", "SynthSpec", "aggregate", "macro_f1",
    "run_trial", "synth_dataset",
]
