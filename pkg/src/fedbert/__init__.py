"""Federated pre-training and NER fine-tuning of a small BERT encoder on numpy."""

from .attention import compare_profiles, head_entropy, jsd, jsd_head_matrix, mds_project_2d, model_distance, spearman
from .autograd import Tensor, Tape, backward, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Vocab, build_vocab, generate_corpus, split_silos_by_note, split_silos_by_patient
from .errors import (
    AggregationError,
    ConfigError,
    ContractError,
    DivergenceError,
    FedBertError,
    FormatError,
    ShapeError,
    SplitError,
    StageError,
)
from .experiments import ExperimentSpec, run_experiment, run_matrix
from .federated import SiloHandle, aggregate, run_centralized, run_federated
from .model import Bert, ModelConfig, ParamSet, init_params
from .ner_eval import decode_iob, prf1, score_tags
from .trainer import LocalTrainer, TrainerConfig

__version__ = "0.1.0"
