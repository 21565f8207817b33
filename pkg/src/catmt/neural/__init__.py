"""Neural lexical models: a feed-forward joint model and a bidirectional GRU lexical model."""

from .btm import Btm, BtmConfig, btm_perplexity, train_btm
from .common import TrainingDiverged, grad_check
from .nnjm import Nnjm, NnjmConfig, make_examples, noise_distribution, train_nce

__all__ = ["Btm", "BtmConfig", "btm_perplexity", "train_btm", "TrainingDiverged", "grad_check",
           "Nnjm", "NnjmConfig", "make_examples", "noise_distribution", "train_nce"]
