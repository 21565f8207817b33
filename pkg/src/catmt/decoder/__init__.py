"""Phrase-based log-linear decoder."""

from .bruteforce import brute_force_decode, brute_force_nbest, enumerate_derivations
from .model import (CORE_FEATURES, DEFAULT_WEIGHTS, DENSE_FEATURES, META_FEATURES, DecoderConfig, Models,
                    NeuralFeature, dot, feature_fire, prepare, read_weights, write_weights)
from .nbest import read_nbest, write_nbest
from .search import Derivation, decode, decode_nbest

__all__ = ["brute_force_decode", "brute_force_nbest", "enumerate_derivations", "CORE_FEATURES", "DEFAULT_WEIGHTS", "DENSE_FEATURES",
           "META_FEATURES", "DecoderConfig", "Models", "NeuralFeature", "dot", "feature_fire", "prepare",
           "read_weights", "write_weights", "read_nbest", "write_nbest", "Derivation", "decode", "decode_nbest"]
