"""Pruned-PCM decoding of polar codes.

ML erasure decoding by triangulation with reference variables, CRC-aided
belief propagation with stage-permuted lists, and ordered-statistics
post-processing on the same sparse parity-check matrix.
"""

from .bec import ErasureWord, brute_force_ml_bec, ml_decode_bec, transmit_bec
from .bp_awgn import BpConfig, bp_decode, cbp_decode, cbpl_decode
from .osd import OsdMode, cbpl_osd_decode
from .pcm import PrunedPcm, build_pruned_pcm, pruned_pcm_for
from .polar import AugmentedCodeSpec, PolarCodeSpec, make_code
from .sim import ExperimentConfig, paired_compare, run_experiment

__all__ = [
    "AugmentedCodeSpec",
    "BpConfig",
    "ErasureWord",
    "ExperimentConfig",
    "OsdMode",
    "PolarCodeSpec",
    "PrunedPcm",
    "bp_decode",
    "brute_force_ml_bec",
    "build_pruned_pcm",
    "cbp_decode",
    "cbpl_decode",
    "cbpl_osd_decode",
    "make_code",
    "ml_decode_bec",
    "paired_compare",
    "pruned_pcm_for",
    "run_experiment",
    "transmit_bec",
]
