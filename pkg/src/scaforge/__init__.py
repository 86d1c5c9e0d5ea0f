"""scaforge: a workbench for deep-learning profiling side-channel attacks.

Pipeline stages: trace handling (SCAT format, preprocessing, labels),
synthetic masked-S-box leakage, SNR/saliency analysis, a from-scratch
numpy neural-network core with verified backprop, optimizers and LR
schedules, a data-parallel training loop, and key-rank / guessing-entropy
evaluation. `scaforge --help` lists the CLI subcommands.
"""

from .analysis import SnrReport, export_csv, saliency, snr
from .attack import GECurve, ScoreAccumulator, accumulate, guessing_entropy, hypothesis_scores, key_rank
from .nn import Model, ModelConfig, build_model, grad_check, load_preset, loss_ce
from .optim import LrCurve, OptimizerConfig, ScheduleConfig, SwaState, lr_find, opt_step, scale_lr, schedule_value, swa_update
from .synth import SynthConfig, generate, hamming_weight
from .traces import (
    PreprocessStats,
    TraceSet,
    aes_sbox,
    derive_labels,
    load_traceset,
    random_shift,
    save_traceset,
    standardize,
    window,
)
from .train import EpochRecord, TrainConfig, checkpoint_load, checkpoint_save, fit, parallel_grad

__version__ = "0.1.0"
