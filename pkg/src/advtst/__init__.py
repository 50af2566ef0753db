"""Adversarial evaluation of non-parametric two-sample tests.

Six tests (MMD-D, MMD-G, C2ST-S, C2ST-L, ME, SCF), an ensemble PGD attack
that fools them jointly, and a max-min trained deep kernel (MMD-RoD).
"""

from .attack import (
    TEST_ORDER,
    AttackPlan,
    CriterionEnsemble,
    build_ensemble,
    checkpoint_schedule,
    ensemble_attack,
    finetuned_weights,
    naive_weights,
)
from .data import BlobSpec, HdgmSpec, blob_sampler, hdgm_sampler, load_table, sample_blob, sample_hdgm
from .inference import InferenceConfig, evaluate_power, evaluate_transfer, run_test
from .kernels import C2STKernel, DeepKernel, GaussianKernel, h_matrix, kernel_eval
from .location import LocationTestModel, location_statistic
from .mmd import CriterionConfig, criterion, mmd_u, variance_hat
from .serialize import load_model, save_model
from .trainers import (
    TrainConfig,
    fit_c2st,
    fit_locations,
    fit_mmd_deep,
    fit_mmd_gaussian,
    fit_mmd_rod,
)

__version__ = "0.1.0"
