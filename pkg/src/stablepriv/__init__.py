"""Globally stable and differentially private learning of finite classes."""

__version__ = "0.1.0"

from .concepts import (
    ConceptClass,
    Hypothesis,
    RealizableDistribution,
    Sample,
    draw_examples,
    empirical_loss,
    make_full_class,
    make_thresholds,
    population_loss,
    restrict,
)
from .estimators import ExponentialMechanismClassifier, GloballyStableClassifier, SOAClassifier
from .littlestone import MistakeTree, find_shattered_tree, ldim, verify_shattered
from .mechanisms import (
    EmDistribution,
    HistogramOutput,
    PrivacyParams,
    audit_em_dp,
    audit_hist_release_dp,
    em_exact_distribution,
    generic_learner,
    hist_accuracy_check,
    stable_histogram,
)
from .pipeline import LearnResult, MParams, m_params, private_learn
from .rng import Stream
from .soa import SoaRunResult, SoaState, soa_init, soa_predict, soa_run, soa_update
from .stability import GOutput, SampleResult, StabilityParams, algorithm_g, sample_dk_mc, stability_params
