"""scikit-learn style wrappers.

Inputs follow the estimator conventions: ``X`` is an ``(n, 1)`` array of
domain point indices (a 1-D array is accepted too) and ``y`` holds +1/-1
labels. Every estimator is bound to a :class:`ConceptClass` passed at
construction and exposes ``fit``/``predict``/``score`` plus
``get_params``/``set_params`` from :class:`~sklearn.base.BaseEstimator`.

The full private learner is not wrapped: it consumes ``k * m + n'``
examples (about 2.7e11 at d=1), so it is driven from a distribution via
:func:`stablepriv.pipeline.private_learn` rather than from arrays.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .concepts import ConceptClass, Hypothesis, Sample
from .littlestone import ldim
from .mechanisms import generic_learner
from .rng import Stream
from .soa import soa_run
from .stability import ArraySource, run_g_batch, stability_params


def _points(X, domain_size: int) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"expected one feature (the domain point), got {X.shape[1]}")
        X = X[:, 0]
    if X.ndim != 1:
        raise ValueError("X must be 1-D or a single column")
    if X.size and not np.issubdtype(X.dtype, np.integer):
        if not np.all(np.mod(X, 1) == 0):
            raise ValueError("domain points must be integers")
    pts = X.astype(np.int64)
    if pts.size and (pts.min() < 0 or pts.max() >= domain_size):
        raise ValueError(f"domain points must lie in [0, {domain_size})")
    return pts


def _labels(y, size: int) -> np.ndarray:
    y = np.asarray(y).ravel()
    if y.size != size:
        raise ValueError(f"X has {size} rows but y has {y.size}")
    if y.size and not np.isin(y, (-1, 1)).all():
        raise ValueError("labels must be +1 or -1")
    return y.astype(np.int8)


class _HypothesisClassifier(ClassifierMixin, BaseEstimator):
    """Shared predict/score for estimators that end with one hypothesis."""

    def _check_class(self) -> ConceptClass:
        H = self.concept_class
        if not isinstance(H, ConceptClass) or len(H) == 0:
            raise ValueError("concept_class must be a nonempty ConceptClass")
        return H

    def _fit_data(self, X, y):
        H = self._check_class()
        pts = _points(X, H.domain_size)
        labs = _labels(y, pts.size)
        self.classes_ = np.array([-1, 1])
        self.n_features_in_ = 1
        return H, pts, labs

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "hypothesis_")
        pts = _points(X, self.concept_class.domain_size)
        return self.hypothesis_.array[pts].astype(np.int64)


class SOAClassifier(_HypothesisClassifier):
    """The (extended) SOA run once over the training data in row order.

    Attributes:
        hypothesis_: final predictor.
        mistakes_: mistake count during the pass.
        mistake_positions_: row indices where the learner erred.
    """

    def __init__(self, concept_class: ConceptClass | None = None):
        self.concept_class = concept_class

    def fit(self, X, y):
        H, pts, labs = self._fit_data(X, y)
        r = soa_run(H, Sample(tuple(pts.tolist()), tuple(labs.tolist())))
        self.hypothesis_ = r.final_hypothesis
        self.mistakes_ = r.mistake_count
        self.mistake_positions_ = np.array(r.mistake_positions, dtype=np.int64)
        return self


class GloballyStableClassifier(_HypothesisClassifier):
    """One run of G on the training rows, consumed left to right.

    Args:
        concept_class: the class to learn.
        alpha: target accuracy in (0, 1/2].
        random_state: integer seed for the level and tournament coins.

    Attributes:
        hypothesis_: G's output.
        k_chosen_: the level drawn.
        draws_used_: training rows consumed.
        failed_: True if the sampler ran out of rows (output is SOA on the
            last ``n`` rows used).
    """

    def __init__(self, concept_class: ConceptClass | None = None, alpha: float = 0.5, random_state: int = 0):
        self.concept_class = concept_class
        self.alpha = alpha
        self.random_state = random_state

    def fit(self, X, y):
        H, pts, labs = self._fit_data(X, y)
        params = stability_params(ldim(H), self.alpha)
        if pts.size < params.n:
            raise ValueError(f"G needs at least n={params.n} training rows, got {pts.size}")
        coins = np.array([Stream(int(self.random_state)).spawn().key], dtype=np.uint64)
        g = run_g_batch(H, params, ArraySource(pts[None, :], labs[None, :]), coins)
        self.hypothesis_ = g.hypothesis(0)
        self.k_chosen_ = int(g.k_chosen[0])
        self.draws_used_ = int(g.draws_used[0])
        self.failed_ = bool(g.failed[0])
        self.params_ = params
        return self


class ExponentialMechanismClassifier(_HypothesisClassifier):
    """Epsilon-DP selection of one class member by training loss.

    Args:
        concept_class: candidate hypotheses.
        epsilon: privacy parameter.
        random_state: integer seed.
    """

    def __init__(self, concept_class: ConceptClass | None = None, epsilon: float = 1.0, random_state: int = 0):
        self.concept_class = concept_class
        self.epsilon = epsilon
        self.random_state = random_state

    def fit(self, X, y):
        H, pts, labs = self._fit_data(X, y)
        if pts.size == 0:
            raise ValueError("need at least one training row")
        S = Sample(tuple(pts.tolist()), tuple(labs.tolist()))
        h: Hypothesis = generic_learner(list(H), S, self.epsilon, Stream(int(self.random_state)))
        self.hypothesis_ = h
        return self
