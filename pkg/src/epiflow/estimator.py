"""scikit-learn style wrapper around the flow optimizer."""

from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_pair
from .optimizer import REGULARIZERS, OptimizerConfig, finetune_epipolar, optimize
from .types import LossConfig


class EpipolarFlow(TransformerMixin, BaseEstimator):
    """Estimate dense optical flow for image pairs.

    Parameters
    ----------
    regularizer : {"none", "sampson", "lowrank", "subspace"}
        Epipolar term added at the finest pyramid level.
    iterations : int
        Gradient steps per pyramid level.
    levels : int
        Maximum number of pyramid levels.
    mu1, mu2 : float or None
        Smoothness and epipolar weights; ``mu2=None`` picks the
        regularizer's default.
    lambda_sub : float
        Relaxation weight of the subspace loss.
    random_state : int
        Seed of the per-iteration pixel sampling.

    Attributes
    ----------
    config_ : OptimizerConfig
    history_ : list
        Per-iteration loss records of the last pair passed to ``estimate``.
    """

    def __init__(self, regularizer="none", iterations=200, levels=4, mu1=0.02,
                 mu2=None, lambda_sub=10.0, random_state=0):
        self.regularizer = regularizer
        self.iterations = iterations
        self.levels = levels
        self.mu1 = mu1
        self.mu2 = mu2
        self.lambda_sub = lambda_sub
        self.random_state = random_state

    def fit(self, X=None, y=None):
        """Validate the parameters; no data is needed."""
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}")
        loss = LossConfig(mu1=self.mu1, mu2=self.mu2, lambda_sub=self.lambda_sub,
                          rng_seed=self.random_state)
        self.config_ = OptimizerConfig(regularizer=self.regularizer, iterations=self.iterations,
                                       levels=self.levels, loss=loss)
        return self

    def _config(self):
        if not hasattr(self, "config_"):
            self.fit()
        return self.config_

    def estimate(self, ref, target, init=None):
        """Forward ``FlowField`` from ``ref`` to ``target``.

        With ``init`` only the finest level is refined, starting from it,
        using the short fine-tuning schedule of ``OptimizerConfig.for_finetune``.
        """
        pair = check_pair((ref, target))
        cfg = self._config()
        if init is None:
            result = optimize(pair, cfg)
        else:
            ft = OptimizerConfig.for_finetune(regularizer=cfg.regularizer, loss=cfg.loss)
            result = finetune_epipolar(pair, init, ft)
        self.history_ = result.history
        return result.forward

    def transform(self, X):
        """Flows for an iterable of ``(ref, target)`` pairs."""
        return [self.estimate(*check_pair(pair)) for pair in X]
