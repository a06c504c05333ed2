"""Scikit-learn style front ends for imputation and change detection."""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_batch_size, check_data_matrix, check_schema, split_batches
from .copula import (
    ConstantSchedule,
    CopulaModel,
    DecayingSchedule,
    OnlineEmState,
    fit_minibatch,
    fit_offline,
    impute_matrix,
    online_update,
)
from .cpd import online_cpd_loop
from .errors import ConfigError, NotFittedError
from .marginals import DEFAULT_WINDOW_SIZE

_MODE_DEFAULT_BATCH = {"online": 40, "minibatch": 100}


class GaussianCopulaImputer(BaseEstimator, TransformerMixin):
    """Impute missing entries of mixed-type data with a Gaussian copula model.

    Parameters
    ----------
    schema : str or sequence
        Column kinds, e.g. ``"cont,cont,ord5,bin"``. Required before fitting.
    mode : {'minibatch', 'offline', 'online'}
        'offline' runs full EM over all rows each iteration; 'minibatch' fits
        marginals once and makes one decaying-step online pass; 'online'
        streams batches with windowed marginals and a constant step size.
    window_size : int
        Running-window length for online marginal estimation.
    batch_size : int or None
        Rows per model update; defaults to 40 online and 100 for minibatch.
    gamma : float
        Constant step size for online mode (and for ``partial_fit``).
    gamma_c : float
        Constant c of the decaying step size c/(t+c) used by minibatch mode.
    tol, max_iter :
        Offline EM stopping rule (relative Frobenius change / iteration cap).
    workers : int
        Worker processes for the row-parallel E-step; results are identical
        for any value.
    """

    def __init__(
        self,
        schema=None,
        mode: str = "minibatch",
        window_size: int = DEFAULT_WINDOW_SIZE,
        batch_size: int | None = None,
        gamma: float = 0.5,
        gamma_c: float = 5.0,
        tol: float = 1e-3,
        max_iter: int = 50,
        workers: int = 1,
    ):
        self.schema = schema
        self.mode = mode
        self.window_size = window_size
        self.batch_size = batch_size
        self.gamma = gamma
        self.gamma_c = gamma_c
        self.tol = tol
        self.max_iter = max_iter
        self.workers = workers

    # -- fitting ---------------------------------------------------------------

    def _resolved_batch_size(self, p: int) -> int:
        default = _MODE_DEFAULT_BATCH.get(self.mode, 100)
        return check_batch_size(self.batch_size or default, p)

    def fit(self, X, y=None):
        X = check_data_matrix(X)
        kinds = check_schema(self.schema, X.shape[1])
        if self.mode == "offline":
            self.model_ = fit_offline(
                X, kinds, max_iter=self.max_iter, tol=self.tol, workers=self.workers
            )
            self.state_ = OnlineEmState(self.model_, ConstantSchedule(self.gamma))
        elif self.mode == "minibatch":
            self.model_ = fit_minibatch(
                X,
                kinds,
                batch_size=self._resolved_batch_size(len(kinds)),
                schedule=DecayingSchedule(self.gamma_c),
                workers=self.workers,
            )
            self.state_ = OnlineEmState(self.model_, ConstantSchedule(self.gamma))
        elif self.mode == "online":
            model = CopulaModel(kinds, window_size=self.window_size)
            self.state_ = OnlineEmState(model, ConstantSchedule(self.gamma))
            self.model_ = model
            batch_size = self._resolved_batch_size(len(kinds))
            for start, stop in split_batches(X.shape[0], batch_size):
                if stop - start <= len(kinds):
                    warnings.warn(
                        f"skipping trailing batch of {stop - start} rows", stacklevel=2
                    )
                    break
                online_update(self.state_, X[start:stop], workers=self.workers)
        else:
            raise ConfigError(f"unknown mode {self.mode!r}")
        self.n_features_in_ = X.shape[1]
        return self

    def partial_fit(self, X, y=None):
        """One online batch update (creates a cold-start model on first call)."""
        X = check_data_matrix(X)
        if not hasattr(self, "state_"):
            kinds = check_schema(self.schema, X.shape[1])
            model = CopulaModel(kinds, window_size=self.window_size)
            self.state_ = OnlineEmState(model, ConstantSchedule(self.gamma))
            self.model_ = model
            self.n_features_in_ = X.shape[1]
        online_update(self.state_, X, workers=self.workers)
        return self

    # -- prediction --------------------------------------------------------------

    def transform(self, X):
        """Return ``X`` with every missing entry imputed."""
        if not hasattr(self, "model_"):
            raise NotFittedError("imputer has not been fitted")
        X = check_data_matrix(X, self.n_features_in_)
        out, fully_missing = impute_matrix(self.model_, X)
        self.fully_missing_rows_ = np.flatnonzero(fully_missing)
        if self.fully_missing_rows_.size:
            warnings.warn(
                f"{self.fully_missing_rows_.size} fully-missing rows imputed with "
                "marginal medians",
                stacklevel=2,
            )
        return out

    @property
    def correlation_(self) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise NotFittedError("imputer has not been fitted")
        return self.model_.sigma.copy()


class OnlineChangePointDetector(BaseEstimator):
    """Stream batches through the model update plus FDR-gated Monte Carlo test."""

    def __init__(
        self,
        schema=None,
        window_size: int = DEFAULT_WINDOW_SIZE,
        batch_size: int = 40,
        gamma: float = 0.5,
        mc_samples: int = 99,
        alpha: float = 0.05,
        burn_in: int = 0,
        warmup: int = 1,
        biased_pvalue: bool = False,
        wealth_fraction: float = 0.5,
        seed: int = 0,
        workers: int = 1,
    ):
        self.schema = schema
        self.window_size = window_size
        self.batch_size = batch_size
        self.gamma = gamma
        self.mc_samples = mc_samples
        self.alpha = alpha
        self.burn_in = burn_in
        self.warmup = warmup
        self.biased_pvalue = biased_pvalue
        self.wealth_fraction = wealth_fraction
        self.seed = seed
        self.workers = workers

    def run(self, X, initial_model: CopulaModel | None = None):
        """Process the whole stream and return the list of per-batch records."""
        X = check_data_matrix(X)
        kinds = check_schema(self.schema, X.shape[1])
        batch_size = check_batch_size(self.batch_size, len(kinds))
        if initial_model is None:
            model = CopulaModel(kinds, window_size=self.window_size)
        else:
            model = initial_model.copy()
        state = OnlineEmState(model, ConstantSchedule(self.gamma))
        batches = []
        for start, stop in split_batches(X.shape[0], batch_size):
            if stop - start <= len(kinds):
                warnings.warn(f"skipping trailing batch of {stop - start} rows", stacklevel=2)
                break
            batches.append(X[start:stop])
        self.records_ = list(
            online_cpd_loop(
                batches,
                state,
                B=self.mc_samples,
                alpha=self.alpha,
                burn_in=self.burn_in,
                warmup=self.warmup,
                biased=self.biased_pvalue,
                wealth_fraction=self.wealth_fraction,
                seed=self.seed,
                workers=self.workers,
            )
        )
        return self.records_
