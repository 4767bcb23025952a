"""scikit-learn compatible front end for the multi-scale recurrent CNN."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_random_state, check_X_y

from . import model as mdl
from .train import TrainConfig, predict_proba, train_arrays

__all__ = ["MSTDRCNNClassifier"]

N_CLASSES = 3


class MSTDRCNNClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Trend classifier for fixed-length price windows.

    ``X`` has one window per row (its width sets the window length T);
    ``y`` holds class indices 0 (still), 1 (down) and 2 (up).
    ``transform`` returns the final GRU state, i.e. the learned encoding.

    Parameters
    ----------
    scales : tuple of int
        Down-sampling rates; must start at 1 and increase.
    n_filters : int
        Convolution kernels per scale.
    kernel_size : int
        Kernel width; at most ``T // max(scales)``.
    hidden_size : int
        GRU state size.
    fc_sizes : tuple of int or None
        Widths of the fully-connected layers, ending with 3. ``None`` means
        ``(hidden_size // 2, 3)``.
    standardize : bool
        Z-score each window before the network sees it.
    learning_rate, batch_size, max_epochs, beta1, beta2, epsilon
        Adam / loop settings.
    random_state : int or None
        Seeds initialisation and per-epoch shuffling.
    """

    def __init__(
        self,
        scales=(1, 2, 3),
        n_filters=16,
        kernel_size=3,
        hidden_size=48,
        fc_sizes=None,
        activation="relu",
        standardize=False,
        learning_rate=0.0005,
        batch_size=32,
        max_epochs=100,
        beta1=0.9,
        beta2=0.999,
        epsilon=1e-8,
        random_state=0,
    ):
        self.scales = scales
        self.n_filters = n_filters
        self.kernel_size = kernel_size
        self.hidden_size = hidden_size
        self.fc_sizes = fc_sizes
        self.activation = activation
        self.standardize = standardize
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.random_state = random_state

    def _configs(self, window):
        model_cfg = mdl.ModelConfig(
            window=window,
            scales=tuple(self.scales),
            n_filters=self.n_filters,
            kernel_size=self.kernel_size,
            hidden_size=self.hidden_size,
            fc_sizes=None if self.fc_sizes is None else tuple(self.fc_sizes),
            n_classes=N_CLASSES,
            activation=self.activation,
            standardize=bool(self.standardize),
        )
        seed = self.random_state
        if not isinstance(seed, (int, np.integer)):
            seed = check_random_state(seed).randint(2**31)
        train_cfg = TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            seed=int(seed),
        )
        return model_cfg, train_cfg

    def fit(self, X, y, X_dev=None, y_dev=None):
        """Train; with a dev set, keep the epoch with the best dev accuracy."""
        X, y = check_X_y(X, y, dtype=np.float64)
        y = _check_labels(y)
        if X_dev is not None:
            X_dev, y_dev = check_X_y(X_dev, y_dev, dtype=np.float64)
            y_dev = _check_labels(y_dev)
            if X_dev.shape[1] != X.shape[1]:
                raise ValueError("X_dev has a different window length than X")
        model_cfg, train_cfg = self._configs(X.shape[1])
        result = train_arrays(X, y, X_dev, y_dev, model_cfg, train_cfg)
        self._set_fitted(result.best)
        self.last_checkpoint_ = result.last
        self.history_ = result.history
        return self

    def _set_fitted(self, ckpt):
        self.checkpoint_ = ckpt
        self.params_ = ckpt.params
        self.best_epoch_ = ckpt.epoch
        self.n_features_in_ = ckpt.model_config.window
        self.classes_ = np.arange(N_CLASSES)

    @classmethod
    def from_checkpoint(cls, ckpt):
        """Fitted estimator wrapping a loaded :class:`~mstd_rcnn.train.Checkpoint`."""
        mc, tc = ckpt.model_config, ckpt.train_config
        est = cls(
            scales=mc.scales,
            n_filters=mc.n_filters,
            kernel_size=mc.kernel_size,
            hidden_size=mc.hidden_size,
            fc_sizes=mc.fc_sizes,
            activation=mc.activation,
            standardize=mc.standardize,
            learning_rate=tc.learning_rate,
            batch_size=tc.batch_size,
            max_epochs=tc.max_epochs,
            beta1=tc.beta1,
            beta2=tc.beta2,
            epsilon=tc.epsilon,
            random_state=tc.seed,
        )
        est._set_fitted(ckpt)
        return est

    def _validate(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, the model expects {self.n_features_in_}")
        return X

    def predict_proba(self, X):
        X = self._validate(X)
        return predict_proba(self.params_, X)

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def transform(self, X):
        X = self._validate(X)
        return mdl.hidden_state(X, self.params_)

    def feature_matrix(self, X):
        """Per-window feature matrices, shape ``(n, len(scales) * n_filters, T - k + 1)``."""
        X = self._validate(X)
        cfg = self.params_.config
        E = mdl.features(X, self.params_.tensors(), cfg)
        return mdl.feature_matrix(E, cfg.n_features)


def _check_labels(y):
    y = np.asarray(y)
    if not np.all(np.equal(np.mod(y, 1), 0)):
        raise ValueError("labels must be integer class indices")
    y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= N_CLASSES):
        raise ValueError("labels must be 0 (still), 1 (down) or 2 (up)")
    return y
