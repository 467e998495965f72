"""scikit-learn compatible MLP classifier with MC or controlled-MC dropout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dropout import DropoutAttachment, MaskBank, Mode, build_mask_bank
from .exceptions import ConfigurationError, NumericError
from .nn import (
    LayerSpec,
    NetworkParams,
    OptimizerState,
    backward,
    compute_loss,
    forward,
    init_network,
    sgd_step,
)
from .uncertainty import MeanPrediction, class_probabilities, mc_predict, predictive_entropy

__all__ = ["DropoutMLPClassifier", "EpochRecord"]

# Sub-stream ids under random_state; each stage gets its own generator.
_INIT, _BANK, _TRAIN, _EVAL = 1, 2, 3, 4


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None


def _stream(seed, stage):
    if seed is None:
        return np.random.default_rng()
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng([int(seed), stage])


class DropoutMLPClassifier(ClassifierMixin, BaseEstimator):
    """Feed-forward classifier trained by momentum SGD with dropout.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int, default=(20, 20, 20)
    activation : {"relu", "sigmoid", "identity"}, default="relu"
        Hidden-layer activation.
    dropout : {"traditional", "controlled", None}, default="controlled"
        ``"traditional"`` draws fresh Bernoulli masks each pass (MC
        dropout); ``"controlled"`` samples from a per-layer bank of
        `n_masks` fixed masks (CMC).
    dropout_rate : float, default=0.3
    dropout_layers : tuple of int, default=(0, 1)
        Hidden layers (0-based) whose outputs receive dropout.
    n_masks : int or tuple of int, default=10
        Bank size per controlled layer; a tuple gives one size per layer.
    learning_rate : float, default=0.08
    momentum : float, default=0.0
    batch_size : int, default=64
    max_epochs : int, default=300
    n_mc_samples : int, default=100
        Passes used by :meth:`sample_proba` and :meth:`predict_uncertainty`.
    mask_mode : {"per_example", "per_batch"}, default="per_example"
    random_state : int, Generator or None
        Seeds four independent streams: weight init, bank construction,
        training (shuffles and masks) and MC evaluation.

    Attributes
    ----------
    classes_ : ndarray
    params_ : NetworkParams
        Weights with the lowest validation loss seen during :meth:`fit`.
    banks_ : list of MaskBank
        One per controlled layer, in network order.
    history_ : list of EpochRecord
    best_epoch_ : int
        1-based epoch of the retained weights.
    best_val_loss_ : float or None
    """

    def __init__(
        self,
        hidden_layer_sizes=(20, 20, 20),
        activation="relu",
        dropout="controlled",
        dropout_rate=0.3,
        dropout_layers=(0, 1),
        n_masks=10,
        learning_rate=0.08,
        momentum=0.0,
        batch_size=64,
        max_epochs=300,
        n_mc_samples=100,
        mask_mode="per_example",
        random_state=None,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.dropout = dropout
        self.dropout_rate = dropout_rate
        self.dropout_layers = dropout_layers
        self.n_masks = n_masks
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.n_mc_samples = n_mc_samples
        self.mask_mode = mask_mode
        self.random_state = random_state

    # -- construction -------------------------------------------------

    def _validate_params(self):
        if self.dropout not in ("traditional", "controlled", None):
            raise ConfigurationError(f"unknown dropout kind {self.dropout!r}")
        if self.mask_mode not in ("per_example", "per_batch"):
            raise ConfigurationError(f"unknown mask_mode {self.mask_mode!r}")
        if self.activation not in ("relu", "sigmoid", "identity"):
            raise ConfigurationError(f"unsupported hidden activation {self.activation!r}")
        hidden = tuple(self.hidden_layer_sizes)
        bad = [i for i in self.dropout_layers if not 0 <= i < len(hidden)]
        if self.dropout is not None and bad:
            raise ConfigurationError(f"dropout_layers {bad} outside hidden layers 0..{len(hidden) - 1}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.n_mc_samples < 1:
            raise ConfigurationError("batch_size, max_epochs and n_mc_samples must be >= 1")

    def _bank_sizes(self):
        layers = sorted(set(self.dropout_layers))
        if np.ndim(self.n_masks) == 0:
            return {i: int(self.n_masks) for i in layers}
        sizes = list(self.n_masks)
        if len(sizes) != len(layers):
            raise ConfigurationError(f"{len(sizes)} bank sizes for {len(layers)} dropout layers")
        return dict(zip(layers, (int(s) for s in sizes)))

    def _build_specs(self, n_features, n_outputs):
        hidden = tuple(int(h) for h in self.hidden_layer_sizes)
        dims = (n_features,) + hidden
        banks = []
        specs = []
        bank_sizes = self._bank_sizes() if self.dropout == "controlled" else {}
        bank_rng = _stream(self.random_state, _BANK)
        for i, width in enumerate(hidden):
            attachment = None
            if self.dropout is not None and i in self.dropout_layers:
                if self.dropout == "controlled":
                    seed = int(bank_rng.integers(2**63 - 1))
                    bank = build_mask_bank(width, bank_sizes[i], self.dropout_rate, seed)
                    banks.append(bank)
                    attachment = DropoutAttachment("controlled", self.dropout_rate, bank)
                else:
                    attachment = DropoutAttachment("traditional", self.dropout_rate)
            specs.append(LayerSpec(dims[i], width, self.activation, attachment))
        out_act = "sigmoid" if n_outputs == 1 else "softmax"
        specs.append(LayerSpec(dims[-1], n_outputs, out_act))
        return specs, banks

    # -- training -----------------------------------------------------

    def _encode(self, y):
        return np.searchsorted(self.classes_, y)

    @property
    def loss_kind_(self):
        return "bce" if len(self.classes_) == 2 else "nll"

    def _targets(self, y_enc):
        return y_enc if self.loss_kind_ == "nll" else y_enc.reshape(-1, 1)

    def _deterministic_loss(self, params, X, y_enc):
        probs = forward(params, X, Mode.EVAL_DETERMINISTIC).probs
        return compute_loss(probs, self._targets(y_enc), self.loss_kind_)

    def fit(self, X, y, X_val=None, y_val=None):
        """Train, keeping the weights with the lowest validation loss.

        Validation loss is computed with dropout off after every epoch.
        Without a validation set the final epoch's weights are kept.

        Raises
        ------
        NumericError
            If the loss becomes non-finite; ``err.epoch`` is set.
        """
        self._validate_params()
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ConfigurationError("need at least two classes")
        self.n_features_in_ = X.shape[1]
        y_enc = self._encode(y)
        has_val = X_val is not None
        if has_val:
            X_val = check_array(X_val, dtype=np.float64)
            y_val_enc = self._encode(np.asarray(y_val))

        n_out = 1 if len(self.classes_) == 2 else len(self.classes_)
        specs, self.banks_ = self._build_specs(X.shape[1], n_out)
        params = init_network(specs, _stream(self.random_state, _INIT))
        state = OptimizerState.for_params(params, self.learning_rate, self.momentum)
        rng = _stream(self.random_state, _TRAIN)
        per_example = self.mask_mode == "per_example"

        self.history_ = []
        best = None
        best_loss = np.inf
        n = X.shape[0]
        for epoch in range(1, self.max_epochs + 1):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                try:
                    trace = forward(params, X[idx], Mode.TRAIN, rng, per_example=per_example)
                except NumericError as err:
                    err.epoch = epoch
                    raise
                targets = self._targets(y_enc[idx])
                total += compute_loss(trace.probs, targets, self.loss_kind_) * len(idx)
                grads = backward(trace, params, targets, self.loss_kind_)
                sgd_step(params, grads, state)
            train_loss = total / n
            val_loss = self._deterministic_loss(params, X_val, y_val_enc) if has_val else None
            watched = val_loss if has_val else train_loss
            if not np.isfinite(watched):
                raise NumericError(f"loss diverged in epoch {epoch}", epoch=epoch)
            self.history_.append(EpochRecord(epoch, train_loss, val_loss))
            if not has_val:
                best, self.best_epoch_ = params, epoch
            elif val_loss < best_loss:
                best_loss = val_loss
                best = params.copy()
                self.best_epoch_ = epoch
        self.params_ = best
        self.best_val_loss_ = float(best_loss) if has_val else None
        return self

    # -- inference ----------------------------------------------------

    def _check_X(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def predict_proba(self, X):
        """Class probabilities from one pass with dropout off."""
        X = self._check_X(X)
        return class_probabilities(forward(self.params_, X, Mode.EVAL_DETERMINISTIC).probs)

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]

    def sample_proba(self, X, n_samples=None, random_state=None):
        """MC-dropout samples of shape ``(n, T, n_classes)``.

        Uses the estimator's evaluation stream unless `random_state` is given.
        """
        X = self._check_X(X)
        seed = self.random_state if random_state is None else random_state
        rng = _stream(seed, _EVAL)
        return mc_predict(
            self.params_, X, n_samples or self.n_mc_samples, rng,
            per_example=self.mask_mode == "per_example",
        )

    def predict_uncertainty(self, X, n_samples=None, random_state=None) -> MeanPrediction:
        """Mean MC prediction and predictive entropy for every row of `X`.

        ``predicted_class`` holds encoded class indices; map through
        ``classes_`` for the original labels.
        """
        return predictive_entropy(self.sample_proba(X, n_samples, random_state))

    def get_banks(self) -> list[MaskBank]:
        check_is_fitted(self, "params_")
        return list(self.banks_)

    @classmethod
    def from_params(cls, params: NetworkParams, classes, **kwargs) -> "DropoutMLPClassifier":
        """Wrap already-trained weights, e.g. when reloading a saved model."""
        est = cls(**kwargs)
        est.params_ = params
        est.classes_ = np.asarray(classes)
        est.n_features_in_ = params.layers[0].spec.input_dim
        est.banks_ = [
            l.spec.dropout.bank for l in params.layers
            if l.spec.dropout is not None and l.spec.dropout.bank is not None
        ]
        est.history_ = []
        return est
