"""scikit-learn style estimator wrapping :class:`ToyModel` training."""

from __future__ import annotations

import json
import logging

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .. import autograd as ad
from ..fisheye import VOID_ID
from ..metrics import ConfusionMatrix, inverse_frequency_weights, weighted_cross_entropy
from ..optim import RsgdState, SgdState, backward, poly_lr, rsgd_step, sgd_step
from ..validation import check_images, check_labels
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .model import ToyModel, NumericalError

log = logging.getLogger(__name__)


def _first_non_finite(named):
    for name, value in named:
        if value is not None and not np.all(np.isfinite(ad.as_array(value))):
            return name
    return None


def train_step(model, X, y, trainable, states, rsgd, it, max_iter, class_weights=None,
               ignore_id=VOID_ID, update_hyperbolic=True):
    """One simultaneous update: momentum SGD on the encoder and decoder groups,
    RSGD on the hyperbolic group.  Returns the batch loss."""
    params = model.params
    # overflow is reported below by naming the first non-finite tensor
    with np.errstate(over="ignore", invalid="ignore"):
        logits, tensors = model.forward(X, trainable)
        loss = weighted_cross_entropy(logits, y, class_weights, ignore_id)
    value = float(ad.as_array(loss))
    if not np.isfinite(value):
        bad = _first_non_finite(list(params.items()) + [("logits", logits)])
        raise NumericalError(f"non-finite loss; first bad tensor: {bad or 'loss'}")
    with np.errstate(over="ignore", invalid="ignore"):
        grads = dict(zip(trainable, backward(loss, [tensors[k] for k in trainable])))
    bad = _first_non_finite((f"grad[{k}]", g) for k, g in grads.items())
    if bad:
        raise NumericalError(f"non-finite gradient: {bad}")
    for group in ("encoder", "decoder"):
        names = [k for k in model.groups[group] if k in grads]
        state = states[group]
        lr = poly_lr(state.lr0, it, max_iter, state.power)
        sgd_step([params[k] for k in names], [grads[k] for k in names], state, lr)
    if update_hyperbolic:
        lr = poly_lr(rsgd.lr, it, max_iter, states["encoder"].power)
        for k in model.groups["hyperbolic"]:
            params[k][...] = rsgd_step(params[k], grads[k], rsgd, lr)
    return value


class FisheyeSegmenter(ClassifierMixin, BaseEstimator):
    """Pixel classifier for ``[n, C, H, W]`` images and ``[n, H, W]`` label maps.

    Euclidean parameters are trained with momentum SGD under a poly schedule
    (conv blocks at ``lr_encoder``, the head at ``lr_decoder``); HDK
    parameters take Riemannian SGD steps at ``lr_hyperbolic`` in the same
    iteration.  ``score`` returns mean IoU with ``ignore_id`` pixels excluded.
    """

    def __init__(self, num_classes=None, mode="hdk", channels=(16, 16, 16), kernel_size=3,
                 deformable_layers=(0,), curvature=1.0, m=2, connectivity=4, hdk_init="xavier",
                 rsgd_weights=True, freeze_hyperbolic=False, epochs=10, batch_size=4,
                 lr_encoder=1e-3, lr_decoder=1e-2, lr_hyperbolic=1e-2, momentum=0.9,
                 weight_decay=5e-4, poly_power=0.9, class_weighting="inverse",
                 ignore_id=VOID_ID, random_state=0, verbose=0):
        self.num_classes = num_classes
        self.mode = mode
        self.channels = channels
        self.kernel_size = kernel_size
        self.deformable_layers = deformable_layers
        self.curvature = curvature
        self.m = m
        self.connectivity = connectivity
        self.hdk_init = hdk_init
        self.rsgd_weights = rsgd_weights
        self.freeze_hyperbolic = freeze_hyperbolic
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_encoder = lr_encoder
        self.lr_decoder = lr_decoder
        self.lr_hyperbolic = lr_hyperbolic
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.poly_power = poly_power
        self.class_weighting = class_weighting
        self.ignore_id = ignore_id
        self.random_state = random_state
        self.verbose = verbose

    # ------------------------------------------------------------------ setup
    def _build(self, in_channels):
        return ToyModel(
            in_channels, self.num_classes_, self.channels, self.kernel_size, self.mode,
            self.deformable_layers, self.curvature, self.m, self.connectivity, self.hdk_init,
            self.rsgd_weights, seed=self.random_state,
        )

    def _normalize(self, X):
        return (X - self.mean_[None, :, None, None]) / self.std_[None, :, None, None]

    def _trainable(self):
        groups = self.model_.groups
        names = list(groups["encoder"]) + list(groups["decoder"])
        if not self.freeze_hyperbolic:
            names += list(groups["hyperbolic"])
        return names

    # -------------------------------------------------------------------- fit
    def fit(self, X, y, X_val=None, y_val=None, init=None):
        """Train on ``(X, y)``.

        ``init`` is an optional fitted segmenter (typically trained on perspective
        images) whose input statistics and same-shaped parameters seed this model.
        """
        X = check_images(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],) + X.shape[2:]:
            raise ValueError(f"labels {y.shape} do not match images {X.shape}")
        if self.num_classes is None:
            valid = y[y != self.ignore_id]
            self.num_classes_ = int(valid.max()) + 1 if valid.size else 1
        else:
            self.num_classes_ = int(self.num_classes)
        y = check_labels(y, self.num_classes_, self.ignore_id)
        self.classes_ = np.arange(self.num_classes_)
        self.n_features_in_ = X.shape[1]
        if init is not None:
            check_is_fitted(init, "model_")
            self.mean_, self.std_ = init.mean_.copy(), init.std_.copy()
        else:
            self.mean_ = X.mean(axis=(0, 2, 3))
            self.std_ = np.maximum(X.std(axis=(0, 2, 3)), 1e-6)
        if self.class_weighting == "inverse":
            self.class_weights_ = inverse_frequency_weights(y, self.num_classes_, self.ignore_id)
        elif self.class_weighting in (None, "uniform"):
            self.class_weights_ = np.ones(self.num_classes_)
        else:
            raise ValueError(f"unknown class_weighting {self.class_weighting!r}")
        self.model_ = self._build(X.shape[1])
        if init is not None:
            for name, value in init.model_.params.items():
                if name in self.model_.params and self.model_.params[name].shape == value.shape:
                    self.model_.params[name][...] = value

        Xn = self._normalize(X)
        n = len(Xn)
        bs = min(int(self.batch_size), n)
        steps = int(np.ceil(n / bs))
        max_iter = max(1, self.epochs * steps)
        shuffle_rng = np.random.default_rng(np.random.SeedSequence(self.random_state).spawn(3)[2])
        states = {
            "encoder": SgdState(self.lr_encoder, self.momentum, self.weight_decay, self.poly_power, max_iter),
            "decoder": SgdState(self.lr_decoder, self.momentum, self.weight_decay, self.poly_power, max_iter),
        }
        rsgd = RsgdState(self.lr_hyperbolic, self.curvature)
        trainable = self._trainable()

        self.loss_curve_ = []
        self.val_miou_ = []
        it = 0
        for epoch in range(self.epochs):
            order = shuffle_rng.permutation(n)
            losses = []
            for s in range(steps):
                idx = order[s * bs : (s + 1) * bs]
                try:
                    value = train_step(self.model_, Xn[idx], y[idx], trainable, states, rsgd, it, max_iter,
                                       self.class_weights_, self.ignore_id, not self.freeze_hyperbolic)
                except NumericalError as exc:
                    raise NumericalError(f"epoch {epoch}, step {s}: {exc}") from None
                losses.append(value)
                it += 1
            self.loss_curve_.append(float(np.mean(losses)))
            if X_val is not None:
                self.val_miou_.append(self.score(X_val, y_val))
            if self.verbose:
                extra = f" val mIoU {self.val_miou_[-1]:.4f}" if self.val_miou_ else ""
                log.info("epoch %d loss %.5f%s", epoch, self.loss_curve_[-1], extra)
        return self

    # ---------------------------------------------------------------- predict
    def decision_function(self, X, batch_size=8):
        check_is_fitted(self, "model_")
        X = self._normalize(check_images(X, self.n_features_in_))
        out = [ad.as_array(self.model_.forward(X[i : i + batch_size])[0]) for i in range(0, len(X), batch_size)]
        return np.concatenate(out)

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.decision_function(X).argmax(axis=1)

    def confusion(self, X, y):
        y = np.asarray(y)
        if len(y) == 0:
            raise ValueError("cannot evaluate on an empty dataset")
        cm = ConfusionMatrix(self.num_classes_, self.ignore_id)
        pred = self.predict(X)
        for p, t in zip(pred, y):
            cm.accumulate(p, t)
        return cm

    def score(self, X, y, sample_weight=None):
        return self.confusion(X, y).miou()

    def loss(self, X, y):
        check_is_fitted(self, "model_")
        logits = self.decision_function(X)
        return float(weighted_cross_entropy(logits, y, self.class_weights_, self.ignore_id))

    def kernel_field(self, X, layer=None):
        """Predicted tap offsets ``[n, 2*kh*kw, H, W]`` of a deformable block."""
        check_is_fitted(self, "model_")
        X = self._normalize(check_images(X, self.n_features_in_))
        return self.model_.kernel_field(X, layer)

    # ------------------------------------------------------------ persistence
    def save(self, path, config=None):
        check_is_fitted(self, "model_")
        params = self.get_params()
        params["channels"] = list(params["channels"])
        params["deformable_layers"] = list(params["deformable_layers"])
        meta = {
            "estimator": params,
            "num_classes": self.num_classes_,
            "n_features_in": self.n_features_in_,
            "loss_curve": self.loss_curve_,
            "val_miou": self.val_miou_,
        }
        arrays = {f"param/{k}": v for k, v in self.model_.params.items()}
        arrays["stats/mean"] = self.mean_
        arrays["stats/std"] = self.std_
        arrays["stats/class_weights"] = self.class_weights_
        save_checkpoint(path, arrays, meta, config)

    @classmethod
    def load(cls, path):
        arrays, manifest = load_checkpoint(path)
        meta = manifest["meta"]
        missing = {"estimator", "num_classes", "n_features_in"} - set(meta)
        missing |= {"stats/mean", "stats/std", "stats/class_weights"} - set(arrays)
        if missing:
            raise CheckpointError(f"checkpoint is not a segmenter: missing {sorted(missing)}")
        params = dict(meta["estimator"])
        for key in ("channels", "deformable_layers"):
            params[key] = tuple(params[key])
        est = cls(**params)
        est.num_classes_ = meta["num_classes"]
        est.classes_ = np.arange(est.num_classes_)
        est.n_features_in_ = meta["n_features_in"]
        est.mean_ = arrays["stats/mean"]
        est.std_ = arrays["stats/std"]
        est.class_weights_ = arrays["stats/class_weights"]
        est.loss_curve_ = meta.get("loss_curve", [])
        est.val_miou_ = meta.get("val_miou", [])
        est.model_ = est._build(est.n_features_in_)
        for k in est.model_.params:
            stored = arrays.get(f"param/{k}")
            if stored is None or stored.shape != est.model_.params[k].shape:
                raise CheckpointError(f"checkpoint array {k} is missing or has the wrong shape")
            est.model_.params[k][...] = stored
        est.config_ = manifest.get("config")
        return est

    def __repr__(self, N_CHAR_MAX=700):
        return super().__repr__(N_CHAR_MAX)


def describe(est: FisheyeSegmenter) -> str:
    return json.dumps({k: repr(v) for k, v in est.get_params().items()}, indent=1)
