"""Minibatch training with validation-OA early stopping, and inference."""

import time
from dataclasses import dataclass, field

import numpy as np

from hsitransfer import rng as _rng
from hsitransfer.errors import DataError
from hsitransfer.nn import model as _model
from hsitransfer.nn.optim import AdamState, TrainConfig, adam_step

IMPROVEMENT_TOL = 1e-12
PREDICT_CHUNK = 4096


@dataclass
class TrainReport:
    epochs_run: int = 0
    train_loss: list = field(default_factory=list)
    val_oa: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_oa: float = float("-inf")
    stop_reason: str = ""
    seconds: float = 0.0


def _logits_chunked(params, spectra):
    out = [_model.logits(params, spectra[i:i + PREDICT_CHUNK], "infer")
           for i in range(0, len(spectra), PREDICT_CHUNK)]
    return np.concatenate(out) if out else np.zeros((0, params.arch.class_count))


def predict(params, spectra):
    """Argmax class of the inference-mode output; ties go to the lower class id."""
    spectra = np.asarray(spectra)
    return np.argmax(_logits_chunked(params, spectra), axis=1)


def predict_time(params, spectra):
    """Predicted labels and the mean wall time per sample in milliseconds."""
    spectra = np.asarray(spectra)
    start = time.perf_counter()
    labels = predict(params, spectra)
    elapsed = time.perf_counter() - start
    return labels, 1000.0 * elapsed / max(len(spectra), 1)


def _resolve_mask(params, mask):
    if mask is None or mask == "all":
        return list(params.weights)
    if mask == "head":
        return params.names(_model.HEAD)
    if mask == "extractor":
        return params.names(_model.EXTRACTOR)
    unknown = set(mask) - set(params.weights)
    if unknown:
        raise ValueError(f"mask names unknown tensors: {sorted(unknown)}")
    return [k for k in params.weights if k in set(mask)]


def fit(params, train_set, val_set, cfg=TrainConfig(), mask=None, log=None):
    """Train ``params`` (a copy) and return the best-validation snapshot.

    ``mask`` selects the trainable tensors: None/"all", "head", "extractor" or
    an explicit list of names. When no extractor tensor is trainable the
    extractor is frozen entirely: BN runs on its running statistics and the
    features are computed once.
    """
    if len(train_set) == 0:
        raise DataError("training set is empty")
    if len(val_set) == 0:
        raise DataError("validation set is empty")
    for part in (train_set, val_set):
        if part.bands != params.input_bands:
            raise DataError(f"samples have {part.bands} bands, model expects {params.input_bands}")
        if part.class_count != params.arch.class_count:
            raise DataError(
                f"samples have {part.class_count} classes, model head has {params.arch.class_count}"
            )
    params = params.copy()
    trainable = _resolve_mask(params, mask)
    frozen = not any(n.startswith(_model.EXTRACTOR) for n in trainable)

    start = time.perf_counter()
    if frozen:
        x_train = _model.extract(params, train_set.spectra, "infer")
        x_val = _model.extract(params, val_set.spectra, "infer")
    else:
        x_train, x_val = train_set.spectra, val_set.spectra
    y_train, y_val = train_set.classes, val_set.classes

    state = AdamState()
    gen = _rng.stream(cfg.seed, _rng.SHUFFLE)
    report = TrainReport()
    best = params.copy()
    since_best = 0
    n = len(y_train)
    for epoch in range(1, cfg.max_epochs + 1):
        order = gen.permutation(n)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            if frozen:
                loss, grads = _model.head_loss_and_gradients(params, x_train[idx], y_train[idx],
                                                             trainable)
            else:
                loss, grads = _model.loss_and_gradients(params, x_train[idx], y_train[idx],
                                                        "train", trainable)
            adam_step(params.weights, grads, state, state.t + 1, cfg, trainable)
            total += loss * len(idx)
        if frozen:
            pred = np.argmax(_model.classify(params, x_val), axis=1)
        else:
            pred = predict(params, x_val)
        oa = float(np.mean(pred == y_val))
        report.train_loss.append(total / n)
        report.val_oa.append(oa)
        report.epochs_run = epoch
        if log is not None:
            log(epoch, total / n, oa)
        if oa > report.best_val_oa + IMPROVEMENT_TOL:
            report.best_val_oa = oa
            report.best_epoch = epoch
            best = params.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                report.stop_reason = "patience"
                break
    else:
        report.stop_reason = "max_epochs"
    report.seconds = time.perf_counter() - start
    return best, report


def train(arch, train_set, val_set, cfg=TrainConfig(), mask=None, log=None):
    """Initialise a network for ``arch`` from ``cfg.seed`` and fit it."""
    params = _model.init_params(arch, train_set.bands, cfg.seed)
    return fit(params, train_set, val_set, cfg, mask, log)
