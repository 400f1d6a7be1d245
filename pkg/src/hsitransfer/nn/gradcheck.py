"""Central finite-difference verification of the analytic gradients."""

from dataclasses import dataclass

import numpy as np

from hsitransfer import rng as _rng
from hsitransfer.nn import model as _model
from hsitransfer.nn.model import init_params, loss_and_gradients

# entries where both gradients are below this are compared absolutely
DENOM_FLOOR = 1e-5
KINK_RETRIES = 3


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_tensor: str
    checked: int
    passed: bool
    per_tensor: dict
    kinks: int = 0


def relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(
        np.maximum(np.abs(analytic), np.abs(numeric)), DENOM_FLOOR
    )


def _loss_and_pattern(params, spectra, labels, mode):
    """Loss plus the ReLU masks and pool winners that fix the local linear piece."""
    params = params.copy()
    caches = []
    z = _model.classify(params, _model.extract(params, spectra, mode, caches), caches)
    loss, _ = _model._loss_from_logits(z, np.asarray(labels))
    pattern = b"".join(c[2].tobytes() for c in caches if c[0] in ("relu", "pool"))
    return loss, pattern


def numeric_gradients(params, spectra, labels, step, mode="train"):
    """Central differences of the mean cross-entropy for every weight element.

    When the +step and -step evaluations land on different ReLU/max-pool
    pieces the difference straddles a kink; the step is shrunk tenfold up to
    KINK_RETRIES times. Elements still straddling a kink are returned in the
    second mapping as a boolean mask.
    """
    out, kinks = {}, {}
    for name, w in params.weights.items():
        g = np.zeros_like(w)
        k = np.zeros(w.shape, dtype=bool)
        flat, gflat, kflat = w.reshape(-1), g.reshape(-1), k.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            h = step
            for _ in range(KINK_RETRIES + 1):
                flat[i] = orig + h
                plus, pat_plus = _loss_and_pattern(params, spectra, labels, mode)
                flat[i] = orig - h
                minus, pat_minus = _loss_and_pattern(params, spectra, labels, mode)
                flat[i] = orig
                gflat[i] = (plus - minus) / (2 * h)
                if pat_plus == pat_minus:
                    break
                h /= 10
            else:
                kflat[i] = True
        out[name] = g
        kinks[name] = k
    return out, kinks


def grad_check(arch, input_bands, seed=0, tolerance=1e-4, batch=6, step=1e-5, mode="train"):
    """Compare analytic and numeric gradients of a float64 network.

    Inputs, labels and non-trivial BN affine parameters are drawn from
    ``seed`` so BN scale/shift gradients are exercised away from their
    initial values.
    """
    params = init_params(arch, input_bands, seed, dtype=np.float64)
    gen = _rng.stream(seed, _rng.SYNTH, 99)
    for name, w in params.weights.items():
        if name.endswith(("bias", "beta")):
            w[...] = gen.normal(0.0, 0.1, size=w.shape)
        elif name.endswith("gamma"):
            w[...] = gen.uniform(0.5, 1.5, size=w.shape)
    for name, b in params.buffers.items():
        b[...] = gen.uniform(0.5, 1.5, size=b.shape) if name.endswith("var") else gen.normal(0, 0.1, size=b.shape)
    spectra = gen.normal(size=(batch, input_bands))
    labels = gen.integers(0, arch.class_count, size=batch)

    _, analytic = loss_and_gradients(params.copy(), spectra, labels, mode)
    numeric, kinks = numeric_gradients(params, spectra, labels, step, mode)
    per_tensor = {
        n: float(np.max(relative_error(analytic[n], numeric[n]), where=~kinks[n], initial=0.0))
        for n in params.weights
    }
    worst = max(per_tensor, key=per_tensor.get)
    return GradCheckReport(
        max_rel_error=per_tensor[worst],
        worst_tensor=worst,
        checked=params.parameter_count(),
        passed=per_tensor[worst] < tolerance,
        per_tensor=per_tensor,
        kinks=int(sum(k.sum() for k in kinks.values())),
    )
