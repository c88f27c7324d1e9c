"""Small model fixtures shared by the unit and acceptance suites."""
import numpy as np

from trajseg.model import ModelConfig, MotionSegModel
from trajseg.tensor import Tensor, gradcheck

TINY = dict(model_dim=8, heads=2, ff_dim=16, num_blocks=1, n_freqs=1, semantic_dim=4)


def tiny_model(variant="full", seed=0, **over):
    return MotionSegModel(ModelConfig.build(variant, **{**TINY, **over}), seed)


def random_inputs(model, n=4, t=6, seed=0, p_valid=0.7):
    """Random features, a validity mask with at least one valid point per track, and S."""
    rng = np.random.default_rng(seed)
    cfg = model.config
    valid = rng.random((n, t)) < p_valid
    valid[np.arange(n), rng.integers(0, t, n)] = True
    x = rng.normal(size=(n, t, cfg.encoder.input_dim))
    x[~valid] = 0.0
    S = rng.normal(size=(n, cfg.decoder.semantic_dim))
    return x, valid, S


def stack_function(model, valid, S, names):
    """f(features, *params) -> probs, for gradcheck over inputs and weights together."""
    def f(x, *ps):
        saved = {k: model.params[k] for k in names}
        try:
            for k, p in zip(names, ps):
                model.params[k] = p
            probs, _ = model.forward(x, valid, S)
        finally:
            model.params.update(saved)
        return probs
    return f


def stack_gradcheck(model, x, valid, S, tol=1e-4, eps=1e-5):
    # eps 1e-6 leaves ~1e-10 of roundoff, which is 1e-4 relative at the 1e-6 floor
    names = sorted(model.params)
    arrays = [x] + [model.params[k].data for k in names]
    return gradcheck(stack_function(model, valid, S, names), arrays, eps=eps, tol=tol)


def perturb_invalid(x, valid, rng, scale=1e3):
    y = x.copy()
    y[~valid] = rng.normal(scale=scale, size=y[~valid].shape)
    return y


def as_tensor(a):
    return a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)
