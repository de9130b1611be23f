"""Finite-difference verification of reverse-mode gradients."""

import numpy as np

from .errors import NumericFault
from .tensor import DTYPE, Tensor, backward


def _scalar(value, where):
    out = float(value.data) if hasattr(value, "data") else float(value)
    if not np.isfinite(out):
        raise NumericFault(f"non-finite objective during {where}", node="gradcheck")
    return out


def finite_diff_gradcheck(f, params, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    `f` maps the ParamStore to a scalar Tensor and must be deterministic.
    Error per entry is |analytic - numeric| / max(1, |analytic|, |numeric|);
    the maximum over every entry of every parameter is returned.
    """
    loss = f(params)
    _scalar(loss, "analytic pass")
    grads = backward(loss, params)
    worst = 0.0
    for name, p in params.items():
        analytic = grads[name].data.ravel()
        flat = p.data.flat
        for i in range(p.data.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = _scalar(f(params), f"+h probe of {name}")
            flat[i] = orig - h
            minus = _scalar(f(params), f"-h probe of {name}")
            flat[i] = orig
            numeric = (plus - minus) / (2.0 * h)
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]), abs(numeric))
            if err > worst:
                worst = err
    return worst


def layer_family_checks(seed=0, h=1e-5):
    """Max relative gradient error for one small instance of each layer
    family, plus the combined phase-1 objective on a two-item batch at
    d_c = 8. Returns an ordered {family: error} dict.
    """
    from .micro import init_micro_params, micro_forward, micro_losses
    from .nn import (dense, gcn_layer, layer_norm, multi_head_attention,
                     transformer_encode)
    from .params import (ParamStore, add_attention, add_dense, add_layer_norm,
                         add_transformer, glorot_uniform)

    rng = np.random.default_rng(seed)
    checks = {}

    store = ParamStore()
    add_dense(store, "fc", 3, 2, rng)
    x = rng.normal(size=(2, 3))
    checks["dense"] = finite_diff_gradcheck(
        lambda p: dense(p, "fc", Tensor(x)).tanh().sum(), store, h=h)

    store = ParamStore()
    add_layer_norm(store, "ln", 4)
    x = rng.normal(size=(2, 4))
    checks["layer_norm"] = finite_diff_gradcheck(
        lambda p: layer_norm(p, "ln", Tensor(x)).tanh().sum(), store, h=h)

    store = ParamStore()
    add_attention(store, "att", 4, rng)
    x = rng.normal(size=(2, 3, 4))
    pad = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 0.0]], dtype=DTYPE)
    checks["attention"] = finite_diff_gradcheck(
        lambda p: multi_head_attention(p, "att", Tensor(x), Tensor(x), Tensor(x),
                                       heads=2, pad_mask=pad).tanh().sum(),
        store, h=h)

    store = ParamStore()
    add_transformer(store, "tr", 4, rng)
    checks["transformer"] = finite_diff_gradcheck(
        lambda p: transformer_encode(p, "tr", Tensor(x), heads=2,
                                     pad_mask=pad).tanh().sum(),
        store, h=h)

    store = ParamStore()
    store.add("gcn.W", glorot_uniform(rng, 2, 2))
    adj = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
    feats = rng.normal(size=(3, 2))
    checks["gcn"] = finite_diff_gradcheck(
        lambda p: gcn_layer(adj, Tensor(feats), p["gcn.W"]).tanh().sum(),
        store, h=h)

    store = init_micro_params(rng, d_s=6, d_model=4, d_c=8)
    sents = rng.normal(size=(2, 3, 6))
    mask = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 0.0]], dtype=DTYPE)
    y_v = np.array([[1.0, 0.0], [0.0, 1.0]])
    y_d = np.array([[0.0, 1.0], [1.0, 0.0]])

    def micro_objective(p):
        out = micro_forward(p, sents, mask, heads=2)
        return micro_losses(out, y_v, y_d, alpha1=0.1).l_m

    checks["micro_loss"] = finite_diff_gradcheck(micro_objective, store, h=h)
    return checks
