"""Neural layer vocabulary shared by the content and engagement paths.

Dense maps, multi-head attention, a single-block transformer encoder,
graph convolution over a sparse adjacency, masked mean pooling, and the
activation dispatch. Sequence operators accept a single sequence [K, d]
or a batch [B, K, d]; the batched form is the workhorse.
"""

import numpy as np
import scipy.sparse as sparse

from .errors import ConfigurationError, ContractViolation
from .tensor import DTYPE, NEG_INF, Tensor, spmm

# Small enough that pre-affine layer-norm rows keep unit variance to ~1e-12
# for unit-scale inputs; large enough to guard constant rows.
LAYER_NORM_EPS = 1e-12


def dense(params, prefix, x):
    """Affine map x @ W + b using parameters `prefix.W` and `prefix.b`."""
    x = Tensor._lift(x)
    if x.ndim == 1:
        out = x.reshape(1, -1) @ params[prefix + ".W"] + params[prefix + ".b"]
        return out.reshape(out.shape[1])
    return x @ params[prefix + ".W"] + params[prefix + ".b"]


def activation(kind, x, axis=None):
    if kind == "leaky_relu":
        return x.leaky_relu()
    if kind == "sigmoid":
        return x.sigmoid()
    if kind == "tanh":
        return x.tanh()
    if kind == "softmax":
        if axis is None:
            raise ConfigurationError("softmax activation requires an axis")
        return x.softmax(axis=axis)
    raise ConfigurationError(f"unknown activation kind: {kind!r}")


def sinusoidal_encoding(length, dim):
    """Fixed position encodings: sin on even features, cos on odd."""
    pos = np.arange(length, dtype=DTYPE)[:, None]
    idx = np.arange(dim, dtype=DTYPE)[None, :]
    angles = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / dim)
    enc = np.empty((length, dim), dtype=DTYPE)
    enc[:, 0::2] = np.sin(angles[:, 0::2])
    enc[:, 1::2] = np.cos(angles[:, 1::2])
    return enc


def layer_norm_core(x):
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / ((var + LAYER_NORM_EPS) ** 0.5)


def layer_norm(params, prefix, x):
    return layer_norm_core(x) * params[prefix + ".g"] + params[prefix + ".b"]


def _check_pad_mask(pad_mask, batch, length):
    """Validate a keep-mask and return it as a float {0,1} array [batch, length]."""
    mask = np.asarray(pad_mask, dtype=DTYPE)
    if mask.ndim == 1:
        mask = mask[None, :]
    if mask.shape != (batch, length):
        raise ContractViolation(
            f"pad mask shape {mask.shape} does not match sequence ({batch}, {length})"
        )
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ContractViolation("pad mask entries must be 0 or 1")
    if np.any(mask.sum(axis=1) == 0.0):
        raise ContractViolation("all-padded sequence")
    return mask


def multi_head_attention(params, prefix, q_in, k_in, v_in, heads, pad_mask=None):
    """Scaled dot-product attention with per-head width d/heads.

    Inputs are [K, d] or [B, K, d]; `pad_mask` marks keys to keep (1) or
    ignore (0). Masked keys get exactly zero attention weight: the additive
    penalty drives their exponentials below the float64 underflow threshold.
    """
    q_in = Tensor._lift(q_in)
    k_in = Tensor._lift(k_in)
    v_in = Tensor._lift(v_in)
    squeeze = q_in.ndim == 2
    if squeeze:
        q_in = q_in.reshape(1, *q_in.shape)
        k_in = k_in.reshape(1, *k_in.shape)
        v_in = v_in.reshape(1, *v_in.shape)
    b, k, d = q_in.shape
    if d % heads != 0:
        raise ConfigurationError(f"model width {d} not divisible by {heads} heads")
    dh = d // heads

    def split(t):
        return t.reshape(b, k, heads, dh).swapaxes(1, 2)

    q = split(dense(params, prefix + ".q", q_in))
    key = split(dense(params, prefix + ".k", k_in))
    val = split(dense(params, prefix + ".v", v_in))

    scores = (q @ key.swapaxes(2, 3)) / np.sqrt(float(dh))
    if pad_mask is not None:
        mask = _check_pad_mask(pad_mask, b, k)
        scores = scores + ((1.0 - mask) * NEG_INF)[:, None, None, :]
    weights = scores.softmax(axis=-1)
    mixed = (weights @ val).swapaxes(1, 2).reshape(b, k, d)
    out = dense(params, prefix + ".o", mixed)
    return out.reshape(k, d) if squeeze else out


def transformer_encode(params, prefix, seq, heads, pad_mask=None, positional=True):
    """One encoder block: attention and feed-forward sublayers, each with a
    residual connection and layer normalization; sinusoidal encodings first.
    """
    seq = Tensor._lift(seq)
    squeeze = seq.ndim == 2
    if squeeze:
        seq = seq.reshape(1, *seq.shape)
    b, k, d = seq.shape
    if pad_mask is None:
        pad_mask = np.ones((b, k), dtype=DTYPE)
    else:
        pad_mask = _check_pad_mask(pad_mask, b, k)

    h = seq + sinusoidal_encoding(k, d) if positional else seq
    attended = multi_head_attention(params, prefix + ".attn", h, h, h, heads, pad_mask)
    h = layer_norm(params, prefix + ".ln1", h + attended)
    ff = dense(params, prefix + ".ff2", dense(params, prefix + ".ff1", h).relu())
    h = layer_norm(params, prefix + ".ln2", h + ff)
    return h.reshape(k, d) if squeeze else h


def mean_pool(x, pad_mask=None):
    """Mean over unpadded positions; [K, d] -> [d] or [B, K, d] -> [B, d]."""
    x = Tensor._lift(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    b, k, d = x.shape
    if pad_mask is None:
        pooled = x.mean(axis=1)
    else:
        mask = _check_pad_mask(pad_mask, b, k)
        counts = mask.sum(axis=1, keepdims=True)
        pooled = (x * mask[:, :, None]).sum(axis=1) / counts
    return pooled.reshape(d) if squeeze else pooled


def normalized_adjacency(adj):
    """Symmetrically normalized adjacency with self-loops added.

    Input must be square, symmetric, and hold no stored self-loops.
    """
    adj = sparse.csr_matrix(adj, dtype=DTYPE)
    n, m = adj.shape
    if n != m:
        raise ContractViolation(f"adjacency must be square, got {adj.shape}")
    if (adj != adj.T).nnz != 0:
        raise ContractViolation("adjacency must be symmetric")
    if np.any(adj.diagonal() != 0.0):
        raise ContractViolation("self-loops are added internally; store none")
    with_loops = (adj + sparse.identity(n, dtype=DTYPE, format="csr")).tocsr()
    degree = np.asarray(with_loops.sum(axis=1)).ravel()
    inv_root = 1.0 / np.sqrt(degree)
    scale = sparse.diags(inv_root)
    return (scale @ with_loops @ scale).tocsr()


def gcn_layer(adjacency, features, w, pre_normalized=False):
    """Graph convolution H' = LeakyReLU(A_hat @ H @ W).

    `pre_normalized` skips normalization when the caller already holds the
    output of normalized_adjacency (one graph reused across many steps).
    """
    features = Tensor._lift(features)
    if features.ndim != 2 or features.shape[0] != adjacency.shape[0]:
        raise ContractViolation(
            f"feature rows {features.shape} do not match {adjacency.shape[0]} nodes"
        )
    a_hat = adjacency if pre_normalized else normalized_adjacency(adjacency)
    return spmm(a_hat, features @ w).leaky_relu()
