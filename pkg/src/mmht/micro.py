"""Content disentangling: enhancement, the veracity disentangler, and the
domain disentangler stacked on the veracity-relevant output.

The dimension chain is d_s -> d_model (projection) -> d_c (enhanced
content) -> d_c/2 (veracity split) -> d_c/4 (domain split); d_c must be
divisible by 4. Sequence inputs may be a single item [K, d_s] or a batch
[B, K, d_s].
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .nn import dense, mean_pool, transformer_encode
from .params import ParamStore, add_dense, add_transformer, glorot_uniform
from .tensor import DTYPE, NEG_INF, Tensor, concat

VARIANTS = ("full", "mmht_sg", "mmht_m", "microhd_only", "microhd_v", "microhd_d")

# Probabilities are clamped here before logs in every loss.
PROB_FLOOR = 1e-12


def _add_decoder(store, prefix, d_h, rng):
    for part in ("q", "k", "v", "p"):
        add_dense(store, f"{prefix}.{part}", d_h, d_h, rng)


def _add_disentangler(store, prefix, d_in, d_h, rng, dec_names):
    add_dense(store, prefix + ".enc", d_in, d_h, rng)
    _add_decoder(store, f"{prefix}.{dec_names[0]}", d_h, rng)
    _add_decoder(store, f"{prefix}.{dec_names[1]}", d_h, rng)
    add_dense(store, prefix + ".cls", d_h, 2, rng)
    add_dense(store, prefix + ".adv", d_h, 2, rng)


def init_micro_params(rng, d_s, d_model, d_c):
    """Fresh parameter store under the "micro." namespace.

    Every family is always initialized, in a fixed order, so parameter
    layouts agree across variants; variants simply leave parts unused.
    """
    if d_c % 4 != 0:
        raise ConfigurationError(f"d_c must be divisible by 4, got {d_c}")
    if d_model % 2 != 0:
        raise ConfigurationError(f"d_model must be even for 2-head attention, got {d_model}")
    store = ParamStore()
    add_dense(store, "micro.proj", d_s, d_model, rng)
    add_transformer(store, "micro.mask_tr", d_model, rng)
    add_dense(store, "micro.mask1", d_model, d_model, rng)
    add_dense(store, "micro.mask2", d_model, d_model, rng)
    store.add("micro.coatt.w_aff", glorot_uniform(rng, d_model, d_model))
    store.add("micro.coatt.W1", glorot_uniform(rng, d_model, d_model))
    store.add("micro.coatt.W2", glorot_uniform(rng, d_model, d_model))
    store.add("micro.coatt.w_m", glorot_uniform(rng, d_model, 1, shape=(1, d_model)))
    store.add("micro.coatt.w_b", glorot_uniform(rng, d_model, 1, shape=(1, d_model)))
    add_dense(store, "micro.coatt.out", 2 * d_model, d_c, rng)
    add_dense(store, "micro.resid", d_model, d_c, rng)
    _add_disentangler(store, "micro.ver", d_c, d_c // 2, rng, ("zdec", "vdec"))
    _add_disentangler(store, "micro.dom", d_c // 2, d_c // 4, rng, ("sdec", "fdec"))
    add_dense(store, "micro.vadapt", d_c, d_c // 2, rng)  # microhd_v bypass adapter
    return store


def micro_dims(params):
    """(d_s, d_model, d_c) as recorded by the parameter shapes."""
    d_s, d_model = params["micro.proj.W"].shape
    d_c = params["micro.resid.W"].shape[1]
    return d_s, d_model, d_c


def _promote(x, expect_ndim):
    x = Tensor._lift(x)
    if x.ndim == expect_ndim - 1:
        return x.reshape(1, *x.shape), True
    if x.ndim != expect_ndim:
        raise ContractViolation(f"expected {expect_ndim - 1}or{expect_ndim}-d input, got {x.shape}")
    return x, False


def co_attention(params, m_feat, b_feat, pad_mask=None):
    """Affinity-guided summary of the two masked content views.

    Affinity F = tanh(M W_aff B^T) zeroed on padded pairs; per-view
    position scores are projected through shared W1/W2 maps; the attended
    summaries are concatenated and mapped to d_c.
    """
    m_feat, squeeze = _promote(m_feat, 3)
    b_feat, _ = _promote(b_feat, 3)
    if m_feat.shape != b_feat.shape:
        raise ContractViolation(f"view shapes differ: {m_feat.shape} vs {b_feat.shape}")
    bsz, k, _ = m_feat.shape
    if pad_mask is None:
        mask = np.ones((bsz, k), dtype=DTYPE)
    else:
        mask = np.asarray(pad_mask, dtype=DTYPE)
        if mask.ndim == 1:
            mask = mask[None, :]
    w_aff = params["micro.coatt.w_aff"]
    w1 = params["micro.coatt.W1"]
    w2 = params["micro.coatt.W2"]
    m_t = m_feat.swapaxes(1, 2)  # [B, d, K]
    b_t = b_feat.swapaxes(1, 2)
    affinity = ((m_feat @ w_aff) @ b_t).tanh() * (mask[:, :, None] * mask[:, None, :])
    h_m = (w1 @ m_t + w2 @ (b_t @ affinity.swapaxes(1, 2))).tanh()  # [B, a, K]
    h_b = (w2 @ b_t + w1 @ (m_t @ affinity)).tanh()
    neg = (1.0 - mask) * NEG_INF
    a_m = ((params["micro.coatt.w_m"] @ h_m).reshape(bsz, k) + neg).softmax(axis=-1)
    a_b = ((params["micro.coatt.w_b"] @ h_b).reshape(bsz, k) + neg).softmax(axis=-1)
    m_hat = (a_m.reshape(bsz, 1, k) @ m_feat).reshape(bsz, m_feat.shape[2])
    b_hat = (a_b.reshape(bsz, 1, k) @ b_feat).reshape(bsz, b_feat.shape[2])
    c = dense(params, "micro.coatt.out", concat([m_hat, b_hat], axis=-1))
    return c.reshape(c.shape[1]) if squeeze else c


def _enhance_from_dn(params, d_n, mask, heads):
    encoded = transformer_encode(params, "micro.mask_tr", d_n, heads=heads, pad_mask=mask)
    gate = dense(params, "micro.mask2", dense(params, "micro.mask1", encoded).leaky_relu()).sigmoid()
    d_m = d_n * gate
    d_b = d_n * (1.0 - gate)
    c = co_attention(params, d_m, d_b, mask)
    return c + dense(params, "micro.resid", mean_pool(d_n, mask))


def content_enhance(params, sentences, pad_mask=None, heads=2):
    """Sentences [.., K, d_s] -> enhanced content vector(s) [.., d_c]."""
    sentences, squeeze = _promote(sentences, 3)
    bsz, k, _ = sentences.shape
    if pad_mask is None:
        mask = np.ones((bsz, k), dtype=DTYPE)
    else:
        mask = np.asarray(pad_mask, dtype=DTYPE)
        if mask.ndim == 1:
            mask = mask[None, :]
        if np.any(mask.sum(axis=1) == 0):
            raise ContractViolation("all-padded input")
    d_n = dense(params, "micro.proj", sentences) * mask[:, :, None]
    c_prime = _enhance_from_dn(params, d_n, mask, heads)
    return c_prime.reshape(c_prime.shape[1]) if squeeze else c_prime


def _attn_decode(params, prefix, h):
    """Eq-style gated decoder: feature-wise attention over h's coordinates
    followed by a sigmoid gate multiplied back onto h.
    """
    bsz, d_h = h.shape
    q = dense(params, prefix + ".q", h).reshape(bsz, d_h, 1)
    k = dense(params, prefix + ".k", h).reshape(bsz, 1, d_h)
    v = dense(params, prefix + ".v", h).reshape(bsz, d_h, 1)
    attn = ((q @ k) / np.sqrt(float(d_h))).softmax(axis=-1)
    p1 = (attn @ v).reshape(bsz, d_h)
    gate = dense(params, prefix + ".p", p1).leaky_relu().sigmoid()
    return gate * h


def _disentangle(params, prefix, x, dec_names):
    h = dense(params, prefix + ".enc", x).leaky_relu()
    gated_adv = _attn_decode(params, f"{prefix}.{dec_names[0]}", h)
    gated_pred = _attn_decode(params, f"{prefix}.{dec_names[1]}", h)
    y_hat = dense(params, prefix + ".cls", gated_pred).leaky_relu().softmax(axis=-1)
    y_tilde = dense(params, prefix + ".adv", gated_adv).leaky_relu().softmax(axis=-1)
    return gated_adv, gated_pred, y_hat, y_tilde


def veracity_disentangle(params, c_prime):
    """c' [.., d_c] -> (z, v, y_hat, y_tilde) with z, v of width d_c/2."""
    c_prime, squeeze = _promote(c_prime, 2)
    d_c = params["micro.ver.enc.W"].shape[0]
    if c_prime.shape[-1] != d_c:
        raise ContractViolation(f"expected width {d_c}, got {c_prime.shape[-1]}")
    z, v, y_hat, y_tilde = _disentangle(params, "micro.ver", c_prime, ("zdec", "vdec"))
    if squeeze:
        return tuple(t.reshape(t.shape[1]) for t in (z, v, y_hat, y_tilde))
    return z, v, y_hat, y_tilde


def domain_disentangle(params, v):
    """v [.., d_c/2] -> (s, f, y_hat, y_tilde) with s, f of width d_c/4."""
    v, squeeze = _promote(v, 2)
    d_half = params["micro.dom.enc.W"].shape[0]
    if v.shape[-1] != d_half:
        raise ContractViolation(f"expected width {d_half}, got {v.shape[-1]}")
    s, f, y_hat, y_tilde = _disentangle(params, "micro.dom", v, ("sdec", "fdec"))
    if squeeze:
        return tuple(t.reshape(t.shape[1]) for t in (s, f, y_hat, y_tilde))
    return s, f, y_hat, y_tilde


@dataclass(eq=False)
class DisentangleOutput:
    c_prime: Tensor
    z: Tensor  # veracity-irrelevant (None for microhd_v)
    v: Tensor  # veracity-relevant (adapter output for microhd_v)
    yv_hat: Tensor
    yv_tilde: Tensor
    s: Tensor  # domain-shared (None for microhd_d)
    f: Tensor  # domain-specific (None for microhd_d)
    yd_hat: Tensor
    yd_tilde: Tensor


def _forward_from_dn(params, d_n, mask, variant, heads):
    c_prime = _enhance_from_dn(params, d_n, mask, heads)
    z = v = yv_hat = yv_tilde = None
    s = f = yd_hat = yd_tilde = None
    if variant == "microhd_v":
        v = dense(params, "micro.vadapt", c_prime)
    else:
        z, v, yv_hat, yv_tilde = _disentangle(params, "micro.ver", c_prime, ("zdec", "vdec"))
    if variant != "microhd_d":
        s, f, yd_hat, yd_tilde = _disentangle(params, "micro.dom", v, ("sdec", "fdec"))
    return DisentangleOutput(
        c_prime=c_prime, z=z, v=v, yv_hat=yv_hat, yv_tilde=yv_tilde,
        s=s, f=f, yd_hat=yd_hat, yd_tilde=yd_tilde,
    )


def micro_forward(params, sentences, pad_mask=None, variant="full", heads=2):
    """Full module pass over a batch of sentence sequences."""
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}")
    sentences, _ = _promote(sentences, 3)
    bsz, k, _ = sentences.shape
    if pad_mask is None:
        mask = np.ones((bsz, k), dtype=DTYPE)
    else:
        mask = np.asarray(pad_mask, dtype=DTYPE)
        if mask.ndim == 1:
            mask = mask[None, :]
        if np.any(mask.sum(axis=1) == 0):
            raise ContractViolation("all-padded input")
    d_n = dense(params, "micro.proj", sentences) * mask[:, :, None]
    return _forward_from_dn(params, d_n, mask, variant, heads)


@dataclass(eq=False)
class MicroLosses:
    l_r_v: Tensor
    l_p_v: Tensor
    l_a_v: Tensor
    l_v: Tensor
    l_r_d: Tensor
    l_p_d: Tensor
    l_a_d: Tensor
    l_d: Tensor
    l_m: Tensor
    alpha1: float


def cross_entropy(probs, onehot):
    return -(onehot * probs.clamp(PROB_FLOOR, 1.0).log()).sum(axis=-1).mean()


def adversarial_hinge(probs, onehot):
    return (1.0 + (onehot * probs.clamp(PROB_FLOOR, 1.0).log()).sum(axis=-1)).relu().mean()


def micro_losses(out, y_veracity, y_domain, alpha1, variant="full"):
    """Reconstruction, prediction, and adversarial hinge losses composed
    into the module objective. `y_veracity`/`y_domain` are one-hot [B, 2].
    """
    zero = Tensor(0.0)
    y_veracity = np.asarray(y_veracity, dtype=DTYPE)
    y_domain = np.asarray(y_domain, dtype=DTYPE)
    if variant == "microhd_v":
        l_r_v = l_p_v = l_a_v = zero
    else:
        recon_v = concat([out.z, out.v], axis=-1) - out.c_prime
        l_r_v = (recon_v * recon_v).mean()
        l_p_v = cross_entropy(out.yv_hat, y_veracity)
        l_a_v = adversarial_hinge(out.yv_tilde, y_veracity)
    l_v = l_r_v + l_p_v + l_a_v
    if variant == "microhd_d":
        l_r_d = l_p_d = l_a_d = zero
    else:
        recon_d = concat([out.s, out.f], axis=-1) - out.v
        l_r_d = (recon_d * recon_d).mean()
        l_p_d = cross_entropy(out.yd_hat, y_domain)
        l_a_d = adversarial_hinge(out.yd_tilde, y_domain)
    l_d = l_r_d + l_p_d + l_a_d
    l_m = l_v + alpha1 * l_d
    return MicroLosses(
        l_r_v=l_r_v, l_p_v=l_p_v, l_a_v=l_a_v, l_v=l_v,
        l_r_d=l_r_d, l_p_d=l_p_d, l_a_d=l_a_d, l_d=l_d,
        l_m=l_m, alpha1=alpha1,
    )


def adversarial_param_names(params):
    """Names of the two adversarial heads (trained on their own objective)."""
    return [n for n in params.names() if ".ver.adv." in n or ".dom.adv." in n]


def microhd_apply_frozen(b, params, variant="full", heads=2):
    """Frozen-module distillation of content vectors.

    `b` is one content vector [d_model] or a batch [M, d_model], already
    in the module's post-projection space; each is run as a length-1
    sentence sequence from the enhancement stage on. Returns
    concat(s, f) (width d_c/2), or v for the microhd_d variant.
    Gradients flow through activations into `b` but never into the
    frozen parameters.
    """
    if not params.is_frozen:
        raise ContractViolation("microhd_apply_frozen requires frozen parameters")
    b, squeeze = _promote(b, 2)
    d_model = params["micro.proj.W"].shape[1]
    if b.shape[-1] != d_model:
        raise ContractViolation(f"expected content width {d_model}, got {b.shape[-1]}")
    bsz = b.shape[0]
    mask = np.ones((bsz, 1), dtype=DTYPE)
    out = _forward_from_dn(params, b.reshape(bsz, 1, d_model), mask, variant, heads)
    q = out.v if variant == "microhd_d" else concat([out.s, out.f], axis=-1)
    return q.reshape(q.shape[1]) if squeeze else q
