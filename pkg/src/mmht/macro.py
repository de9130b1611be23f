"""Engagement transfer path: graph aggregation of content, per-user
behavior encoding through the frozen content module, a second graph pass,
and the engagement representation head.

Widths: content aggregates stay at d_model; behavior encodings live at
d_c/2 (the frozen module's output width); the head emits d_u = d_c/2.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .micro import microhd_apply_frozen
from .nn import dense, gcn_layer, mean_pool, normalized_adjacency, transformer_encode
from .params import ParamStore, add_dense, add_transformer, glorot_uniform
from .tensor import DTYPE, Tensor, concat, gather_rows, scatter_rows, stack


def init_macro_params(rng, d_model, d_c, gcn1_gain=None, gcn2_gain=None):
    """Fresh "macro." parameter store.

    When a gain is given, the corresponding square graph weight starts at
    a scaled identity instead of a random matrix: each graph pass reads
    features produced by modules trained at unit scale, and the symmetric
    normalization attenuates self-contributions by roughly 1/(degree+1),
    so an identity at the inverse typical attenuation keeps downstream
    consumers (the frozen content module in particular) on the input
    distribution they were trained on.
    """
    d_half = d_c // 2

    def square(width, gain):
        if gain is None:
            return glorot_uniform(rng, width, width)
        return np.eye(width, dtype=DTYPE) * float(gain)

    store = ParamStore()
    store.add("macro.gcn1.W", square(d_model, gcn1_gain))
    add_transformer(store, "macro.hist_tr", d_half, rng)
    store.add("macro.gcn2.W", square(d_half, gcn2_gain))
    add_transformer(store, "macro.eng_tr", d_half, rng)
    add_dense(store, "macro.head1", d_half, d_half, rng)
    add_dense(store, "macro.head2", d_half, d_half, rng)
    add_dense(store, "macro.adapt", d_model, d_half, rng)  # mmht_m content bypass
    return store


@dataclass(eq=False)
class NewsAggregates:
    """Keyed view over the news rows of a graph-convolved feature matrix."""

    matrix: Tensor  # [n_news, d_model], row order = graph.news_ids
    index: dict  # news_id -> row

    def row(self, news_id):
        if news_id not in self.index:
            raise ContractViolation(f"news {news_id!r} has no aggregate")
        return self.matrix[self.index[news_id]]

    def __contains__(self, news_id):
        return news_id in self.index


def historical_news_aggregate(graph, news_embs, params, a_hat=None):
    """One graph-convolution pass over the bipartite graph with user rows
    zeroed; returns the news rows. `news_embs` maps news_id -> [d_model]
    vector (array or Tensor) and must cover every news node.
    """
    missing = [nid for nid in graph.news_ids if nid not in news_embs]
    if missing:
        raise ContractViolation(f"missing content embedding for news {missing[0]!r}")
    rows = [Tensor._lift(news_embs[nid]) for nid in graph.news_ids]
    d_model = params["macro.gcn1.W"].shape[0]
    news_matrix = stack(rows)
    feats = concat(
        [news_matrix, Tensor(np.zeros((len(graph.user_ids), d_model), dtype=DTYPE))], axis=0
    )
    if a_hat is None:
        a_hat = normalized_adjacency(graph.adjacency())
    out = gcn_layer(a_hat, feats, params["macro.gcn1.W"], pre_normalized=True)
    news_rows = out[: len(graph.news_ids)]
    return NewsAggregates(matrix=news_rows, index={nid: i for i, nid in enumerate(graph.news_ids)})


def user_behavior_encode(history, frozen_micro, params, variant="full", heads=2):
    """Ordered history of content aggregates -> one behavior encoding.

    Empty history yields the zero vector. The mmht_m variant skips the
    frozen module and adapts the raw aggregates instead.
    """
    d_half = params["macro.gcn2.W"].shape[0]
    if not history:
        return Tensor(np.zeros(d_half, dtype=DTYPE))
    b = stack([Tensor._lift(h) for h in history])  # [H, d_model]
    if variant == "mmht_m":
        q = dense(params, "macro.adapt", b)
    else:
        q = microhd_apply_frozen(b, frozen_micro, variant=variant, heads=heads)
    encoded = transformer_encode(params, "macro.hist_tr", q, heads=heads)
    return mean_pool(encoded)


def encode_histories_batched(q_seq, pad_mask, params, heads=2):
    """Batched form: [N, H, d_half] gated by pad_mask [N, H] -> [N, d_half].

    Rows whose mask is all zero (no history) come back as zero vectors.
    """
    q_seq = Tensor._lift(q_seq)
    n, _, d_half = q_seq.shape
    counts = np.asarray(pad_mask, dtype=DTYPE).sum(axis=1)
    live = np.flatnonzero(counts > 0)
    if live.size == 0:
        return Tensor(np.zeros((n, d_half), dtype=DTYPE))
    sub = gather_rows(q_seq, live)
    sub_mask = np.asarray(pad_mask, dtype=DTYPE)[live]
    encoded = transformer_encode(params, "macro.hist_tr", sub, heads=heads, pad_mask=sub_mask)
    pooled = mean_pool(encoded, sub_mask)
    return scatter_rows(pooled, live, n)


def user_behavior_refine(graph, encodings, params, a_hat=None):
    """Second graph pass: user rows carry behavior encodings, news rows are
    zero. Returns refined vectors for exactly the keyed users.
    """
    d_half = params["macro.gcn2.W"].shape[0]
    order = list(encodings)
    for uid in order:
        if uid not in graph.news_of_user:
            raise ContractViolation(f"user {uid!r} not in graph")
    n_nodes = graph.num_nodes
    if order:
        values = stack([Tensor._lift(encodings[u]) for u in order])
        index = np.array([graph.node_index[u] for u in order], dtype=np.int64)
        feats = scatter_rows(values, index, n_nodes)
    else:
        feats = Tensor(np.zeros((n_nodes, d_half), dtype=DTYPE))
    if a_hat is None:
        a_hat = normalized_adjacency(graph.adjacency())
    out = gcn_layer(a_hat, feats, params["macro.gcn2.W"], pre_normalized=True)
    return {u: out[graph.node_index[u]] for u in order}


@dataclass(eq=False)
class EngagementRepr:
    u: Tensor  # [d_u]
    user_count: int
    target_news_id: str = None
    history_counts: tuple = None

    @property
    def empty(self):
        return self.user_count == 0


def engagement_represent(refined, params, heads=2, positional=True):
    """Ordered refined encodings -> U via transformer, pooling, and the
    linear -> LeakyReLU -> linear head. Empty input -> zero vector.
    """
    d_u = params["macro.head2.W"].shape[1]
    if not refined:
        return EngagementRepr(u=Tensor(np.zeros(d_u, dtype=DTYPE)), user_count=0)
    seq = stack([Tensor._lift(e) for e in refined])
    k1 = mean_pool(transformer_encode(params, "macro.eng_tr", seq, heads=heads,
                                      positional=positional))
    u = dense(params, "macro.head2", dense(params, "macro.head1", k1).leaky_relu())
    return EngagementRepr(u=u, user_count=len(refined))


def represent_batched(e_seq, pad_mask, params, heads=2):
    """Batched engager aggregation: [B, U, d_half] -> [B, d_u], with
    all-padded rows mapped to zero vectors.
    """
    e_seq = Tensor._lift(e_seq)
    b = e_seq.shape[0]
    d_u = params["macro.head2.W"].shape[1]
    counts = np.asarray(pad_mask, dtype=DTYPE).sum(axis=1)
    live = np.flatnonzero(counts > 0)
    if live.size == 0:
        return Tensor(np.zeros((b, d_u), dtype=DTYPE))
    sub = gather_rows(e_seq, live)
    sub_mask = np.asarray(pad_mask, dtype=DTYPE)[live]
    encoded = transformer_encode(params, "macro.eng_tr", sub, heads=heads, pad_mask=sub_mask)
    k1 = mean_pool(encoded, sub_mask)
    u = dense(params, "macro.head2", dense(params, "macro.head1", k1).leaky_relu())
    return scatter_rows(u, live, b)
