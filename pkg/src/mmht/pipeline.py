"""Two-phase training and the evaluation harness.

Phase 1 trains the content disentangler on news items alone; phase 2
freezes it and trains the engagement transfer stack plus the detection
heads on top. The rest of the module turns that into k-fold
cross-validation, ablation variants, and sensitivity sweeps.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import (
    DOMAINS,
    K_MAX,
    LABELS,
    build_engagement_graph,
    leave_one_out_context,
    split_folds,
)
from .errors import ConfigurationError, ContractViolation, UndefinedMetricError
from .macro import (
    encode_histories_batched,
    historical_news_aggregate,
    init_macro_params,
    represent_batched,
)
from .metrics import FoldRow, MetricsReport, auc, confusion_metrics
from .micro import (
    VARIANTS,
    adversarial_param_names,
    cross_entropy,
    init_micro_params,
    micro_forward,
    micro_losses,
    microhd_apply_frozen,
)
from .nn import dense, mean_pool, normalized_adjacency
from .optim import AdamState, adam_step
from .params import ParamStore, add_dense
from .probe import fit_linear_probe
from .tensor import DTYPE, Tensor, backward, concat, gather_rows

# rng stage codes keeping every stochastic stage independently seeded
S_MICRO_INIT, S_MICRO_SHUFFLE, S_FULL_INIT, S_FULL_SHUFFLE = range(4)
S_CTX_TRAIN, S_CTX_EVAL = 4, 5

ALPHA1_GRID = (0.1, 0.6, 1.1)
ENGAGEMENT_GRID = (2, 11, 20, 29)
HISTORY_GRID = (2, 11, 20, 29)

FAKE = LABELS.index("fake_news")

# Variants that classify from the content read-out alone (no engagement path)
CONTENT_ONLY_VARIANTS = frozenset({"microhd_only", "microhd_v", "microhd_d"})

# Phase-1 adversary schedule. The encoder descends the combined objective
# throughout; the adversarial heads are held at zero (uniform read-out, no
# scrubbing pressure) for a warm-up, then periodically refit in closed form
# as ridge read-outs of the current features, the strongest linear opponent.
# The domain side starts later and the step size halves once scrubbing
# begins, otherwise the re-routing destroys the predictive paths.
WARM_VERACITY_FRACTION = 1 / 3
WARM_DOMAIN_FRACTION = 4 / 9
ADV_TAU_VERACITY = 1.4
ADV_TAU_DOMAIN = 1.5
ADV_REFIT_PERIOD = 1
ADV_RIDGE_L2 = 1e-2
SCRUB_LR_FACTOR = 0.5
HEAD_SHIFT = 20.0
PHASE1_WEIGHT_DECAY = 0.0
PHASE2_WEIGHT_DECAY = 0.0
# Isotropic jitter added to sentence embeddings during phase-1 steps only;
# cheap data augmentation against per-item memorization on small corpora.
PHASE1_INPUT_NOISE = 0.25


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by both training phases."""

    d_model: int = 48
    d_c: int = 32
    alpha1: float = 0.1
    epochs_micro: int = 20
    epochs_full: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    max_users: int = 20
    max_hist: int = 20
    heads: int = 2
    folds: int = 5
    seed: int = 0
    variant: str = "full"

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.d_c % 4 != 0 or self.d_c < 4:
            raise ConfigurationError(f"d_c must be a positive multiple of 4, got {self.d_c}")
        if self.d_model % self.heads != 0 or (self.d_c // 2) % self.heads != 0:
            raise ConfigurationError("d_model and d_c/2 must be divisible by the head count")
        if self.alpha1 < 0:
            raise ConfigurationError(f"alpha1 must be nonnegative, got {self.alpha1}")
        for name in ("epochs_micro", "epochs_full", "batch_size", "max_users",
                     "max_hist", "heads"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if not 1 <= self.folds <= 5:
            raise ConfigurationError(f"folds must be in 1..5, got {self.folds}")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        return self

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def stage_rng(config, fold, stage):
    return np.random.default_rng((config.seed, fold, stage))


def phase1_kind(variant):
    """Which phase-1 regime a variant needs; several share the full one."""
    return "full" if variant in ("full", "mmht_m", "microhd_only") else variant


def one_hot(indices, width=2):
    out = np.zeros((len(indices), width), dtype=DTYPE)
    out[np.arange(len(indices)), indices] = 1.0
    return out


def featurize(dataset, ids):
    """Dense [N, K_MAX, d_s] sentence batch plus pad mask and index labels."""
    n = len(ids)
    sentences = np.zeros((n, K_MAX, dataset.d_s), dtype=DTYPE)
    mask = np.zeros((n, K_MAX), dtype=DTYPE)
    y_idx = np.zeros(n, dtype=np.int64)
    d_idx = np.zeros(n, dtype=np.int64)
    for i, nid in enumerate(ids):
        item = dataset.news[nid]
        k = min(item.sentences.shape[0], K_MAX)
        sentences[i, :k] = item.sentences[:k]
        mask[i, :k] = 1.0
        y_idx[i] = LABELS.index(item.label)
        d_idx[i] = DOMAINS.index(item.domain)
    return sentences, mask, y_idx, d_idx


# -- phase 1 ------------------------------------------------------------------


@dataclass
class MicroTrainResult:
    params: ParamStore
    trace: list  # epoch-mean combined objective
    variant: str


def _reset_head(params, prefix):
    """Uniform read-out: exact 0.5 probabilities, zero gradient pressure."""
    params[prefix + ".W"].data[:] = 0.0
    params[prefix + ".b"].data[:] = HEAD_SHIFT


def _refit_head(params, prefix, feats, labels, tau):
    """Install the ridge read-out of `labels` from `feats` as the head.

    The positive bias shift keeps both logits in LeakyReLU's identity
    region, so the head's decision function equals the fitted probe's
    (softmax is shift-invariant) scaled by temperature `tau`.
    """
    if len(np.unique(labels)) < 2:
        return
    w, b = fit_linear_probe(feats, labels, l2=ADV_RIDGE_L2)
    params[prefix + ".W"].data[:, 0] = 0.0
    params[prefix + ".W"].data[:, 1] = tau * w
    params[prefix + ".b"].data[0] = HEAD_SHIFT
    params[prefix + ".b"].data[1] = HEAD_SHIFT + tau * b


def train_micro(dataset, train_ids, config, fold=0):
    """Phase 1: fit the content disentangler on the training news.

    The main parameters descend the combined objective. The adversarial
    heads never take gradient steps; after a warm-up they are refit in
    closed form as the best linear read-outs of the current features, so
    the hinge term pressures the encoder against a fully trained opponent
    rather than a lagging one.
    """
    config.validate()
    variant = phase1_kind(config.variant)
    ids = sorted(train_ids)
    if variant == "mmht_sg":
        ids = [nid for nid in ids if dataset.news[nid].domain == DOMAINS[0]]
    if not ids:
        raise ConfigurationError("phase 1 has no training items")
    domains = {dataset.news[nid].domain for nid in ids}
    if variant != "mmht_sg" and len(domains) < len(DOMAINS):
        raise ConfigurationError(
            f"phase 1 needs items from all domains, got only {sorted(domains)}")
    init_rng = stage_rng(config, fold, S_MICRO_INIT)
    params = init_micro_params(init_rng, dataset.d_s, config.d_model, config.d_c)
    adv_names = set(adversarial_param_names(params))
    main_store = ParamStore()
    for name, p in params.items():
        if name not in adv_names:
            main_store.adopt(name, p)
    main_state = AdamState(main_store, lr=config.learning_rate,
                           weight_decay=PHASE1_WEIGHT_DECAY)
    sentences, mask, y_idx, d_idx = featurize(dataset, ids)
    shuffle_rng = stage_rng(config, fold, S_MICRO_SHUFFLE)
    _reset_head(params, "micro.ver.adv")
    _reset_head(params, "micro.dom.adv")
    warm_v = int(config.epochs_micro * WARM_VERACITY_FRACTION + 0.5)
    warm_d = int(config.epochs_micro * WARM_DOMAIN_FRACTION + 0.5)
    refit_veracity = variant != "microhd_v"
    refit_domain = variant not in ("microhd_d", "mmht_sg")
    trace = []
    step = 0
    for epoch in range(config.epochs_micro):
        if epoch == warm_v:
            main_state.lr = config.learning_rate * SCRUB_LR_FACTOR
        order = shuffle_rng.permutation(len(ids))
        total = 0.0
        for start in range(0, len(ids), config.batch_size):
            if epoch >= warm_v and step % ADV_REFIT_PERIOD == 0:
                full = micro_forward(params, sentences, mask,
                                     variant=variant, heads=config.heads)
                if refit_veracity:
                    _refit_head(params, "micro.ver.adv", full.z.data, y_idx,
                                ADV_TAU_VERACITY)
                if refit_domain and epoch >= warm_d:
                    _refit_head(params, "micro.dom.adv", full.s.data, d_idx,
                                ADV_TAU_DOMAIN)
            step += 1
            sel = order[start:start + config.batch_size]
            batch = sentences[sel]
            if PHASE1_INPUT_NOISE:
                batch = batch + shuffle_rng.normal(scale=PHASE1_INPUT_NOISE,
                                                   size=batch.shape)
            out = micro_forward(params, batch, mask[sel],
                                variant=variant, heads=config.heads)
            losses = micro_losses(out, one_hot(y_idx[sel]), one_hot(d_idx[sel]),
                                  config.alpha1, variant=variant)
            grads = backward(losses.l_m, main_store)
            adam_step(main_store, grads, main_state)
            total += float(losses.l_m.data) * len(sel)
        trace.append(total / len(ids))
    return MicroTrainResult(params=params, trace=trace, variant=variant)


def micro_representations(params, dataset, ids, variant="full", heads=2, chunk=256):
    """Frozen per-item feature blocks for linear read-out probing.

    Returns numpy blocks keyed "c", "z", "v", "s", "f" (absent blocks
    omitted) plus "y" and "d" index labels.
    """
    frozen = params if params.is_frozen else params.frozen()
    sentences, mask, y_idx, d_idx = featurize(dataset, ids)
    blocks = {}
    for start in range(0, len(ids), chunk):
        out = micro_forward(frozen, sentences[start:start + chunk],
                            mask[start:start + chunk], variant=variant, heads=heads)
        for name in ("c_prime", "z", "v", "s", "f"):
            t = getattr(out, name)
            if t is not None:
                blocks.setdefault(name, []).append(t.data)
    result = {("c" if k == "c_prime" else k): np.concatenate(v) for k, v in blocks.items()}
    result["y"] = y_idx
    result["d"] = d_idx
    return result


def probe_split(dataset):
    """Deterministic stratified halves of the corpus for read-out probing.

    Alternating picks within each (domain, label) stratum keep both halves
    balanced; the first half fits probes, the second scores them.
    """
    strata = {}
    for nid in sorted(dataset.news):
        item = dataset.news[nid]
        strata.setdefault((item.domain, item.label), []).append(nid)
    fit_ids, eval_ids = [], []
    for key in sorted(strata):
        ids = strata[key]
        fit_ids.extend(ids[0::2])
        eval_ids.extend(ids[1::2])
    return fit_ids, eval_ids


# -- phase 2 ------------------------------------------------------------------


@dataclass
class FrozenContent:
    """Constant per-news blocks computed once from the frozen disentangler."""

    emb: dict  # news_id -> [d_model] pooled projected content (graph features)
    rep: dict  # news_id -> [d_c/2] disentangled content read-out (head input)


def content_representations(frozen_micro, dataset, ids, variant="full", heads=2, chunk=256):
    if not frozen_micro.is_frozen:
        raise ContractViolation("content_representations requires frozen parameters")
    emb, rep = {}, {}
    ids = list(ids)
    w_proj = frozen_micro["micro.proj.W"].data
    b_proj = frozen_micro["micro.proj.b"].data
    for start in range(0, len(ids), chunk):
        part = ids[start:start + chunk]
        sentences, mask, _, _ = featurize(dataset, part)
        d_n = (sentences @ w_proj + b_proj) * mask[:, :, None]
        pooled = d_n.sum(axis=1) / mask.sum(axis=1)[:, None]
        out = micro_forward(frozen_micro, sentences, mask, variant=variant, heads=heads)
        read = out.v if variant == "microhd_d" else concat([out.s, out.f], axis=-1)
        for i, nid in enumerate(part):
            emb[nid] = pooled[i]
            rep[nid] = read.data[i]
    return FrozenContent(emb=emb, rep=rep)


def _add_head_params(store, rng, d_c):
    d_half = d_c // 2
    add_dense(store, "head.adapt", d_half, d_half, rng)  # microhd_d read-out adapter
    add_dense(store, "head.content1", d_half, d_half, rng)
    add_dense(store, "head.content2", d_half, d_half, rng)
    add_dense(store, "head.fuse", 2 * d_half, 2, rng)


def _filter_common(contexts, dataset):
    """Drop cross-domain users from every context (single-domain variant)."""
    common = set(dataset.common_users)
    for ctx in contexts.values():
        ctx.users = [cu for cu in ctx.users if cu.user_id not in common]
    return contexts


def build_contexts(dataset, graph, ids, config, stage, fold):
    contexts = {
        tid: leave_one_out_context(graph, tid, config.max_users, config.max_hist,
                                   seed=(config.seed, fold, stage))
        for tid in ids
    }
    if config.variant == "mmht_sg":
        _filter_common(contexts, dataset)
    return contexts


def _context_arrays(contexts, ids, graph, a_diag, config):
    """Flatten contexts into pair-major index arrays for the batched path.

    Row p of the history arrays is one (target, engaging user) pair; pad
    slots point one past the real rows so a trailing zero row can absorb
    them.
    """
    hist_ids = sorted({nid for tid in ids for cu in contexts[tid].users
                       for nid, _ in cu.history})
    hid_index = {nid: i for i, nid in enumerate(hist_ids)}
    n_pairs = sum(len(contexts[tid].users) for tid in ids)
    rows = max(n_pairs, 1)
    hist_idx = np.full((rows, config.max_hist), len(hist_ids), dtype=np.int64)
    hist_mask = np.zeros((rows, config.max_hist), dtype=DTYPE)
    pair_diag = np.zeros(rows, dtype=DTYPE)
    user_slot = np.full((len(ids), config.max_users), n_pairs, dtype=np.int64)
    user_mask = np.zeros((len(ids), config.max_users), dtype=DTYPE)
    p = 0
    for b, tid in enumerate(ids):
        for s_i, cu in enumerate(contexts[tid].users):
            for h_i, (nid, _) in enumerate(cu.history):
                hist_idx[p, h_i] = hid_index[nid]
                hist_mask[p, h_i] = 1.0
            pair_diag[p] = a_diag[graph.node_index[cu.user_id]]
            user_slot[b, s_i] = p
            user_mask[b, s_i] = 1.0
            p += 1
    return hist_ids, hist_idx, hist_mask, pair_diag, user_slot, user_mask, n_pairs


def _phase2_forward(trainable, frozen_micro, content, graph, a_hat, a_diag,
                    contexts, ids, config):
    """Class distribution [B, 2] for a batch of target news ids.

    Engagement refinement uses the fact that on a bipartite graph with
    only user rows populated, the second graph pass reduces to each
    user's own self-loop weight; this matches the per-target op exactly.
    """
    d_half = config.d_c // 2
    o_in = Tensor(np.stack([content.rep[tid] for tid in ids]))
    if config.variant == "microhd_d":
        o_in = dense(trainable, "head.adapt", o_in)
    o = dense(trainable, "head.content2",
              dense(trainable, "head.content1", o_in).leaky_relu())
    if config.variant in CONTENT_ONLY_VARIANTS:
        u = Tensor(np.zeros((len(ids), d_half), dtype=DTYPE))
    else:
        (hist_ids, hist_idx, hist_mask, pair_diag,
         user_slot, user_mask, n_pairs) = _context_arrays(contexts, ids, graph,
                                                          a_diag, config)
        zero_row = Tensor(np.zeros((1, d_half), dtype=DTYPE))
        if hist_ids:
            aggregates = historical_news_aggregate(graph, content.emb, trainable,
                                                   a_hat=a_hat)
            agg_rows = np.array([aggregates.index[nid] for nid in hist_ids])
            b_rows = gather_rows(aggregates.matrix, agg_rows)
            if config.variant == "mmht_m":
                q_rows = dense(trainable, "macro.adapt", b_rows)
            else:
                q_rows = microhd_apply_frozen(b_rows, frozen_micro,
                                              variant=config.variant,
                                              heads=config.heads)
            q_matrix = concat([q_rows, zero_row], axis=0)
        else:
            q_matrix = zero_row
        if n_pairs:
            q_seq = gather_rows(q_matrix, hist_idx.ravel())
            q_seq = q_seq.reshape(n_pairs, config.max_hist, d_half)
            e = encode_histories_batched(q_seq, hist_mask, trainable,
                                         heads=config.heads)
            refined = ((e * pair_diag[:, None]) @ trainable["macro.gcn2.W"]).leaky_relu()
            refined = concat([refined, zero_row], axis=0)
        else:
            refined = zero_row
        e_seq = gather_rows(refined, user_slot.ravel())
        e_seq = e_seq.reshape(len(ids), config.max_users, d_half)
        u = represent_batched(e_seq, user_mask, trainable, heads=config.heads)
    return dense(trainable, "head.fuse", concat([o, u], axis=-1)).softmax(axis=-1)


@dataclass(eq=False)
class MMHTModel:
    """Frozen phase-1 parameters plus the trained phase-2 stack."""

    micro: ParamStore  # frozen
    trainable: ParamStore
    config: TrainConfig
    micro_trace: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    def merged_store(self):
        merged = ParamStore()
        for name, p in self.micro.items():
            merged.add(name, p.data.copy())
        for name, p in self.trainable.items():
            merged.add(name, p.data.copy())
        return merged


def train_full(dataset, split, frozen_micro, config, micro_trace=None):
    """Phase 2: train engagement transfer and detection heads.

    The disentangler stays byte-identical throughout; this is checked, not
    assumed.
    """
    config.validate()
    if not frozen_micro.is_frozen:
        raise ContractViolation("phase 2 requires a frozen phase-1 store")
    train_ids = sorted(split.train)
    if not train_ids:
        raise ConfigurationError("phase 2 has no training items")
    fold = split.fold_index
    before = frozen_micro.byte_snapshot()
    rng = stage_rng(config, fold, S_FULL_INIT)
    graph = build_engagement_graph(dataset, split, "train")
    a_hat = normalized_adjacency(graph.adjacency())
    a_diag = a_hat.diagonal()
    d_model = frozen_micro["micro.proj.W"].shape[1]
    n_news = len(graph.news_ids)
    gain1 = 1.0 / max(float(a_diag[:n_news].mean()), 1e-6)
    gain2 = 1.0 / max(float(a_diag[n_news:].mean()), 1e-6) if len(a_diag) > n_news else 1.0
    trainable = init_macro_params(rng, d_model, config.d_c,
                                  gcn1_gain=gain1, gcn2_gain=gain2)
    _add_head_params(trainable, rng, config.d_c)
    content = content_representations(frozen_micro, dataset, graph.news_ids,
                                      variant=config.variant, heads=config.heads)
    contexts = None
    if config.variant not in CONTENT_ONLY_VARIANTS:
        contexts = build_contexts(dataset, graph, train_ids, config, S_CTX_TRAIN, fold)
    _, _, y_idx, _ = featurize(dataset, train_ids)
    state = AdamState(trainable, lr=config.learning_rate,
                      weight_decay=PHASE2_WEIGHT_DECAY)
    shuffle_rng = stage_rng(config, fold, S_FULL_SHUFFLE)
    trace = []
    for _ in range(config.epochs_full):
        order = shuffle_rng.permutation(len(train_ids))
        total = 0.0
        for start in range(0, len(train_ids), config.batch_size):
            sel = order[start:start + config.batch_size]
            batch_ids = [train_ids[i] for i in sel]
            probs = _phase2_forward(trainable, frozen_micro, content, graph,
                                    a_hat, a_diag, contexts, batch_ids, config)
            loss = cross_entropy(probs, one_hot(y_idx[sel]))
            grads = backward(loss, trainable)
            adam_step(trainable, grads, state)
            total += float(loss.data) * len(sel)
        trace.append(total / len(train_ids))
    if frozen_micro.byte_snapshot() != before:
        raise ContractViolation("frozen phase-1 parameters changed during phase 2")
    return MMHTModel(micro=frozen_micro, trainable=trainable, config=config,
                     micro_trace=list(micro_trace or []), trace=trace)


# -- inference and evaluation --------------------------------------------------


def predict(model, dataset, graph, target_id, a_hat=None, content=None,
            context_seed=None):
    """Class distribution for one target given an engagement graph."""
    config = model.config
    if a_hat is None:
        a_hat = normalized_adjacency(graph.adjacency())
    if content is None:
        needed = sorted(set(graph.news_ids) | {target_id})
        content = content_representations(model.micro, dataset, needed,
                                          variant=config.variant, heads=config.heads)
    seed = context_seed if context_seed is not None else (config.seed, 0, S_CTX_EVAL)
    contexts = None
    if config.variant not in CONTENT_ONLY_VARIANTS:
        contexts = {target_id: leave_one_out_context(
            graph, target_id, config.max_users, config.max_hist, seed=seed)}
        if config.variant == "mmht_sg":
            _filter_common(contexts, dataset)
    probs = _phase2_forward(model.trainable, model.micro, content, graph,
                            a_hat, a_hat.diagonal(), contexts, [target_id], config)
    return probs.data[0]


def _score_ids(model, dataset, graph, a_hat, content, contexts, ids):
    config = model.config
    a_diag = a_hat.diagonal()
    out = np.zeros((len(ids), 2), dtype=DTYPE)
    for start in range(0, len(ids), config.batch_size):
        part = ids[start:start + config.batch_size]
        probs = _phase2_forward(model.trainable, model.micro, content, graph,
                                a_hat, a_diag, contexts, part, config)
        out[start:start + len(part)] = probs.data
    return out


def evaluate(model, dataset, split):
    """Score the fold's test items; metrics per domain and pooled."""
    config = model.config
    test_ids = sorted(split.test)
    if not test_ids:
        raise ConfigurationError("evaluate on empty test slice")
    graph = build_engagement_graph(dataset, split, "eval")
    a_hat = normalized_adjacency(graph.adjacency())
    content = content_representations(model.micro, dataset, graph.news_ids,
                                      variant=config.variant, heads=config.heads)
    contexts = None
    if config.variant not in CONTENT_ONLY_VARIANTS:
        contexts = build_contexts(dataset, graph, test_ids, config, S_CTX_EVAL,
                                  split.fold_index)
    probs = _score_ids(model, dataset, graph, a_hat, content, contexts, test_ids)
    _, _, y_idx, d_idx = featurize(dataset, test_ids)
    scores = probs[:, FAKE]
    labels = (y_idx == FAKE).astype(np.int64)
    rows = []
    slices = [(name, d_idx == i) for i, name in enumerate(DOMAINS)]
    slices.append(("overall", np.ones(len(test_ids), dtype=bool)))
    for name, keep in slices:
        if not keep.any():
            continue
        cm = confusion_metrics(scores[keep], labels[keep])
        note = ""
        try:
            area = auc(scores[keep], labels[keep])
        except UndefinedMetricError:
            area = None
            note = "auc undefined: single-class slice"
        rows.append(FoldRow(fold=split.fold_index, domain=name, auc=area,
                            note=note, **cm))
    return rows


# -- cross-validation, ablations, sweeps ----------------------------------------


def train_fold(dataset, split, config, micro_cache=None):
    """Both phases for one fold, reusing cached phase-1 results when the
    variant family, fold, objective weight, and seed all match."""
    key = (phase1_kind(config.variant), split.fold_index, config.alpha1, config.seed)
    cache = micro_cache if micro_cache is not None else {}
    if key in cache:
        frozen, micro_trace = cache[key]
    else:
        result = train_micro(dataset, split.train, config, fold=split.fold_index)
        frozen, micro_trace = result.params.frozen(), result.trace
        cache[key] = (frozen, micro_trace)
    return train_full(dataset, split, frozen, config, micro_trace=micro_trace)


def cross_validate(dataset, config, fold_limit=None, micro_cache=None,
                   threads=1, label=""):
    """Train and evaluate each fold; returns the assembled report."""
    config.validate()
    splits = split_folds(dataset, k=config.folds, seed=config.seed)
    if fold_limit is not None:
        splits = splits[:fold_limit]
    cache = micro_cache if micro_cache is not None else {}

    def run(split):
        model = train_fold(dataset, split, config, micro_cache=cache)
        return evaluate(model, dataset, split)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fold_rows = list(pool.map(run, splits))
    else:
        fold_rows = [run(split) for split in splits]
    report = MetricsReport(label=label or config.variant)
    for rows in fold_rows:
        report.rows.extend(rows)
    return report


def run_ablation(dataset, config, variants=VARIANTS, fold_limit=None,
                 micro_cache=None, threads=1):
    """One report per variant over the same folds and seed.

    When at least two folds ran, each ablation report carries a paired
    t-test of its per-fold pooled F1 against the full model's.
    """
    cache = micro_cache if micro_cache is not None else {}
    reports = {}
    for variant in variants:
        cfg = config.replace(variant=variant)
        reports[variant] = cross_validate(dataset, cfg, fold_limit=fold_limit,
                                          micro_cache=cache, threads=threads,
                                          label=variant)
    base = reports.get("full")
    if base is not None:
        for variant, report in reports.items():
            if variant == "full" or len(report.folds()) < 2:
                continue
            report.compare_against(base, domain="overall", metric="f1")
    return reports


SWEEPS = {
    "alpha1": (ALPHA1_GRID, "alpha1"),
    "max_users": (ENGAGEMENT_GRID, "max_users"),
    "max_hist": (HISTORY_GRID, "max_hist"),
}


def sensitivity_sweep(dataset, config, parameter, values=None, fold_limit=None,
                      micro_cache=None, threads=1):
    """Reports keyed by swept value; phase-1 work is shared whenever the
    swept parameter does not touch it."""
    if parameter not in SWEEPS:
        raise ConfigurationError(
            f"unknown sweep {parameter!r}; expected one of {sorted(SWEEPS)}")
    default_values, field_name = SWEEPS[parameter]
    values = tuple(values) if values is not None else default_values
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    cache = micro_cache if micro_cache is not None else {}
    reports = {}
    for value in values:
        cfg = config.replace(**{field_name: value})
        reports[value] = cross_validate(dataset, cfg, fold_limit=fold_limit,
                                        micro_cache=cache, threads=threads,
                                        label=f"{parameter}={value}")
    return reports
