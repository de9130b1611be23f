"""Synthetic corpus with planted veracity and domain signals.

Sentence embeddings are built from four disjoint coordinate blocks:

  - veracity-shared: sign flips with the label, identical across domains;
  - veracity-domain: sign flips with the label, direction negated between
    domains, so reading it requires domain-conditional logic;
  - domain-only: sign flips with the domain, label-independent;
  - noise: carries no signal.

Isotropic Gaussian noise at `noise_scale` is added over the full vector.
Engagements are Bernoulli draws whose rate is boosted when a user's
archetype matches the news label (gullible <-> fake, skeptical <-> true),
so engager composition carries veracity signal.
"""

from dataclasses import dataclass

import numpy as np

from .data import DOMAINS, K_MAX, Dataset, NewsItem, UserRecord
from .errors import ConfigurationError
from .tensor import DTYPE

AMP_VERACITY_SHARED = 0.05
AMP_VERACITY_DOMAIN = 1.25
AMP_DOMAIN_ONLY = 0.5
TIMESTAMP_BASE = 1_700_000_000
TIMESTAMP_SPAN = 10_000_000


@dataclass(frozen=True)
class SyntheticConfig:
    news_per_domain: int = 200
    user_count: int = 120
    common_user_fraction: float = 0.9
    sentences_per_item: int = 6
    d_s: int = 64
    veracity_shared_width: int = 8
    veracity_domain_width: int = 8
    domain_only_width: int = 8
    noise_width: int = 8
    noise_scale: float = 0.5
    engagement_rate: float = 0.12
    engagement_strength: float = 0.7
    seed: int = 0

    def validate(self):
        widths = (
            self.veracity_shared_width,
            self.veracity_domain_width,
            self.domain_only_width,
            self.noise_width,
        )
        if any(w < 1 for w in widths) or sum(widths) > self.d_s:
            raise ConfigurationError(
                f"subspace widths {widths} must be positive and sum to <= d_s {self.d_s}"
            )
        if not 0.0 <= self.common_user_fraction <= 1.0:
            raise ConfigurationError("common-user fraction must lie in [0, 1]")
        if not 1 <= self.sentences_per_item <= K_MAX:
            raise ConfigurationError(f"sentences per item must lie in 1..{K_MAX}")
        if self.news_per_domain < 1 or self.user_count < 0:
            raise ConfigurationError("news_per_domain must be >= 1 and user_count >= 0")
        if not 0.0 <= self.engagement_strength <= 1.0:
            raise ConfigurationError("engagement strength must lie in [0, 1]")
        if not 0.0 < self.engagement_rate <= 0.5:
            raise ConfigurationError("engagement rate must lie in (0, 0.5]")


def _unit(rng, width):
    vec = rng.normal(size=width)
    return vec / np.linalg.norm(vec)


def generate_synthetic(config):
    """Deterministic dataset from a SyntheticConfig.

    The returned Dataset carries an extra `archetypes` dict mapping
    user_id -> {"gullible", "skeptical"} for diagnostics; serialization
    ignores it.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)

    w_vs = config.veracity_shared_width
    w_vd = config.veracity_domain_width
    w_do = config.domain_only_width
    blocks = {
        "vs": slice(0, w_vs),
        "vd": slice(w_vs, w_vs + w_vd),
        "do": slice(w_vs + w_vd, w_vs + w_vd + w_do),
    }
    u_vs = _unit(rng, w_vs)
    u_vd = _unit(rng, w_vd)  # negated for the second domain
    u_do = _unit(rng, w_do)

    news = {}
    for domain_idx, domain in enumerate(DOMAINS):
        tag = "pol" if domain == "political" else "ent"
        domain_sign = 1.0 if domain_idx == 0 else -1.0
        for i in range(config.news_per_domain):
            label = "true_news" if i % 2 == 0 else "fake_news"
            label_sign = 1.0 if label == "fake_news" else -1.0
            mean = np.zeros(config.d_s, dtype=DTYPE)
            mean[blocks["vs"]] = label_sign * AMP_VERACITY_SHARED * u_vs
            mean[blocks["vd"]] = label_sign * domain_sign * AMP_VERACITY_DOMAIN * u_vd
            mean[blocks["do"]] = domain_sign * AMP_DOMAIN_ONLY * u_do
            noise = rng.normal(
                scale=config.noise_scale, size=(config.sentences_per_item, config.d_s)
            )
            item = NewsItem(
                id=f"{tag}-{i:04d}",
                domain=domain,
                label=label,
                sentences=(mean[None, :] + noise).astype(DTYPE),
            )
            news[item.id] = item

    n_common = int(round(config.user_count * config.common_user_fraction))
    news_by_domain = {
        domain: sorted(nid for nid, item in news.items() if item.domain == domain)
        for domain in DOMAINS
    }
    users = {}
    archetypes = {}
    for u in range(config.user_count):
        user_id = f"u-{u:04d}"
        archetype = "gullible" if rng.random() < 0.5 else "skeptical"
        archetypes[user_id] = archetype
        if u < n_common:
            eligible = news_by_domain[DOMAINS[0]] + news_by_domain[DOMAINS[1]]
        else:
            home = DOMAINS[(u - n_common) % 2]
            eligible = news_by_domain[home]
        engagements = []
        for nid in eligible:
            label = news[nid].label
            match = (archetype == "gullible") == (label == "fake_news")
            factor = 1.0 + config.engagement_strength if match else 1.0 - config.engagement_strength
            p = min(1.0, config.engagement_rate * factor)
            if rng.random() < p:
                ts = TIMESTAMP_BASE + int(rng.integers(0, TIMESTAMP_SPAN))
                engagements.append((nid, ts))
        users[user_id] = UserRecord(user_id=user_id, engagements=engagements)

    dataset = Dataset(news, users, config.d_s)
    dataset.archetypes = archetypes
    return dataset
