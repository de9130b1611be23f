"""Dataset model: news items, user records, engagement graphs, stratified
folds, and leave-one-out engagement contexts.

News and engagement files are line-delimited JSON. The news file opens with
a header record declaring the sentence embedding dimension, e.g.
``{"d_s": 64}``; every following line is one news record. The engagements
file has no header.
"""

import json
import zlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse

from .errors import ConfigurationError, ContractViolation, DataError
from .tensor import DTYPE

DOMAINS = ("political", "entertainment")
LABELS = ("true_news", "fake_news")

# Sentence sequences are truncated/padded to this length when batched.
K_MAX = 16


@dataclass(eq=False)
class NewsItem:
    id: str
    domain: str
    label: str
    sentences: np.ndarray  # [k, d_s], k >= 1

    def validate(self, d_s):
        if self.domain not in DOMAINS:
            raise DataError(f"news {self.id!r}: unknown domain {self.domain!r}")
        if self.label not in LABELS:
            raise DataError(f"news {self.id!r}: unknown label {self.label!r}")
        if self.sentences.ndim != 2 or self.sentences.shape[0] < 1:
            raise DataError(f"news {self.id!r}: needs at least one sentence vector")
        if self.sentences.shape[1] != d_s:
            raise DataError(
                f"news {self.id!r}: sentence dimension {self.sentences.shape[1]} != d_s {d_s}"
            )


@dataclass(eq=False)
class UserRecord:
    user_id: str
    engagements: list  # [(news_id, timestamp)], sorted by (timestamp, news_id)

    def sort(self):
        self.engagements.sort(key=lambda e: (e[1], e[0]))


class Dataset:
    """Cross-referenced news items and user records."""

    def __init__(self, news, users, d_s):
        self.news = news  # dict id -> NewsItem, insertion ordered
        self.users = users  # dict user_id -> UserRecord
        self.d_s = d_s
        for user in users.values():
            user.sort()

    @property
    def news_ids(self):
        return list(self.news)

    def domains_of_user(self, user_id):
        return {self.news[nid].domain for nid, _ in self.users[user_id].engagements}

    @property
    def common_users(self):
        """Users whose engagements span both domains."""
        return [u for u in self.users if len(self.domains_of_user(u)) == 2]

    def label_counts(self):
        counts = {label: 0 for label in LABELS}
        for item in self.news.values():
            counts[item.label] += 1
        return counts


def _parse_line(path, line_no, line, what):
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} line {line_no}: unparseable {what} record: {exc}") from None
    if not isinstance(record, dict):
        raise DataError(f"{path} line {line_no}: {what} record must be an object")
    return record


def load_dataset(news_path, engagements_path):
    """Load and cross-reference a news file and an engagements file.

    Raises DataError naming the offending line for malformed records,
    duplicate news ids, and engagements that reference unknown news.
    """
    news = {}
    d_s = None
    with open(news_path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            record = _parse_line(news_path, line_no, line, "news")
            if d_s is None:
                if set(record) != {"d_s"} or not isinstance(record["d_s"], int):
                    raise DataError(f"{news_path} line {line_no}: expected header {{\"d_s\": int}}")
                d_s = record["d_s"]
                continue
            missing = {"id", "domain", "label", "sentences"} - set(record)
            if missing:
                raise DataError(f"{news_path} line {line_no}: missing fields {sorted(missing)}")
            item = NewsItem(
                id=record["id"],
                domain=record["domain"],
                label=record["label"],
                sentences=np.array(record["sentences"], dtype=DTYPE, ndmin=2),
            )
            if item.id in news:
                raise DataError(f"{news_path} line {line_no}: duplicate news id {item.id!r}")
            item.validate(d_s)
            news[item.id] = item
    if d_s is None:
        raise DataError(f"{news_path}: empty file, header record required")

    users = {}
    with open(engagements_path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            record = _parse_line(engagements_path, line_no, line, "engagement")
            missing = {"user_id", "news_id", "timestamp"} - set(record)
            if missing:
                raise DataError(
                    f"{engagements_path} line {line_no}: missing fields {sorted(missing)}"
                )
            if record["news_id"] not in news:
                raise DataError(
                    f"{engagements_path} line {line_no}: engagement references "
                    f"unknown news id {record['news_id']!r}"
                )
            if not isinstance(record["timestamp"], int):
                raise DataError(f"{engagements_path} line {line_no}: timestamp must be an integer")
            user = users.setdefault(record["user_id"], UserRecord(record["user_id"], []))
            user.engagements.append((record["news_id"], record["timestamp"]))
    return Dataset(news, users, d_s)


def write_dataset(dataset, news_path, engagements_path):
    """Serialize a dataset in the loader's format, deterministically."""
    with open(news_path, "w", encoding="utf-8") as handle:
        handle.write(json.dumps({"d_s": dataset.d_s}) + "\n")
        for item in dataset.news.values():
            record = {
                "id": item.id,
                "domain": item.domain,
                "label": item.label,
                "sentences": [[float(v) for v in row] for row in item.sentences],
            }
            handle.write(json.dumps(record, sort_keys=True) + "\n")
    with open(engagements_path, "w", encoding="utf-8") as handle:
        for user_id in sorted(dataset.users):
            for news_id, ts in dataset.users[user_id].engagements:
                record = {"user_id": user_id, "news_id": news_id, "timestamp": ts}
                handle.write(json.dumps(record, sort_keys=True) + "\n")


@dataclass
class DatasetSplit:
    fold_index: int
    seed: int
    train: list
    validation: list
    test: list


def split_folds(dataset, k=5, seed=0):
    """Stratified folds: each (domain, label) stratum is shuffled once and
    cut into 10 deciles; fold f tests on decile f and validates on decile
    f+5, so test sets are disjoint across the k folds.
    """
    if k < 1 or k > 5:
        raise ConfigurationError(f"fold count must be in 1..5, got {k}")
    for label in LABELS:
        have = sum(1 for item in dataset.news.values() if item.label == label)
        if 0 < have < k:
            raise ConfigurationError(f"too few items of class {label!r}: {have} < {k}")
    strata = {}
    for item in dataset.news.values():
        strata.setdefault((item.domain, item.label), []).append(item.id)
    rng = np.random.default_rng(seed)
    deciles = {key: [[] for _ in range(10)] for key in strata}
    for key in sorted(strata):
        ids = sorted(strata[key])
        rng.shuffle(ids)
        for part_idx, part in enumerate(np.array_split(ids, 10)):
            deciles[key][part_idx] = list(part)
    folds = []
    for f in range(k):
        test, val, train = [], [], []
        for key in sorted(strata):
            for part_idx, part in enumerate(deciles[key]):
                if part_idx == f:
                    test.extend(part)
                elif part_idx == (f + 5) % 10:
                    val.extend(part)
                else:
                    train.extend(part)
        folds.append(DatasetSplit(fold_index=f, seed=seed, train=train, validation=val, test=test))
    return folds


class EngagementGraph:
    """Bipartite news-user graph restricted to one phase of a split.

    Node order for the sparse adjacency is sorted news ids followed by
    sorted user ids.
    """

    def __init__(self, news_ids, edges):
        self.news_ids = sorted(news_ids)
        by_news = {nid: [] for nid in self.news_ids}
        by_user = {}
        seen = {}
        for user_id, news_id, ts in edges:
            if news_id not in by_news:
                raise ContractViolation(f"edge references news {news_id!r} outside the graph")
            key = (user_id, news_id)
            if key in seen:  # repeat engagement collapses to the earliest edge
                if ts < seen[key]:
                    seen[key] = ts
                continue
            seen[key] = ts
        for (user_id, news_id), ts in seen.items():
            by_news[news_id].append((user_id, ts))
            by_user.setdefault(user_id, []).append((news_id, ts))
        self.user_ids = sorted(by_user)
        for lst in by_news.values():
            lst.sort(key=lambda e: (e[1], e[0]))
        for lst in by_user.values():
            lst.sort(key=lambda e: (e[1], e[0]))
        self.users_of_news = by_news
        self.news_of_user = by_user
        self.node_index = {nid: i for i, nid in enumerate(self.news_ids)}
        offset = len(self.news_ids)
        for i, uid in enumerate(self.user_ids):
            self.node_index[uid] = offset + i

    @property
    def num_nodes(self):
        return len(self.news_ids) + len(self.user_ids)

    @property
    def edge_count(self):
        return sum(len(v) for v in self.users_of_news.values())

    def adjacency(self):
        """Symmetric 0/1 adjacency without self-loops."""
        rows, cols = [], []
        for news_id, engagers in self.users_of_news.items():
            n_idx = self.node_index[news_id]
            for user_id, _ in engagers:
                u_idx = self.node_index[user_id]
                rows.extend((n_idx, u_idx))
                cols.extend((u_idx, n_idx))
        data = np.ones(len(rows), dtype=DTYPE)
        n = self.num_nodes
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))


def build_engagement_graph(dataset, split, phase):
    """Graph over the news ids visible in a phase: training news for
    "train"; every news id in the split for "eval", since engagement
    records carry no labels and scoring a target only ever reads its
    leave-one-out context.
    """
    if phase == "train":
        visible = set(split.train)
    elif phase == "eval":
        visible = set(split.train) | set(split.validation) | set(split.test)
    else:
        raise ConfigurationError(f"phase must be 'train' or 'eval', got {phase!r}")
    edges = []
    for user in dataset.users.values():
        for news_id, ts in user.engagements:
            if news_id in visible:
                edges.append((user.user_id, news_id, ts))
    return EngagementGraph(visible, edges)


@dataclass
class ContextUser:
    user_id: str
    timestamp: int  # when this user engaged the target
    history: list  # [(news_id, timestamp)] excluding the target, time-ordered


@dataclass
class EngagementContext:
    target_news_id: str
    users: list  # [ContextUser], ordered by (timestamp, user_id)

    @property
    def is_empty(self):
        return not self.users


def _subsample(items, cap, rng):
    if len(items) <= cap:
        return list(items)
    picked = rng.choice(len(items), size=cap, replace=False)
    return [items[i] for i in sorted(picked)]


def leave_one_out_context(graph, target_news_id, max_users, max_hist, seed):
    """Engaging users of the target and their other engagements.

    The target never appears in any history. Oversized user or history
    lists are sampled uniformly with a seed derived from the target id,
    then re-sorted chronologically.
    """
    if target_news_id not in graph.users_of_news:
        raise ContractViolation(f"target news {target_news_id!r} not in graph")
    base = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    target_key = zlib.crc32(target_news_id.encode("utf-8"))
    engagers = graph.users_of_news[target_news_id]
    rng = np.random.default_rng(base + (target_key,))
    engagers = _subsample(engagers, max_users, rng)
    engagers.sort(key=lambda e: (e[1], e[0]))
    users = []
    for user_id, ts in engagers:
        history = [e for e in graph.news_of_user[user_id] if e[0] != target_news_id]
        user_rng = np.random.default_rng(base + (target_key, zlib.crc32(user_id.encode("utf-8"))))
        history = _subsample(history, max_hist, user_rng)
        history.sort(key=lambda e: (e[1], e[0]))
        users.append(ContextUser(user_id=user_id, timestamp=ts, history=history))
    return EngagementContext(target_news_id=target_news_id, users=users)
