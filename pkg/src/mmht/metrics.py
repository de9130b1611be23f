"""Evaluation metrics and report handling.

Provides the exact pairwise ranking AUC, macro-averaged confusion
metrics, a paired t-test with explicit degenerate branches, and a
fold-by-fold report that renders both as an aligned text table and as
a lossless structured document.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sstats

from .errors import ConfigurationError, UndefinedMetricError

REPORT_MAGIC = "mmht-report 1"


def auc(scores, labels):
    """Probability that a positive outranks a negative, ties counted half.

    Computed from midranks, which matches the all-pairs definition
    exactly: both reduce to (wins + ties / 2) / (n_pos * n_neg) and every
    intermediate value is an exact multiple of one half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ConfigurationError("auc expects matching 1-D scores and labels")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"auc undefined: {n_pos} positive and {n_neg} negative labels"
        )
    ranks = sstats.rankdata(scores, method="average")
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def confusion_metrics(prob_positive, labels, threshold=0.5):
    """Macro precision/recall over both classes and their harmonic F1.

    An item is predicted positive when its score meets the threshold.
    Empty denominators contribute 0 to the macro average rather than
    raising, so single-class slices still produce numbers.
    """
    prob_positive = np.asarray(prob_positive, dtype=np.float64)
    labels = np.asarray(labels)
    if prob_positive.ndim != 1 or prob_positive.shape != labels.shape:
        raise ConfigurationError("confusion_metrics expects matching 1-D arrays")
    if labels.size == 0:
        raise UndefinedMetricError("confusion_metrics on empty slice")
    pred = (prob_positive >= threshold).astype(np.int64)
    truth = labels.astype(np.int64)
    precisions = []
    recalls = []
    for cls in (0, 1):
        tp = int(np.sum((pred == cls) & (truth == cls)))
        fp = int(np.sum((pred == cls) & (truth != cls)))
        fn = int(np.sum((pred != cls) & (truth == cls)))
        precisions.append(tp / (tp + fp) if tp + fp else 0.0)
        recalls.append(tp / (tp + fn) if tp + fn else 0.0)
    macro_p = float(np.mean(precisions))
    macro_r = float(np.mean(recalls))
    f1 = 2.0 * macro_p * macro_r / (macro_p + macro_r) if macro_p + macro_r else 0.0
    return {"precision": macro_p, "recall": macro_r, "f1": f1}


@dataclass
class TTestResult:
    statistic: float
    p_value: float
    n: int
    mean_diff: float
    degenerate: bool = False

    def to_dict(self):
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "n": self.n,
            "mean_diff": self.mean_diff,
            "degenerate": self.degenerate,
        }


def paired_t_test(a, b):
    """Two-sided paired t-test on matched score sequences.

    t = mean(d) / (sd(d, ddof=1) / sqrt(n)), p from the t survival
    function with n - 1 degrees of freedom.  Zero-variance differences
    are flagged degenerate: identical sequences give p = 1, a constant
    nonzero difference gives p = 0 with an infinite statistic.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ConfigurationError("paired_t_test expects matching 1-D sequences")
    n = a.size
    if n < 2:
        raise ConfigurationError("paired_t_test needs at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, n, mean, degenerate=True)
        return TTestResult(math.copysign(math.inf, mean), 0.0, n, mean, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * float(sstats.t.sf(abs(t), n - 1))
    return TTestResult(float(t), p, n, mean, degenerate=False)


# -- fold reports -------------------------------------------------------------

METRIC_COLUMNS = ("precision", "recall", "f1", "auc")


@dataclass
class FoldRow:
    """Metrics for one (fold, domain slice) pair; auc may be absent."""

    fold: int
    domain: str
    precision: float
    recall: float
    f1: float
    auc: float | None = None
    note: str = ""

    def value(self, metric):
        return getattr(self, metric)

    def to_dict(self):
        return {
            "fold": self.fold,
            "domain": self.domain,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc": self.auc,
            "note": self.note,
        }


@dataclass
class MetricsReport:
    """Per-fold, per-domain-slice evaluation results for one model run."""

    label: str = ""
    rows: list = field(default_factory=list)
    comparisons: dict = field(default_factory=dict)

    def add_row(self, row):
        self.rows.append(row)

    def domains(self):
        seen = []
        for row in self.rows:
            if row.domain not in seen:
                seen.append(row.domain)
        return seen

    def folds(self):
        return sorted({row.fold for row in self.rows})

    def slice(self, domain):
        return [row for row in self.rows if row.domain == domain]

    def values(self, domain, metric):
        vals = [row.value(metric) for row in self.slice(domain)]
        return [v for v in vals if v is not None]

    def mean(self, domain, metric):
        vals = self.values(domain, metric)
        if not vals:
            return None
        return float(np.mean(vals))

    def compare_against(self, other, domain="overall", metric="f1"):
        """Paired t-test of this report's per-fold values against another's."""
        mine = self.values(domain, metric)
        theirs = other.values(domain, metric)
        result = paired_t_test(mine, theirs)
        self.comparisons[f"{domain}.{metric}"] = result
        return result

    # -- rendering ------------------------------------------------------------

    def render_table(self):
        header = ["fold", "domain", "precision", "recall", "f1", "auc"]
        body = []
        for row in self.rows:
            body.append([
                str(row.fold),
                row.domain,
                f"{row.precision:.4f}",
                f"{row.recall:.4f}",
                f"{row.f1:.4f}",
                "-" if row.auc is None else f"{row.auc:.4f}",
            ])
        for domain in self.domains():
            cells = ["mean", domain]
            for metric in METRIC_COLUMNS:
                value = self.mean(domain, metric)
                cells.append("-" if value is None else f"{value:.4f}")
            body.append(cells)
        widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
        lines = []
        if self.label:
            lines.append(self.label)
        lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(header)))
        for cells in body:
            lines.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(cells)))
        for key, result in sorted(self.comparisons.items()):
            flag = " (degenerate)" if result.degenerate else ""
            lines.append(
                f"t-test {key}: t={result.statistic:.4f} p={result.p_value:.6f}{flag}"
            )
        notes = [(row.fold, row.domain, row.note) for row in self.rows if row.note]
        for fold, domain, note in notes:
            lines.append(f"note fold {fold} {domain}: {note}")
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return {
            "format": REPORT_MAGIC,
            "label": self.label,
            "rows": [row.to_dict() for row in self.rows],
            "comparisons": {k: v.to_dict() for k, v in sorted(self.comparisons.items())},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def report_from_dict(doc):
    if doc.get("format") != REPORT_MAGIC:
        raise ConfigurationError("not a metrics report document")
    report = MetricsReport(label=doc.get("label", ""))
    for rd in doc["rows"]:
        report.add_row(FoldRow(
            fold=int(rd["fold"]),
            domain=rd["domain"],
            precision=float(rd["precision"]),
            recall=float(rd["recall"]),
            f1=float(rd["f1"]),
            auc=None if rd.get("auc") is None else float(rd["auc"]),
            note=rd.get("note", ""),
        ))
    for key, cd in doc.get("comparisons", {}).items():
        report.comparisons[key] = TTestResult(
            statistic=float(cd["statistic"]),
            p_value=float(cd["p_value"]),
            n=int(cd["n"]),
            mean_diff=float(cd["mean_diff"]),
            degenerate=bool(cd["degenerate"]),
        )
    return report


def parse_report(text):
    return report_from_dict(json.loads(text))
