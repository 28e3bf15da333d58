"""Evaluation: closed-set accuracy, per-source AUROC, and feature geometry.

The OOD scoring rule is deliberately a tagged choice (the detector's ID
probability at the classifier's argmax class by default) and the report
names the rule it used. AUROC is the Mann-Whitney statistic computed by
exact pair counting, with ties worth one half.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .data import EmbeddingBatch
from .heads import OvaOutput
from .linalg import softmax_rows
from .net import ParamState, forward
from .prototypes import PrototypeSet, proto_similarity_profile
from .synthdata import Split

SCORE_RULES = ("ova_id_at_cc_argmax", "max_cc_softmax", "max_ova_id", "feature_norm")


def ood_score(out: OvaOutput, cc_probs: np.ndarray, rule: str = "ova_id_at_cc_argmax",
              feature_norms: np.ndarray | None = None) -> np.ndarray:
    """Per-sample ID-ness score; higher means more in-distribution."""
    if rule == "ova_id_at_cc_argmax":
        pred = np.argmax(cc_probs, axis=1)
        return out.id_probs[np.arange(pred.size), pred]
    if rule == "max_cc_softmax":
        return np.max(cc_probs, axis=1)
    if rule == "max_ova_id":
        return np.max(out.id_probs, axis=1)
    if rule == "feature_norm":
        if feature_norms is None:
            raise ValueError("feature_norm scoring requires feature_norms")
        return np.asarray(feature_norms, dtype=np.float64)
    raise ValueError(f"unknown score rule '{rule}'")


def auroc(id_scores, ood_scores) -> float:
    """Probability that a random ID sample outscores a random OOD sample.

    Exact pair counting: wins count 1, ties 0.5, over all n_id * n_ood pairs.
    """
    a = np.asarray(id_scores, dtype=np.float64)
    b = np.asarray(ood_scores, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("auroc requires non-empty score sets")
    wins = (a[:, None] > b[None, :]).sum()
    ties = (a[:, None] == b[None, :]).sum()
    return float((wins + 0.5 * ties) / (a.size * b.size))


@dataclass(frozen=True)
class CategoryGeometry:
    mean_feature_norm: float
    mean_max_cosine: float
    count: int


def geometry_stats(f_batch: np.ndarray, z_batch: np.ndarray, protos: PrototypeSet,
                   categories: list[str]) -> tuple[dict[str, CategoryGeometry], list[str], np.ndarray]:
    """Per-category mean feature norm and mean best prototype cosine.

    Returns (stats, missing_categories, per_sample) where per_sample rows
    are (feature_norm, max_cosine) for external plotting.
    """
    f = np.asarray(f_batch, dtype=np.float64)
    z = np.asarray(z_batch, dtype=np.float64)
    cats = np.asarray(categories)
    norms = np.linalg.norm(f, axis=1)
    sims = proto_similarity_profile(EmbeddingBatch(z), protos)
    max_cos = sims.max(axis=1)
    stats: dict[str, CategoryGeometry] = {}
    missing: list[str] = []
    for cat in dict.fromkeys(categories):  # stable insertion order
        rows = cats == cat
        n = int(rows.sum())
        if n == 0:
            missing.append(cat)
            continue
        stats[cat] = CategoryGeometry(mean_feature_norm=float(norms[rows].mean()),
                                      mean_max_cosine=float(max_cos[rows].mean()),
                                      count=n)
    per_sample = np.column_stack([norms, max_cos])
    return stats, missing, per_sample


@dataclass
class EvalReport:
    accuracy: float
    score_rule: str
    auroc_per_source: dict[str, float]
    seen_auc: float
    unseen_auc: float
    overall_auc: float
    norm_by_category: dict[str, float]
    cosine_by_category: dict[str, float]
    counts: dict[str, int] = field(default_factory=dict)
    missing_categories: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "score_rule": self.score_rule,
            "auroc_per_source": dict(self.auroc_per_source),
            "seen_auc": self.seen_auc,
            "unseen_auc": self.unseen_auc,
            "overall_auc": self.overall_auc,
            "norm_by_category": dict(self.norm_by_category),
            "cosine_by_category": dict(self.cosine_by_category),
            "counts": dict(self.counts),
            "missing_categories": list(self.missing_categories),
        }

    def csv_rows(self) -> list[tuple[str, str]]:
        """Flat (key, value) rows with round-trippable float formatting."""
        rows = [("score_rule", self.score_rule), ("accuracy", repr(self.accuracy))]
        for name, value in sorted(self.auroc_per_source.items()):
            rows.append((f"auroc/{name}", repr(value)))
        rows.append(("seen_auc", repr(self.seen_auc)))
        rows.append(("unseen_auc", repr(self.unseen_auc)))
        rows.append(("overall_auc", repr(self.overall_auc)))
        for name, value in sorted(self.norm_by_category.items()):
            rows.append((f"mean_feature_norm/{name}", repr(value)))
        for name, value in sorted(self.cosine_by_category.items()):
            rows.append((f"mean_max_cosine/{name}", repr(value)))
        for name, value in sorted(self.counts.items()):
            rows.append((f"count/{name}", str(value)))
        return rows


def _coarse_category(cat: str) -> str:
    if cat.startswith("id:"):
        return "id"
    if cat.startswith("seen:"):
        return "seen_ood"
    return "unseen_ood"


def evaluate(params: ParamState, split: Split, protos: PrototypeSet,
             score_rule: str = "ova_id_at_cc_argmax") -> EvalReport:
    """Score the test split of a scenario against a frozen parameter state."""
    if split.test_x.shape[0] == 0:
        raise ValueError("test split is empty")
    out = forward(params, split.test_x)
    cc_probs = softmax_rows(out.cc_logits)
    cats = np.asarray(split.test_category)

    id_rows = np.array([c.startswith("id:") for c in split.test_category])
    true_class = np.array([int(c.split(":")[1]) if c.startswith("id:") else -1
                           for c in split.test_category])
    pred = np.argmax(cc_probs, axis=1)
    if not id_rows.any():
        raise ValueError("test split has no in-distribution rows")
    accuracy = float((pred[id_rows] == true_class[id_rows]).mean())

    scores = ood_score(out.ova, cc_probs, rule=score_rule, feature_norms=out.feature_norms)
    id_scores = scores[id_rows]
    sources: dict[str, float] = {}
    seen_rows = np.array([c.startswith("seen:") for c in split.test_category])
    if seen_rows.any():
        sources["seen"] = auroc(id_scores, scores[seen_rows])
    unseen_names = sorted({c for c in split.test_category if c.startswith("unseen:")},
                          key=lambda c: int(c.split(":")[1]))
    for name in unseen_names:
        rows = cats == name
        sources[f"unseen_{name.split(':')[1]}"] = auroc(id_scores, scores[rows])

    unseen_values = [v for k, v in sources.items() if k.startswith("unseen_")]
    unseen_auc = float(np.mean(unseen_values)) if unseen_values else float("nan")
    seen_auc = sources.get("seen", float("nan"))
    overall = float(np.mean(list(sources.values()))) if sources else float("nan")

    coarse = [_coarse_category(c) for c in split.test_category]
    geo, missing, _ = geometry_stats(out.features, out.embeddings, protos, coarse)
    counts = {cat: g.count for cat, g in geo.items()}
    return EvalReport(
        accuracy=accuracy, score_rule=score_rule, auroc_per_source=sources,
        seen_auc=seen_auc, unseen_auc=unseen_auc, overall_auc=overall,
        norm_by_category={c: g.mean_feature_norm for c, g in geo.items()},
        cosine_by_category={c: g.mean_max_cosine for c, g in geo.items()},
        counts=counts, missing_categories=missing,
    )


def write_eval_json(report: EvalReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)


def write_eval_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        writer.writerows(report.csv_rows())


def write_embedding_dump(params: ParamState, split: Split, path) -> None:
    """Per-test-sample rows (id, category, feature_norm, z_0..z_{d-1})."""
    out = forward(params, split.test_x)
    dim = out.embeddings.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "category", "feature_norm"] + [f"z_{j}" for j in range(dim)])
        for i in range(split.test_x.shape[0]):
            writer.writerow([int(split.test_ids[i]), split.test_category[i],
                             repr(float(out.feature_norms[i]))]
                            + [repr(float(v)) for v in out.embeddings[i]])
