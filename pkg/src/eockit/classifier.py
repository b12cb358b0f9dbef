"""Cohort assignment: rule-based membership and length-of-stay clustering."""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from . import filterlang
from .model import EpisodeOfCare, Patient, ValidationError


class CohortError(ValueError):
    pass


@dataclass(frozen=True)
class CohortDef:
    cohort_id: str
    name: str
    kind: str  # RULE | CLUSTER
    rule_text: Optional[str] = None
    cluster_k: Optional[int] = None
    cluster_seed: int = 0

    def __post_init__(self):
        if self.kind == "RULE":
            if not self.rule_text:
                raise CohortError("RULE cohorts require rule_text")
            filterlang.parse(self.rule_text)  # must parse up front
        elif self.kind == "CLUSTER":
            if self.cluster_k is None or self.cluster_k < 2:
                raise CohortError("CLUSTER cohorts require k >= 2")
        else:
            raise CohortError(f"unknown cohort kind {self.kind!r}")


@dataclass(frozen=True)
class CohortAssignment:
    cohort_id: str
    members: tuple  # episode ids, sorted
    centroid: Optional[float] = None  # LOS days, CLUSTER only


def assign_rule_cohort(cdef: CohortDef, episodes: Sequence[EpisodeOfCare],
                       patients: Optional[Dict[str, Patient]] = None) -> CohortAssignment:
    if cdef.kind != "RULE":
        raise CohortError("assign_rule_cohort needs a RULE cohort")
    ast = filterlang.parse(cdef.rule_text)
    patients = patients or {}
    members = [e.episode_id for e in episodes
               if filterlang.evaluate(ast, e, patients.get(e.patient_id))]
    return CohortAssignment(cdef.cohort_id, tuple(sorted(members)))


def kmeans_1d(points: Sequence[float], k: int, seed: int,
              max_iter: int = 100) -> List[int]:
    """Seeded k-means++ with Lloyd iterations on 1-D data.

    Returns a label per input point; labels are renumbered so centroids
    ascend. Nearest-centroid ties break toward the lower-indexed centroid.
    """
    n = len(points)
    if k < 1 or n < k:
        raise CohortError(f"need at least k={k} points, got {n}")
    rng = random.Random(seed)
    centroids = [points[rng.randrange(n)]]
    while len(centroids) < k:
        d2 = [min((p - c) ** 2 for c in centroids) for p in points]
        total = sum(d2)
        if total == 0:
            # all remaining points coincide with a centroid; spread over distinct values
            remaining = sorted(set(points) - set(centroids))
            centroids.append(remaining[0] if remaining else centroids[0])
            continue
        r = rng.random() * total
        acc = 0.0
        for p, w in zip(points, d2):
            acc += w
            if acc >= r:
                centroids.append(p)
                break

    def nearest(p):
        best, best_d = 0, abs(p - centroids[0])
        for idx in range(1, len(centroids)):
            d = abs(p - centroids[idx])
            if d < best_d:
                best, best_d = idx, d
        return best

    labels = [nearest(p) for p in points]
    for _ in range(max_iter):
        for idx in range(k):
            cluster = [p for p, l in zip(points, labels) if l == idx]
            if cluster:
                centroids[idx] = sum(cluster) / len(cluster)
        new_labels = [nearest(p) for p in points]
        if new_labels == labels:
            break
        labels = new_labels
    # relabel ascending by centroid; empty clusters sink to the end
    order = sorted(range(k), key=lambda i: (not any(l == i for l in labels) and 1 or 0,
                                            centroids[i]))
    remap = {old: new for new, old in enumerate(order)}
    return [remap[l] for l in labels]


def cluster_by_los(cdef: CohortDef,
                   episodes: Sequence[EpisodeOfCare]) -> List[CohortAssignment]:
    """k-means clustering on closed episodes' length of stay."""
    if cdef.kind != "CLUSTER":
        raise CohortError("cluster_by_los needs a CLUSTER cohort")
    closed = sorted((e for e in episodes
                     if not e.open and e.derived.length_of_stay_days is not None),
                    key=lambda e: e.episode_id)
    k = cdef.cluster_k
    if len(closed) < k:
        raise CohortError(f"need at least {k} closed episodes, got {len(closed)}")
    points = [e.derived.length_of_stay_days for e in closed]
    labels = kmeans_1d(points, k, cdef.cluster_seed)
    out = []
    for idx in range(k):
        members = tuple(sorted(e.episode_id for e, l in zip(closed, labels) if l == idx))
        values = [p for p, l in zip(points, labels) if l == idx]
        centroid = sum(values) / len(values) if values else None
        out.append(CohortAssignment(f"{cdef.cohort_id}-{idx}", members, centroid))
    return out


def cohort_summary(assignment: CohortAssignment,
                   episodes: Sequence[EpisodeOfCare]) -> dict:
    """Count, mean LOS, mortality rate and mean contribution margin of members."""
    by_id = {e.episode_id: e for e in episodes}
    members = [by_id[eid] for eid in assignment.members if eid in by_id]
    summary = {"cohort_id": assignment.cohort_id, "count": len(members),
               "mean_los_days": None, "mortality_rate": None,
               "mean_contribution_margin": None}
    if not members:
        return summary
    los = [e.derived.length_of_stay_days for e in members
           if e.derived.length_of_stay_days is not None]
    if los:
        summary["mean_los_days"] = sum(los) / len(los)
    summary["mortality_rate"] = sum(1 for e in members if e.derived.died) / len(members)
    summary["mean_contribution_margin"] = float(
        sum(e.derived.contribution_margin for e in members) / len(members))
    return summary
