"""Cluster consolidation and the whole curation pass over a store."""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Mapping, Sequence
from typing import Any, Optional

from pydantic import BaseModel, Field

from tmem import errors
from tmem.curation.clustering import check_threshold, cluster_embeddings
from tmem.curation.generalize import EntityLexicon, generalize_description, violations
from tmem.extraction.tips import build_tip
from tmem.gateway import Gateway, Role
from tmem.models import Cluster, Granularity, Tip, TipCategory, make_id
from tmem.store import MemoryStore, StoreState

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.85
MAX_ITERATIONS = 10


def precedence_key(tip: Tip) -> tuple[Any, ...]:
    """Smaller wins: success over failure, recovery over prevention, then
    higher priority, newer, smaller id."""
    return (
        not tip.from_success,
        tip.category is not TipCategory.RECOVERY,
        tip.priority.rank,
        -tip.created_at.timestamp(),
        tip.id,
    )


def cluster_id(member_ids: Sequence[str]) -> str:
    return make_id("cluster", *sorted(member_ids))


def describe(tip: Tip) -> str:
    """The description a tip is clustered by."""
    return tip.generalized_description or tip.index_description


def cluster_tips(tips: Sequence[Tip], threshold: float = DEFAULT_THRESHOLD) -> list[Cluster]:
    """Average-linkage clusters over the tips' description embeddings.

    Until consolidation names a cluster, its description is the one of its
    smallest-id member. Tips of different granularity are never grouped.
    """
    check_threshold(threshold)
    out: list[Cluster] = []
    for granularity in Granularity:
        same = sorted((t for t in tips if t.granularity is granularity), key=lambda t: t.id)
        by_id = {t.id: t for t in same}
        for group in cluster_embeddings([(t.id, t.index_embedding) for t in same], threshold):
            head = by_id[group[0]]
            out.append(
                Cluster(
                    id=cluster_id(group),
                    canonical_description=describe(head),
                    canonical_embedding=head.index_embedding,
                    member_tip_ids=tuple(group),
                )
            )
    return out


class ConflictResolution(BaseModel):
    tip_ids: list[str]
    winner: str
    note: str = ""


class ConsolidationResult(BaseModel):
    cluster: Cluster
    canonical_description: str
    merged_tips: list[Tip]
    conflicts: list[ConflictResolution] = Field(default_factory=list)


class ClusterOutcome(BaseModel):
    cluster_id: str
    granularity: Granularity
    member_tip_ids: list[str]
    merged_tip_ids: list[str]
    canonical_description: str
    conflicts: list[ConflictResolution] = Field(default_factory=list)


class ClusterFailure(BaseModel):
    member_tip_ids: list[str]
    error: str


class ConsolidationReport(BaseModel):
    threshold: float
    tips_before: int = 0
    tips_after: int = 0
    generalized: int = 0
    clusters_formed: int = 0
    conflicts_resolved: int = 0
    iterations: int = 0
    revision_before: int = 0
    revision_after: int = 0
    clusters: list[ClusterOutcome] = Field(default_factory=list)
    failures: list[ClusterFailure] = Field(default_factory=list)


def _shared(values: Sequence[Optional[str]]) -> Optional[str]:
    return values[0] if len(set(values)) == 1 else None


def _member_view(tip: Tip) -> dict[str, Any]:
    return {
        "id": tip.id,
        "category": tip.category.value,
        "priority": tip.priority.value,
        "source_outcome": tip.source_outcome,
        "description": describe(tip),
        "content": tip.content,
        "purpose": tip.purpose,
        "steps": list(tip.steps),
        "trigger": tip.trigger,
        "negative_example": tip.negative_example,
    }


def _canonical(text: str, gateway: Gateway, lexicon: EntityLexicon) -> str:
    text = text.strip()
    return text if not violations(text, lexicon) else generalize_description(text, gateway, lexicon)


def consolidate_cluster(
    members: Sequence[Tip], gateway: Gateway, lexicon: EntityLexicon = EntityLexicon()
) -> ConsolidationResult:
    """Deduplicate, resolve conflicts and synthesize one cluster's tips.

    Singletons pass through unchanged. Otherwise every member ends up in
    exactly one merged tip, so the merged tips carry exactly the members'
    source trajectory ids (with multiplicity).
    """
    if not members:
        raise errors.ConsolidationError("cannot consolidate an empty cluster")
    members = sorted(members, key=lambda t: t.id)
    granularities = {t.granularity for t in members}
    if len(granularities) != 1:
        raise errors.ConsolidationError("cluster mixes task-level and subtask-level tips")
    granularity = granularities.pop()
    cid = cluster_id([t.id for t in members])

    if len(members) == 1:
        tip = members[0]
        canonical = describe(tip)
        cluster = Cluster(
            id=cid,
            canonical_description=canonical,
            canonical_embedding=tip.index_embedding if canonical == tip.index_description else gateway.embed(canonical),
            member_tip_ids=(tip.id,),
        )
        return ConsolidationResult(cluster=cluster, canonical_description=canonical, merged_tips=[tip])

    by_id = {t.id: t for t in members}

    def check(payload: Mapping[str, Any]) -> None:
        listed = [i for m in payload["merged_tips"] for i in m["merged_from"]]
        unknown = sorted(set(listed) - set(by_id))
        if unknown:
            raise ValueError(f"merged_from names tips outside the cluster: {unknown}")
        missing = sorted(set(by_id) - set(listed))
        if missing:
            raise ValueError(f"tips {missing} are not covered by any merged tip")

    payload = gateway.ask(
        Role.CONSOLIDATOR,
        {"cluster_id": cid, "members": [_member_view(t) for t in members]},
        check,
    )
    bodies = payload["merged_tips"]

    # each member belongs to the first merged tip that lists it
    owner: dict[str, int] = {}
    for b_idx, body in enumerate(bodies):
        for tid in body["merged_from"]:
            if tid not in by_id:
                raise errors.ConsolidationError(f"consolidator referenced unknown tip {tid}")
            owner.setdefault(tid, b_idx)
    uncovered = sorted(set(by_id) - set(owner))
    if uncovered:
        raise errors.ProvenanceLoss(f"consolidation would drop tips {uncovered}")

    conflicts: list[ConflictResolution] = []
    for group in payload.get("conflicts") or []:
        ids = sorted({i for i in group["tip_ids"] if i in by_id})
        if len(ids) < 2:
            continue
        winner = min((by_id[i] for i in ids), key=precedence_key).id
        conflicts.append(ConflictResolution(tip_ids=ids, winner=winner, note=group.get("note", "")))
        # a merged tip built only from losers carries overruled guidance
        for b_idx in {owner[i] for i in ids} - {owner[winner]}:
            group_members = [i for i, b in owner.items() if b == b_idx]
            if all(i in ids for i in group_members):
                for i in group_members:
                    owner[i] = owner[winner]

    canonical = _canonical(payload["canonical_description"], gateway, lexicon)
    created = max(t.created_at for t in members)
    merged: list[Tip] = []
    for b_idx, body in enumerate(bodies):
        group = [by_id[i] for i in sorted(owner) if owner[i] == b_idx]
        if not group:
            continue
        base = min(group, key=precedence_key)
        sources = sorted(s for t in group for s in t.source_trajectory_ids)
        merged.append(
            build_tip(
                gateway,
                tip_id=make_id("merged", cid, str(b_idx)),
                body=body,
                category=base.category,
                priority=base.priority,
                granularity=granularity,
                index_description=canonical if granularity is Granularity.SUBTASK else base.index_description,
                source_ids=sources,
                source_outcome=base.source_outcome,
                created_at=created,
                application_context=_shared([t.application_context for t in group]),
                task_category=_shared([t.task_category for t in group]),
                subtask_description=canonical if granularity is Granularity.SUBTASK else None,
                generalized_description=canonical,
            )
        )

    before = Counter(s for t in members for s in t.source_trajectory_ids)
    after = Counter(s for t in merged for s in t.source_trajectory_ids)
    if before != after:
        raise errors.ProvenanceLoss(f"cluster {cid}: provenance changed from {dict(before)} to {dict(after)}")

    cluster = Cluster(
        id=cid,
        canonical_description=canonical,
        canonical_embedding=gateway.embed(canonical),
        member_tip_ids=tuple(sorted(t.id for t in merged)),
    )
    return ConsolidationResult(cluster=cluster, canonical_description=canonical, merged_tips=merged, conflicts=conflicts)


def _generalize_pending(store: MemoryStore, gateway: Gateway, lexicon: EntityLexicon) -> int:
    state = store.snapshot()
    pending = [t for t in state.tips.values() if t.granularity is Granularity.SUBTASK and not t.generalized_description]
    if not pending:
        return 0
    cache: dict[str, str] = {}
    updated = []
    for tip in sorted(pending, key=lambda t: t.id):
        source = tip.subtask_description or tip.index_description
        if source not in cache:
            cache[source] = generalize_description(source, gateway, lexicon)
        g = cache[source]
        updated.append(
            tip.model_copy(
                update={
                    "generalized_description": g,
                    "index_description": g,
                    "index_embedding": gateway.embed(g),
                }
            )
        )
    store.replace_tips([t.id for t in pending], updated)
    return len(updated)


def _groups(state: StoreState, granularity: Granularity, threshold: float) -> list[list[str]]:
    tips = sorted((t for t in state.tips.values() if t.granularity is granularity), key=lambda t: t.id)
    return cluster_embeddings([(t.id, t.index_embedding) for t in tips], threshold)


def _is_settled(state: StoreState, group: Sequence[str]) -> bool:
    owners = {state.cluster_of.get(t) for t in group}
    if len(owners) != 1 or None in owners:
        return False
    (cid,) = owners
    return set(state.clusters[cid].member_tip_ids) == set(group)


def run_consolidation(
    store: MemoryStore,
    gateway: Gateway,
    threshold: float = DEFAULT_THRESHOLD,
    *,
    cluster_task_tips: bool = True,
    max_iterations: int = MAX_ITERATIONS,
) -> ConsolidationReport:
    """Generalize, cluster and consolidate until nothing changes.

    Each cluster commits through one atomic ``replace_tips``. A cluster that
    fails is left as it was and listed in the report. Clusters that already
    match a stored cluster are skipped, so a second run is a no-op.
    """
    check_threshold(threshold)
    start = store.snapshot()
    report = ConsolidationReport(
        threshold=threshold, tips_before=len(start.tips), revision_before=start.revision
    )
    if not start.tips:
        report.revision_after = start.revision
        return report

    lexicon = EntityLexicon.from_store(start)
    report.generalized = _generalize_pending(store, gateway, lexicon)

    granularities = [Granularity.SUBTASK] + ([Granularity.TASK] if cluster_task_tips else [])
    failed: set[frozenset[str]] = set()
    for _ in range(max_iterations):
        report.iterations += 1
        state = store.snapshot()
        committed = 0
        for granularity in granularities:
            for group in _groups(state, granularity, threshold):
                key = frozenset(group)
                if key in failed or _is_settled(state, group):
                    continue
                members = [state.tips[i] for i in group]
                try:
                    result = consolidate_cluster(members, gateway, lexicon)
                    new_ids = {t.id for t in result.merged_tips}
                    store.replace_tips(
                        [i for i in group if i not in new_ids],
                        [t for t in result.merged_tips if t.id not in state.tips],
                        [result.cluster],
                    )
                except (errors.GatewayError, errors.StoreError, errors.ConsolidationError, errors.ValidationError) as exc:
                    log.warning("consolidation of %s failed: %s", group, exc)
                    failed.add(key)
                    report.failures.append(ClusterFailure(member_tip_ids=list(group), error=f"{type(exc).__name__}: {exc}"))
                    continue
                committed += 1
                report.clusters_formed += 1
                report.conflicts_resolved += len(result.conflicts)
                report.clusters.append(
                    ClusterOutcome(
                        cluster_id=result.cluster.id,
                        granularity=granularity,
                        member_tip_ids=list(group),
                        merged_tip_ids=sorted(new_ids),
                        canonical_description=result.canonical_description,
                        conflicts=result.conflicts,
                    )
                )
        if not committed:
            break
    else:
        log.warning("consolidation did not settle after %d iterations", max_iterations)

    end = store.snapshot()
    report.tips_after = len(end.tips)
    report.revision_after = end.revision
    return report
