from __future__ import annotations

import random
from collections import Counter
from typing import Any

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import heuristic_gateway, make_tip, random_vector, store_with_trajectories
from oracles import ref_average_linkage
from tmem import errors
from tmem.curation import (
    EntityLexicon,
    check_threshold,
    cluster_embeddings,
    cluster_tips,
    consolidate_cluster,
    generalize_description,
    precedence_key,
    repair,
    run_consolidation,
    violations,
)
from tmem.gateway.heuristic import HeuristicResponder
from tmem.gateway import Gateway, HashingEmbedder, LlmRequest, Role, ScriptedProvider
from tmem.models import Embedding, Granularity, Priority, TipCategory

SPOTIFY = EntityLexicon(frozenset({"spotify"}))


# -- generalization --------------------------------------------------------------------------


@pytest.mark.parametrize(
    "raw,expected",
    [
        ("Retrieve Spotify password for john.doe@email.com", "Retrieve service account credentials"),
        ("Retrieve credentials in order to check subscription status", "Retrieve service account credentials"),
        ("Mark task complete", "Mark task complete"),
    ],
)
def test_generalize_examples(raw, expected):
    assert generalize_description(raw, heuristic_gateway(), SPOTIFY) == expected


def test_violations_name_each_problem():
    found = violations("Get order 12345 from Spotify for a@b.co so that it ships", SPOTIFY)
    text = " ".join(found)
    for fragment in ("a@b.co", "Spotify", "12345", "'Get'", "so that"):
        assert fragment in text


def test_generalize_rejects_empty():
    with pytest.raises(errors.EmptyText):
        generalize_description("  ", heuristic_gateway())


class _Answers:
    """Responder that replays fixed generalizer answers and records requests."""

    def __init__(self, *answers: str):
        self.answers = list(answers)
        self.requests: list[LlmRequest] = []

    def __call__(self, request: LlmRequest) -> dict[str, Any]:
        self.requests.append(request)
        return {"description": self.answers[len(self.requests) - 1]}


def _gw(responder) -> Gateway:
    return Gateway(ScriptedProvider(responder=responder), HashingEmbedder(256))


def test_violation_is_sent_back_once_with_the_problems():
    answers = _Answers("Log into Spotify", "Authenticate with the service")
    assert generalize_description("Log into Spotify", _gw(answers), SPOTIFY) == "Authenticate with the service"
    assert len(answers.requests) == 2
    feedback = answers.requests[1].inputs["feedback"]
    assert "Spotify" in feedback and "authenticate" in feedback


def test_second_violation_is_repaired_mechanically():
    answers = _Answers("Fetch Spotify playlist", "Fetch Spotify playlist for jane@x.org")
    out = generalize_description("whatever", _gw(answers), SPOTIFY)
    assert len(answers.requests) == 2
    assert out == "Retrieve playlist"
    assert violations(out, SPOTIFY) == []


@settings(max_examples=200, deadline=None)
@given(
    st.lists(
        st.sampled_from(
            "Get Fetch log into Spotify spotify's order 12345 id-998 for the with a@b.io so that in order to "
            "check playlist credentials Retrieve count artists".split(" ")
        ),
        min_size=1,
        max_size=12,
    )
)
def test_repair_always_clears_violations(words):
    out = repair(" ".join(words), SPOTIFY)
    assert out
    assert violations(out, SPOTIFY) == []


def test_lexicon_from_store_collects_app_hints():
    store = store_with_trajectories(["t1"])
    store.put_tips([make_tip("a", "open playlist", context="spotify")])
    assert "spotify" in EntityLexicon.from_store(store.snapshot()).names


# -- clustering ------------------------------------------------------------------------------


def _items(vectors: list[Embedding]) -> list[tuple[str, Embedding]]:
    return [(f"tip-{i:02d}", v) for i, v in enumerate(vectors)]


_small_vectors = st.lists(
    st.lists(st.integers(-3, 3), min_size=4, max_size=4).filter(any), min_size=1, max_size=9
)


@settings(max_examples=300, deadline=None)
@given(_small_vectors, st.sampled_from([0.3, 0.5, 0.7, 0.85, 0.9, 1.0]))
def test_clustering_matches_reference(raw, threshold):
    # small integer vectors give many exact ties and boundary cases
    vectors = [Embedding.normalized([float(x) for x in v]) for v in raw]
    items = _items(vectors)
    got = {frozenset(g) for g in cluster_embeddings(items, threshold)}
    want = ref_average_linkage([i for i, _ in items], [v.vector for v in vectors], threshold)
    assert got == want


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_clustering_matches_reference_on_random_unit_vectors(seed, n):
    rng = random.Random(seed)
    base = [random_vector(rng, 8) for _ in range(3)]
    # perturb a few centers so clusters exist at useful thresholds
    vectors = [
        Embedding.normalized([x + rng.gauss(0, 0.3) for x in base[rng.randrange(3)].vector]) for _ in range(n)
    ]
    items = _items(vectors)
    threshold = rng.choice([0.5, 0.7, 0.85])
    got = {frozenset(g) for g in cluster_embeddings(items, threshold)}
    assert got == ref_average_linkage([i for i, _ in items], [v.vector for v in vectors], threshold)


def test_clusters_partition_the_input():
    rng = random.Random(7)
    items = _items([random_vector(rng, 8) for _ in range(20)])
    groups = cluster_embeddings(items, 0.3)
    flat = [i for g in groups for i in g]
    assert sorted(flat) == sorted(i for i, _ in items)
    assert all(g == sorted(g) for g in groups)


@pytest.mark.parametrize("bad", [0.0, -0.1, 1.0 + 1e-12, 1.5, float("nan")])
def test_threshold_bounds(bad):
    with pytest.raises(errors.ConfigError):
        check_threshold(bad)
    with pytest.raises(errors.ConfigError):
        cluster_embeddings([], bad)


def test_threshold_one_merges_only_duplicates():
    e = HashingEmbedder(256)
    items = [
        ("a", e.embed("Retrieve service account credentials")),
        ("b", e.embed("Retrieve service account credentials")),
        ("c", e.embed("Retrieve account credentials")),
    ]
    assert cluster_embeddings(items, 1.0) == [["a", "b"], ["c"]]


def test_frozen_pairs_cluster_by_threshold():
    e = HashingEmbedder(256)
    # oracle cosines: 0.0 and 0.6761234037828132
    unrelated = [("a", e.embed("Retrieve service account credentials")), ("b", e.embed("Obtain application login credentials"))]
    assert cluster_embeddings(unrelated, 0.01) == [["a"], ["b"]]
    related = [("a", e.embed("retrieve account credentials")), ("b", e.embed("Retrieve service account credentials"))]
    assert cluster_embeddings(related, 0.67) == [["a", "b"]]
    assert cluster_embeddings(related, 0.68) == [["a"], ["b"]]


def test_mixed_dimensions_rejected():
    with pytest.raises(errors.DimensionMismatch):
        cluster_embeddings([("a", HashingEmbedder(8).embed("x")), ("b", HashingEmbedder(16).embed("x"))], 0.5)


def test_cluster_tips_never_mixes_granularity():
    tips = [
        make_tip("a", "Retrieve service account credentials"),
        make_tip("b", "Retrieve service account credentials", granularity=Granularity.SUBTASK),
    ]
    clusters = cluster_tips(tips, 0.5)
    assert sorted(c.member_tip_ids for c in clusters) == [("a",), ("b",)]


# -- consolidate_cluster ---------------------------------------------------------------------


def _pair(**second: Any):
    a = make_tip("a", "Retrieve service account credentials", sources=("t1",), granularity=Granularity.SUBTASK,
                 content="Look up the password in the supervisor's account list", generalized_description="Retrieve service account credentials")
    b = make_tip("b", "Retrieve service account credentials", sources=("t2", "t1"), granularity=Granularity.SUBTASK,
                 content="Look up the password in the supervisor's account list", generalized_description="Retrieve service account credentials",
                 **second)
    return a, b


def test_near_duplicates_merge_with_all_sources():
    a, b = _pair()
    result = consolidate_cluster([a, b], heuristic_gateway())
    assert len(result.merged_tips) == 1
    merged = result.merged_tips[0]
    assert sorted(merged.source_trajectory_ids) == ["t1", "t1", "t2"]
    assert merged.generalized_description == "Retrieve service account credentials"
    assert result.cluster.member_tip_ids == (merged.id,)


def test_singleton_passes_through():
    a, _ = _pair()
    result = consolidate_cluster([a], heuristic_gateway())
    assert result.merged_tips == [a]
    assert result.cluster.member_tip_ids == ("a",)


def test_empty_and_mixed_clusters_rejected():
    with pytest.raises(errors.ConsolidationError):
        consolidate_cluster([], heuristic_gateway())
    a, _ = _pair()
    task = make_tip("t", "Retrieve service account credentials")
    with pytest.raises(errors.ConsolidationError):
        consolidate_cluster([a, task], heuristic_gateway())


def _conflicting_consolidator(request: LlmRequest) -> dict[str, Any]:
    if request.role is Role.CONSOLIDATOR:
        ids = [m["id"] for m in request.inputs["members"]]
        return {
            "canonical_description": "Retrieve service account credentials",
            "merged_tips": [
                {"merged_from": [i], "content": f"advice from {i}", "purpose": "", "steps": [], "trigger": "", "negative_example": None}
                for i in ids
            ],
            "conflicts": [{"tip_ids": ids, "note": "contradictory advice"}],
        }
    raise AssertionError(f"unexpected role {request.role}")


def test_conflict_goes_to_the_successful_tip():
    failure = make_tip("a", "Retrieve service account credentials", sources=("t1",), source_outcome="failure",
                       priority=Priority.HIGH, category=TipCategory.RECOVERY)
    success = make_tip("b", "Retrieve service account credentials", sources=("t2",), source_outcome="clean_success",
                       priority=Priority.LOW)
    result = consolidate_cluster([failure, success], _gw(_conflicting_consolidator))
    assert [c.winner for c in result.conflicts] == ["b"]
    # the losing guidance is dropped, its provenance folds into the winner
    assert len(result.merged_tips) == 1
    merged = result.merged_tips[0]
    assert merged.content == "advice from b"
    assert sorted(merged.source_trajectory_ids) == ["t1", "t2"]
    assert merged.source_outcome == "clean_success"


def test_precedence_order():
    base = dict(sources=("t1",))
    fail_recovery = make_tip("a", "x", source_outcome="failure", category=TipCategory.RECOVERY, **base)
    ok_strategy = make_tip("b", "x", **base)
    ok_recovery = make_tip("c", "x", category=TipCategory.RECOVERY, priority=Priority.LOW, **base)
    ok_recovery_high = make_tip("d", "x", category=TipCategory.RECOVERY, priority=Priority.HIGH, **base)
    ranked = sorted([fail_recovery, ok_strategy, ok_recovery, ok_recovery_high], key=precedence_key)
    assert [t.id for t in ranked] == ["d", "c", "b", "a"]


def test_consolidator_must_cover_every_member():
    def lossy(request: LlmRequest) -> dict[str, Any]:
        first = request.inputs["members"][0]["id"]
        return {
            "canonical_description": "Retrieve data",
            "merged_tips": [{"merged_from": [first], "content": "c", "purpose": "", "steps": [], "trigger": "", "negative_example": None}],
            "conflicts": [],
        }

    a, b = _pair()
    with pytest.raises((errors.SchemaViolation, errors.ProvenanceLoss)):
        consolidate_cluster([a, b], _gw(lossy))


# -- run_consolidation -----------------------------------------------------------------------


def test_empty_store_is_unchanged():
    store = store_with_trajectories([])
    report = run_consolidation(store, heuristic_gateway())
    assert report.tips_before == report.tips_after == 0
    assert report.revision_after == report.revision_before == store.revision


def _corpus():
    store = store_with_trajectories(["t1", "t2", "t3"])
    sub = dict(granularity=Granularity.SUBTASK)
    store.put_tips(
        [
            make_tip("s1", "Retrieve Spotify password for john.doe@email.com", sources=("t1",), content="Use the account list", **sub),
            make_tip("s2", "Get credentials in order to log in", sources=("t2",), content="Use the account list", **sub),
            make_tip("s3", "Mark task complete", sources=("t3",), content="Call complete_task once", **sub),
            make_tip("k1", "Play my top Spotify artist", sources=("t1",), content="Page through results"),
            make_tip("k2", "Play my top Spotify artist", sources=("t2",), content="Page through results"),
            make_tip("k3", "Pay Venmo requests", sources=("t3",), content="Check the balance first"),
        ]
    )
    return store


def _provenance(store) -> Counter:
    return Counter(s for t in store.snapshot().tips.values() for s in t.source_trajectory_ids)


def test_consolidation_conserves_provenance_and_shrinks():
    store = _corpus()
    before = _provenance(store)
    report = run_consolidation(store, heuristic_gateway())
    assert _provenance(store) == before
    assert report.tips_after <= report.tips_before == 6
    assert report.tips_after == 4
    assert not report.failures
    descriptions = {t.index_description for t in store.snapshot().tips.values() if t.granularity is Granularity.SUBTASK}
    assert descriptions == {"Retrieve service account credentials", "Mark task complete"}


def test_consolidation_is_idempotent():
    store = _corpus()
    gw = heuristic_gateway()
    run_consolidation(store, gw)
    tips = dict(store.snapshot().tips)
    revision = store.revision
    second = run_consolidation(store, gw)
    assert store.revision == revision
    assert second.clusters_formed == 0
    assert dict(store.snapshot().tips) == tips


def test_failed_cluster_is_left_alone():
    def broken(request: LlmRequest) -> dict[str, Any]:
        if request.role is Role.CONSOLIDATOR:
            raise errors.ProviderUnavailable("down")
        return HeuristicResponder()(request)

    store = _corpus()
    before = _provenance(store)
    report = run_consolidation(store, _gw(broken))
    assert report.failures
    assert _provenance(store) == before


def test_scenario_consolidation_numbers(scenario_run):
    _, outputs = scenario_run
    report = outputs["consolidation"]
    assert report["tips_before"] == 42 and report["tips_after"] == 33
    assert report["clusters_formed"] == 13
    assert report["failures"] == []
