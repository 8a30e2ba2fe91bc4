"""Durable store for trajectories, tips and clusters.

Layout of a store directory::

    meta.json        {"format", "embed_dim", "revision"}
    log.jsonl        one record per committed write, tagged by "type"
    checkpoint.json  full state at some revision (written every N commits)

Recovery loads the checkpoint and replays log records with a higher
revision. A torn trailing line is ignored (and trimmed when opened for
writing). Writers are serialized in-process by a lock and across processes
by ``.lock``; readers work on immutable :class:`StoreState` snapshots.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Any, Optional

import numpy as np
from filelock import FileLock, Timeout
from pydantic import BaseModel, ConfigDict

from tmem import errors
from tmem.models import (
    Cluster,
    Embedding,
    Granularity,
    Priority,
    Tip,
    TipCategory,
    Trajectory,
)
from tmem.similarity import rank, score_matrix

log = logging.getLogger(__name__)

STORE_FORMAT = "tmem-store/1"
LOG_NAME = "log.jsonl"
CHECKPOINT_NAME = "checkpoint.json"
META_NAME = "meta.json"
LOCK_NAME = ".lock"


class MetadataFilter(BaseModel):
    """Filterable tip attributes. Unset fields match everything.

    A concrete ``application_context`` or ``task_category`` also matches tips
    where that field is null (generic tips); ``generic_only`` keeps only tips
    without an application context.
    """

    model_config = ConfigDict(frozen=True)

    category: Optional[TipCategory] = None
    priority: Optional[Priority] = None
    application_context: Optional[str] = None
    task_category: Optional[str] = None
    granularity: Optional[Granularity] = None
    generic_only: bool = False

    def matches(self, tip: Tip) -> bool:
        if self.category is not None and tip.category is not self.category:
            return False
        if self.priority is not None and tip.priority is not self.priority:
            return False
        if self.granularity is not None and tip.granularity is not self.granularity:
            return False
        if self.generic_only and tip.application_context is not None:
            return False
        if self.application_context is not None and tip.application_context not in (
            None,
            self.application_context.lower(),
        ):
            return False
        if self.task_category is not None and tip.task_category not in (None, self.task_category.lower()):
            return False
        return True


@dataclass(frozen=True)
class StoreState:
    trajectories: Mapping[str, Trajectory]
    tips: Mapping[str, Tip]
    clusters: Mapping[str, Cluster]
    embed_dim: int
    revision: int = 0

    @classmethod
    def empty(cls, embed_dim: int) -> StoreState:
        return cls(MappingProxyType({}), MappingProxyType({}), MappingProxyType({}), embed_dim, 0)

    # -- index ---------------------------------------------------------------------

    @cached_property
    def tip_ids(self) -> list[str]:
        return sorted(self.tips)

    @cached_property
    def _matrices(self) -> dict[str, np.ndarray]:
        ids = self.tip_ids
        shape = (len(ids), self.embed_dim)
        content = np.array([self.tips[i].embedding.vector for i in ids], dtype=np.float64).reshape(shape)
        index = np.array([self.tips[i].index_embedding.vector for i in ids], dtype=np.float64).reshape(shape)
        return {"content": content, "index": index}

    @cached_property
    def cluster_of(self) -> Mapping[str, str]:
        return MappingProxyType({m: c.id for c in self.clusters.values() for m in c.member_tip_ids})

    def query(
        self,
        flt: MetadataFilter | None = None,
        query_embedding: Embedding | None = None,
        *,
        against: str = "content",
        floor: float | None = None,
    ) -> list[tuple[Tip, float | None]]:
        """Filtered tips, cosine-ranked when ``query_embedding`` is given.

        ``against`` picks the content embedding or the index-description
        embedding; ``floor`` drops scores below it.
        """
        flt = flt or MetadataFilter()
        if query_embedding is None:
            return [(self.tips[i], None) for i in self.tip_ids if flt.matches(self.tips[i])]
        if query_embedding.dim != self.embed_dim:
            raise errors.DimensionMismatch(f"query has dim {query_embedding.dim}, store has {self.embed_dim}")
        q = np.asarray(query_embedding.vector, dtype=np.float64)
        ids = self.tip_ids
        scored = [
            (ids[row], s)
            for row, s in score_matrix(self._matrices[against], q, floor)
            if flt.matches(self.tips[ids[row]])
        ]
        return [(self.tips[i], s) for i, s in rank(scored)]

    def stats(self) -> dict[str, Any]:
        tips = list(self.tips.values())
        return {
            "revision": self.revision,
            "trajectories": len(self.trajectories),
            "tips": len(tips),
            "clusters": len(self.clusters),
            "by_category": {c.value: sum(t.category is c for t in tips) for c in TipCategory},
            "by_priority": {p.value: sum(t.priority is p for t in tips) for p in Priority},
            "by_granularity": {g.value: sum(t.granularity is g for t in tips) for g in Granularity},
        }

    def to_json(self) -> dict[str, Any]:
        return {
            "format": STORE_FORMAT,
            "revision": self.revision,
            "embed_dim": self.embed_dim,
            "trajectories": [self.trajectories[k].model_dump(mode="json") for k in sorted(self.trajectories)],
            "tips": [self.tips[k].model_dump(mode="json") for k in sorted(self.tips)],
            "clusters": [self.clusters[k].model_dump(mode="json") for k in sorted(self.clusters)],
        }

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> StoreState:
        return cls(
            trajectories=MappingProxyType({t["id"]: Trajectory.model_validate(t) for t in doc["trajectories"]}),
            tips=MappingProxyType({t["id"]: Tip.model_validate(t) for t in doc["tips"]}),
            clusters=MappingProxyType({c["id"]: Cluster.model_validate(c) for c in doc["clusters"]}),
            embed_dim=doc["embed_dim"],
            revision=doc["revision"],
        )


# -- pure state transitions ---------------------------------------------------------------


def _with(state: StoreState, **changes: Any) -> StoreState:
    fields = {
        "trajectories": state.trajectories,
        "tips": state.tips,
        "clusters": state.clusters,
        "embed_dim": state.embed_dim,
        "revision": state.revision + 1,
    }
    fields.update({k: MappingProxyType(v) if isinstance(v, dict) else v for k, v in changes.items()})
    return StoreState(**fields)


def _check_tips(state: StoreState, tips: Sequence[Tip], taken: Iterable[str]) -> None:
    seen = set(taken)
    for tip in tips:
        if tip.id in seen:
            raise errors.DuplicateId(f"tip {tip.id} already exists")
        seen.add(tip.id)
        missing = [s for s in tip.source_trajectory_ids if s not in state.trajectories]
        if missing:
            raise errors.DanglingProvenance(f"tip {tip.id} cites unknown trajectories {missing}")
        for emb in (tip.embedding, tip.index_embedding):
            if emb.dim != state.embed_dim:
                raise errors.DimensionMismatch(f"tip {tip.id} has dim {emb.dim}, store has {state.embed_dim}")


def apply_put_trajectory(state: StoreState, traj: Trajectory) -> StoreState:
    if traj.id in state.trajectories:
        raise errors.DuplicateId(f"trajectory {traj.id} already exists")
    return _with(state, trajectories={**state.trajectories, traj.id: traj})


def apply_put_tips(state: StoreState, tips: Sequence[Tip]) -> StoreState:
    _check_tips(state, tips, state.tips)
    return _with(state, tips={**state.tips, **{t.id: t for t in tips}})


def apply_replace_tips(
    state: StoreState, removed: Iterable[str], added: Sequence[Tip], clusters: Sequence[Cluster]
) -> StoreState:
    removed = set(removed)
    unknown = sorted(removed - set(state.tips))
    if unknown:
        raise errors.UnknownId(f"cannot remove unknown tips {unknown}")
    remaining = {k: v for k, v in state.tips.items() if k not in removed}
    _check_tips(state, added, remaining)

    before = {s for i in removed for s in state.tips[i].source_trajectory_ids}
    after = {s for t in added for s in t.source_trajectory_ids}
    lost = sorted(before - after)
    if lost:
        raise errors.ProvenanceLoss(f"replacement drops source trajectories {lost}")

    tips = {**remaining, **{t.id: t for t in added}}
    # upserted clusters supersede any stored cluster they share a member with
    claimed = removed.union(m for c in clusters for m in c.member_tip_ids)
    kept_clusters = {
        cid: c
        for cid, c in state.clusters.items()
        if not claimed.intersection(c.member_tip_ids)
    }
    for c in clusters:
        if c.canonical_embedding.dim != state.embed_dim:
            raise errors.DimensionMismatch(f"cluster {c.id} has dim {c.canonical_embedding.dim}")
        kept_clusters[c.id] = c
    owner: dict[str, str] = {}
    for cid, c in kept_clusters.items():
        for m in c.member_tip_ids:
            if m not in tips:
                raise errors.UnknownId(f"cluster {cid} lists unknown tip {m}")
            if m in owner and owner[m] != cid:
                raise errors.StoreError(f"tip {m} would belong to clusters {owner[m]} and {cid}")
            owner[m] = cid
    return _with(state, tips=tips, clusters=kept_clusters)


def apply_record(state: StoreState, record: Mapping[str, Any]) -> StoreState:
    kind = record.get("type")
    if kind == "put_trajectory":
        return apply_put_trajectory(state, Trajectory.model_validate(record["trajectory"]))
    if kind == "put_tips":
        return apply_put_tips(state, [Tip.model_validate(t) for t in record["tips"]])
    if kind == "replace_tips":
        return apply_replace_tips(
            state,
            record["removed"],
            [Tip.model_validate(t) for t in record["added"]],
            [Cluster.model_validate(c) for c in record["clusters"]],
        )
    raise errors.StoreError(f"unknown log record type {kind!r}")


def _dumps(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


# -- store ------------------------------------------------------------------------------


@dataclass
class MemoryStore:
    """Single-writer, many-reader tip store.

    ``path=None`` keeps everything in memory (tests, ephemeral services).
    """

    embed_dim: int = 256
    path: Optional[Path] = None
    checkpoint_every: int = 100
    readonly: bool = False
    _state: StoreState = field(init=False)
    _write_lock: threading.Lock = field(init=False, default_factory=threading.Lock)
    _file_lock: Optional[FileLock] = field(init=False, default=None)
    # revision of checkpoint.json on disk; None until a writable open succeeds
    _checkpointed: Optional[int] = field(init=False, default=None)

    def __post_init__(self) -> None:
        self._state = StoreState.empty(self.embed_dim)

    @classmethod
    def open(
        cls,
        path: str | Path | None,
        embed_dim: int = 256,
        *,
        readonly: bool = False,
        checkpoint_every: int = 100,
    ) -> MemoryStore:
        store = cls(
            embed_dim=embed_dim,
            path=Path(path) if path is not None else None,
            checkpoint_every=checkpoint_every,
            readonly=readonly,
        )
        if store.path is not None:
            store._load()
        return store

    # -- persistence ------------------------------------------------------------------

    def _load(self) -> None:
        assert self.path is not None
        try:
            if not self.readonly:
                self.path.mkdir(parents=True, exist_ok=True)
                self._file_lock = FileLock(str(self.path / LOCK_NAME))
                try:
                    self._file_lock.acquire(timeout=0)
                except Timeout as exc:
                    raise errors.StoreLocked(f"store {self.path} is locked by another writer") from exc
            elif not self.path.exists():
                raise errors.StoreIoError(f"store {self.path} does not exist")

            meta_path = self.path / META_NAME
            if meta_path.exists():
                meta = json.loads(meta_path.read_text(encoding="utf-8"))
                if meta.get("embed_dim") != self.embed_dim:
                    raise errors.DimensionMismatch(
                        f"store {self.path} has embed_dim {meta.get('embed_dim')}, configured {self.embed_dim}"
                    )
            state = StoreState.empty(self.embed_dim)
            ckpt = self.path / CHECKPOINT_NAME
            if ckpt.exists():
                state = StoreState.from_json(json.loads(ckpt.read_text(encoding="utf-8")))
            checkpointed = state.revision
            state, valid_bytes = self._replay(state)
            self._state = state
            if not self.readonly:
                self._checkpointed = checkpointed
                log_path = self.path / LOG_NAME
                if log_path.exists() and log_path.stat().st_size != valid_bytes:
                    log.warning("store %s: trimming torn log tail at byte %d", self.path, valid_bytes)
                    with open(log_path, "r+b") as fh:
                        fh.truncate(valid_bytes)
                if not meta_path.exists() or state.revision != json.loads(meta_path.read_text())["revision"]:
                    self._write_meta(state)
        except OSError as exc:
            self.close()
            raise errors.StoreIoError(str(exc)) from exc
        except errors.TmemError:
            self.close()
            raise

    def _replay(self, state: StoreState) -> tuple[StoreState, int]:
        assert self.path is not None
        log_path = self.path / LOG_NAME
        if not log_path.exists():
            return state, 0
        data = log_path.read_bytes()
        offset = 0
        while offset < len(data):
            end = data.find(b"\n", offset)
            if end < 0:
                break  # torn tail
            try:
                record = json.loads(data[offset:end].decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                break
            rev = record.get("revision", 0)
            if rev > state.revision:
                if rev != state.revision + 1:
                    raise errors.StoreIoError(f"log jumps from revision {state.revision} to {rev}")
                try:
                    state = apply_record(state, record)
                except errors.StoreError as exc:
                    if str(exc).startswith("unknown log record type"):
                        log.warning("store %s: skipping %s", self.path, exc)
                        state = _with(state)
                    else:
                        raise
            offset = end + 1
        return state, offset

    def _write_meta(self, state: StoreState) -> None:
        assert self.path is not None
        meta = {"format": STORE_FORMAT, "embed_dim": state.embed_dim, "revision": state.revision}
        _atomic_write(self.path / META_NAME, json.dumps(meta, indent=2, sort_keys=True) + "\n")

    def _commit(self, new_state: StoreState, record: dict[str, Any]) -> int:
        if self.path is not None:
            try:
                with open(self.path / LOG_NAME, "a", encoding="utf-8") as fh:
                    fh.write(_dumps({**record, "revision": new_state.revision}) + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
                self._write_meta(new_state)
                if self.checkpoint_every and new_state.revision % self.checkpoint_every == 0:
                    self.checkpoint(new_state)
            except OSError as exc:
                raise errors.StoreIoError(str(exc)) from exc
        self._state = new_state
        return new_state.revision

    def checkpoint(self, state: StoreState | None = None) -> None:
        if self.path is None:
            return
        state = state or self._state
        _atomic_write(self.path / CHECKPOINT_NAME, _dumps(state.to_json()) + "\n")
        self._checkpointed = state.revision

    def close(self) -> None:
        """Checkpoint unsaved revisions (writable stores only) and release the lock."""
        if self._checkpointed is not None and self._checkpointed != self._state.revision:
            try:
                self.checkpoint()
            except OSError as exc:
                raise errors.StoreIoError(str(exc)) from exc
            finally:
                self._release()
        self._release()

    def _release(self) -> None:
        if self._file_lock is not None and self._file_lock.is_locked:
            self._file_lock.release()
        self._file_lock = None

    def __enter__(self) -> MemoryStore:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    # -- reads --------------------------------------------------------------------------

    def snapshot(self) -> StoreState:
        return self._state

    @property
    def revision(self) -> int:
        return self._state.revision

    def get_trajectory(self, traj_id: str) -> Trajectory:
        try:
            return self._state.trajectories[traj_id]
        except KeyError:
            raise errors.UnknownId(f"no trajectory {traj_id}") from None

    def get_tip(self, tip_id: str) -> Tip:
        try:
            return self._state.tips[tip_id]
        except KeyError:
            raise errors.UnknownId(f"no tip {tip_id}") from None

    def query(
        self,
        flt: MetadataFilter | None = None,
        query_embedding: Embedding | None = None,
        **kwargs: Any,
    ) -> list[tuple[Tip, float | None]]:
        return self._state.query(flt, query_embedding, **kwargs)

    # -- writes -------------------------------------------------------------------------

    def _writable(self) -> None:
        if self.readonly:
            raise errors.StoreIoError("store opened read-only")

    def put_trajectory(self, traj: Trajectory) -> int:
        self._writable()
        with self._write_lock:
            new = apply_put_trajectory(self._state, traj)
            return self._commit(new, {"type": "put_trajectory", "trajectory": traj.model_dump(mode="json")})

    def put_tips(self, tips: Sequence[Tip]) -> int:
        self._writable()
        with self._write_lock:
            new = apply_put_tips(self._state, tips)
            return self._commit(new, {"type": "put_tips", "tips": [t.model_dump(mode="json") for t in tips]})

    def replace_tips(
        self, removed_ids: Iterable[str], added: Sequence[Tip], clusters: Sequence[Cluster] = ()
    ) -> int:
        """Atomically swap ``removed_ids`` for ``added`` and upsert ``clusters``.

        Stored clusters that list a removed tip, or share a member with one of
        ``clusters``, are dropped in the same revision.
        """
        self._writable()
        removed = sorted(set(removed_ids))
        with self._write_lock:
            new = apply_replace_tips(self._state, removed, added, clusters)
            return self._commit(
                new,
                {
                    "type": "replace_tips",
                    "removed": removed,
                    "added": [t.model_dump(mode="json") for t in added],
                    "clusters": [c.model_dump(mode="json") for c in clusters],
                },
            )


def provenance_counts(state: StoreState) -> Counter[str]:
    return Counter(s for t in state.tips.values() for s in t.source_trajectory_ids)
