"""Per-user embedding space and open-set user-state estimation.

The space stores labeled 128-d activity embeddings per class. Each class
keeps a centroid (the member mean), the mean member-to-centroid distance, and
the mean squared member-to-centroid distance (the intra-class variance used
for normalization). A query embedding is scored against the nearest centroid:

    S = (d_min / mean_dist_k) * (1 / variance_k)

with epsilon floors for degenerate clusters; lower S means more similar.
Queries above the unseen threshold are new activities; queries assigned to a
known class are flagged atypical when their S deviates by more than
``atypical_z`` standard deviations from the user's own history of seen scores
for that class.

One writer owns a space; frozen snapshots can be queried concurrently and
never record history.
"""

from __future__ import annotations

import copy
import fcntl
import hashlib
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np

from .errors import FileFormatError, ValidationError
from .motion import GateThresholds

SPACE_FORMAT = "adlsense-space"
SPACE_VERSION = 1


class SpaceVersionError(FileFormatError):
    pass


class SpaceCorruptionError(FileFormatError):
    pass


class UnknownClassError(ValidationError):
    pass


class AdlType(str, Enum):
    NON_ADL = "non_adl"
    SEEN = "seen"
    UNSEEN = "unseen"
    ATYPICAL = "atypical"


@dataclass(frozen=True)
class DecisionPolicy:
    """Thresholds governing unseen and atypical decisions."""

    tau_unseen: float = 4.0
    atypical_z: float = 2.0
    min_history: int = 5
    epsilon: float = 1e-6
    min_class_count: int = 2

    def __post_init__(self):
        if self.tau_unseen <= 0 or self.atypical_z <= 0 or self.epsilon <= 0:
            raise ValidationError("policy thresholds must be positive")
        if self.min_history < 2:
            raise ValidationError("min_history must be >= 2")
        if self.min_class_count < 1:
            raise ValidationError("min_class_count must be >= 1")

    def to_dict(self) -> dict:
        return {
            "tau_unseen": self.tau_unseen,
            "atypical_z": self.atypical_z,
            "min_history": self.min_history,
            "epsilon": self.epsilon,
            "min_class_count": self.min_class_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DecisionPolicy":
        return cls(
            tau_unseen=float(data.get("tau_unseen", 4.0)),
            atypical_z=float(data.get("atypical_z", 2.0)),
            min_history=int(data.get("min_history", 5)),
            epsilon=float(data.get("epsilon", 1e-6)),
            min_class_count=int(data.get("min_class_count", 2)),
        )


@dataclass(frozen=True)
class ClassStats:
    """Centroid and dispersion of one class's member embeddings."""

    class_id: int
    centroid: np.ndarray
    count: int
    mean_dist: float
    variance: float


@dataclass(frozen=True)
class SimilarityResult:
    s: float
    class_id: int
    d_min: float
    floored: bool  # epsilon floor was applied to a degenerate cluster


@dataclass(frozen=True)
class HistoryEntry:
    timestamp: float
    class_id: int
    s: float
    adl_type: str  # "seen" or "atypical"; baselines use seen entries only


@dataclass(frozen=True)
class AdlDecision:
    """Outcome for one window: motion type, activity type, class, similarity."""

    m_adl: bool
    adl_type: AdlType
    timestamp: float
    class_id: int | None = None
    similarity: float | None = None
    head_class: int | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.adl_type == AdlType.NON_ADL) != (not self.m_adl):
            raise ValidationError("adl_type is non_adl exactly when m_adl is false")
        if (self.class_id is not None) != (
            self.adl_type in (AdlType.SEEN, AdlType.ATYPICAL)
        ):
            raise ValidationError("class_id present iff decision is seen or atypical")
        if (self.similarity is not None) != self.m_adl:
            raise ValidationError("similarity present iff m_adl")

    def to_record(self) -> dict:
        record = {
            "m_adl": self.m_adl,
            "adl_type": self.adl_type.value,
            "timestamp": self.timestamp,
            "class_id": self.class_id,
            "similarity": self.similarity,
            "head_class": self.head_class,
        }
        if self.diagnostics:
            record["diagnostics"] = self.diagnostics
        return record

    @classmethod
    def from_record(cls, record: dict) -> "AdlDecision":
        return cls(
            m_adl=bool(record["m_adl"]),
            adl_type=AdlType(record["adl_type"]),
            timestamp=float(record["timestamp"]),
            class_id=record.get("class_id"),
            similarity=record.get("similarity"),
            head_class=record.get("head_class"),
            diagnostics=record.get("diagnostics", {}),
        )


class EmbeddingSpace:
    """Mutable per-user store of labeled embeddings and score history."""

    def __init__(
        self,
        user_id: str,
        policy: DecisionPolicy | None = None,
        gate: GateThresholds | None = None,
    ):
        self.user_id = user_id
        self.policy = policy or DecisionPolicy()
        self.gate = gate
        self.members: dict[int, list[np.ndarray]] = {}
        self.labels: dict[int, str] = {}
        self.stats: dict[int, ClassStats] = {}
        self.s_history: list[HistoryEntry] = []
        self._sums: dict[int, np.ndarray] = {}
        self._dim: int | None = None
        self._frozen = False

    # -- construction ------------------------------------------------------

    @property
    def dim(self) -> int | None:
        return self._dim

    @property
    def class_ids(self) -> list[int]:
        return sorted(self.members)

    def label_for(self, class_id: int) -> str:
        return self.labels.get(class_id, str(class_id))

    def _coerce(self, embedding: np.ndarray) -> np.ndarray:
        arr = np.asarray(embedding, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ValidationError("embedding has non-finite entries")
        if self._dim is None:
            self._dim = arr.size
        elif arr.size != self._dim:
            raise ValidationError(
                f"embedding dimension {arr.size} does not match space dimension {self._dim}"
            )
        return arr

    def _refresh_stats(self, class_id: int) -> None:
        members = np.stack(self.members[class_id])
        centroid = self._sums[class_id] / len(members)
        dists = np.linalg.norm(members - centroid, axis=1)
        self.stats[class_id] = ClassStats(
            class_id=class_id,
            centroid=centroid,
            count=len(members),
            mean_dist=float(dists.mean()),
            variance=float((dists**2).mean()),
        )

    def add(self, class_id: int, embedding: np.ndarray, create: bool = False,
            label: str | None = None) -> None:
        """Append one labeled embedding and refresh that class's statistics."""
        if self._frozen:
            raise ValidationError("cannot add embeddings to a frozen snapshot")
        arr = self._coerce(embedding)
        if class_id not in self.members:
            if not create:
                raise UnknownClassError(
                    f"class {class_id} not in space; pass create=True to add it"
                )
            self.members[class_id] = []
            self._sums[class_id] = np.zeros_like(arr)
        self.members[class_id].append(arr)
        self._sums[class_id] = self._sums[class_id] + arr
        if label is not None:
            self.labels[class_id] = label
        self._refresh_stats(class_id)

    def snapshot(self) -> "EmbeddingSpace":
        """Frozen deep copy; decisions against it never record history."""
        clone = copy.deepcopy(self)
        clone._frozen = True
        return clone

    # -- queries -----------------------------------------------------------

    def similarity(self, embedding: np.ndarray) -> SimilarityResult:
        """Score a query against the nearest class centroid.

        Ties on the minimum distance resolve to the lowest class id.
        """
        if not self.stats:
            raise ValidationError("embedding space has no classes")
        arr = self._coerce(embedding)
        eps = self.policy.epsilon
        best_id = -1
        best_d = np.inf
        for class_id in sorted(self.stats):
            d = float(np.linalg.norm(arr - self.stats[class_id].centroid))
            if d < best_d:
                best_d = d
                best_id = class_id
        stats = self.stats[best_id]
        floored = stats.mean_dist < eps or stats.variance < eps
        s = (best_d / max(stats.mean_dist, eps)) * (1.0 / max(stats.variance, eps))
        return SimilarityResult(s=float(s), class_id=best_id, d_min=best_d, floored=floored)

    def seen_scores(self, class_id: int) -> list[float]:
        """History of S values from prior seen decisions for one class."""
        return [
            h.s
            for h in self.s_history
            if h.class_id == class_id and h.adl_type == AdlType.SEEN.value
        ]

    def decide(
        self,
        m_adl: bool,
        embedding: np.ndarray | None = None,
        head_class: int | None = None,
        now: float = 0.0,
        record: bool = True,
    ) -> AdlDecision:
        """Classify one window into non-ADL / seen / unseen / atypical.

        Seen and atypical outcomes append to the user's score history unless
        ``record`` is false or the space is a frozen snapshot; atypical scores
        are stored but never feed later baselines.
        """
        if not m_adl:
            return AdlDecision(m_adl=False, adl_type=AdlType.NON_ADL, timestamp=now)
        if embedding is None:
            raise ValidationError("an embedding is required when m_adl is true")

        sim = self.similarity(embedding)
        diagnostics: dict = {"d_min": sim.d_min}
        if sim.floored:
            diagnostics["floored"] = True

        if sim.s > self.policy.tau_unseen:
            return AdlDecision(
                m_adl=True,
                adl_type=AdlType.UNSEEN,
                timestamp=now,
                similarity=sim.s,
                head_class=head_class,
                diagnostics=diagnostics,
            )

        adl_type = AdlType.SEEN
        prior = self.seen_scores(sim.class_id)
        if len(prior) >= self.policy.min_history:
            mu = float(np.mean(prior))
            sigma = float(np.std(prior))
            diagnostics["baseline_mean"] = mu
            diagnostics["baseline_std"] = sigma
            if sim.s > mu + self.policy.atypical_z * sigma:
                adl_type = AdlType.ATYPICAL

        if record and not self._frozen:
            self.s_history.append(
                HistoryEntry(
                    timestamp=now,
                    class_id=sim.class_id,
                    s=sim.s,
                    adl_type=adl_type.value,
                )
            )
        return AdlDecision(
            m_adl=True,
            adl_type=adl_type,
            timestamp=now,
            class_id=sim.class_id,
            similarity=sim.s,
            head_class=head_class,
            diagnostics=diagnostics,
        )


def init_space(
    user_id: str,
    labeled: Iterable[tuple[int, np.ndarray]],
    gate: GateThresholds | None = None,
    policy: DecisionPolicy | None = None,
    labels: dict[int, str] | None = None,
) -> EmbeddingSpace:
    """Build a space from labeled training embeddings.

    Every class must bring at least ``policy.min_class_count`` members so the
    dispersion statistics are meaningful.
    """
    space = EmbeddingSpace(user_id, policy=policy, gate=gate)
    labeled = list(labeled)
    if not labeled:
        raise ValidationError("cannot initialize a space from no embeddings")
    counts: dict[int, int] = {}
    for class_id, _ in labeled:
        counts[class_id] = counts.get(class_id, 0) + 1
    thin = sorted(c for c, n in counts.items() if n < space.policy.min_class_count)
    if thin:
        raise ValidationError(
            f"classes {thin} have fewer than min_class_count="
            f"{space.policy.min_class_count} members"
        )
    for class_id, embedding in labeled:
        space.add(class_id, embedding, create=True)
    if labels:
        space.labels.update({int(k): str(v) for k, v in labels.items()})
    return space


# -- persistence -------------------------------------------------------------


def _space_payload(space: EmbeddingSpace) -> dict:
    return {
        "format": SPACE_FORMAT,
        "version": SPACE_VERSION,
        "user_id": space.user_id,
        "classes": [
            {
                "id": class_id,
                "label": space.label_for(class_id),
                "members": [[float(v) for v in m] for m in space.members[class_id]],
            }
            for class_id in sorted(space.members)
        ],
        "s_history": [
            [h.timestamp, h.class_id, h.s, h.adl_type] for h in space.s_history
        ],
        "gate": space.gate.to_dict() if space.gate is not None else None,
        "policy": space.policy.to_dict(),
    }


def _checksum(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_space(space: EmbeddingSpace, path) -> None:
    """Write a snapshot atomically; concurrent writers serialize on a lock."""
    payload = _space_payload(space)
    payload["checksum"] = _checksum({k: v for k, v in payload.items() if k != "checksum"})
    path = os.fspath(path)
    lock_path = path + ".lock"
    tmp_path = path + f".tmp-{os.getpid()}"
    with open(lock_path, "w") as lock:
        fcntl.flock(lock, fcntl.LOCK_EX)
        try:
            with open(tmp_path, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
                fh.write("\n")
            os.replace(tmp_path, path)
        finally:
            fcntl.flock(lock, fcntl.LOCK_UN)


def load_space(path) -> EmbeddingSpace:
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read()
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SpaceCorruptionError(
            f"{path}: unparseable (char {exc.pos}): {exc.msg}"
        ) from exc
    if payload.get("format") != SPACE_FORMAT:
        raise SpaceCorruptionError(f"{path}: not an {SPACE_FORMAT} file")
    if payload.get("version") != SPACE_VERSION:
        raise SpaceVersionError(
            f"{path}: unsupported space version {payload.get('version')!r}, "
            f"expected {SPACE_VERSION}"
        )
    declared = payload.get("checksum")
    actual = _checksum({k: v for k, v in payload.items() if k != "checksum"})
    if declared != actual:
        raise SpaceCorruptionError(
            f"{path}: checksum mismatch (declared {declared!r}, computed {actual!r})"
        )

    space = EmbeddingSpace(
        user_id=str(payload.get("user_id", "")),
        policy=DecisionPolicy.from_dict(payload.get("policy", {})),
        gate=GateThresholds.from_dict(payload["gate"]) if payload.get("gate") else None,
    )
    for class_index, entry in enumerate(payload.get("classes", [])):
        try:
            class_id = int(entry["id"])
            label = str(entry.get("label", class_id))
            members = entry["members"]
        except (KeyError, TypeError, ValueError) as exc:
            raise SpaceCorruptionError(
                f"{path}: bad class record {class_index}: {exc}"
            ) from exc
        for member_index, member in enumerate(members):
            try:
                space.add(class_id, np.asarray(member, dtype=np.float64),
                          create=True, label=label)
            except (ValidationError, ValueError) as exc:
                raise SpaceCorruptionError(
                    f"{path}: class {class_id} member {member_index}: {exc}"
                ) from exc
    for entry_index, entry in enumerate(payload.get("s_history", [])):
        try:
            timestamp, class_id, s, adl_type = entry
            space.s_history.append(
                HistoryEntry(
                    timestamp=float(timestamp),
                    class_id=int(class_id),
                    s=float(s),
                    adl_type=str(adl_type),
                )
            )
        except (TypeError, ValueError) as exc:
            raise SpaceCorruptionError(
                f"{path}: bad history entry {entry_index}: {exc}"
            ) from exc
    return space
