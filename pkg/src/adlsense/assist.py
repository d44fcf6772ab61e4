"""Map user-state decisions to assistive events.

Seen activities get the class's next task instruction, unseen activities get
a general reinforcement message, atypical performance triggers a notification
for that class, and non-ADL motion stays silent. The engine emits message
keys only; rendering speech or gestures is the robot platform's job.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from .errors import FileFormatError, ValidationError
from .space import AdlDecision, AdlType

BEHAVIORS_FORMAT = "adlsense-behaviors"
BEHAVIORS_VERSION = 1

DEFAULT_COOLDOWN_SECONDS = 10.0


class EventKind(str, Enum):
    INSTRUCTION = "instruction"
    REINFORCEMENT = "reinforcement"
    ATYPICAL_NOTICE = "atypical_notice"
    NONE = "none"


@dataclass(frozen=True)
class AssistEvent:
    kind: EventKind
    timestamp: float
    class_id: int | None = None
    message_key: str | None = None

    def __post_init__(self):
        if self.kind in (EventKind.INSTRUCTION, EventKind.ATYPICAL_NOTICE):
            if self.class_id is None:
                raise ValidationError(f"{self.kind.value} events need a class_id")
        if self.kind == EventKind.NONE and self.message_key is not None:
            raise ValidationError("none events carry no message key")

    def to_record(self) -> dict:
        return {
            "kind": self.kind.value,
            "timestamp": self.timestamp,
            "class_id": self.class_id,
            "message_key": self.message_key,
        }


@dataclass(frozen=True)
class ClassBehavior:
    label: str
    instructions: tuple[str, ...]

    def __post_init__(self):
        if not self.instructions:
            raise ValidationError(f"class {self.label!r} needs at least one instruction key")


@dataclass(frozen=True)
class BehaviorTable:
    """Externalized robot behavior content, keyed by task class."""

    classes: dict[int, ClassBehavior]
    reinforcement: tuple[str, ...]
    atypical_template: str = "atypical.{label}"

    def __post_init__(self):
        if not self.reinforcement:
            raise ValidationError("behavior table needs at least one reinforcement key")

    def instruction_keys(self, class_id: int) -> tuple[str, ...]:
        try:
            return self.classes[class_id].instructions
        except KeyError:
            raise ValidationError(f"class {class_id} missing from behavior table") from None

    def atypical_key(self, class_id: int) -> str:
        behavior = self.classes.get(class_id)
        if behavior is None:
            raise ValidationError(f"class {class_id} missing from behavior table")
        return self.atypical_template.format(label=behavior.label, class_id=class_id)


class BehaviorState:
    """Single-owner cooldown and instruction-sequencing state."""

    def __init__(self):
        self.last_kind: EventKind | None = None
        self.last_class: int | None = None
        self.last_emit_time: float | None = None
        self.current_class: int | None = None
        self.instruction_index = 0
        self.reinforcement_index = 0


def select_behavior(
    decision: AdlDecision,
    table: BehaviorTable,
    state: BehaviorState,
    cooldown: float = DEFAULT_COOLDOWN_SECONDS,
) -> AssistEvent:
    """Pick the assistive event for one decision.

    Identical consecutive events (same kind and class) within the cooldown
    window are suppressed to ``none``; suppression does not advance the
    instruction sequence. The sequence steps through a class's ordered keys,
    holds on the last key, and resets when the decided class changes.
    """
    now = decision.timestamp
    if decision.adl_type == AdlType.NON_ADL:
        return AssistEvent(kind=EventKind.NONE, timestamp=now)

    if decision.adl_type == AdlType.SEEN:
        kind = EventKind.INSTRUCTION
        class_id = decision.class_id
    elif decision.adl_type == AdlType.UNSEEN:
        kind = EventKind.REINFORCEMENT
        class_id = None
    else:
        kind = EventKind.ATYPICAL_NOTICE
        class_id = decision.class_id

    suppressed = (
        state.last_kind == kind
        and state.last_class == class_id
        and state.last_emit_time is not None
        and now - state.last_emit_time < cooldown
    )
    if suppressed:
        return AssistEvent(kind=EventKind.NONE, timestamp=now)

    if kind == EventKind.INSTRUCTION:
        if state.current_class != class_id:
            state.current_class = class_id
            state.instruction_index = 0
        keys = table.instruction_keys(class_id)
        message_key = keys[min(state.instruction_index, len(keys) - 1)]
        state.instruction_index += 1
    elif kind == EventKind.REINFORCEMENT:
        message_key = table.reinforcement[state.reinforcement_index % len(table.reinforcement)]
        state.reinforcement_index += 1
    else:
        message_key = table.atypical_key(class_id)

    state.last_kind = kind
    state.last_class = class_id
    state.last_emit_time = now
    return AssistEvent(kind=kind, timestamp=now, class_id=class_id, message_key=message_key)


def load_behavior_table(path) -> BehaviorTable:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{path}: {exc}") from exc
    if payload.get("format") != BEHAVIORS_FORMAT:
        raise FileFormatError(f"{path}: not an {BEHAVIORS_FORMAT} file")
    if payload.get("version") != BEHAVIORS_VERSION:
        raise FileFormatError(
            f"{path}: unsupported behavior-table version {payload.get('version')!r}"
        )
    classes: dict[int, ClassBehavior] = {}
    for label, entry in payload.get("classes", {}).items():
        try:
            classes[int(entry["id"])] = ClassBehavior(
                label=label, instructions=tuple(entry["instructions"])
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FileFormatError(f"{path}: bad class entry {label!r}: {exc}") from exc
    return BehaviorTable(
        classes=classes,
        reinforcement=tuple(payload.get("reinforcement", ())),
        atypical_template=str(payload.get("atypical_template", "atypical.{label}")),
    )


def save_behavior_table(table: BehaviorTable, path) -> None:
    payload = {
        "format": BEHAVIORS_FORMAT,
        "version": BEHAVIORS_VERSION,
        "classes": {
            behavior.label: {"id": class_id, "instructions": list(behavior.instructions)}
            for class_id, behavior in sorted(table.classes.items())
        },
        "reinforcement": list(table.reinforcement),
        "atypical_template": table.atypical_template,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
