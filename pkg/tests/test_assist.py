"""Assistive-event selection: kind mapping, cooldown, sequencing, replay."""

from __future__ import annotations

import json

import pytest

from adlsense.assist import (
    AssistEvent,
    BehaviorState,
    BehaviorTable,
    ClassBehavior,
    EventKind,
    load_behavior_table,
    save_behavior_table,
    select_behavior,
)
from adlsense.errors import ValidationError
from adlsense.space import AdlDecision, AdlType


def table() -> BehaviorTable:
    return BehaviorTable(
        classes={
            0: ClassBehavior("brushing_teeth", ("hygiene.brush.intro", "hygiene.brush.rinse")),
            1: ClassBehavior("eating", ("meal.start",)),
        },
        reinforcement=("general.encourage", "general.praise"),
        atypical_template="atypical.{label}",
    )


def decision(adl_type: AdlType, class_id=None, t=0.0, s=1.0) -> AdlDecision:
    if adl_type == AdlType.NON_ADL:
        return AdlDecision(m_adl=False, adl_type=adl_type, timestamp=t)
    return AdlDecision(
        m_adl=True, adl_type=adl_type, timestamp=t, class_id=class_id, similarity=s
    )


def test_non_adl_is_silent():
    event = select_behavior(decision(AdlType.NON_ADL, t=1.0), table(), BehaviorState())
    assert event.kind == EventKind.NONE
    assert event.message_key is None


def test_seen_gets_first_instruction():
    event = select_behavior(decision(AdlType.SEEN, 0, t=1.0), table(), BehaviorState())
    assert event.kind == EventKind.INSTRUCTION
    assert event.class_id == 0
    assert event.message_key == "hygiene.brush.intro"


def test_unseen_gets_reinforcement():
    event = select_behavior(decision(AdlType.UNSEEN, t=1.0), table(), BehaviorState())
    assert event.kind == EventKind.REINFORCEMENT
    assert event.message_key == "general.encourage"
    assert event.class_id is None


def test_atypical_notice_keys_class_label():
    event = select_behavior(decision(AdlType.ATYPICAL, 1, t=1.0), table(), BehaviorState())
    assert event.kind == EventKind.ATYPICAL_NOTICE
    assert event.class_id == 1
    assert event.message_key == "atypical.eating"


def test_cooldown_suppresses_identical_consecutive_events():
    state = BehaviorState()
    t = table()
    first = select_behavior(decision(AdlType.SEEN, 0, t=0.0), t, state, cooldown=10.0)
    assert first.kind == EventKind.INSTRUCTION
    second = select_behavior(decision(AdlType.SEEN, 0, t=0.5), t, state, cooldown=10.0)
    assert second.kind == EventKind.NONE
    third = select_behavior(decision(AdlType.SEEN, 0, t=11.0), t, state, cooldown=10.0)
    assert third.kind == EventKind.INSTRUCTION


def test_cooldown_does_not_cross_kinds_or_classes():
    state = BehaviorState()
    t = table()
    select_behavior(decision(AdlType.SEEN, 0, t=0.0), t, state)
    other_class = select_behavior(decision(AdlType.SEEN, 1, t=0.5), t, state)
    assert other_class.kind == EventKind.INSTRUCTION
    unseen = select_behavior(decision(AdlType.UNSEEN, t=0.9), t, state)
    assert unseen.kind == EventKind.REINFORCEMENT


def test_instruction_sequence_steps_and_resets():
    state = BehaviorState()
    t = table()
    keys = []
    for i in range(3):
        event = select_behavior(
            decision(AdlType.SEEN, 0, t=20.0 * i), t, state, cooldown=10.0
        )
        keys.append(event.message_key)
    # Steps through the ordered keys, holding on the last one.
    assert keys == ["hygiene.brush.intro", "hygiene.brush.rinse", "hygiene.brush.rinse"]

    select_behavior(decision(AdlType.SEEN, 1, t=100.0), t, state, cooldown=10.0)
    back = select_behavior(decision(AdlType.SEEN, 0, t=200.0), t, state, cooldown=10.0)
    assert back.message_key == "hygiene.brush.intro"  # sequence reset on class change


def test_suppressed_events_do_not_advance_sequence():
    state = BehaviorState()
    t = table()
    select_behavior(decision(AdlType.SEEN, 0, t=0.0), t, state, cooldown=10.0)
    select_behavior(decision(AdlType.SEEN, 0, t=1.0), t, state, cooldown=10.0)  # suppressed
    event = select_behavior(decision(AdlType.SEEN, 0, t=11.0), t, state, cooldown=10.0)
    assert event.message_key == "hygiene.brush.rinse"


def test_missing_class_raises():
    with pytest.raises(ValidationError, match="class 9"):
        select_behavior(decision(AdlType.SEEN, 9, t=0.0), table(), BehaviorState())


def test_replay_is_bit_identical():
    decisions = [
        decision(AdlType.SEEN, 0, t=0.0),
        decision(AdlType.SEEN, 0, t=0.5),
        decision(AdlType.NON_ADL, t=1.0),
        decision(AdlType.UNSEEN, t=2.0),
        decision(AdlType.ATYPICAL, 1, t=3.0),
        decision(AdlType.SEEN, 1, t=30.0),
    ]

    def run():
        state = BehaviorState()
        t = table()
        return json.dumps(
            [select_behavior(d, t, state).to_record() for d in decisions],
            sort_keys=True,
        )

    assert run() == run()


def test_event_invariants():
    with pytest.raises(ValidationError):
        AssistEvent(kind=EventKind.INSTRUCTION, timestamp=0.0, class_id=None)
    with pytest.raises(ValidationError):
        AssistEvent(kind=EventKind.NONE, timestamp=0.0, message_key="x")


def test_table_round_trip(tmp_path):
    path = tmp_path / "behaviors.json"
    save_behavior_table(table(), path)
    back = load_behavior_table(path)
    assert back.classes == table().classes
    assert back.reinforcement == table().reinforcement
    assert back.atypical_template == table().atypical_template


def test_table_requires_instructions():
    with pytest.raises(ValidationError):
        ClassBehavior("empty", ())
    with pytest.raises(ValidationError):
        BehaviorTable(classes={}, reinforcement=())
