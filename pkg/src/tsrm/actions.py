from __future__ import annotations

from enum import IntEnum


class Action(IntEnum):
    MOVE_AHEAD = 0
    ROTATE_LEFT = 1
    ROTATE_RIGHT = 2
    LOOK_DOWN = 3
    LOOK_UP = 4
    DONE = 5

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, label: str) -> "Action":
        try:
            return _BY_LABEL[label]
        except KeyError:
            raise ValueError(f"unknown action {label!r}") from None


_LABELS = {
    Action.MOVE_AHEAD: "MoveAhead",
    Action.ROTATE_LEFT: "RotateLeft",
    Action.ROTATE_RIGHT: "RotateRight",
    Action.LOOK_DOWN: "LookDown",
    Action.LOOK_UP: "LookUp",
    Action.DONE: "Done",
}
_BY_LABEL = {v: k for k, v in _LABELS.items()}

MOTION_ACTIONS = (Action.MOVE_AHEAD, Action.ROTATE_LEFT, Action.ROTATE_RIGHT, Action.LOOK_DOWN, Action.LOOK_UP)
N_ACTIONS = len(Action)
