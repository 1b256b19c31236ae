"""User inputs: signed clicks and signed two-point lines.

A line is worth two clicks in the NoC accounting, since it is produced by
connecting two click positions.
"""

from __future__ import annotations

from dataclasses import dataclass

from .masks import Point

CLICK = "click"
LINE = "line"
POS = "pos"
NEG = "neg"


@dataclass(frozen=True)
class Annotation:
    kind: str
    sign: str
    points: tuple[Point, ...]

    def __post_init__(self):
        if self.kind not in (CLICK, LINE):
            raise ValueError(f"bad kind: {self.kind!r}")
        if self.sign not in (POS, NEG):
            raise ValueError(f"bad sign: {self.sign!r}")
        want = 1 if self.kind == CLICK else 2
        if len(self.points) != want:
            raise ValueError(f"{self.kind} needs {want} point(s), got {len(self.points)}")

    @property
    def click_cost(self) -> int:
        return 1 if self.kind == CLICK else 2

    @property
    def positive(self) -> bool:
        return self.sign == POS

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "sign": self.sign,
            "points": [{"x": int(p[0]), "y": int(p[1])} for p in self.points],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Annotation":
        pts = tuple(Point(int(p["x"]), int(p["y"])) for p in d["points"])
        return cls(d["kind"], d["sign"], pts)


def click(sign: str, p: Point) -> Annotation:
    return Annotation(CLICK, sign, (Point(int(p[0]), int(p[1])),))


def line(sign: str, p0: Point, p1: Point) -> Annotation:
    return Annotation(LINE, sign, (Point(int(p0[0]), int(p0[1])),
                                   Point(int(p1[0]), int(p1[1]))))
