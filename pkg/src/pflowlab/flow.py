"""Perceptual-flow data model and the tagged text grammar.

A transcript looks like::

    <analyze>find the cup</analyze><localize><box>[100, 200, 300, 400]</box> a red cup </localize>
    <thinking>...</thinking><answer>...</answer>

Coordinates are integers on a 0..1000 grid. Everything after ``</localize>`` is
kept verbatim as an opaque suffix and is not part of the flow's states.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Union

from .geometry import GeometryError, RoiBox

GRID = 1000

TAGS = ("analyze", "localize", "box", "thinking", "answer")
_TAG_RE = re.compile(r"</?(?:%s)>" % "|".join(TAGS))
_INT_RE = re.compile(r"[+-]?\d+")


class FlowParseError(ValueError):
    """Malformed transcript. ``offset`` is a UTF-8 byte offset into the input."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.message = message
        self.offset = offset


@dataclass(frozen=True)
class PlanningState:
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("planning state text is empty")


@dataclass(frozen=True)
class PerceptualState:
    roi: RoiBox
    caption: str


@dataclass(frozen=True)
class PerceptualFlow:
    planning: PlanningState
    states: tuple[PerceptualState, ...] = ()
    terminated: bool = False
    suffix: str = field(default="", compare=True)

    def __post_init__(self) -> None:
        object.__setattr__(self, "states", tuple(self.states))
        if self.suffix and not self.terminated:
            raise ValueError("only a terminated flow can carry a suffix")

    @property
    def K(self) -> int:
        return len(self.states)

    def rois(self) -> list[RoiBox]:
        return [s.roi for s in self.states]

    def prefix(self, k: int) -> "FlowPrefix":
        return FlowPrefix(self, k)


@dataclass(frozen=True)
class FlowPrefix:
    """View onto ``z_0 .. z_k`` of a flow."""

    flow: PerceptualFlow
    k: int

    def __post_init__(self) -> None:
        if not 0 <= self.k <= self.flow.K:
            raise IndexError(f"prefix length {self.k} outside 0..{self.flow.K}")

    @property
    def planning(self) -> PlanningState:
        return self.flow.planning

    @property
    def states(self) -> tuple[PerceptualState, ...]:
        return self.flow.states[: self.k]

    def rois(self) -> list[RoiBox]:
        return [s.roi for s in self.states]


def prefix(flow: PerceptualFlow, k: int) -> FlowPrefix:
    return FlowPrefix(flow, k)


def sub_trajectory_pairs(flow_or_k: Union[PerceptualFlow, int]) -> list[tuple[int, int]]:
    """All ``(i, j)`` with ``0 <= i <= j <= K`` in lexicographic order."""
    K = flow_or_k if isinstance(flow_or_k, int) else flow_or_k.K
    if K < 0:
        raise ValueError(f"negative flow length {K}")
    return [(i, j) for i in range(K + 1) for j in range(i, K + 1)]


def normalize_roi(rel) -> RoiBox:
    """Map integer 0..1000 coordinates to a normalized :class:`RoiBox`."""
    if len(rel) != 4:
        raise ValueError(f"expected 4 coordinates, got {len(rel)}")
    x1, y1, x2, y2 = (int(v) for v in rel)
    for v in (x1, y1, x2, y2):
        if not 0 <= v <= GRID:
            raise ValueError(f"coordinate {v} outside 0..{GRID} in {[x1, y1, x2, y2]}")
    if x1 >= x2:
        raise ValueError(f"x1 >= x2 in {[x1, y1, x2, y2]}")
    if y1 >= y2:
        raise ValueError(f"y1 >= y2 in {[x1, y1, x2, y2]}")
    return RoiBox(x1 / GRID, y1 / GRID, x2 / GRID, y2 / GRID)


def to_grid(v: float) -> int:
    """Round-half-up onto the 0..1000 grid."""
    return int(math.floor(v * GRID + 0.5))


# ---------------------------------------------------------------------------
# Parsing


class _Cursor:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def byte(self, char_pos: int) -> int:
        return len(self.text[:char_pos].encode("utf-8"))

    def fail(self, message: str, char_pos: int | None = None) -> FlowParseError:
        return FlowParseError(message, self.byte(self.pos if char_pos is None else char_pos))

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def next_tag(self) -> re.Match | None:
        return _TAG_RE.search(self.text, self.pos)


def _parse_coords(body: str, cur: _Cursor, start: int) -> RoiBox:
    stripped = body.strip()
    if not (stripped.startswith("[") and stripped.endswith("]")):
        raise cur.fail("coordinate list must be enclosed in [ ]", start)
    items = stripped[1:-1].split(",")
    if len(items) != 4:
        raise cur.fail(f"expected 4 coordinates, got {len(items)}", start)
    values = []
    for item in items:
        item = item.strip()
        if not _INT_RE.fullmatch(item):
            raise cur.fail(f"coordinate {item!r} is not an integer", start)
        if len(item.lstrip("+-")) > 9:
            raise cur.fail(f"coordinate {item[:12]}... outside 0..{GRID}", start)
        values.append(int(item))
    try:
        return normalize_roi(values)
    except (ValueError, GeometryError) as exc:
        raise cur.fail(str(exc), start) from None


def parse_flow(text: Union[str, bytes]) -> PerceptualFlow:
    """Parse a transcript into a :class:`PerceptualFlow`.

    Raises :class:`FlowParseError` with a byte offset on any malformed input.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FlowParseError("invalid UTF-8", exc.start) from None
    cur = _Cursor(text)

    cur.skip_ws()
    if not text.startswith("<analyze>", cur.pos):
        raise cur.fail("missing <analyze> block")
    cur.pos += len("<analyze>")
    m = cur.next_tag()
    if m is None or m.group() != "</analyze>":
        raise cur.fail("unterminated <analyze> block", m.start() if m else len(text))
    plan_text = text[cur.pos : m.start()].strip()
    if not plan_text:
        raise cur.fail("empty <analyze> block")
    cur.pos = m.end()

    cur.skip_ws()
    if not text.startswith("<localize>", cur.pos):
        raise cur.fail("expected <localize> after </analyze>")
    cur.pos += len("<localize>")

    states: list[PerceptualState] = []
    terminated = False
    while True:
        m = cur.next_tag()
        gap = text[cur.pos : m.start() if m else len(text)]
        if gap.strip():
            raise cur.fail("text outside a <box> caption", cur.pos + (len(gap) - len(gap.lstrip())))
        if m is None:
            cur.pos = len(text)
            break
        tag = m.group()
        if tag == "</localize>":
            cur.pos = m.end()
            terminated = True
            break
        if tag != "<box>":
            raise cur.fail(f"unexpected {tag} inside <localize>", m.start())
        box_start = m.end()
        close = _TAG_RE.search(text, box_start)
        if close is None or close.group() != "</box>":
            raise cur.fail("unterminated <box>", close.start() if close else len(text))
        roi = _parse_coords(text[box_start : close.start()], cur, box_start)
        cap_start = close.end()
        nxt = _TAG_RE.search(text, cap_start)
        cap_end = nxt.start() if nxt else len(text)
        caption = text[cap_start:cap_end].strip()
        if not caption:
            raise cur.fail("box without following caption text", cap_start)
        states.append(PerceptualState(roi, caption))
        cur.pos = cap_end

    suffix = text[cur.pos :] if terminated else ""
    if terminated:
        # suffix is opaque, but a second localize block is structural
        for m in _TAG_RE.finditer(text, cur.pos):
            if m.group() in ("<localize>", "</localize>"):
                raise cur.fail("repeated <localize> block", m.start())
    return PerceptualFlow(PlanningState(plan_text), tuple(states), terminated, suffix)


def serialize_flow(flow: PerceptualFlow) -> str:
    """Canonical transcript for ``flow``; inverse of :func:`parse_flow` on grid boxes."""
    texts = [flow.planning.text] + [s.caption for s in flow.states]
    for t in texts:
        m = _TAG_RE.search(t)
        if m:
            raise ValueError(f"tag {m.group()} inside free text {t!r} would not survive parsing")
    parts = [f"<analyze>{flow.planning.text}</analyze><localize>"]
    body = []
    for s in flow.states:
        r = s.roi
        coords = ", ".join(str(to_grid(v)) for v in (r.x1, r.y1, r.x2, r.y2))
        body.append(f"<box>[{coords}]</box> {s.caption}")
    parts.append(" ".join(body))
    if flow.terminated:
        parts.append("</localize>")
        parts.append(flow.suffix)
    return "".join(parts)


def flow_to_json(flow: PerceptualFlow) -> dict:
    return {
        "planning": flow.planning.text,
        "states": [
            {
                "box": [to_grid(v) for v in s.roi.as_tuple()],
                "roi": list(s.roi.as_tuple()),
                "caption": s.caption,
            }
            for s in flow.states
        ],
        "terminated": flow.terminated,
        "suffix": flow.suffix,
    }


def flow_from_json(doc: dict) -> PerceptualFlow:
    states = []
    for s in doc.get("states", []):
        if "box" in s:
            roi = normalize_roi(s["box"])
        else:
            roi = RoiBox.of(s["roi"])
        states.append(PerceptualState(roi, str(s["caption"])))
    return PerceptualFlow(
        PlanningState(str(doc["planning"])),
        tuple(states),
        bool(doc.get("terminated", False)),
        str(doc.get("suffix", "")),
    )
