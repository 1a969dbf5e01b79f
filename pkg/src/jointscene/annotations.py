"""Annotation tracks and their tab-separated text format.

File layout::

    # scene: park
    3.250000<TAB>4.100000<TAB>birdsong
    ...
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotatedEvent:
    onset: float
    offset: float
    label: str


@dataclass
class AnnotationTrack:
    scene_label: str
    events: list = field(default_factory=list)
    duration: float = 30.0

    def __post_init__(self):
        self.events = sorted(
            (e if isinstance(e, AnnotatedEvent) else AnnotatedEvent(*e) for e in self.events),
            key=lambda e: e.onset,
        )

    def validate(self, ontology=None, atol: float = 1e-6):
        for e in self.events:
            if not (0 <= e.onset < e.offset <= self.duration + atol):
                raise AnnotationError(
                    f"event {e.label!r} [{e.onset}, {e.offset}) outside [0, {self.duration}]"
                )
            if ontology is not None:
                ontology.event_index(e.label)
        if ontology is not None:
            ontology.scene_index(self.scene_label)

    def as_tuples(self) -> list[tuple[float, float, str]]:
        return [(e.onset, e.offset, e.label) for e in self.events]


def max_polyphony(events) -> int:
    """Sweep-line maximum of simultaneously active half-open intervals."""
    points = []
    for e in events:
        on, off = (e.onset, e.offset) if isinstance(e, AnnotatedEvent) else (e[0], e[1])
        points.append((on, 1))
        points.append((off, -1))
    # ends sort before starts at the same instant
    points.sort(key=lambda p: (p[0], p[1]))
    best = cur = 0
    for _, delta in points:
        cur += delta
        best = max(best, cur)
    return best


def format_annotation(track: AnnotationTrack) -> str:
    lines = [f"# scene: {track.scene_label}", f"# duration: {track.duration:.6f}"]
    lines += [f"{e.onset:.6f}\t{e.offset:.6f}\t{e.label}" for e in track.events]
    return "\n".join(lines) + "\n"


def parse_annotation(text: str, source: str = "<string>") -> AnnotationTrack:
    scene = None
    duration = 30.0
    events = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            key, value = key.strip(), value.strip()
            if key == "scene":
                scene = value
            elif key == "duration":
                try:
                    duration = float(value)
                except ValueError:
                    raise AnnotationError(f"{source}:{lineno}: bad duration {value!r}") from None
            continue
        parts = raw.rstrip("\n").split("\t")
        if len(parts) != 3:
            raise AnnotationError(
                f"{source}:{lineno}: expected onset<TAB>offset<TAB>label, got {raw!r}"
            )
        try:
            onset, offset = float(parts[0]), float(parts[1])
        except ValueError:
            raise AnnotationError(f"{source}:{lineno}: non-numeric time in {raw!r}") from None
        if not 0 <= onset < offset:
            raise AnnotationError(f"{source}:{lineno}: invalid interval [{onset}, {offset})")
        events.append(AnnotatedEvent(onset, offset, parts[2].strip()))
    if scene is None:
        raise AnnotationError(f"{source}: missing '# scene: <label>' header")
    return AnnotationTrack(scene, events, duration)


def write_annotation(track: AnnotationTrack, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_annotation(track))
    return path


def read_annotation(path) -> AnnotationTrack:
    path = Path(path)
    return parse_annotation(path.read_text(), source=str(path))
