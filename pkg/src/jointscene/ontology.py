"""Scene and event class ontology with scene-to-event compatibility."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml


class OntologyError(ValueError):
    pass


@dataclass(frozen=True)
class SceneOntology:
    """Ordered scene and event classes plus the allowed events per scene.

    The label layout used everywhere downstream is
    ``[scenes..., events..., background_only]``: one column per scene class,
    one per event class, and a final column that is on when no foreground
    event is active.
    """

    scene_classes: tuple[str, ...]
    event_classes: tuple[str, ...]
    compatibility: dict[str, tuple[str, ...]]
    single_scene_events: tuple[str, ...] = ()
    name: str = "custom"
    _event_index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "scene_classes", tuple(self.scene_classes))
        object.__setattr__(self, "event_classes", tuple(self.event_classes))
        object.__setattr__(self, "single_scene_events", tuple(self.single_scene_events))
        object.__setattr__(
            self, "compatibility",
            {s: tuple(self.compatibility.get(s, ())) for s in self.scene_classes},
        )
        object.__setattr__(
            self, "_event_index", {e: i for i, e in enumerate(self.event_classes)}
        )
        self.validate()

    def validate(self):
        if len(set(self.scene_classes)) != len(self.scene_classes):
            raise OntologyError("duplicate scene class")
        if len(set(self.event_classes)) != len(self.event_classes):
            raise OntologyError("duplicate event class")
        known = set(self.event_classes)
        for scene, events in self.compatibility.items():
            if not events:
                raise OntologyError(f"scene {scene!r} has no compatible events")
            unknown = set(events) - known
            if unknown:
                raise OntologyError(f"scene {scene!r} lists unknown events {sorted(unknown)}")
        counts = self.scene_counts()
        for event, n in counts.items():
            if n == 0:
                raise OntologyError(f"event {event!r} is not compatible with any scene")
            if n == 1 and event not in self.single_scene_events:
                raise OntologyError(
                    f"event {event!r} occurs in one scene but is not a declared exception"
                )

    def scene_counts(self) -> dict[str, int]:
        counts = {e: 0 for e in self.event_classes}
        for events in self.compatibility.values():
            for e in set(events):
                counts[e] += 1
        return counts

    @property
    def n_scenes(self) -> int:
        return len(self.scene_classes)

    @property
    def n_events(self) -> int:
        return len(self.event_classes)

    @property
    def n_labels(self) -> int:
        return self.n_scenes + self.n_events + 1

    def scene_index(self, scene: str) -> int:
        try:
            return self.scene_classes.index(scene)
        except ValueError:
            raise OntologyError(f"unknown scene class {scene!r}") from None

    def event_index(self, event: str) -> int:
        try:
            return self._event_index[event]
        except KeyError:
            raise OntologyError(f"unknown event class {event!r}") from None

    def event_column(self, event: str) -> int:
        return self.n_scenes + self.event_index(event)

    @property
    def background_column(self) -> int:
        return self.n_scenes + self.n_events

    def compatible_events(self, scene: str) -> tuple[str, ...]:
        self.scene_index(scene)
        return self.compatibility[scene]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "scene_classes": list(self.scene_classes),
            "event_classes": list(self.event_classes),
            "compatibility": {s: list(v) for s, v in self.compatibility.items()},
            "single_scene_events": list(self.single_scene_events),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneOntology":
        try:
            return cls(
                scene_classes=d["scene_classes"],
                event_classes=d["event_classes"],
                compatibility=d["compatibility"],
                single_scene_events=d.get("single_scene_events") or (),
                name=d.get("name", "custom"),
            )
        except KeyError as exc:
            raise OntologyError(f"ontology is missing key {exc}") from None

    @classmethod
    def load(cls, path) -> "SceneOntology":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def dump(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def _bundled(name: str) -> SceneOntology:
    text = resources.files("jointscene.data").joinpath(name).read_text()
    return SceneOntology.from_dict(yaml.safe_load(text))


def full_ontology() -> SceneOntology:
    """The full 10-scene / 32-event ontology."""
    return _bundled("full_ontology.yaml")


def desk_ontology() -> SceneOntology:
    """3 scenes / 6 events matching the procedural corpus."""
    return _bundled("desk_ontology.yaml")


def load_ontology(name) -> SceneOntology:
    """Accept a path, or one of the bundled names ``"full"`` / ``"desk"``."""
    if isinstance(name, SceneOntology):
        return name
    if name in ("full", "default"):
        return full_ontology()
    if name == "desk":
        return desk_ontology()
    return SceneOntology.load(name)
