import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from jointscene.ontology import desk_ontology  # noqa: E402
from jointscene.procedural import synth_background, synth_event  # noqa: E402
from jointscene.synth import EventCorpus  # noqa: E402

ACCEPTANCE_RESULTS: dict = {}


@pytest.fixture(scope="session")
def desk():
    return desk_ontology()


@pytest.fixture(scope="session")
def desk_corpus(desk):
    """Two procedural sources per desk event class, tripled by gain."""
    sources = [(event, f"{event}_{k}", synth_event(i, np.random.default_rng([7, i, k])))
               for i, event in enumerate(desk.event_classes) for k in range(2)]
    return EventCorpus.from_sources(sources)


@pytest.fixture(scope="session")
def desk_backgrounds(desk):
    return {scene: synth_background(i, 0, 6.0) for i, scene in enumerate(desk.scene_classes)}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def acceptance():
    """Record one criterion result; reported in the terminal summary."""
    def record(number: int, passed: bool, detail: str):
        ACCEPTANCE_RESULTS[number] = (bool(passed), detail)
        line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} {detail}"
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
