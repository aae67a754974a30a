import json

import hypothesis
import numpy as np
import pytest

from owdet.synth import SynthSpec, gen_corpus

np.seterr(all="warn", under="ignore")

hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=25, deadline=None)
hypothesis.settings.load_profile("ci")


@pytest.fixture
def tiny_coco(tmp_path):
    data = {
        "images": [{"id": 1, "width": 100, "height": 80, "file_name": "a.jpg"}],
        "annotations": [{"id": 7, "image_id": 1, "category_id": 1, "bbox": [10, 10, 20, 30], "iscrowd": 0}],
        "categories": [{"id": 1, "name": "person", "supercategory": "person"}],
    }
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(data))
    return path


@pytest.fixture(scope="session")
def corpus():
    return gen_corpus(SynthSpec(seed=11, n_images=40))


_CRITERIA: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    label = mark.args[0]
    if call.excinfo is not None and call.excinfo.errisinstance(pytest.skip.Exception):
        _CRITERIA[label] = "SKIP"
    elif call.when == "call" or call.excinfo is not None:
        if call.excinfo is not None:
            _CRITERIA[label] = "FAIL"
        else:
            _CRITERIA.setdefault(label, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA, key=lambda s: int(s.split()[0])):
        terminalreporter.write_line(f"{_CRITERIA[label]:4}  {label}")
