import numpy as np
import pytest

from ctscreen.imageio import GrayImage, synth_dataset


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Six 128x128 synthetic slices (3 per class) with a manifest."""
    out = tmp_path_factory.mktemp("synth_small")
    man = synth_dataset(seed=5, n_per_class=3, out_dir=out, size=128)
    return out, man


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h=32, w=32) -> GrayImage:
    return GrayImage.from_array(rng.integers(0, 256, size=(h, w), dtype=np.uint8))


# --- acceptance summary ----------------------------------------------------------

_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.outcome != "passed":
        prev = _ACCEPTANCE.get(name)
        if prev != "FAIL":
            _ACCEPTANCE[name] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        number, _, label = name.removeprefix("test_criterion_").partition("_")
        terminalreporter.write_line(f"criterion {number} [{_ACCEPTANCE[name]}] {label.replace('_', ' ')}")
