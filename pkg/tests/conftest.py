import numpy as np
import pytest
from skimage import data as skdata

from ipsr.imgcore import PlanarImage


def natural(name: str = "astronaut") -> PlanarImage:
    arr = getattr(skdata, name)()
    if arr.ndim == 2:
        return PlanarImage(arr[None] / 255.0)
    return PlanarImage(arr[..., :3].transpose(2, 0, 1) / 255.0)


def crop(img: PlanarImage, y: int, x: int, h: int, w: int) -> PlanarImage:
    return PlanarImage(img.data[:, y : y + h, x : x + w])


@pytest.fixture(scope="session")
def astronaut() -> PlanarImage:
    return natural("astronaut")


@pytest.fixture(scope="session")
def coffee() -> PlanarImage:
    return natural("coffee")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
