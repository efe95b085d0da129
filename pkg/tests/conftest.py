import numpy as np
import pytest

from supergraph.imageio import Image, PixelFeatureMap, synthetic_scene, write_ppm


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def scene_ppm(tmp_path):
    path = tmp_path / "scene.ppm"
    write_ppm(path, synthetic_scene(64, 48, seed=3))
    return path


def feature_map(rng, h, w, d=3, pos_scale=0.7):
    return PixelFeatureMap.from_features(rng.normal(size=(h, w, d)) * 10, pos_scale)


def constant_image(h, w, rgb=(90, 140, 200)):
    return Image.from_array(np.broadcast_to(np.array(rgb), (h, w, 3)))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
