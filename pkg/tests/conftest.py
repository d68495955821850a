import pytest
from hypothesis import HealthCheck, settings

from tsrm.geometry import Point2, Polygon
from tsrm.posegraph import build_graph
from tsrm.scene import ObjectInstance, Scene, SceneConfig

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def room(w, h, objects, grid=0.5, obstacles=(), scene_id="test-room", **cfg):
    return Scene(scene_id, SceneConfig(grid_step=grid, **cfg), Polygon.rectangle(0, 0, w, h), tuple(obstacles),
                 tuple(ObjectInstance(c, Point2(x, y)) for c, x, y in objects))


@pytest.fixture
def corridor():
    """Five cells of 0.5 m along +x, target at the centre of the last cell."""
    return room(2.5, 0.5, [("Mug", 2.25, 0.25)], scene_id="corridor5")


@pytest.fixture
def corridor_graph(corridor):
    return build_graph(corridor)


@pytest.fixture
def open_room():
    """Empty 8 x 8 m room, default grid, target in a corner."""
    return room(8, 8, [("Vase", 7.5, 7.5)], grid=0.25, scene_id="open8")


# acceptance criteria verdicts, printed once at the end of the session
ACCEPTANCE: dict[int, str] = {}


def record_criterion(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
