import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tsrm.geometry import Point2, Polygon
from tsrm.perception import visible
from tsrm.posegraph import build_graph
from tsrm.scene import (GenerationParams, ObjectInstance, Pose, Scene, SceneConfig, SceneParseError,
                        SceneValidationError, connected_components, dumps_scene, generate_scene, load_scene,
                        loads_scene, pose_to_world, save_scene)


def point_in_rect_strict(x, y, x0, y0, x1, y1):
    return x0 < x < x1 and y0 < y < y1


def test_pose_to_world():
    assert pose_to_world(Pose(0, 0, 0, 0), SceneConfig(grid_step=0.25)) == (Point2(0.125, 0.125), 0.0)
    assert pose_to_world(Pose(3, 1, 0, 0), SceneConfig(grid_step=0.5))[0] == Point2(1.75, 0.75)
    assert pose_to_world(Pose(3, 1, 270, 0), SceneConfig())[1] == 270


@pytest.mark.parametrize("kw", [dict(grid_step=0), dict(rot_step=70), dict(pitch_levels=(0, -30)),
                                dict(pitch_levels=(-30, 30)), dict(success_radius=0), dict(max_episode_length=0)])
def test_config_invariants(kw):
    with pytest.raises(SceneValidationError):
        SceneConfig(**kw)


def test_same_seed_byte_identical():
    assert dumps_scene(generate_scene(11)) == dumps_scene(generate_scene(11))
    assert dumps_scene(generate_scene(11)) != dumps_scene(generate_scene(12))


def test_obstacle_free_cell_count_matches_brute_force():
    params = GenerationParams(width_range=(4, 4), depth_range=(4, 4), notch_prob=0.0, obstacle_count=(0, 0))
    s = generate_scene(5, params)
    outer = s.room_bounds.outer
    xs, ys = [x for x, _ in outer], [y for _, y in outer]
    g = s.config.grid_step
    brute = {(i, j) for i in range(40) for j in range(40)
             if point_in_rect_strict((i + .5) * g, (j + .5) * g, min(xs), min(ys), max(xs), max(ys))}
    assert s.reachable_cells == brute
    assert len(brute) == 16 * 16


def test_one_object():
    s = generate_scene(3, GenerationParams(object_count=(1, 1)))
    assert len(s.objects) == 1


@pytest.mark.parametrize("seed", range(12))
def test_generated_scene_invariants(seed):
    p = GenerationParams(obstacle_count=(2, 5))
    s = generate_scene(seed, p)
    assert len(connected_components(s.reachable_cells)) == 1
    shp = s.room_bounds.to_shapely()
    import shapely
    for i, j in s.reachable_cells:
        assert shp.contains(shapely.Point(*s.cell_center(i, j)))
        for r in s.obstacles:
            assert not point_in_rect_strict(*s.cell_center(i, j), *r)
    # rectilinear outline
    ring = s.room_bounds.outer
    for a, b in zip(ring, ring[1:] + ring[:1]):
        assert a[0] == b[0] or a[1] == b[1]
    g = build_graph(s)
    for o in s.objects:
        assert any(visible(g.pose_of(k), o, s) for k in range(g.n_states))


def test_round_trip_file(tmp_path):
    s = generate_scene(21, GenerationParams(obstacle_count=(1, 3)))
    save_scene(s, tmp_path / "s.json")
    t = load_scene(tmp_path / "s.json")
    assert t == s
    assert dumps_scene(t) == dumps_scene(s)


@given(st.integers(0, 10_000))
def test_round_trip_property(seed):
    s = generate_scene(seed)
    assert loads_scene(dumps_scene(s)) == s


def test_field_order_is_fixed():
    d = json.loads(dumps_scene(generate_scene(1)))
    assert list(d) == ["id", "config", "roomBounds", "obstacles", "objects"]
    assert list(d["config"]) == ["gridStep", "rotStep", "pitchLevels", "fovHalfAngle", "frustumNearFar",
                                 "successRadius", "maxEpisodeLength"]


def test_truncated_file_is_parse_error():
    text = dumps_scene(generate_scene(2))
    with pytest.raises(SceneParseError):
        loads_scene(text[: len(text) // 2])


def test_missing_field_named():
    d = json.loads(dumps_scene(generate_scene(2)))
    del d["config"]["successRadius"]
    with pytest.raises(SceneParseError, match="config.successRadius"):
        loads_scene(json.dumps(d))


def test_wrong_type_named():
    d = json.loads(dumps_scene(generate_scene(2)))
    d["objects"][0]["x"] = "one"
    with pytest.raises(SceneParseError, match=r"objects\[0\]\.x"):
        loads_scene(json.dumps(d))


def test_outside_room_is_validation_error():
    d = json.loads(dumps_scene(generate_scene(2)))
    d["objects"][0]["x"] = 999.0
    with pytest.raises(SceneValidationError):
        loads_scene(json.dumps(d))
    d = json.loads(dumps_scene(generate_scene(2)))
    d["obstacles"] = [[50, 50, 51, 51]]
    with pytest.raises(SceneValidationError):
        loads_scene(json.dumps(d))


def test_scene_without_cells_rejected():
    with pytest.raises(SceneValidationError):
        Scene("tiny", SceneConfig(grid_step=0.5), Polygon.rectangle(0, 0, 0.5, 0.5), ((0, 0, 0.5, 0.5),))


def test_empty_category_rejected():
    with pytest.raises(SceneValidationError):
        ObjectInstance("", Point2(0, 0))


def test_connected_components():
    assert len(connected_components({(0, 0), (0, 1), (2, 2)})) == 2
    assert len(connected_components({(0, 0), (1, 1)})) == 2
