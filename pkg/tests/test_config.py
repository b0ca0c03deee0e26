import pytest

from spinsplat.config import THREADS_ENV_VAR, load_config, section, worker_threads
from spinsplat.exceptions import ConfigError
from spinsplat.harness.builders import (env_from_config, planner_from_config,
                                        resolution_from_config, scene_from_config,
                                        train_from_config)
from spinsplat.rendering.reference import default_scene


def test_missing_or_absent_config_is_empty(tmp_path):
    assert load_config() == {}
    assert load_config(str(tmp_path / 'nope.yaml')) == {}


def test_load_config_sections(tmp_path):
    path = tmp_path / 'config.yaml'
    path.write_text("planner:\n  width: 32\ntrain:\n  iterations: 7\n")
    config = load_config(str(path))
    assert section(config, 'planner') == {'width': 32}
    assert section(config, 'sweep') == {}


def test_malformed_configs_raise(tmp_path):
    broken = tmp_path / 'broken.yaml'
    broken.write_text("planner: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(str(broken))
    listing = tmp_path / 'list.yaml'
    listing.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(str(listing))
    with pytest.raises(ConfigError):
        section({'planner': [1, 2]}, 'planner')


def test_worker_threads_from_environment(monkeypatch):
    monkeypatch.setenv(THREADS_ENV_VAR, '3')
    assert worker_threads() == 3
    monkeypatch.setenv(THREADS_ENV_VAR, '0')
    assert worker_threads() == 1
    monkeypatch.setenv(THREADS_ENV_VAR, 'many')
    with pytest.raises(ConfigError):
        worker_threads()
    monkeypatch.delenv(THREADS_ENV_VAR)
    assert 1 <= worker_threads() <= 4


def test_planner_section_splits_into_planner_and_rig():
    planner, rig = planner_from_config({'planner': {'pause': 2.0, 'width': 20,
                                                    'elevations_deg': [15, 30]}},
                                       num_cameras=5, time_budget=None)
    assert planner.pause == 2.0 and planner.num_cameras == 5
    assert rig.width == 20 and rig.elevations_deg == (15, 30)
    with pytest.raises(ConfigError):
        planner_from_config({'planner': {'wheels': 3}})


def test_scene_env_train_and_resolution_sections():
    assert scene_from_config({}).scene_hash() == default_scene().scene_hash()
    scene = scene_from_config({'scene': {'spheres': [
        {'center': [0, 0, 0.5], 'radius': 0.5, 'albedo': [0.5, 0.5, 0.5]}]}})
    assert len(scene.spheres) == 1
    with pytest.raises(ConfigError):
        scene_from_config({'scene': {'spheres': [{'center': [0, 0, 0], 'radius': -1,
                                                  'albedo': [0.5, 0.5, 0.5]}]}})

    assert env_from_config({'env': {'degree': 2}}).degree == 2
    with pytest.raises(ConfigError):
        env_from_config({'env': {'brightness': 2}})

    assert train_from_config({'train': {'iterations': 9}}, seed=4).seed == 4
    with pytest.raises(ConfigError):
        train_from_config({'train': {'epochs': 9}})

    assert resolution_from_config({}) is None
    assert resolution_from_config({'render': {'resolution': [32, 24]}}) == (32, 24)
    assert resolution_from_config({}, (8, 8)) == (8, 8)
    with pytest.raises(ConfigError):
        resolution_from_config({'render': {'resolution': [32]}})
