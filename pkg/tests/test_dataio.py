"""Round-trips, byte determinism, and version gating for all file formats."""

import json
import math

import numpy as np
import pytest

from trackcast.dataio import (
    MAP_VERSION,
    QUANT_STEP_SLACK,
    load_dataset,
    load_map,
    load_report,
    load_samples,
    report_table,
    save_dataset,
    save_map,
    save_report,
    save_samples,
)
from trackcast.errors import DataError, VersionError
from trackcast.evaluation import EvalReport, HorizonStats
from trackcast.sim import generate_dataset, generate_map
from trackcast.sim.episodes import EpisodeConfig, EpisodeRecord
from trackcast.sim.maps import MapSpec


@pytest.fixture(scope="module")
def world():
    map_spec = generate_map(size=512.0, n_obstacles=6, rng=np.random.default_rng(0))
    cfg = EpisodeConfig(n_agents=2, episode_len=60, detection_rate=0.15)
    episodes = generate_dataset(map_spec, cfg, n_episodes=4, seed=11)
    return map_spec, episodes


class TestMapFiles:
    def test_round_trip(self, world, tmp_path):
        map_spec, _ = world
        path = tmp_path / "map.npz"
        save_map(path, map_spec, seed=3, config_hash="abc")
        loaded = load_map(path)
        assert loaded.size == map_spec.size
        np.testing.assert_array_equal(loaded.obstacles, map_spec.obstacles)
        np.testing.assert_array_equal(loaded.visibility, map_spec.visibility)
        assert loaded.fingerprint() == map_spec.fingerprint()

    def test_rewrite_is_byte_identical(self, world, tmp_path):
        map_spec, _ = world
        a, b = tmp_path / "a.npz", tmp_path / "b.npz"
        save_map(a, map_spec)
        save_map(b, map_spec)
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_major_version_rejected(self, world, tmp_path):
        map_spec, _ = world
        path = tmp_path / "map.npz"
        save_map(path, map_spec)
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
        arrays["format_version"] = np.array([MAP_VERSION[0] + 1, 0], dtype=np.int64)
        from trackcast.dataio import _write_npz

        _write_npz(path, arrays)
        with pytest.raises(VersionError):
            load_map(path)

    def test_garbage_file_rejected(self, tmp_path):
        path = tmp_path / "map.npz"
        path.write_bytes(b"not a zip archive")
        with pytest.raises(DataError):
            load_map(path)


class TestDatasetFiles:
    def test_round_trip_preserves_fields(self, world, tmp_path):
        map_spec, episodes = world
        path = tmp_path / "episodes.jsonl"
        save_dataset(path, episodes, map_spec, seed=11, config_hash="h")
        loaded, header = load_dataset(path, map_spec)
        assert header["n_episodes"] == len(episodes)
        assert header["map_fingerprint"] == map_spec.fingerprint()
        for orig, got in zip(episodes, loaded):
            assert got.episode_id == orig.episode_id
            assert got.behavior == orig.behavior
            assert got.goal_ids == [int(g) for g in orig.goal_ids]
            assert got.detection_rate == orig.detection_rate
            np.testing.assert_array_equal(got.trajectories, np.rint(orig.trajectories))
            assert len(got.detections) == len(orig.detections)

    def test_loaded_records_pass_physical_validation(self, world, tmp_path):
        map_spec, episodes = world
        path = tmp_path / "episodes.jsonl"
        save_dataset(path, episodes, map_spec, seed=11, config_hash="h")
        load_dataset(path, map_spec, validate=True)  # raises on any violation

    def test_regeneration_is_byte_identical(self, world, tmp_path):
        map_spec, _ = world
        cfg = EpisodeConfig(n_agents=2, episode_len=60, detection_rate=0.15)
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_dataset(a, generate_dataset(map_spec, cfg, 3, seed=4), map_spec, seed=4, config_hash="h")
        save_dataset(b, generate_dataset(map_spec, cfg, 3, seed=4), map_spec, seed=4, config_hash="h")
        assert a.read_bytes() == b.read_bytes()

    def test_save_load_save_is_stable(self, world, tmp_path):
        map_spec, episodes = world
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_dataset(a, episodes, map_spec, seed=11, config_hash="h")
        loaded, _ = load_dataset(a, map_spec)
        save_dataset(b, loaded, map_spec, seed=11, config_hash="h")
        assert a.read_bytes() == b.read_bytes()

    def test_quantization_slack_on_speed_bound(self, tmp_path):
        # a legal 15.02-unit float step quantizes to 16 > MAX_STEP_WORLD
        spec = MapSpec(
            size=100.0, obstacles=np.empty((0, 3)), visibility=np.zeros((8, 8)),
            hideouts=np.array([[1.0, 1.0]]), rendezvous_points=np.array([[2.0, 2.0]]),
        )
        record = EpisodeRecord(
            episode_id=0,
            trajectories=np.array([[[0.49, 2.0], [15.51, 2.0]]]),
            detections=[],
            behavior="direct",
            goal_ids=[0],
            map_id=spec.fingerprint(),
            detection_rate=0.1,
        )
        path = tmp_path / "episodes.jsonl"
        save_dataset(path, [record], spec, seed=0, config_hash="h")
        loaded, _ = load_dataset(path, spec, validate=True)
        step = np.linalg.norm(np.diff(loaded[0].trajectories, axis=1))
        assert 15.0 < step <= 15.0 + QUANT_STEP_SLACK
        with pytest.raises(DataError):
            loaded[0].validate_against(spec)  # strict bound has no slack

    def test_wrong_map_rejected(self, world, tmp_path):
        map_spec, episodes = world
        other = generate_map(size=512.0, n_obstacles=6, rng=np.random.default_rng(9))
        path = tmp_path / "episodes.jsonl"
        save_dataset(path, episodes, map_spec, seed=11, config_hash="h")
        with pytest.raises(DataError, match="different map"):
            load_dataset(path, other)

    def test_truncated_file_rejected(self, world, tmp_path):
        map_spec, episodes = world
        path = tmp_path / "episodes.jsonl"
        save_dataset(path, episodes, map_spec, seed=11, config_hash="h")
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(DataError, match="header declares"):
            load_dataset(path)

    def test_record_version_gate(self, world, tmp_path):
        map_spec, episodes = world
        path = tmp_path / "episodes.jsonl"
        save_dataset(path, episodes, map_spec, seed=11, config_hash="h")
        lines = path.read_text().splitlines()
        rec = json.loads(lines[1])
        rec["version"] = [99, 0]
        lines[1] = json.dumps(rec, sort_keys=True, separators=(",", ":"))
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(VersionError):
            load_dataset(path)

    def test_missing_header_version_rejected(self, tmp_path):
        path = tmp_path / "episodes.jsonl"
        path.write_text('{"kind":"episodes"}\n')
        with pytest.raises(VersionError):
            load_dataset(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "episodes.jsonl"
        path.write_text("")
        with pytest.raises(DataError):
            load_dataset(path)


class TestSampleFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        entries = [
            {"episode_id": 0, "t_now": 10, "samples": rng.uniform(size=(3, 2, 8, 2))},
            {"episode_id": 1, "t_now": 0, "samples": rng.uniform(size=(3, 2, 8, 2))},
        ]
        path = tmp_path / "samples.jsonl"
        save_samples(path, entries, {"seed": 5, "config_hash": "h", "guided": True})
        loaded, header = load_samples(path)
        assert header["guided"] is True and header["seed"] == 5
        assert len(loaded) == 2
        np.testing.assert_array_equal(loaded[0]["samples"], entries[0]["samples"])
        assert loaded[1]["t_now"] == 0

    def test_bad_shape_rejected(self, tmp_path):
        with pytest.raises(DataError):
            save_samples(tmp_path / "s.jsonl", [{"episode_id": 0, "t_now": 0, "samples": np.zeros((2, 3))}], {})

    def test_version_gate(self, tmp_path):
        path = tmp_path / "s.jsonl"
        path.write_text('{"format_version":[9,0],"kind":"samples"}\n')
        with pytest.raises(VersionError):
            load_samples(path)


class TestReportFiles:
    REPORT = EvalReport(
        per_horizon={10: HorizonStats(0.21, 0.12, 0.01), 20: HorizonStats(0.3, 0.2, 0.02)},
        collision_rate=0.004,
        n_samples=30,
        mode="multi-target-unknown-origin",
    )

    def test_round_trip(self, tmp_path):
        path = tmp_path / "report.json"
        save_report(path, self.REPORT, seed=7, config_hash="deadbeef")
        loaded, meta = load_report(path)
        assert loaded == self.REPORT
        assert meta == {"seed": 7, "config_hash": "deadbeef"}

    def test_version_gate(self, tmp_path):
        path = tmp_path / "report.json"
        save_report(path, self.REPORT)
        obj = json.loads(path.read_text())
        obj["format_version"] = [2, 0]
        path.write_text(json.dumps(obj))
        with pytest.raises(VersionError):
            load_report(path)

    def test_table_output(self):
        table = report_table(self.REPORT)
        lines = table.splitlines()
        assert lines[0] == "horizon\tade\tmin_ade\tstd_err"
        assert lines[1].startswith("10\t0.210000\t0.120000")
        assert len(lines) == 3
