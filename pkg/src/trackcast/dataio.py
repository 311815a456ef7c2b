"""File formats: episode datasets (JSONL), maps (npz), sample sets, reports.

Every file carries a format_version and is written deterministically —
same inputs, same bytes — so regenerating a dataset under a fixed seed
reproduces it exactly. Trajectories are stored as integer world units;
quantization moves each endpoint by at most sqrt(0.5), which is why
loaded episodes are validated with a small slack on the speed bound.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, VersionError
from .evaluation import EvalReport, HorizonStats
from .sim.episodes import MAX_STEP_WORLD, EpisodeRecord
from .sim.maps import MapSpec

DATASET_VERSION = (1, 0)
MAP_VERSION = (1, 0)
SAMPLES_VERSION = (1, 0)
REPORT_VERSION = (1, 0)

# Integer quantization can stretch a step by two corner moves of sqrt(0.5).
QUANT_STEP_SLACK = math.sqrt(2.0)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _check_version(found, expected, what: str) -> None:
    if (
        not isinstance(found, (list, tuple))
        or len(found) != 2
        or not all(isinstance(v, int) for v in found)
    ):
        raise VersionError(f"{what}: malformed format_version {found!r}")
    if found[0] != expected[0]:
        raise VersionError(
            f"{what}: major version {found[0]} unsupported (reader supports {expected[0]})"
        )


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


# -- maps ------------------------------------------------------------------


def _write_npz(path: Path, arrays: dict[str, np.ndarray]) -> None:
    """np.savez with pinned zip metadata so rewrites are byte-identical."""
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            bio = io.BytesIO()
            np.lib.format.write_array(bio, np.ascontiguousarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.external_attr = 0o600 << 16
            zf.writestr(info, bio.getvalue())
    tmp.replace(path)


def save_map(path, map_spec: MapSpec, *, seed: int = 0, config_hash: str = "") -> None:
    path = Path(path)
    _write_npz(path, {
        "format_version": np.array(MAP_VERSION, dtype=np.int64),
        "size": np.float64(map_spec.size),
        "obstacles": map_spec.obstacles.astype(np.float64),
        "visibility": map_spec.visibility.astype(np.float64),
        "hideouts": map_spec.hideouts.astype(np.float64),
        "rendezvous_points": map_spec.rendezvous_points.astype(np.float64),
        "seed": np.int64(seed),
        "config_hash": np.array(config_hash),
    })


def load_map(path) -> MapSpec:
    path = Path(path)
    try:
        data = np.load(path)
    except (zipfile.BadZipFile, ValueError) as err:
        raise DataError(f"{path}: not a map file ({err})") from err
    with data:
        if "format_version" not in data:
            raise VersionError(f"{path}: missing format_version")
        _check_version([int(v) for v in data["format_version"]], MAP_VERSION, str(path))
        return MapSpec(
            size=float(np.asarray(data["size"]).ravel()[0]),
            obstacles=data["obstacles"],
            visibility=data["visibility"],
            hideouts=data["hideouts"],
            rendezvous_points=data["rendezvous_points"],
        )


# -- episode datasets --------------------------------------------------------


def _record_to_json(record: EpisodeRecord) -> dict:
    quant = np.rint(record.trajectories).astype(np.int64)
    return {
        "version": list(DATASET_VERSION),
        "episode_id": int(record.episode_id),
        "behavior": record.behavior,
        "goal_ids": [int(g) for g in record.goal_ids],
        "trajectories": quant.tolist(),
        "detections": [
            [int(t), int(a), int(np.rint(x)), int(np.rint(y))]
            for t, a, x, y in record.detections
        ],
        "detection_rate": float(record.detection_rate),
        "map_id": record.map_id,
    }


def _record_from_json(obj: dict, path: str, line_no: int) -> EpisodeRecord:
    try:
        _check_version(obj["version"], DATASET_VERSION, f"{path}:{line_no}")
        return EpisodeRecord(
            episode_id=obj["episode_id"],
            trajectories=np.asarray(obj["trajectories"], dtype=np.float64),
            detections=[(int(t), int(a), float(x), float(y)) for t, a, x, y in obj["detections"]],
            behavior=obj["behavior"],
            goal_ids=[int(g) for g in obj["goal_ids"]],
            map_id=obj["map_id"],
            detection_rate=float(obj["detection_rate"]),
        )
    except KeyError as err:
        raise DataError(f"{path}:{line_no}: record missing field {err}") from err


def save_dataset(
    path,
    episodes: Sequence[EpisodeRecord],
    map_spec: MapSpec,
    *,
    seed: int,
    config_hash: str,
    style: str = "multi",
) -> None:
    """Write a header line plus one JSON record per episode.

    Trajectories (and detection coordinates, to keep them on-track) are
    rounded to integer world units.
    """
    path = Path(path)
    header = {
        "format_version": list(DATASET_VERSION),
        "kind": "episodes",
        "map_fingerprint": map_spec.fingerprint(),
        "map_size": map_spec.size,
        "n_episodes": len(episodes),
        "seed": int(seed),
        "config_hash": config_hash,
        "style": style,
    }
    lines = [_dumps(header)]
    lines.extend(_dumps(_record_to_json(r)) for r in episodes)
    _atomic_write_text(path, "\n".join(lines) + "\n")


def load_dataset(
    path, map_spec: MapSpec | None = None, *, validate: bool = True
) -> tuple[list[EpisodeRecord], dict]:
    """Read episodes back; optionally re-check physical invariants.

    Validation uses the declared speed bound plus quantization slack.
    """
    path = Path(path)
    with open(path) as fh:
        raw = fh.readline()
        if not raw.strip():
            raise DataError(f"{path}: empty dataset file")
        header = json.loads(raw)
        if "format_version" not in header:
            raise VersionError(f"{path}: header missing format_version")
        _check_version(header["format_version"], DATASET_VERSION, str(path))
        if header.get("kind") != "episodes":
            raise DataError(f"{path}: kind {header.get('kind')!r} is not an episode file")
        records = []
        for line_no, raw in enumerate(fh, start=2):
            if not raw.strip():
                continue
            records.append(_record_from_json(json.loads(raw), str(path), line_no))
    if len(records) != header["n_episodes"]:
        raise DataError(
            f"{path}: header declares {header['n_episodes']} episodes, found {len(records)}"
        )
    if map_spec is not None:
        if header["map_fingerprint"] != map_spec.fingerprint():
            raise DataError(f"{path}: dataset was generated against a different map")
        if validate:
            for record in records:
                try:
                    record.validate_against(map_spec, max_step=MAX_STEP_WORLD + QUANT_STEP_SLACK)
                except DataError as err:
                    raise DataError(f"{path}: {err}") from err
    return records, header


# -- sample sets -------------------------------------------------------------


def save_samples(path, entries: Iterable[dict], meta: dict) -> None:
    """Sample sets: one header line, then one line per evaluation point.

    Each entry holds episode_id, t_now, and a (samples, agents, horizon, 2)
    nested list of unit-scale coordinates.
    """
    path = Path(path)
    header = {"format_version": list(SAMPLES_VERSION), "kind": "samples", **meta}
    lines = [_dumps(header)]
    for entry in entries:
        samples = np.asarray(entry["samples"], dtype=np.float64)
        if samples.ndim != 4 or samples.shape[-1] != 2:
            raise DataError(f"samples must be (n, agents, horizon, 2), got {samples.shape}")
        lines.append(_dumps({
            "episode_id": int(entry["episode_id"]),
            "t_now": int(entry["t_now"]),
            "samples": samples.tolist(),
        }))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def load_samples(path) -> tuple[list[dict], dict]:
    path = Path(path)
    with open(path) as fh:
        raw = fh.readline()
        if not raw.strip():
            raise DataError(f"{path}: empty samples file")
        header = json.loads(raw)
        if "format_version" not in header:
            raise VersionError(f"{path}: header missing format_version")
        _check_version(header["format_version"], SAMPLES_VERSION, str(path))
        if header.get("kind") != "samples":
            raise DataError(f"{path}: kind {header.get('kind')!r} is not a samples file")
        entries = []
        for raw in fh:
            if not raw.strip():
                continue
            obj = json.loads(raw)
            entries.append({
                "episode_id": int(obj["episode_id"]),
                "t_now": int(obj["t_now"]),
                "samples": np.asarray(obj["samples"], dtype=np.float64),
            })
    return entries, header


# -- evaluation reports --------------------------------------------------------


def save_report(path, report: EvalReport, *, seed: int = 0, config_hash: str = "") -> None:
    path = Path(path)
    payload = {
        "format_version": list(REPORT_VERSION),
        "kind": "eval-report",
        "mode": report.mode,
        "n_samples": report.n_samples,
        "collision_rate": report.collision_rate,
        "per_horizon": [
            [h, s.ade, s.min_ade, s.std_err]
            for h, s in sorted(report.per_horizon.items())
        ],
        "seed": int(seed),
        "config_hash": config_hash,
    }
    _atomic_write_text(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def load_report(path) -> tuple[EvalReport, dict]:
    path = Path(path)
    obj = json.loads(path.read_text())
    if "format_version" not in obj:
        raise VersionError(f"{path}: missing format_version")
    _check_version(obj["format_version"], REPORT_VERSION, str(path))
    report = EvalReport(
        per_horizon={
            int(h): HorizonStats(float(a), float(m), float(sem))
            for h, a, m, sem in obj["per_horizon"]
        },
        collision_rate=float(obj["collision_rate"]),
        n_samples=int(obj["n_samples"]),
        mode=obj["mode"],
    )
    return report, {"seed": obj.get("seed"), "config_hash": obj.get("config_hash")}


def report_table(report: EvalReport) -> str:
    """Tab-separated per-horizon table, ready for plotting tools."""
    rows = ["horizon\tade\tmin_ade\tstd_err"]
    for h, s in sorted(report.per_horizon.items()):
        rows.append(f"{h}\t{s.ade:.6f}\t{s.min_ade:.6f}\t{s.std_err:.6f}")
    return "\n".join(rows) + "\n"
