"""
File formats: scenes, segment lists, VP results and benchmark tables.

All JSON is written with sorted keys and two-space indent; floats go through
repr, so a scene read back and written again is byte-identical.
"""
import csv
import json
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from ba import PointObservation, SegmentObservation
from errors import ConfigError
from geometry import CameraIntrinsics, PluckerLine, Pose, Segment2D
from synth import BenchReport, Scene
from vanish import VPResult

logger = logging.getLogger(__name__)

SCENE_FORMAT = "axisline-scene/1"
CSV_HEADER = ("scenario", "param", "seed", "time_s", "error_l", "trans_rmse")

PathLike = Union[str, Path]


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _load(path: PathLike, what: str):
    """
    Parse a JSON file.

    Raises:
        ConfigError: unreadable file or JSON syntax error (with line number)
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(what, f"cannot read {path}: {e.strerror or e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(what, f"invalid JSON in {path}: {e.msg}", e.lineno) from e


def _floats(values) -> list:
    return np.asarray(values, dtype=float).tolist()


def _pose_to_json(pose: Pose) -> dict:
    return {"rotation": _floats(pose.rotation), "translation": _floats(pose.translation)}


def _pose_from_json(data: dict, where: str) -> Pose:
    try:
        return Pose(np.array(data["rotation"], dtype=float), np.array(data["translation"], dtype=float))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(where, f"invalid pose: {e}") from e


def _line_to_json(line: PluckerLine) -> dict:
    return {"n": _floats(line.n), "v": _floats(line.v)}


def _line_from_json(data: dict, where: str) -> PluckerLine:
    try:
        return PluckerLine(np.array(data["n"], dtype=float), np.array(data["v"], dtype=float))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(where, f"invalid line: {e}") from e


# ---------------------------------------------------------------------------
# Scenes
# ---------------------------------------------------------------------------

def scene_to_json(scene: Scene) -> str:
    k = scene.k
    doc = {
        "format": SCENE_FORMAT,
        "scenario": scene.scenario,
        "seed": scene.seed,
        "intrinsics": {"fx": float(k.fx), "fy": float(k.fy), "cx": float(k.cx), "cy": float(k.cy)},
        "axes": [
            {"id": j, "true": _floats(scene.axes_true[j]), "init": _floats(scene.axes_init[j])}
            for j in sorted(scene.axes_true)
        ],
        "poses": [
            {
                "id": i,
                "fixed": i in scene.fixed_poses,
                "true": _pose_to_json(scene.poses_true[i]),
                "init": _pose_to_json(scene.poses_init[i]),
            }
            for i in sorted(scene.poses_true)
        ],
        "points": [
            {"id": i, "true": _floats(scene.points_true[i]), "init": _floats(scene.points_init[i])}
            for i in sorted(scene.points_true)
        ],
        "lines": [
            {
                "id": i,
                "axis": scene.line_axis[i],
                "true": _line_to_json(scene.lines_true[i]),
                "init": _line_to_json(scene.lines_init[i]),
                "anchor": (
                    {"pixel": _floats(scene.anchors[i][0]), "ref": scene.anchors[i][1]}
                    if i in scene.anchors else None
                ),
            }
            for i in sorted(scene.lines_true)
        ],
        "point_obs": [
            {"pose": o.pose_id, "point": o.point_id, "pixel": _floats(o.pixel)} for o in scene.point_obs
        ],
        "segment_obs": [
            {"pose": o.pose_id, "line": o.line_id, "s": _floats(o.segment.s), "e": _floats(o.segment.e)}
            for o in scene.segment_obs
        ],
    }
    return _dump(doc)


def scene_from_json(doc: dict) -> Scene:
    """
    Raises:
        ConfigError: wrong format tag or malformed entries
    """
    if not isinstance(doc, dict) or doc.get("format") != SCENE_FORMAT:
        raise ConfigError("format", f"expected {SCENE_FORMAT!r}")
    try:
        k = CameraIntrinsics(**doc["intrinsics"])
        axes = doc["axes"]
        poses = doc["poses"]
        points = doc["points"]
        lines = doc["lines"]
        return Scene(
            scenario=doc["scenario"],
            seed=int(doc["seed"]),
            k=k,
            axes_true={a["id"]: np.array(a["true"], dtype=float) for a in axes},
            line_axis={ln["id"]: ln["axis"] for ln in lines},
            poses_true={p["id"]: _pose_from_json(p["true"], f"poses[{p['id']}].true") for p in poses},
            points_true={p["id"]: np.array(p["true"], dtype=float) for p in points},
            lines_true={ln["id"]: _line_from_json(ln["true"], f"lines[{ln['id']}].true") for ln in lines},
            anchors={
                ln["id"]: (np.array(ln["anchor"]["pixel"], dtype=float), ln["anchor"]["ref"])
                for ln in lines if ln.get("anchor") is not None
            },
            point_obs=[
                PointObservation(o["pose"], o["point"], np.array(o["pixel"], dtype=float))
                for o in doc["point_obs"]
            ],
            segment_obs=[
                SegmentObservation(o["pose"], o["line"], Segment2D(o["s"], o["e"])) for o in doc["segment_obs"]
            ],
            fixed_poses={p["id"] for p in poses if p["fixed"]},
            poses_init={p["id"]: _pose_from_json(p["init"], f"poses[{p['id']}].init") for p in poses},
            points_init={p["id"]: np.array(p["init"], dtype=float) for p in points},
            lines_init={ln["id"]: _line_from_json(ln["init"], f"lines[{ln['id']}].init") for ln in lines},
            axes_init={a["id"]: np.array(a["init"], dtype=float) for a in axes},
        )
    except KeyError as e:
        raise ConfigError(str(e.args[0]), "missing field in scene file") from e
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError("scene", f"malformed scene file: {e}") from e


def write_scene(scene: Scene, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(scene_to_json(scene), encoding="utf-8")
    logger.info(f"[STORAGE] Scene written to {path}")
    return path


def read_scene(path: PathLike) -> Scene:
    return scene_from_json(_load(path, "scene"))


# ---------------------------------------------------------------------------
# Segments and VP results
# ---------------------------------------------------------------------------

def read_segments(path: PathLike) -> Tuple[List, List[Segment2D]]:
    """
    Segment list: either a bare list or {"segments": [...]}, entries
    {"id": ..., "s": [x, y], "e": [x, y]}. Ids default to list positions.

    Raises:
        ConfigError: malformed file, naming the offending entry
    """
    doc = _load(path, "segments")
    entries = doc.get("segments") if isinstance(doc, dict) else doc
    if not isinstance(entries, list):
        raise ConfigError("segments", "expected a list of segments")
    ids, segments = [], []
    for i, entry in enumerate(entries):
        try:
            segments.append(Segment2D(entry["s"], entry["e"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"segments[{i}]", f"invalid segment: {e}") from e
        ids.append(entry.get("id", i))
    return ids, segments


def write_segments(segments: Sequence[Segment2D], path: PathLike, ids: Sequence = None) -> Path:
    ids = list(range(len(segments))) if ids is None else list(ids)
    doc = {"segments": [{"id": i, "s": _floats(seg.s), "e": _floats(seg.e)} for i, seg in zip(ids, segments)]}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dump(doc), encoding="utf-8")
    return path


def vp_result_to_dict(result: VPResult) -> dict:
    return {
        "proposal_count": result.proposal_count,
        "best_index": result.best_index,
        "vps": [_floats(vp) for vp in result.vps.values()],
        "vp_labels": list(result.vps),
        "residuals": {label: float(r) for label, r in result.residuals.items()},
        "classes": {str(seg_id): label for seg_id, label in result.classes.items()},
    }


def write_vp_result(result: VPResult, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dump(vp_result_to_dict(result)), encoding="utf-8")
    logger.info(f"[STORAGE] VP result written to {path}")
    return path


# ---------------------------------------------------------------------------
# Benchmark tables
# ---------------------------------------------------------------------------

def write_bench_csv(report: BenchReport, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for row in report.rows:
            writer.writerow([row.scenario, row.param, row.seed, repr(row.time_s), repr(row.error_l), repr(row.trans_rmse)])
    logger.info(f"[STORAGE] {len(report.rows)} benchmark rows written to {path}")
    return path


def read_bench_csv(path: PathLike) -> List[Dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def bench_summary(report: BenchReport) -> dict:
    counts = {}
    for row in report.rows:
        counts.setdefault(row.param, row.parameter_counts)
    return {
        "cells": [
            {
                "scenario": r.scenario,
                "param": r.param,
                "time_s": r.time_s,
                "error_l": r.error_l,
                "trans_rmse": r.trans_rmse,
                "n_runs": r.n_runs,
                "n_diverged": r.n_diverged,
            }
            for r in report.results
        ],
        "parameter_counts": counts,
        "diverged": sum(row.diverged for row in report.rows),
    }


def write_bench_summary(report: BenchReport, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # NaN means an all-diverged cell; json writes it as NaN
    path.write_text(_dump(bench_summary(report)), encoding="utf-8")
    return path
