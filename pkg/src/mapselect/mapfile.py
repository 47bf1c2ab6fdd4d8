"""Versioned on-disk formats for maps and selections.

Both formats are line-oriented text (human-diffable); an optional gzip
wrapper is detected on read by the magic bytes and chosen on write by a
`.gz` suffix.  Rotations are stored as unit quaternions (w, x, y, z).
"""

from __future__ import annotations

import gzip
import io

import numpy as np

from .errors import DataError, ValidationError
from .geometry import CameraIntrinsics, SE3, matrix_to_quat, quat_to_matrix
from .map_model import Keyframe, MapPoint, Observation, SlamMap, validate

MAP_FORMAT_VERSION = "mapselect/1"
SELECTION_FORMAT_VERSION = "mapselect-selection/1"
_GZIP_MAGIC = b"\x1f\x8b"


def _open_text_read(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == _GZIP_MAGIC:
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def _open_text_write(path):
    if str(path).endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, "wb"), encoding="utf-8", newline="\n")
    return open(path, "w", encoding="utf-8", newline="\n")


def _fmt(x) -> str:
    return "%.17g" % float(x)


def _pose_fields(pose: SE3):
    q = matrix_to_quat(pose.rotation)
    return [_fmt(v) for v in q] + [_fmt(v) for v in pose.translation]


def _parse_pose(fields):
    q = np.array([float(v) for v in fields[:4]])
    if abs(np.linalg.norm(q) - 1.0) > 1e-6:
        raise DataError("quaternion %s is not unit within 1e-6" % (fields[:4],))
    tr = np.array([float(v) for v in fields[4:7]])
    return SE3(quat_to_matrix(q), tr)


def save_map(path, m: SlamMap, ground_truth=None):
    """Write a map (and optional ground-truth trajectory) to `path`."""
    with _open_text_write(path) as fh:
        fh.write(MAP_FORMAT_VERSION + "\n")
        c = m.camera
        fh.write("camera %s %s %s %s %s\n" % tuple(_fmt(v) for v in (c.fx, c.fy, c.cx, c.cy, c.baseline)))
        for k in sorted(m.keyframes, key=lambda k: k.index):
            fh.write(
                "keyframe %d %d %s %d\n"
                % (k.id, k.index, " ".join(_pose_fields(k.pose)), int(k.is_loop_frame))
            )
        for p in m.points:
            fh.write("point %d %s\n" % (p.id, " ".join(_fmt(v) for v in p.position)))
        for o in m.observations:
            fh.write(
                "obs %d %d %s %s %s\n"
                % (
                    o.point_id,
                    o.frame_id,
                    o.kind,
                    " ".join(_fmt(v) for v in o.measurement),
                    _fmt(o.sigma),
                )
            )
        if ground_truth is not None:
            for j, pose in enumerate(ground_truth, start=1):
                fh.write("gt_pose %d %s\n" % (j, " ".join(_pose_fields(pose))))


def load_map(path, check=True):
    """Read a map file; returns (SlamMap, ground-truth pose list or None).

    With check=True (default) the map must pass validation; diagnostics are
    raised as a ValidationError.
    """
    camera = None
    keyframes, points, observations = [], [], []
    gt = {}
    with _open_text_read(path) as fh:
        header = fh.readline().strip()
        if header != MAP_FORMAT_VERSION:
            raise DataError("unsupported map format %r (want %r)" % (header, MAP_FORMAT_VERSION))
        for lineno, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag, fields = parts[0], parts[1:]
            try:
                if tag == "camera":
                    camera = CameraIntrinsics(*(float(v) for v in fields[:5]))
                elif tag == "keyframe":
                    pose = _parse_pose(fields[2:9])
                    keyframes.append(
                        Keyframe(int(fields[0]), int(fields[1]), pose, bool(int(fields[9])))
                    )
                elif tag == "point":
                    points.append(MapPoint(int(fields[0]), [float(v) for v in fields[1:4]]))
                elif tag == "obs":
                    kind = fields[2]
                    n_meas = 3 if kind == "stereo" else 2
                    meas = [float(v) for v in fields[3 : 3 + n_meas]]
                    observations.append(
                        Observation(int(fields[0]), int(fields[1]), kind, meas, float(fields[3 + n_meas]))
                    )
                elif tag == "gt_pose":
                    gt[int(fields[0])] = _parse_pose(fields[1:8])
                else:
                    raise DataError("unknown record %r" % (tag,))
            except (ValueError, IndexError):
                raise DataError("malformed %s record at line %d" % (tag, lineno))
    if camera is None:
        raise DataError("map file has no camera record")
    m = SlamMap(camera, keyframes, points, observations)
    if check:
        diags = validate(m)
        if diags:
            raise ValidationError("; ".join(diags[:20]))
    gt_list = [gt[j] for j in sorted(gt)] if gt else None
    return m, gt_list


def save_selection(path, selection):
    """Write a selection (ids sorted) plus run metadata."""
    with _open_text_write(path) as fh:
        fh.write(SELECTION_FORMAT_VERSION + "\n")
        fh.write("meta kind %s\n" % selection.kind)
        fh.write("meta method %s\n" % selection.method)
        fh.write("meta budget %d\n" % selection.k)
        fh.write("meta value %s\n" % _fmt(selection.value))
        fh.write("meta seconds %s\n" % _fmt(selection.seconds))
        fh.write("meta gain_evals %d\n" % selection.gain_evals)
        for pid in sorted(selection.ids):
            fh.write("select %d\n" % pid)


def load_selection(path):
    """Read a selection file; returns (sorted id list, metadata dict)."""
    ids, meta = [], {}
    with _open_text_read(path) as fh:
        header = fh.readline().strip()
        if header != SELECTION_FORMAT_VERSION:
            raise DataError(
                "unsupported selection format %r (want %r)" % (header, SELECTION_FORMAT_VERSION)
            )
        for lineno, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                if parts[0] == "meta":
                    meta[parts[1]] = parts[2]
                elif parts[0] == "select":
                    ids.append(int(parts[1]))
                else:
                    raise DataError("unknown record %r" % (parts[0],))
            except (ValueError, IndexError):
                raise DataError("malformed record at line %d" % lineno)
    return sorted(ids), meta
