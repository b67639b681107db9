"""Dataset file formats: scans, IMU streams and trajectories.

Binary scan file, little-endian::

    header (32 bytes)
      magic          8s   b"MMSCAN\\0\\0"
      version        u16  1
      flags          u16  bit 0: per-point labels follow each frame
      reserved       u32  0
      sigma_range    f64  meters
      sigma_bearing  f64  radians
    frame record, repeated until end of file
      t              f64  seconds
      count          u32
      reserved       u32  0
      points         count * 3 * f32   x, y, z in the sensor frame
      labels         count * i32       only when flags bit 0 is set

Text scan file: one ``x y z`` (or ``x,y,z``) per line; a line ``frame <t>``
starts a new frame. Without any ``frame`` line the whole file is one frame at
``t = 0``. ``#`` starts a comment.

IMU file: CSV with header ``t,gx,gy,gz,ax,ay,az``.

Trajectory file: ``t tx ty tz qx qy qz qw`` per row, ``#`` comments allowed.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .geometry import RigidTransform
from .noise import LidarNoiseSpec
from .odometry import ImuSample
from .sim import ScanFrame

MAGIC = b"MMSCAN\x00\x00"
VERSION = 1
FLAG_LABELS = 1
_HEADER = struct.Struct("<8sHHIdd")
_FRAME = struct.Struct("<dII")


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class ScanFormatError(DataError):
    pass


def write_scans(path, frames, noise: LidarNoiseSpec | None = None, labels: bool | None = None) -> None:
    frames = list(frames)
    if noise is None:
        noise = frames[0].noise if frames else LidarNoiseSpec()
    if labels is None:
        labels = bool(frames) and all(f.gt_labels is not None for f in frames)
    flags = FLAG_LABELS if labels else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, flags, 0, noise.sigma_range, noise.sigma_bearing))
        for f in frames:
            pts = np.ascontiguousarray(f.points, dtype="<f4").reshape(-1, 3)
            fh.write(_FRAME.pack(float(f.t), pts.shape[0], 0))
            fh.write(pts.tobytes())
            if labels:
                fh.write(np.ascontiguousarray(f.gt_labels, dtype="<i4").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    offset = fh.tell()
    buf = fh.read(n)
    if len(buf) != n:
        raise ScanFormatError(f"truncated {what} at byte offset {offset}: wanted {n} bytes, got {len(buf)}")
    return buf


def _iter_binary(path, noise_override):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ScanFormatError(f"truncated header at byte offset 0 in {path}")
        magic, version, flags, _, sr, sb = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ScanFormatError(f"bad magic in {path}")
        if version != VERSION:
            raise ScanFormatError(f"unsupported scan format version {version}")
        noise = noise_override or LidarNoiseSpec(sr, sb)
        while True:
            offset = fh.tell()
            rec = fh.read(_FRAME.size)
            if not rec:
                return
            if len(rec) != _FRAME.size:
                raise ScanFormatError(f"truncated frame header at byte offset {offset}")
            t, count, _ = _FRAME.unpack(rec)
            pts = np.frombuffer(_read_exact(fh, 12 * count, "frame points"), dtype="<f4")
            labels = None
            if flags & FLAG_LABELS:
                labels = np.frombuffer(_read_exact(fh, 4 * count, "frame labels"), dtype="<i4").astype(np.int32)
            yield ScanFrame(t, pts.reshape(-1, 3).astype(np.float64), noise, None, labels)


def _iter_text(path, noise):
    noise = noise or LidarNoiseSpec()
    t, buf = 0.0, []
    started = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("frame"):
                if started or buf:
                    yield ScanFrame(t, np.array(buf, dtype=float).reshape(-1, 3), noise)
                parts = line.split()
                try:
                    t = float(parts[1]) if len(parts) > 1 else 0.0
                except ValueError:
                    raise ScanFormatError(f"{path}:{lineno}: bad frame time {parts[1]!r}") from None
                buf, started = [], True
                continue
            vals = line.replace(",", " ").split()
            if len(vals) != 3:
                raise ScanFormatError(f"{path}:{lineno}: expected 3 coordinates, got {len(vals)}")
            try:
                buf.append([float(v) for v in vals])
            except ValueError:
                raise ScanFormatError(f"{path}:{lineno}: non-numeric coordinate") from None
    if started or buf:
        yield ScanFrame(t, np.array(buf, dtype=float).reshape(-1, 3), noise)


def load_scans(path, noise: LidarNoiseSpec | None = None):
    """Stream :class:`ScanFrame` objects from a binary or text scan file.

    ``noise`` overrides the noise spec stored in a binary header and supplies
    one for text files.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"scan file not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
    if head == MAGIC:
        return _iter_binary(path, noise)
    return _iter_text(path, noise)


def write_imu(path, samples) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "gx", "gy", "gz", "ax", "ay", "az"])
        for s in samples:
            w.writerow([repr(float(s.t))] + [repr(float(v)) for v in s.gyro] + [repr(float(v)) for v in s.acc])


def load_imu(path) -> list[ImuSample]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"IMU file not found: {path}")
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t", "gx", "gy", "gz", "ax", "ay", "az"]:
            raise DataError(f"{path}: unexpected IMU header {header}")
        for lineno, row in enumerate(reader, 2):
            if len(row) != 7:
                raise DataError(f"{path}:{lineno}: expected 7 fields")
            try:
                v = [float(x) for x in row]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric field") from None
            if out and v[0] <= out[-1].t:
                raise DataError(f"{path}:{lineno}: timestamps not strictly increasing")
            out.append(ImuSample(v[0], np.array(v[1:4]), np.array(v[4:7])))
    return out


def write_trajectory(path, poses) -> None:
    """Write ``(t, RigidTransform)`` rows."""
    with open(path, "w") as fh:
        fh.write("# t tx ty tz qx qy qz qw\n")
        for t, T in poses:
            q = T.quat()
            vals = [t, *T.trans, *q]
            fh.write(" ".join(f"{v:.9f}" for v in vals) + "\n")


def load_trajectory(path) -> list[tuple[float, RigidTransform]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"trajectory file not found: {path}")
    out = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            vals = line.replace(",", " ").split()
            if len(vals) != 8:
                raise DataError(f"{path}:{lineno}: expected 8 fields, got {len(vals)}")
            try:
                t, x, y, z, qx, qy, qz, qw = (float(v) for v in vals)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric field") from None
            qn = np.linalg.norm([qx, qy, qz, qw])
            if abs(qn - 1.0) > 1e-6:
                raise DataError(f"{path}:{lineno}: quaternion norm {qn:.9f} is not 1")
            out.append((t, RigidTransform.from_quat([qx, qy, qz, qw], [x, y, z])))
    return out


def write_dataset(directory, dataset) -> dict:
    """Write a simulated dataset as ``scans.bin``, ``imu.csv`` and ``groundtruth.txt``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"scans": d / "scans.bin", "imu": d / "imu.csv", "groundtruth": d / "groundtruth.txt"}
    write_scans(paths["scans"], dataset.scans, dataset.noise)
    write_imu(paths["imu"], dataset.imu)
    write_trajectory(paths["groundtruth"], dataset.groundtruth)
    return paths
