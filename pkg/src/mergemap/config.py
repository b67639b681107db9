"""Pipeline configuration: one INI file, validated on load, overridable from the CLI."""
from __future__ import annotations

import configparser
import dataclasses
import io
import math
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class MapSection:
    voxel_size: float = 0.5
    max_points: int = 50
    min_fit_points: int = 10
    planarity_ratio: float = 1.0 / 9.0
    planarity_abs: float = 0.01


@dataclass
class MergeSection:
    enabled: bool = True
    chi2_threshold: float = 7.814727903251178
    neighbor_set: str = "face6"
    require_same_axis: bool = True


@dataclass
class NoiseSection:
    # negative means "take the value stored in the scan file"
    sigma_range: float = -1.0
    sigma_bearing_deg: float = -1.0


@dataclass
class FilterSection:
    mode: str = "lidar_inertial"
    max_iters: int = 5
    tol: float = 1e-6
    gate_sigma: float = 3.0
    downsample: float = 0.2     # update-only grid leaf in meters, 0 disables
    shared_plane_noise: bool = True
    gyro_noise: float = 1e-3
    acc_noise: float = 1e-2
    gyro_bias_walk: float = 1e-5
    acc_bias_walk: float = 1e-4
    gravity_window: float = 1.0
    init_pose_std: float = 1e-4
    init_vel_std: float = 1e-2
    init_bias_gyro_std: float = 1e-3
    init_bias_acc_std: float = 1e-2
    init_gravity_std: float = 1e-2
    cv_rot_std: float = 0.05
    cv_trans_std: float = 0.5


@dataclass
class IoSection:
    scans: str = ""
    imu: str = ""
    output_dir: str = "out"


@dataclass
class PipelineConfig:
    map: MapSection = field(default_factory=MapSection)
    merge: MergeSection = field(default_factory=MergeSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    filter: FilterSection = field(default_factory=FilterSection)
    io: IoSection = field(default_factory=IoSection)

    def validate(self) -> "PipelineConfig":
        m = self.map
        if not (math.isfinite(m.voxel_size) and m.voxel_size > 0):
            raise ConfigError(f"map.voxel_size must be positive, got {m.voxel_size}")
        if m.min_fit_points < 3:
            raise ConfigError("map.min_fit_points must be at least 3")
        if m.max_points < m.min_fit_points:
            raise ConfigError("map.max_points must be >= map.min_fit_points")
        if not (0 < m.planarity_ratio <= 1 and m.planarity_abs > 0):
            raise ConfigError("map planarity thresholds out of range")
        if not self.merge.chi2_threshold > 0:
            raise ConfigError("merge.chi2_threshold must be positive")
        if self.merge.neighbor_set not in ("face6", "full26"):
            raise ConfigError("merge.neighbor_set must be face6 or full26")
        f = self.filter
        if f.mode not in ("lidar_only", "lidar_inertial"):
            raise ConfigError("filter.mode must be lidar_only or lidar_inertial")
        if f.max_iters < 1:
            raise ConfigError("filter.max_iters must be >= 1")
        for name in ("tol", "gate_sigma", "gravity_window", "init_pose_std", "init_vel_std",
                     "init_bias_gyro_std", "init_bias_acc_std", "init_gravity_std",
                     "cv_rot_std", "cv_trans_std"):
            if not getattr(f, name) > 0:
                raise ConfigError(f"filter.{name} must be positive")
        if not f.downsample >= 0:
            raise ConfigError("filter.downsample must be non-negative")
        for name in ("gyro_noise", "acc_noise", "gyro_bias_walk", "acc_bias_walk"):
            if not getattr(f, name) >= 0:
                raise ConfigError(f"filter.{name} must be non-negative")
        return self

    def set(self, dotted: str, value: str) -> None:
        """Apply one ``section.key=value`` override, parsing ``value`` to the field type."""
        try:
            sec_name, key = dotted.split(".", 1)
        except ValueError:
            raise ConfigError(f"override {dotted!r} is not of the form section.key") from None
        sec = getattr(self, sec_name, None)
        if sec is None or not dataclasses.is_dataclass(sec) or sec_name not in _SECTIONS:
            raise ConfigError(f"unknown config section {sec_name!r}")
        types = {f.name: f.type for f in fields(sec)}
        if key not in types:
            raise ConfigError(f"unknown config key {sec_name}.{key}")
        setattr(sec, key, _parse(types[key], value, f"{sec_name}.{key}"))

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for name in _SECTIONS:
            sec = getattr(self, name)
            cp[name] = {f.name: _fmt(getattr(sec, f.name)) for f in fields(sec)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


_SECTIONS = ("map", "merge", "noise", "filter", "io")


def _parse(typ, value: str, where: str):
    typ = typ if isinstance(typ, str) else typ.__name__
    v = value.strip()
    try:
        if typ == "bool":
            low = v.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if typ == "int":
            return int(v)
        if typ == "float":
            return float(v)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {value!r} as {typ}") from None
    return v


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def load_config(path=None, overrides=()) -> PipelineConfig:
    """Read an INI file (optional), apply ``section.key=value`` overrides, validate."""
    cfg = PipelineConfig()
    if path is not None:
        path = Path(path)
        cp = configparser.ConfigParser()
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for sec in cp.sections():
            if sec not in _SECTIONS:
                raise ConfigError(f"{path}: unknown section [{sec}]")
            for key, value in cp[sec].items():
                cfg.set(f"{sec}.{key}", value)
        base = path.parent
        for key in ("scans", "imu"):
            v = getattr(cfg.io, key)
            if v and not Path(v).is_absolute():
                setattr(cfg.io, key, str(base / v))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v)
    return cfg.validate()
