"""Flat ``section.key = value`` run configuration.

Every hyperparameter has a named key with its default here. Config files and
command-line overrides may only set known keys; values are parsed to the
default's type. :meth:`RunConfig.dump` writes every key in sorted order, so a
run can be repeated from its echo.
"""

from __future__ import annotations

from pathlib import Path

from nerfpc.errors import ConfigError, IoError

DEFAULTS: dict[str, object] = {
    "seed": 0,
    # focus-area localization
    "lrf.max_areas": 5,
    "lrf.neighbors": 20,
    "lrf.alpha_deg": 10.0,
    "lrf.min_cluster_size": 20,
    "lrf.single_cluster": True,
    "lrf.t_steps": 256,
    "lrf.scene_box_scale": 2.0,
    # collinearity (edge-aware sampling and loss)
    "ism.tau": 4.0,
    "ism.gamma": 0.1,
    "ism.eps2": 0.0025,
    "ism.max_segment": 40,
    "ism.lambda_col": 0.01,
    "ism.edge_sigma": 1.4,
    "ism.edge_low": 0.1,
    "ism.edge_high": 0.2,
    # surrounding-depth check
    "sdd.enabled": True,
    "sdd.eps3": 0.0025,
    "sdd.patch": 3,
    "sdd.batch_size": 4096,
    # depth-window color
    "csd.eps4": 0.0025,
    "csd.color_mode": "csd",
    # toy training
    "train.iterations": 2000,
    "train.triplets": 128,
    "train.lr": 0.01,
    "train.samples": 128,
    "train.resample": 0,
    "train.near": 0.1,
    "train.far": 10.0,
    # extraction
    "render.near": 0.1,
    "render.far": 100.0,
    "render.samples": 256,
    "render.resample": 0,
    "extract.points": 10000,
    "extract.max_attempts": 1000000,
    "extract.bounds": "",
    # fixture generation; 0 keeps the kind's own default
    "fixture.cameras": 0,
    "fixture.resolution": 0,
    "bench.points": 20000,
}


def _parse(key: str, raw: str):
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from exc
    return raw


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunConfig:
    def __init__(self, values: dict | None = None):
        self.values = dict(DEFAULTS)
        self.explicit: set[str] = set()
        for key, val in (values or {}).items():
            self.set(key, val)

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _parse(key, value) if isinstance(value, str) else _coerce(key, value)
        self.explicit.add(key)

    def is_set(self, key: str) -> bool:
        """Whether ``key`` came from a config file or an override rather than the default."""
        return key in self.explicit

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def parse_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
            cfg.set(key, raw)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise IoError(f"{path}: {exc}") from exc
        return cls.parse_text(text, str(path))

    def dump(self) -> str:
        return "".join(f"{key} = {_format(self.values[key])}\n" for key in sorted(self.values))

    def write(self, path) -> None:
        try:
            Path(path).write_text(self.dump())
        except OSError as exc:
            raise IoError(f"{path}: {exc}") from exc


def _coerce(key: str, value):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value)
