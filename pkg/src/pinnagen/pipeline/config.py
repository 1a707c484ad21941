"""Pipeline configuration: JSON files validated against the shipped schema."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

from ..bem.prtf import Band, FrequencySweep
from ..bem.solver import Medium
from ..mesh.closing import CylinderBase
from ..mesh.remesh import GradingConfig

SCHEMA_ID = "pinnagen.config/1"
BUILTIN = ("toy", "widespread")

DEFAULTS = {
    "base": {"radius_mm": 60.0, "height_mm": 30.0, "segments": 64},
    "source": {"v_n": 1.0, "canal_loop": "canal", "outer_loop": "outer"},
    "medium": {"speed_of_sound": 343.0, "density": 1.2},
    "bem": {"n_chief": 8, "chief_seed": 0, "min_elements_per_wavelength": 5.0},
    "post": {"include_dc": True, "cepstrum_pad_factor": 1},
    "stats": {"cpv_thresholds": [90.0, 95.0, 99.0]},
}


class ConfigError(ValueError):
    pass


def schema() -> dict:
    return json.loads(resources.files("pinnagen.configs").joinpath("config.schema.json").read_text())


def builtin_path(name: str) -> Path:
    return Path(str(resources.files("pinnagen.configs").joinpath(f"{name}.json")))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


@dataclass
class PipelineConfig:
    raw: dict
    source_path: Path | None = None

    @classmethod
    def load(cls, path_or_name: str | Path, seed: int | None = None) -> "PipelineConfig":
        p = Path(path_or_name)
        if not p.exists() and str(path_or_name) in BUILTIN:
            p = builtin_path(str(path_or_name))
        try:
            raw = json.loads(p.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path_or_name}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        return cls.from_dict(raw, p, seed)

    @classmethod
    def from_dict(cls, raw: dict, source_path: Path | None = None, seed: int | None = None) -> "PipelineConfig":
        raw = copy.deepcopy(raw)
        if seed is not None:
            raw.setdefault("draw", {})["seed"] = int(seed)
        try:
            jsonschema.validate(raw, schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
            raise ConfigError(f"config invalid at {where}: {exc.message}") from None
        for key, defaults in DEFAULTS.items():
            merged = dict(defaults)
            merged.update(raw.get(key, {}))
            raw[key] = merged
        cfg = cls(raw, source_path)
        cfg.sweep  # validates band coverage
        return cfg

    @property
    def hash(self) -> str:
        """Digest of the canonical protocol description (output location excluded)."""
        body = {k: v for k, v in self.raw.items() if k not in ("output", "description")}
        return hashlib.sha256(canonical_json(body).encode()).hexdigest()

    @property
    def seed(self) -> int:
        return int(self.raw["draw"]["seed"])

    @property
    def count(self) -> int:
        return int(self.raw["draw"]["count"])

    @property
    def bands(self) -> tuple[Band, ...]:
        out = []
        for b in self.raw["bands"]:
            hi = b.get("target_edge_max", b["target_edge_min"])
            grading = GradingConfig(b["mode"], float(b["target_edge_min"]), float(hi), None, (float(b["f_low"]), float(b["f_high"])), float(b.get("feature_angle", 60.0)))
            out.append(Band(float(b["f_low"]), float(b["f_high"]), grading))
        return tuple(out)

    @property
    def sweep(self) -> FrequencySweep:
        s = self.raw["sweep"]
        try:
            return FrequencySweep(float(s["f_start"]), float(s["f_step"]), int(s["n_f"]), self.bands)
        except ValueError as exc:
            raise ConfigError(f"band table does not cover the sweep: {exc}") from None

    @property
    def base(self) -> CylinderBase:
        b = self.raw["base"]
        return CylinderBase(float(b["radius_mm"]), float(b["height_mm"]), int(b["segments"]))

    @property
    def medium(self) -> Medium:
        m = self.raw["medium"]
        return Medium(float(m["speed_of_sound"]), float(m["density"]))

    def dataset_path(self) -> Path | None:
        d = self.raw["dataset"]
        if "path" not in d:
            return None
        p = Path(d["path"])
        if not p.is_absolute() and self.source_path is not None and not p.exists():
            p = self.source_path.parent / p
        return p

    def output_dir(self, override: str | Path | None = None) -> Path:
        if override is not None:
            return Path(override)
        return Path(self.raw.get("output", "archive"))
