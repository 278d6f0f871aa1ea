"""Versioned JSON experiment configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import SpecError
from .graft_model import GraftSpec, default_device
from .markers import DEFAULT_PATTERN, MarkerSet, place_markers
from .projection import IMAGE_SIZE, PIXEL_SPACING, SOURCE_TO_DETECTOR, SOURCE_TO_OBJECT, VIEW_ANGLES, camera_for_view
from .simulation import Deformation

CONFIG_VERSION = 1


def load_schema(name):
    return json.loads(resources.files("stentshape").joinpath("data", name).read_text())


def default_config_path():
    return resources.files("stentshape").joinpath("data", "default_device.json")


@dataclass
class ExperimentConfig:
    graft: GraftSpec
    pattern: tuple = DEFAULT_PATTERN
    camera: dict = field(default_factory=dict)
    deformation: Deformation | None = None
    views: tuple = VIEW_ANGLES
    noise_sigma: float = 0.0
    detector: dict = field(default_factory=dict)
    render: dict = field(default_factory=dict)
    montecarlo: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        if self.deformation is None:
            self.deformation = Deformation.identity(self.graft.n_segments)
        if len(self.deformation.motions) != self.graft.n_segments:
            raise SpecError(
                f"deformation lists {len(self.deformation.motions)} segments, graft has {self.graft.n_segments}")

    def markers(self) -> MarkerSet:
        return place_markers(self.graft, self.pattern)

    def camera_kwargs(self):
        c = self.camera
        center = c.get("center")
        return {
            "source_to_detector": float(c.get("source_to_detector", SOURCE_TO_DETECTOR)),
            "source_to_object": float(c.get("source_to_object", SOURCE_TO_OBJECT)),
            "pixel_spacing": float(c.get("pixel_spacing", PIXEL_SPACING)),
            "size": int(c.get("image_size", IMAGE_SIZE)),
            "center": tuple(center) if center is not None else (0.0, 0.0, self.graft.total_height / 2),
        }

    def camera_for(self, angle):
        return camera_for_view(angle, **self.camera_kwargs())

    def to_dict(self):
        return {
            "version": CONFIG_VERSION,
            "graft": self.graft.to_dict(),
            "marker_pattern": [list(p) for p in self.pattern],
            "camera": dict(self.camera),
            "deformation": self.deformation.to_list(),
            "views": list(self.views),
            "noise_sigma": self.noise_sigma,
            "detector": dict(self.detector),
            "render": dict(self.render),
            "montecarlo": dict(self.montecarlo),
            "seed": self.seed,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d, base_dir=None):
        try:
            jsonschema.validate(d, load_schema("config.schema.json"))
        except jsonschema.ValidationError as e:
            raise SpecError(f"invalid config: {e.message}") from None
        graft = d["graft"]
        if isinstance(graft, str):
            path = Path(base_dir or ".") / graft
            if not path.exists():
                raise SpecError(f"graft spec file not found: {path}")
            spec = GraftSpec.from_json(path)
        else:
            spec = GraftSpec.from_dict(graft)
        deformation = Deformation.from_list(d["deformation"]) if "deformation" in d else None
        pattern = tuple(tuple(float(v) for v in p) for p in d.get("marker_pattern", DEFAULT_PATTERN))
        return cls(
            graft=spec, pattern=pattern, camera=dict(d.get("camera", {})), deformation=deformation,
            views=tuple(float(v) for v in d.get("views", VIEW_ANGLES)),
            noise_sigma=float(d.get("noise_sigma", 0.0)), detector=dict(d.get("detector", {})),
            render=dict(d.get("render", {})), montecarlo=dict(d.get("montecarlo", {})),
            seed=int(d.get("seed", 0)), output_dir=d.get("output_dir", "out"),
        )

    @classmethod
    def load(cls, path=None):
        path = Path(str(default_config_path())) if path is None else Path(path)
        if not path.exists():
            raise SpecError(f"config file not found: {path}")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise SpecError(f"{path}: not valid JSON ({e})") from None
        return cls.from_dict(d, path.parent)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def default_config() -> ExperimentConfig:
    return ExperimentConfig(graft=default_device())
