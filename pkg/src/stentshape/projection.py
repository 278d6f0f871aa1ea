"""Pinhole fluoroscopy simulation: C-arm cameras, projection and rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage
from scipy.special import erfc

from .errors import OutOfFrameError

IMAGE_SIZE = 512
PIXEL_SPACING = 0.84  # mm/px; half a pixel is 0.42 mm
FOCAL_LENGTH = 1200.0  # px
SOURCE_TO_OBJECT = 700.0  # mm
SOURCE_TO_DETECTOR = FOCAL_LENGTH * PIXEL_SPACING  # mm
MARKER_DIAMETER = 3.0  # mm
VIEW_ANGLES = tuple(float(a) for a in range(-90, 91, 15))


@dataclass(frozen=True)
class CameraModel:
    """Distortion-free pinhole camera; `rotation`/`translation` map world to camera."""

    focal_length: float = FOCAL_LENGTH
    principal_point: tuple = (IMAGE_SIZE / 2.0, IMAGE_SIZE / 2.0)
    pixel_spacing: float = PIXEL_SPACING
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    width: int = IMAGE_SIZE
    height: int = IMAGE_SIZE

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        if self.focal_length <= 0:
            raise ValueError("focal length must be positive")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or np.linalg.det(R) <= 0:
            raise ValueError("camera rotation must be a proper rotation")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        object.__setattr__(self, "principal_point", tuple(float(c) for c in self.principal_point))

    @property
    def center(self):
        """Camera centre in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def optical_axis(self):
        return self.rotation[2].copy()

    @property
    def K(self):
        f = self.focal_length
        cu, cv = self.principal_point
        return np.array([[f, 0.0, cu], [0.0, f, cv], [0.0, 0.0, 1.0]])

    def to_camera(self, points):
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def normalized(self, pixels):
        """Pixel coordinates -> normalized image coordinates (z = 1 plane)."""
        pixels = np.asarray(pixels, dtype=float)
        return (pixels - np.asarray(self.principal_point)) / self.focal_length

    def to_dict(self):
        return {
            "focal_length": self.focal_length,
            "principal_point": list(self.principal_point),
            "pixel_spacing": self.pixel_spacing,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)


def camera_for_view(angle, source_to_detector=SOURCE_TO_DETECTOR, source_to_object=SOURCE_TO_OBJECT,
                    center=(0.0, 0.0, 0.0), pixel_spacing=PIXEL_SPACING, size=IMAGE_SIZE):
    """C-arm camera at `angle` degrees about the vertical axis through `center`.

    At 0 deg the source sits on +y and looks along -y (coronal view); image
    rows run downward, i.e. along world -z. Focal length in pixels is
    ``source_to_detector / pixel_spacing``.
    """
    if not -90.0 <= angle <= 90.0:
        raise ValueError(f"view angle must lie in [-90, 90], got {angle}")
    if source_to_detector <= 0 or source_to_object <= 0:
        raise ValueError("imaging distances must be positive")
    a = np.deg2rad(angle)
    c, s = np.cos(a), np.sin(a)
    Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    z_c = Rz @ np.array([0.0, -1.0, 0.0])
    y_c = np.array([0.0, 0.0, -1.0])
    x_c = np.cross(y_c, z_c)
    R = np.stack([x_c, y_c, z_c])
    C = np.asarray(center, dtype=float) - source_to_object * z_c
    return CameraModel(
        focal_length=source_to_detector / pixel_spacing,
        principal_point=(size / 2.0, size / 2.0),
        pixel_spacing=pixel_spacing,
        rotation=R,
        translation=-R @ C,
        width=size,
        height=size,
    )


def project(camera: CameraModel, points3d):
    """Perspective projection of world points to pixel coordinates (u, v)."""
    P = np.atleast_2d(np.asarray(points3d, dtype=float))
    Xc = camera.to_camera(P)
    behind = np.flatnonzero(Xc[:, 2] <= 0)
    if behind.size:
        raise OutOfFrameError(f"points {behind.tolist()} lie at or behind the camera plane")
    uv = camera.focal_length * Xc[:, :2] / Xc[:, 2:3] + np.asarray(camera.principal_point)
    return uv


@dataclass(frozen=True)
class FluoroImage:
    intensities: np.ndarray

    @property
    def shape(self):
        return self.intensities.shape

    def to_uint8(self):
        return np.round(np.clip(self.intensities, 0.0, 1.0) * 255).astype(np.uint8)


def default_blob_radius(camera: CameraModel | None = None):
    spacing = camera.pixel_spacing if camera is not None else PIXEL_SPACING
    return MARKER_DIAMETER / spacing / 2.0


def _splat(img, center, radius, edge):
    h, w = img.shape
    reach = radius + 6 * edge + 1
    u0, u1 = int(np.floor(center[0] - reach)), int(np.ceil(center[0] + reach)) + 1
    v0, v1 = int(np.floor(center[1] - reach)), int(np.ceil(center[1] + reach)) + 1
    u0, v0, u1, v1 = max(u0, 0), max(v0, 0), min(u1, w), min(v1, h)
    uu, vv = np.meshgrid(np.arange(u0, u1), np.arange(v0, v1))
    d = np.hypot(uu - center[0], vv - center[1])
    disk = 0.5 * erfc((d - radius) / (np.sqrt(2.0) * edge))
    np.maximum(img[v0:v1, u0:u1], disk, out=img[v0:v1, u0:u1])


def render_fluoro(camera: CameraModel, markers, blob_radius_px=None, noise_sigma=0.0, background=0.0,
                  rng=None, poisson=False, motion_blur=0, edge_px=0.5, marker_ids=None, at_pixels=None):
    """Render radiopaque markers as anti-aliased disks on a detector image.

    The disk edge is an error-function ramp of width `edge_px`. `background`
    scales a smooth random clutter field; `noise_sigma` adds i.i.d. Gaussian
    intensity noise; `poisson` applies shot noise; `motion_blur` is the
    length in pixels of a horizontal box blur standing in for bed motion.
    The result is normalized by its maximum. `at_pixels` overrides the
    projected blob centres, e.g. with noise-perturbed positions.
    """
    rng = np.random.default_rng(rng)
    radius = default_blob_radius(camera) if blob_radius_px is None else float(blob_radius_px)
    img = np.zeros((camera.height, camera.width))
    markers = np.asarray(markers, dtype=float).reshape(-1, 3)
    if len(markers):
        uv = project(camera, markers) if at_pixels is None else np.asarray(at_pixels, dtype=float).reshape(-1, 2)
        out = ~((uv[:, 0] >= radius) & (uv[:, 0] <= camera.width - 1 - radius)
                & (uv[:, 1] >= radius) & (uv[:, 1] <= camera.height - 1 - radius))
        if out.any():
            ids = np.flatnonzero(out) if marker_ids is None else np.asarray(marker_ids)[out]
            raise OutOfFrameError(f"markers {list(map(int, ids))} project outside the image")
        for c in uv:
            _splat(img, c, radius, edge_px)
    if background > 0:
        clutter = ndimage.gaussian_filter(rng.standard_normal(img.shape), 12.0)
        clutter -= clutter.min()
        if clutter.max() > 0:
            img += background * clutter / clutter.max()
    if motion_blur and motion_blur > 1:
        img = ndimage.uniform_filter1d(img, int(motion_blur), axis=1)
    if poisson:
        img = rng.poisson(img * 255.0) / 255.0
    if noise_sigma > 0:
        img = img + rng.normal(0.0, noise_sigma, img.shape)
    img = np.clip(img, 0.0, None)
    peak = img.max()
    if peak > 0:
        img = img / peak
    return FluoroImage(img)


def write_pgm(path, image):
    """8-bit binary PGM."""
    data = image.to_uint8() if isinstance(image, FluoroImage) else np.asarray(image, dtype=np.uint8)
    Image.fromarray(np.ascontiguousarray(data)).save(path, format="PPM")


def read_pgm(path):
    with Image.open(path) as im:
        if im.format != "PPM" or im.mode not in ("L", "I", "I;16", "I;16B"):
            raise ValueError(f"{path}: not a grayscale PGM")
        maxval = 255.0 if im.mode == "L" else 65535.0
        pixels = np.asarray(im, dtype=float)
    return FluoroImage(pixels / maxval)


def write_png(path, image):
    Image.fromarray(image.to_uint8()).save(path)
