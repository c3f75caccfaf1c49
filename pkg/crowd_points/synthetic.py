"""
Synthetic crowd scenes, annotation noise and Gaussian density maps.

Scenes stand in for annotated images: a width, a height and the head points. Two kinds of
annotation noise can be injected: label jitter (imprecise head positions) and missing
annotations (independent deletions). The density renderer turns a scene into the density-map
representation, a sum of unit-mass Gaussian kernels truncated at the image border, which is
what makes the map integral drift away from the true count near the edges.

All randomness comes from ``numpy.random.default_rng(seed)`` (PCG64), so a seed reproduces a
scene bit for bit on every platform for a given ``GENERATOR_VERSION``.
"""
import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import ndtr

from crowd_points.points import InvalidInput, PointSet

logger = logging.getLogger(__name__)

GENERATOR_VERSION = "pcg64-1"
DISTRIBUTIONS = ("uniform", "clustered", "border")
DENSITY_METHODS = ("integral", "filter")


@dataclass(frozen=True, eq=False)
class Scene:
    """
    :param width: image width in pixels
    :param height: image height in pixels
    :param gt: annotated points, all inside [0, width) x [0, height)
    :param seed: seed the scene was generated from
    :param image_id: name used in annotation files
    """

    width: int
    height: int
    gt: PointSet
    seed: int = 0
    image_id: str = "scene-0000"

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidInput(f"scene dimensions must be positive, got {self.width}x{self.height}")
        x, y = self.gt.coords[:, 0], self.gt.coords[:, 1]
        if np.any(x < 0) or np.any(x >= self.width) or np.any(y < 0) or np.any(y >= self.height):
            raise InvalidInput(f"{self.image_id}: points outside the {self.width}x{self.height} image")

    @property
    def n(self) -> int:
        return self.gt.n

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return (self.width, self.height, self.seed, self.image_id) == (
            other.width,
            other.height,
            other.seed,
            other.image_id,
        ) and self.gt == other.gt

    __hash__ = None


@dataclass(frozen=True, eq=False)
class DensityMap:
    """(height, width) grid of non-negative densities rendered with kernel width ``sigma``"""

    width: int
    height: int
    values: np.ndarray
    sigma: float


def _clip(coords: np.ndarray, width: int, height: int) -> np.ndarray:
    """Clips into the half-open image rectangle"""
    upper = np.array([np.nextafter(float(width), 0.0), np.nextafter(float(height), 0.0)])
    return np.clip(coords, 0.0, upper)


def generate_scene(
    width: int,
    height: int,
    n_points: int,
    distribution: str = "uniform",
    seed: int = 0,
    n_clusters: int = 5,
    spread: Optional[float] = None,
    image_id: Optional[str] = None,
) -> Scene:
    """
    Draws a synthetic crowd.

    :param distribution: "uniform" over the image, "clustered" (uniform cluster centers, members
        scattered around them with a Gaussian of std ``spread``) or "border" (points on the four
        image edges)
    :param n_clusters: number of clusters in clustered mode
    :param spread: cluster std in pixels, 5% of the smaller image side by default
    :return: Scene, deterministic for a fixed seed
    """
    if n_points < 0:
        raise InvalidInput(f"n_points must be non-negative, got {n_points}")
    if width < 1 or height < 1:
        raise InvalidInput(f"scene dimensions must be positive, got {width}x{height}")
    if distribution not in DISTRIBUTIONS:
        raise InvalidInput(f"unknown distribution {distribution!r}, expected one of {DISTRIBUTIONS}")

    rng = np.random.default_rng(seed)
    size = np.array([width, height], dtype=np.float64)
    if distribution == "uniform":
        coords = rng.uniform(0.0, 1.0, size=(n_points, 2)) * size
    elif distribution == "clustered":
        if n_clusters < 1:
            raise InvalidInput(f"n_clusters must be at least 1, got {n_clusters}")
        spread = 0.05 * min(width, height) if spread is None else spread
        centers = rng.uniform(0.0, 1.0, size=(n_clusters, 2)) * size
        members = rng.integers(0, n_clusters, size=n_points)
        coords = centers[members] + rng.normal(0.0, spread, size=(n_points, 2))
    else:
        edges = rng.integers(0, 4, size=n_points)
        along = rng.uniform(0.0, 1.0, size=n_points)
        coords = np.zeros((n_points, 2))
        # 0: top, 1: bottom, 2: left, 3: right
        horizontal = edges < 2
        coords[horizontal, 0] = along[horizontal] * width
        coords[edges == 1, 1] = height
        coords[~horizontal, 1] = along[~horizontal] * height
        coords[edges == 3, 0] = width

    coords = _clip(coords, width, height)
    return Scene(width, height, PointSet(coords), seed, image_id or f"scene-{seed}")


def generate_suite(
    n_scenes: int, width: int, height: int, n_points: int, distribution: str = "uniform", seed: int = 0, **kwargs
) -> List[Scene]:
    """Independent scenes named scene-0000, scene-0001, ... with child seeds spawned from ``seed``"""
    children = np.random.SeedSequence(seed).spawn(n_scenes)
    return [
        generate_scene(
            width,
            height,
            n_points,
            distribution,
            int(child.generate_state(1)[0]),
            image_id=f"scene-{i:04d}",
            **kwargs,
        )
        for i, child in enumerate(children)
    ]


def inject_jitter(scene: Scene, sigma_jitter: float, seed: int) -> Scene:
    """Label noise: displaces every point by isotropic Gaussian noise, clipped to the image"""
    if sigma_jitter < 0:
        raise InvalidInput(f"sigma_jitter must be non-negative, got {sigma_jitter}")
    if sigma_jitter == 0 or scene.n == 0:
        return scene
    rng = np.random.default_rng(seed)
    coords = scene.gt.coords + rng.normal(0.0, sigma_jitter, size=scene.gt.coords.shape)
    return replace(scene, gt=PointSet(_clip(coords, scene.width, scene.height)))


def inject_deletions(scene: Scene, rate: float, seed: int) -> Scene:
    """Missing annotations: removes every point independently with probability ``rate``"""
    if not 0.0 <= rate <= 1.0:
        raise InvalidInput(f"deletion rate must lie in [0, 1], got {rate}")
    rng = np.random.default_rng(seed)
    keep = rng.random(scene.n) >= rate
    return replace(scene, gt=PointSet(scene.gt.coords[keep]))


def render_density_map(scene: Scene, sigma: float, method: str = "integral") -> DensityMap:
    """
    Sum of per-point 2-D Gaussian kernels of unit mass, truncated at the image boundary.

    ``integral`` integrates every kernel exactly over each pixel [k, k + 1) (separable
    differences of the normal CDF), so a point on an edge keeps exactly half of its mass and a
    point in a corner a quarter. ``filter`` rasterizes points to their pixel and blurs with
    ``scipy.ndimage.gaussian_filter`` in constant mode, the usual way density maps are built.

    :param sigma: kernel std in pixels, > 0
    :return: DensityMap with values of shape (height, width)
    """
    if sigma <= 0:
        raise InvalidInput(f"sigma must be positive, got {sigma}")
    if method not in DENSITY_METHODS:
        raise InvalidInput(f"unknown density method {method!r}, expected one of {DENSITY_METHODS}")
    coords = scene.gt.coords
    if scene.n == 0:
        values = np.zeros((scene.height, scene.width))
    elif method == "integral":
        x_edges = np.arange(scene.width + 1, dtype=np.float64)
        y_edges = np.arange(scene.height + 1, dtype=np.float64)
        px = np.diff(ndtr((x_edges[np.newaxis, :] - coords[:, 0:1]) / sigma), axis=1)
        py = np.diff(ndtr((y_edges[np.newaxis, :] - coords[:, 1:2]) / sigma), axis=1)
        values = py.T @ px
    else:
        raster = np.zeros((scene.height, scene.width))
        cols = np.floor(coords[:, 0]).astype(np.intp)
        rows = np.floor(coords[:, 1]).astype(np.intp)
        np.add.at(raster, (rows, cols), 1.0)
        values = gaussian_filter(raster, sigma, mode="constant")
    values = np.maximum(values, 0.0)
    values.setflags(write=False)
    return DensityMap(scene.width, scene.height, values, sigma)


def integrate_density(density: DensityMap) -> float:
    """The density-map count: sum over the grid"""
    return float(np.sum(density.values))


def expected_density_mass(scene: Scene, sigma: float) -> float:
    """Analytic kernel mass that stays inside the image, summed over the points"""
    if scene.n == 0:
        return 0.0
    x, y = scene.gt.coords[:, 0], scene.gt.coords[:, 1]
    mass_x = ndtr((scene.width - x) / sigma) - ndtr(-x / sigma)
    mass_y = ndtr((scene.height - y) / sigma) - ndtr(-y / sigma)
    return float(np.sum(mass_x * mass_y))


def apply_annotation_noise(scenes: Sequence[Scene], jitter: float, deletion_rate: float, seed: int) -> List[Scene]:
    """Deletes then jitters the points of every scene, each scene with its own child seeds"""
    noisy = []
    for scene, child in zip(scenes, np.random.SeedSequence(seed).spawn(len(scenes))):
        deletion_seed, jitter_seed = (int(s) for s in child.generate_state(2))
        noisy.append(inject_jitter(inject_deletions(scene, deletion_rate, deletion_seed), jitter, jitter_seed))
    return noisy
