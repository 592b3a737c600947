"""Gaussian pixel-compatibility kernels for dense CRFs.

Bandwidths are folded into the features, so every component uses the plain
kernel ``exp(-||f_a - f_b||^2 / 2)``. Only the exact O(N^2) backend is
provided; the pair sums are computed from an explicit kernel matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .model import CrfInstance, HierTree, ModelError

NAIVE = "naive"
LATTICE = "lattice"


class BackendUnavailable(RuntimeError):
    pass


def _check_backend(backend: str):
    if backend == NAIVE:
        return
    if backend == LATTICE:
        raise BackendUnavailable(
            "the permutohedral-lattice backend is not built into this package; use 'naive'")
    raise BackendUnavailable(f"unknown backend {backend!r}")


@dataclass(frozen=True, eq=False)
class KernelMixture:
    """Weighted sum of Gaussian kernels over pre-scaled feature matrices."""

    weights: tuple
    features: tuple

    def __post_init__(self):
        if len(self.weights) == 0 or len(self.weights) != len(self.features):
            raise ModelError("need one weight per feature matrix, at least one component")
        feats = []
        for w, f in zip(self.weights, self.features):
            f = np.array(f, dtype=float)
            if f.ndim == 1:
                f = f[:, None]
            if f.ndim != 2 or f.shape[1] < 1 or not np.all(np.isfinite(f)):
                raise ModelError("features must be a finite N x d table")
            if not w >= 0:
                raise ModelError("kernel weights must be non-negative")
            f.setflags(write=False)
            feats.append(f)
        if len({f.shape[0] for f in feats}) != 1:
            raise ModelError("all components need the same number of points")
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "features", tuple(feats))

    @property
    def num_points(self) -> int:
        return self.features[0].shape[0]

    @cached_property
    def matrix(self) -> np.ndarray:
        """Dense N x N kernel matrix with a zero diagonal."""
        n = self.num_points
        K = np.zeros((n, n))
        for w, f in zip(self.weights, self.features):
            K += w * np.exp(-0.5 * cdist(f, f, "sqeuclidean"))
        np.fill_diagonal(K, 0.0)
        K.setflags(write=False)
        return K


def kernel_value(mixture: KernelMixture, a: int, b: int) -> float:
    if a == b:
        raise ModelError("kernel is only defined between distinct variables")
    total = 0.0
    for w, f in zip(mixture.weights, mixture.features):
        d = f[a] - f[b]
        total += w * np.exp(-0.5 * float(d @ d))
    return float(total)


def weighted_sum(mixture: KernelMixture, v, backend: str = NAIVE) -> np.ndarray:
    """u_a = sum_{b != a} k(a, b) v_b. ``v`` may also be an (N, C) table."""
    _check_backend(backend)
    return mixture.matrix @ np.asarray(v, dtype=float)


def rank_order(column) -> np.ndarray:
    """Decreasing value, ties broken by ascending index."""
    column = np.asarray(column, dtype=float)
    return np.lexsort((np.arange(len(column)), -column))


def signed_rank_fold(mixture: KernelMixture, column, scale: float = 1.0, start=None,
                     backend: str = NAIVE) -> np.ndarray:
    """start_a + sum_b (+/-) scale * k(a, b), folded sequentially over ascending b.

    The sign is + when a comes before b in :func:`rank_order` and - otherwise.
    The fixed left-to-right order makes the result reproducible bit for bit and
    identical to accumulating the same terms edge by edge.
    """
    _check_backend(backend)
    K = mixture.matrix
    n = K.shape[0]
    rank = np.empty(n, dtype=np.int64)
    rank[rank_order(column)] = np.arange(n)
    terms = np.where(rank[:, None] < rank[None, :], 1.0, -1.0) * (K * scale)
    np.fill_diagonal(terms, 0.0)
    first = np.zeros(n) if start is None else np.asarray(start, dtype=float)
    return np.cumsum(np.hstack([first[:, None], terms]), axis=1)[:, -1]


def signed_rank_sums(mixture: KernelMixture, column, backend: str = NAIVE) -> np.ndarray:
    """For each a: sum of k(a, b) over b after a, minus over b before a.

    "Before" means earlier in :func:`rank_order` (larger value, or equal value
    and smaller index).
    """
    return signed_rank_fold(mixture, column, backend=backend)


# -- stereo --------------------------------------------------------------

def to_gray(image) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    if image.ndim == 2:
        return image
    return image[..., :3] @ np.array([0.299, 0.587, 0.114])


def to_rgb(image) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    if image.ndim == 2:
        return np.repeat(image[..., None], 3, axis=2)
    return image[..., :3]


def stereo_unaries(left, right, max_disparity: int) -> np.ndarray:
    """Absolute-difference matching cost, (H*W, D), row-major pixels.

    The right-image column ``x - d`` is clamped at 0.
    """
    gl, gr = to_gray(left), to_gray(right)
    if gl.shape != gr.shape:
        raise ModelError(f"image sizes differ: {gl.shape} vs {gr.shape}")
    if max_disparity < 1:
        raise ModelError("max_disparity must be at least 1")
    H, W = gl.shape
    xs = np.arange(W)
    cost = np.empty((H, W, max_disparity))
    for d in range(max_disparity):
        cost[:, :, d] = np.abs(gl - gr[:, np.maximum(xs - d, 0)])
    return cost.reshape(H * W, max_disparity)


def stereo_features(image, theta_spatial: float, theta_color: float,
                    kernel_weights: Sequence[float] = (1.0, 1.0)) -> KernelMixture:
    """First component: bilateral (x, y, r, g, b); second, if given: spatial (x, y)."""
    rgb = to_rgb(image)
    H, W = rgb.shape[:2]
    yy, xx = np.mgrid[0:H, 0:W]
    pos = np.stack([xx.ravel(), yy.ravel()], axis=1) / theta_spatial
    col = rgb.reshape(H * W, 3) / theta_color
    comps = [np.hstack([pos, col]), pos]
    if not 1 <= len(kernel_weights) <= 2:
        raise ModelError("give one or two kernel weights")
    return KernelMixture(tuple(kernel_weights), tuple(comps[:len(kernel_weights)]))


def build_stereo_model(left, right, max_disparity: int, theta_spatial: float = 3.0,
                       theta_color: float = 10.0, kernel_weights: Sequence[float] = (1.0, 1.0),
                       tree: HierTree | None = None) -> CrfInstance:
    """Dense CRF for disparity estimation; label d is disparity d."""
    phi = stereo_unaries(left, right, max_disparity)
    mixture = stereo_features(left, theta_spatial, theta_color, kernel_weights)
    return CrfInstance.dense(phi, mixture, tree=tree)


def read_image(path) -> np.ndarray:
    """Read an 8-bit PGM (P5) or PPM (P6) file as a uint8 array."""
    from PIL import Image

    with Image.open(Path(path)) as im:
        if im.format not in ("PPM", "PGM") and im.format is not None:
            raise ModelError(f"{path}: expected PGM/PPM, got {im.format}")
        if im.mode not in ("L", "RGB"):
            raise ModelError(f"{path}: unsupported image mode {im.mode}")
        return np.array(im)


def write_pgm(path, image):
    from PIL import Image

    data = np.clip(np.rint(np.asarray(image)), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(Path(path), format="PPM")


def write_ppm(path, image):
    from PIL import Image

    data = np.clip(np.rint(np.asarray(image)), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(Path(path), format="PPM")
