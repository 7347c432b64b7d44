"""Centered Fourier transforms, cropping, RSS, and the eigencoil baseline.

Conventions, fixed package-wide:

* Centered transforms are ``ifftshift -> (i)fft2 -> fftshift`` with
  unitary ("ortho") normalization, so the zero frequency sits at the
  grid center and Euclidean norms are preserved.
* Center crops start at ``floor((H - m) / 2)`` per axis.
* The coil-image stack flattens to the (n*m*l) x k matrix A with the row
  index running over (slice, row, col), slice slowest, and the column
  index over coils.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, DimensionError
from .io import KSpaceVolume


@dataclass(frozen=True, eq=False)
class CoilImageStack:
    """Cropped complex coil images, shape (slices, coils, rows, cols)."""

    pixels: np.ndarray
    volume_id: str = ""

    def __post_init__(self):
        if self.pixels.ndim != 4:
            raise DimensionError(f"coil stack must be 4-d, got shape {self.pixels.shape}")
        object.__setattr__(self, "pixels", np.asarray(self.pixels, dtype=np.complex128))

    @property
    def slices(self) -> int:
        return self.pixels.shape[0]

    @property
    def coils(self) -> int:
        return self.pixels.shape[1]

    @property
    def rows(self) -> int:
        return self.pixels.shape[2]

    @property
    def cols(self) -> int:
        return self.pixels.shape[3]

    @property
    def matrix(self) -> np.ndarray:
        """The (n*m*l) x k fit matrix A; row index = (slice, row, col)."""
        l, k, m, n = self.pixels.shape
        return np.moveaxis(self.pixels, 1, 3).reshape(l * m * n, k)


@dataclass(frozen=True, eq=False)
class RssVolume:
    """Root-sum-square magnitude volume, shape (slices, rows, cols)."""

    values: np.ndarray
    volume_id: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise DimensionError(f"RSS volume must be 3-d, got shape {v.shape}")
        if v.size and v.min() < 0:
            raise DimensionError("RSS values must be nonnegative")
        object.__setattr__(self, "values", v)

    @property
    def vector(self) -> np.ndarray:
        """b as a flat (n*m*l,) vector, same row order as the fit matrix."""
        return self.values.reshape(-1)


def fft2_centered(image: np.ndarray) -> np.ndarray:
    """Unitary 2-D DFT over the trailing two axes, zero frequency centered."""
    shifted = np.fft.ifftshift(image, axes=(-2, -1))
    spectrum = np.fft.fft2(shifted, norm="ortho")
    return np.fft.fftshift(spectrum, axes=(-2, -1))


def ifft2_centered(kspace: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2_centered`; unitary, so norms are preserved."""
    shifted = np.fft.ifftshift(kspace, axes=(-2, -1))
    image = np.fft.ifft2(shifted, norm="ortho")
    return np.fft.fftshift(image, axes=(-2, -1))


def crop_center(image: np.ndarray, m: int, n: int) -> np.ndarray:
    """Center m x n block of the trailing two axes."""
    H, W = image.shape[-2], image.shape[-1]
    if m > H or n > W:
        raise DimensionError(f"cannot crop {H}x{W} to {m}x{n}")
    r0 = (H - m) // 2
    c0 = (W - n) // 2
    return image[..., r0 : r0 + m, c0 : c0 + n]


def pad_center(image: np.ndarray, H: int, W: int) -> np.ndarray:
    """Embed the trailing two axes centered in an H x W zero field.

    Uses the same offsets as :func:`crop_center`, so
    ``crop_center(pad_center(x, H, W), m, n) == x``.
    """
    m, n = image.shape[-2], image.shape[-1]
    if m > H or n > W:
        raise DimensionError(f"cannot pad {m}x{n} up to {H}x{W}")
    out = np.zeros(image.shape[:-2] + (H, W), dtype=image.dtype)
    r0 = (H - m) // 2
    c0 = (W - n) // 2
    out[..., r0 : r0 + m, c0 : c0 + n] = image
    return out


def reconstruct(v: KSpaceVolume, m: int, n: int) -> CoilImageStack:
    """Per-coil centered inverse DFT followed by an m x n center crop."""
    images = ifft2_centered(v.samples.astype(np.complex128, copy=False))
    return CoilImageStack(pixels=crop_center(images, m, n), volume_id=v.volume_id)


def rss(stack: CoilImageStack) -> RssVolume:
    """Per-pixel Euclidean norm across coils (the fit target b)."""
    values = np.sqrt(np.sum(np.abs(stack.pixels) ** 2, axis=1))
    return RssVolume(values=values, volume_id=stack.volume_id)


def eigencoil(stack: CoilImageStack) -> tuple[np.ndarray, np.ndarray]:
    """Compress the stack onto the leading right singular vector of A.

    Returns ``(combined, mode)`` where ``mode`` is the unit-norm leading
    right singular vector of A (phase rotated so its largest-magnitude
    entry is real positive) and ``combined = A @ mode`` reshaped to
    (slices, rows, cols). The SVD is computed from the k x k Gram matrix
    because A has millions of rows but only a handful of columns.
    """
    A = stack.matrix
    gram = A.conj().T @ A
    if not np.any(gram):
        raise DegenerateError("eigencoil of an all-zero coil stack")
    eigvals, eigvecs = np.linalg.eigh(gram)
    mode = eigvecs[:, -1]
    pivot = int(np.argmax(np.abs(mode)))
    mode = mode * (np.conj(mode[pivot]) / np.abs(mode[pivot]))
    combined = (A @ mode).reshape(stack.slices, stack.rows, stack.cols)
    return combined, mode
