"""Apply fitted coil weights to produce the emulated single-coil volume."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .io import KSpaceVolume
from .recon import CoilImageStack, crop_center, ifft2_centered


@dataclass(frozen=True, eq=False)
class EscVolume:
    """Combined complex images (slices, rows, cols), optionally with the
    combined full-resolution k-space (slices, H, W)."""

    pixels: np.ndarray
    volume_id: str = ""
    kspace: np.ndarray | None = None

    def __post_init__(self):
        if self.pixels.ndim != 3:
            raise DimensionError(f"ESC pixels must be 3-d, got shape {self.pixels.shape}")

    @property
    def slices(self) -> int:
        return self.pixels.shape[0]

    @property
    def rows(self) -> int:
        return self.pixels.shape[1]

    @property
    def cols(self) -> int:
        return self.pixels.shape[2]


def _check_weights(x, k: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128).reshape(-1)
    if x.size != k:
        raise DimensionError(f"{x.size} weights for {k} coils")
    return x


def apply_image_domain(stack: CoilImageStack, x) -> EscVolume:
    """Combine cropped coil images: pixel p -> sum_c stack(p, c) * x_c.

    Computed as the matrix product A @ x in the stack's flattening order,
    so the result is bit-identical to reshaping A @ x.
    """
    x = _check_weights(x, stack.coils)
    pixels = (stack.matrix @ x).reshape(stack.slices, stack.rows, stack.cols)
    return EscVolume(pixels=pixels, volume_id=stack.volume_id)


def apply_kspace_domain(v: KSpaceVolume, x, m: int, n: int) -> EscVolume:
    """Combine raw k-space, then reconstruct the single emulated coil.

    The combined k-space keeps the full acquisition grid H x W (what a
    physical single coil would have measured); ``pixels`` is its centered
    inverse transform cropped to m x n. Agrees with
    :func:`apply_image_domain` by linearity of the transform and crop.
    """
    x = _check_weights(x, v.coils)
    combined = np.tensordot(v.samples.astype(np.complex128, copy=False), x, axes=([1], [0]))
    pixels = crop_center(ifft2_centered(combined), m, n)
    return EscVolume(pixels=pixels, volume_id=v.volume_id, kspace=combined)
