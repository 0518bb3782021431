"""Differentiable thin-plate-spline warping.

A sparse set of control-point displacements is interpolated into a dense
field with the classic affine + r^2 log r radial expansion, then the image
is backward-sampled bilinearly: ``out(q) = in(q - field(q))`` with
``field(p_k) = d_k``, so content at a control point moves by its
displacement. Coordinates are (row, col) pixels.
"""

from __future__ import annotations

import warnings

import numpy as np
import torch

RIDGE = 1e-6


def _radial_basis(r: torch.Tensor) -> torch.Tensor:
    # r^2 log r, continuously extended by 0 at r=0
    safe = torch.where(r > 0, r, torch.ones_like(r))
    return torch.where(r > 0, r * r * torch.log(safe), torch.zeros_like(r))


def tps_fit(points: torch.Tensor, displacements: torch.Tensor):
    """Solve for radial weights and affine coefficients interpolating the
    control displacements. Falls back to a ridge-regularized system (with a
    warning) when the control points are degenerate."""
    if points.shape[0] < 3:
        raise ValueError("need at least 3 control points")
    if points.shape != displacements.shape:
        raise ValueError("points and displacements must align")
    c = points.shape[0]
    dtype = points.dtype
    diff = points[:, None, :] - points[None, :, :]
    k = _radial_basis(diff.norm(dim=-1))
    p = torch.cat([torch.ones(c, 1, dtype=dtype), points], dim=1)
    lmat = torch.zeros(c + 3, c + 3, dtype=dtype)
    lmat[:c, :c] = k
    lmat[:c, c:] = p
    lmat[c:, :c] = p.T
    rhs = torch.zeros(c + 3, 2, dtype=dtype)
    rhs[:c] = displacements

    degenerate = int(torch.linalg.matrix_rank(p.detach())) < 3
    if not degenerate:
        try:
            sol = torch.linalg.solve(lmat, rhs)
            if torch.isfinite(sol).all():
                return sol[:c], sol[c:]
        except torch.linalg.LinAlgError:
            pass
    warnings.warn("degenerate TPS control points; using ridge-regularized solve")
    reg = lmat + RIDGE * torch.eye(c + 3, dtype=dtype)
    sol = torch.linalg.lstsq(reg.detach(), rhs.detach()).solution
    return sol[:c], sol[c:]


def tps_displacement_field(
    points: torch.Tensor, displacements: torch.Tensor, shape
) -> torch.Tensor:
    """Dense (H, W, 2) displacement field interpolating the control points."""
    h, w = shape
    weights, affine = tps_fit(points, displacements)
    dtype = points.dtype
    rows = torch.arange(h, dtype=dtype)
    cols = torch.arange(w, dtype=dtype)
    grid = torch.stack(torch.meshgrid(rows, cols, indexing="ij"), dim=-1)  # (H, W, 2)
    flat = grid.reshape(-1, 2)
    r = (flat[:, None, :] - points[None, :, :]).norm(dim=-1)
    field = affine[0][None, :] + flat @ affine[1:] + _radial_basis(r) @ weights
    return field.reshape(h, w, 2)


def bilinear_sample(img: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Sample (C, H, W) image at (H, W, 2) float pixel coords, border-clamped."""
    _, h, w = img.shape
    rows = coords[..., 0].clamp(0, h - 1)
    cols = coords[..., 1].clamp(0, w - 1)
    r0 = rows.floor().clamp(0, h - 2)
    c0 = cols.floor().clamp(0, w - 2)
    fr = rows - r0
    fc = cols - c0
    r0_i = r0.long()
    c0_i = c0.long()

    def gather(ri, ci):
        return img[:, ri.reshape(-1), ci.reshape(-1)].reshape(img.shape[0], *coords.shape[:-1])

    v00 = gather(r0_i, c0_i)
    v01 = gather(r0_i, c0_i + 1)
    v10 = gather(r0_i + 1, c0_i)
    v11 = gather(r0_i + 1, c0_i + 1)
    top = v00 * (1 - fc) + v01 * fc
    bottom = v10 * (1 - fc) + v11 * fc
    return top * (1 - fr) + bottom * fr


def tps_warp_t(img: torch.Tensor, points: torch.Tensor, displacements: torch.Tensor) -> torch.Tensor:
    """Warp a (C, H, W) tensor; differentiable w.r.t. image and displacements."""
    _, h, w = img.shape
    field = tps_displacement_field(points, displacements, (h, w))
    rows = torch.arange(h, dtype=img.dtype)
    cols = torch.arange(w, dtype=img.dtype)
    grid = torch.stack(torch.meshgrid(rows, cols, indexing="ij"), dim=-1)
    return bilinear_sample(img, grid - field)


def tps_warp(x: np.ndarray, control_points: np.ndarray, displacements: np.ndarray) -> np.ndarray:
    """Numpy wrapper: warp an (H, W, C) image by control-point displacements."""
    x = np.asarray(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[:, :, None]
    dtype = torch.float64 if x.dtype == np.float64 else torch.float32
    img = torch.from_numpy(np.ascontiguousarray(x)).permute(2, 0, 1).to(dtype)
    pts = torch.as_tensor(np.asarray(control_points), dtype=dtype)
    disp = torch.as_tensor(np.asarray(displacements), dtype=dtype)
    out = tps_warp_t(img, pts, disp).permute(1, 2, 0).numpy().astype(x.dtype)
    return out[:, :, 0] if squeeze else out
