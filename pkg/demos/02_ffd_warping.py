"""Free-form deformation basics: partition of unity, locality, composition,
and gradient checking by finite differences.

Run:  python demos/02_ffd_warping.py
"""

import numpy as np

from cardioshape.ffd import (
    ControlGrid,
    bspline_basis,
    compose_warp,
    compose_warp_gradient,
    warp_points,
)

rng = np.random.default_rng(0)

print("cubic B-spline basis at u = 0:      ", bspline_basis(0.0))
print("cubic B-spline basis at u = 0.5:    ", bspline_basis(0.5))
u = np.linspace(0, 1, 7, endpoint=False)
print("partition of unity, max |sum - 1|:  ", np.abs(bspline_basis(u).sum(-1) - 1).max())

grid = ControlGrid.for_box([-50, -50, -60], [50, 50, 60], (6, 6, 8))
points = rng.uniform(-45, 45, (1000, 3))

print("\nzero displacements -> identity warp:",
      np.abs(warp_points(grid, points) - points).max())

grid.displacements[:] = [3.0, -1.0, 2.0]
moved = warp_points(grid, points)
print("constant displacements -> exact translation, max error:",
      np.abs(moved - points - [3.0, -1.0, 2.0]).max())

# locality: one displaced control point only moves points in its support
grid.displacements[:] = 0.0
grid.displacements[3, 3, 4] = [5.0, 0.0, 0.0]
moved = warp_points(grid, points)
affected = np.abs(moved - points).max(axis=1) > 0
print(f"one active control point affects {affected.sum()} / {len(points)} points")

# two-scale composition with an analytic-vs-numeric gradient check
coarse = ControlGrid.for_box([-50, -50, -60], [50, 50, 60], (6, 6, 8))
fine = ControlGrid.for_box([-50, -50, -60], [50, 50, 60], (12, 12, 16))
coarse.displacements = rng.normal(0, 2.0, coarse.displacements.shape)
fine.displacements = rng.normal(0, 1.0, fine.displacements.shape)
upstream = rng.normal(size=points.shape)
grads, _ = compose_warp_gradient([coarse, fine], points, upstream)

idx = (2, 3, 4, 0)
h = 1e-4
disp = coarse.displacements.copy()
for sign in (+1, -1):
    disp[idx] = coarse.displacements[idx] + sign * h
    chain = [ControlGrid(coarse.dims, coarse.origin, coarse.spacing, disp.copy()), fine]
    val = np.sum(compose_warp(chain, points) * upstream)
    if sign > 0:
        v_plus = val
    else:
        v_minus = val
    disp[idx] = coarse.displacements[idx]
fd = (v_plus - v_minus) / (2 * h)
print(f"\ncomposed-warp gradient check at one coarse control point:")
print(f"  analytic {grads[0][idx]:+.8f}   finite difference {fd:+.8f}")
