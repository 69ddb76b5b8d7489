"""Cubic B-spline free-form deformation lattices.

A lattice stores one 3-D displacement per control point; warping a point
blends the 4x4x4 neighbouring displacements with the uniform cubic B-spline
basis.  Multi-scale deformation composes lattices sequentially (the coarse
result is re-evaluated inside the finer lattice), and analytic gradients are
provided both with respect to the control displacements and, for chained
lattices, with respect to the input points.
"""

import numpy as np


class ControlGrid:
    """A lattice of B-spline control-point displacements.

    Parameters
    ----------
    dims : (int, int, int)
        Control-point counts per axis, each >= 4 (cubic support).
    origin : array_like (3,)
        World position of control point (0, 0, 0), mm.
    spacing : array_like (3,)
        Positive control-point spacing per axis, mm.
    displacements : ndarray (Gx, Gy, Gz, 3), optional
        Initial displacements; zeros when omitted.
    """

    def __init__(self, dims, origin, spacing, displacements=None):
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3 or min(dims) < 4:
            raise ValueError("dims must be three counts, each >= 4")
        origin = np.asarray(origin, dtype=np.float64)
        spacing = np.asarray(spacing, dtype=np.float64)
        if origin.shape != (3,) or spacing.shape != (3,):
            raise ValueError("origin and spacing must be 3-vectors")
        if np.any(spacing <= 0):
            raise ValueError("spacing must be positive")
        if displacements is None:
            displacements = np.zeros(dims + (3,))
        else:
            displacements = np.asarray(displacements, dtype=np.float64)
            if displacements.shape != dims + (3,):
                raise ValueError(
                    f"displacements must have shape {dims + (3,)}, "
                    f"got {displacements.shape}"
                )
            if not np.all(np.isfinite(displacements)):
                raise ValueError("displacements must be finite")
        self.dims = dims
        self.origin = origin
        self.spacing = spacing
        self.displacements = displacements

    def copy(self):
        return ControlGrid(
            self.dims, self.origin, self.spacing, self.displacements.copy()
        )

    @classmethod
    def for_box(cls, lo, hi, dims):
        """Lattice whose fully supported cells cover the box [lo, hi].

        Spacing is chosen so points inside the box fall in cells 1..G-3 and
        every warp evaluation sees a complete 4-point support.
        """
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        dims = tuple(int(d) for d in dims)
        extent = hi - lo
        if np.any(extent <= 0):
            raise ValueError("box must have positive extent")
        spacing = extent / (np.array(dims) - 3)
        origin = lo - spacing
        return cls(dims, origin, spacing)


def bspline_basis(u):
    """Uniform cubic B-spline basis values B0..B3 at local coordinate u.

    Accepts a scalar or array with every entry in [0, 1); returns the four
    weights along a trailing axis.  Weights sum to one (partition of unity).
    """
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < 0) or np.any(u >= 1):
        raise ValueError("local coordinate u must satisfy 0 <= u < 1")
    return _basis(u)


def _basis(u):
    # Polynomial pieces are valid for any real u; partition of unity holds
    # identically, which keeps clamped out-of-lattice warps translation-exact.
    u = np.asarray(u, dtype=np.float64)
    u2 = u * u
    u3 = u2 * u
    b0 = (1.0 - 3.0 * u + 3.0 * u2 - u3) / 6.0
    b1 = (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0
    b2 = (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0
    b3 = u3 / 6.0
    return np.stack([b0, b1, b2, b3], axis=-1)


def _basis_deriv(u):
    u = np.asarray(u, dtype=np.float64)
    u2 = u * u
    d0 = (-3.0 + 6.0 * u - 3.0 * u2) / 6.0
    d1 = (9.0 * u2 - 12.0 * u) / 6.0
    d2 = (-9.0 * u2 + 6.0 * u + 3.0) / 6.0
    d3 = 3.0 * u2 / 6.0
    return np.stack([d0, d1, d2, d3], axis=-1)


def _cells_and_locals(grid, points):
    """Clamped cell indices, local coordinates, and a clamp mask, all (N, 3).

    The cell index is clamped to the fully supported range [1, G-3] and the
    local coordinate to [0, 1]: points outside the lattice evaluate the
    displacement field at the nearest boundary-cell position, so the warp is
    total (and exactly translation-equivariant for a constant field) at the
    cost of a derivative kink on the boundary.
    """
    pts = np.asarray(points, dtype=np.float64)
    s = (pts - grid.origin) / grid.spacing
    cell = np.floor(s).astype(np.int64)
    for ax in range(3):
        np.clip(cell[:, ax], 1, grid.dims[ax] - 3, out=cell[:, ax])
    raw = s - cell
    local = np.clip(raw, 0.0, 1.0)
    clamped = raw != local
    return cell, local, clamped


def _weight_tensors(grid, points, deriv_axis=None):
    """Per-point index arrays and per-axis weight arrays for the 4x4x4 stencil.

    With ``deriv_axis`` set, that axis uses the basis derivative scaled by
    1/spacing, producing weights of the displacement-field spatial Jacobian;
    the derivative is zero where the boundary clamp is active.
    """
    cell, local, clamped = _cells_and_locals(grid, points)
    idx = [cell[:, ax, None] - 1 + np.arange(4) for ax in range(3)]
    w = []
    for ax in range(3):
        if ax == deriv_axis:
            dw = _basis_deriv(local[:, ax]) / grid.spacing[ax]
            dw[clamped[:, ax]] = 0.0
            w.append(dw)
        else:
            w.append(_basis(local[:, ax]))
    return idx, w


def warp_points(grid, points):
    """Apply the FFD to points: ``p' = p + sum of basis-weighted displacements``.

    Points outside the lattice are clamped to the boundary cell (the warp is
    then a smooth polynomial extension; a constant displacement field still
    translates them exactly).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must have shape (n, 3)")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    idx, w = _weight_tensors(grid, pts)
    out = pts.copy()
    d = grid.displacements
    for a in range(4):
        for b in range(4):
            wab = w[0][:, a] * w[1][:, b]
            ia = idx[0][:, a]
            ib = idx[1][:, b]
            for c in range(4):
                wk = (wab * w[2][:, c])[:, None]
                out += wk * d[ia, ib, idx[2][:, c]]
    return out


def warp_gradient(grid, points, upstream):
    """Accumulate dLoss/d(displacements) from per-point upstream gradients.

    ``upstream`` holds dLoss/dp' per point; the result has the same shape as
    ``grid.displacements``.  Linear in ``upstream``; accumulation order is a
    fixed sequential reduction, so results are deterministic.
    """
    pts = np.asarray(points, dtype=np.float64)
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != pts.shape:
        raise ValueError(
            f"upstream shape {up.shape} does not match points shape {pts.shape}"
        )
    idx, w = _weight_tensors(grid, pts)
    grad = np.zeros_like(grid.displacements)
    gx, gy, gz = grid.dims
    flat = grad.reshape(-1, 3)
    for a in range(4):
        for b in range(4):
            wab = w[0][:, a] * w[1][:, b]
            lin_ab = (idx[0][:, a] * gy + idx[1][:, b]) * gz
            for c in range(4):
                wk = (wab * w[2][:, c])[:, None]
                np.add.at(flat, lin_ab + idx[2][:, c], wk * up)
    return grad


def warp_jacobian(grid, points):
    """Spatial Jacobian of the displacement field, shape (n, 3, 3).

    ``J[p, m, n] = d(displacement_m)/d(point_n)`` evaluated at each point;
    needed to chain gradients through composed lattices.
    """
    pts = np.asarray(points, dtype=np.float64)
    jac = np.zeros((len(pts), 3, 3))
    d = grid.displacements
    for ax in range(3):
        idx, w = _weight_tensors(grid, pts, deriv_axis=ax)
        for a in range(4):
            for b in range(4):
                wab = w[0][:, a] * w[1][:, b]
                ia = idx[0][:, a]
                ib = idx[1][:, b]
                for c in range(4):
                    wk = (wab * w[2][:, c])[:, None]
                    jac[:, :, ax] += wk * d[ia, ib, idx[2][:, c]]
    return jac


def compose_warp(grids, points):
    """Sequential multi-scale warp: the output of each lattice feeds the next.

    Lattices are ordered coarse to fine.
    """
    if len(grids) < 1:
        raise ValueError("compose_warp needs at least one grid")
    out = np.asarray(points, dtype=np.float64)
    for g in grids:
        out = warp_points(g, out)
    return out


def compose_warp_gradient(grids, points, upstream):
    """Gradients of a loss through a sequential warp chain.

    Parameters
    ----------
    grids : list of ControlGrid
    points : ndarray (n, 3)
        Chain input points.
    upstream : ndarray (n, 3)
        dLoss/d(final points).

    Returns
    -------
    grid_grads : list of ndarray
        One displacement-gradient array per grid, in input order.
    point_grad : ndarray (n, 3)
        dLoss/d(input points), useful when the chain input itself moves.
    """
    pts = np.asarray(points, dtype=np.float64)
    inputs = [pts]
    for g in grids:
        inputs.append(warp_points(g, inputs[-1]))
    g_out = np.asarray(upstream, dtype=np.float64)
    grid_grads = [None] * len(grids)
    for k in range(len(grids) - 1, -1, -1):
        x_in = inputs[k]
        grid_grads[k] = warp_gradient(grids[k], x_in, g_out)
        jac = warp_jacobian(grids[k], x_in)
        # p_out = x_in + D(x_in): pull back through (I + J)^T.
        g_out = g_out + np.einsum("nmk,nm->nk", jac, g_out)
    return grid_grads, g_out
