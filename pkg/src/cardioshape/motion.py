"""In-plane misalignment correction for multi-view slice stacks.

Each slice plane owns a continuous in-plane displacement (mm).  The
objective sums absolute intensity differences along every pair of
plane-plane intersection lines plus a through-stack Laplacian smoothness
term over the short-axis slices, and is minimised with Adam over all
displacements jointly.
"""

import warnings

import numpy as np

from .objectives import pearson_r
from .optim import Adam


class SlicePlane:
    """One 2-D+t slice with its in-plane displacement parameter.

    The pixel (x, y) = (column, row) sits at world position
    ``origin + x * du * axis_u + y * dv * axis_v``; images are indexed
    ``image[t, y, x]``.  The displacement is in mm and applied continuously:
    the corrected image samples the stored one at ``(x + dx/du, y + dy/dv)``.
    """

    def __init__(
        self,
        origin,
        axis_u,
        axis_v,
        pixel_spacing,
        image,
        label=None,
        displacement=(0.0, 0.0),
        plane_id="plane",
    ):
        self.origin = np.asarray(origin, dtype=np.float64)
        self.axis_u = np.asarray(axis_u, dtype=np.float64)
        self.axis_v = np.asarray(axis_v, dtype=np.float64)
        if abs(np.linalg.norm(self.axis_u) - 1) > 1e-9 or abs(
            np.linalg.norm(self.axis_v) - 1
        ) > 1e-9:
            raise ValueError("axis_u and axis_v must be unit vectors")
        if abs(self.axis_u @ self.axis_v) > 1e-9:
            raise ValueError("axis_u and axis_v must be orthogonal")
        self.pixel_spacing = (float(pixel_spacing[0]), float(pixel_spacing[1]))
        if min(self.pixel_spacing) <= 0:
            raise ValueError("pixel_spacing must be positive")
        self.image = np.asarray(image, dtype=np.float64)
        if self.image.ndim != 3:
            raise ValueError("image must have shape (T, H, W)")
        self.label = None if label is None else np.asarray(label)
        if self.label is not None and self.label.shape != self.image.shape:
            raise ValueError("label must match image shape")
        self.displacement = np.asarray(displacement, dtype=np.float64).copy()
        self.plane_id = plane_id

    @property
    def n_frames(self):
        return self.image.shape[0]

    @property
    def shape(self):
        return self.image.shape[1:]

    @property
    def normal(self):
        return np.cross(self.axis_u, self.axis_v)

    def world_to_pixels(self, points):
        """Project 3-D points into continuous pixel coordinates (N, 2)."""
        rel = np.atleast_2d(points) - self.origin
        return np.column_stack(
            [rel @ self.axis_u / self.pixel_spacing[0],
             rel @ self.axis_v / self.pixel_spacing[1]]
        )

    def displaced_pixels(self, pix):
        return pix + self.displacement / np.array(self.pixel_spacing)


def _bilinear(image, px, py):
    """Border-clamped bilinear sample of (T, H, W) at pixel coords (N,).

    Returns values (T, N) and in-plane derivatives (T, N, 2).  The sampled
    function is constant beyond the border, so the derivative is zeroed for
    clamped coordinates.
    """
    n_frames, h, w = image.shape
    cx = np.clip(px, 0.0, w - 1.0)
    cy = np.clip(py, 0.0, h - 1.0)
    outside_x = cx != px
    outside_y = cy != py
    x0 = np.minimum(np.floor(cx).astype(np.int64), w - 2) if w > 1 else np.zeros(
        len(cx), dtype=np.int64
    )
    y0 = np.minimum(np.floor(cy).astype(np.int64), h - 2) if h > 1 else np.zeros(
        len(cy), dtype=np.int64
    )
    fx = cx - x0
    fy = cy - y0
    i00 = image[:, y0, x0]
    i01 = image[:, y0, np.minimum(x0 + 1, w - 1)]
    i10 = image[:, np.minimum(y0 + 1, h - 1), x0]
    i11 = image[:, np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)]
    vals = (
        i00 * (1 - fx) * (1 - fy)
        + i01 * fx * (1 - fy)
        + i10 * (1 - fx) * fy
        + i11 * fx * fy
    )
    dx = (i01 - i00) * (1 - fy) + (i11 - i10) * fy
    dy = (i10 - i00) * (1 - fx) + (i11 - i01) * fx
    dx[:, outside_x] = 0.0
    dy[:, outside_y] = 0.0
    return vals, np.stack([dx, dy], axis=-1)


def bilinear_sample(plane, point3d, t):
    """Motion-corrected intensity at a 3-D point on a plane (border-clamped)."""
    pix = plane.displaced_pixels(plane.world_to_pixels(point3d))
    vals, _ = _bilinear(plane.image[t : t + 1], pix[:, 0], pix[:, 1])
    out = vals[0]
    return float(out[0]) if np.ndim(point3d) == 1 else out


def _sample_nearest_label(plane, pix):
    h, w = plane.shape
    dp = plane.displaced_pixels(pix)
    x = np.clip(np.rint(dp[:, 0]).astype(np.int64), 0, w - 1)
    y = np.clip(np.rint(dp[:, 1]).astype(np.int64), 0, h - 1)
    return plane.label[:, y, x]


class ViewSet:
    """A short-axis stack plus two long-axis planes."""

    def __init__(self, sax, la_2ch, la_4ch):
        if len(sax) < 3:
            raise ValueError("the short-axis stack needs at least 3 slices")
        normal = sax[0].normal
        positions = []
        for p in sax:
            if np.linalg.norm(np.cross(p.normal, normal)) > 1e-9:
                raise ValueError("short-axis slices must be parallel")
            positions.append(p.origin @ normal)
        if not np.all(np.diff(positions) > 0):
            raise ValueError("short-axis slices must be ordered along the normal")
        self.sax = list(sax)
        self.la_2ch = la_2ch
        self.la_4ch = la_4ch

    def planes(self):
        return self.sax + [self.la_2ch, self.la_4ch]

    @property
    def n_frames(self):
        return self.sax[0].n_frames


def intersection_samples(a, b):
    """Points along the intersection line of two planes, clipped to both
    image rectangles and sampled at the smaller pixel spacing.

    Every returned point projects inside [0, W) x [0, H) of both planes.  An
    empty array is returned when the clipped segments do not overlap.
    """
    na = a.normal
    nb = b.normal
    direction = np.cross(na, nb)
    norm = np.linalg.norm(direction)
    if norm < 1e-12:
        raise ValueError("planes are parallel: no intersection line")
    direction = direction / norm
    mat = np.stack([na, nb, direction])
    rhs = np.array([na @ a.origin, nb @ b.origin, 0.0])
    q0 = np.linalg.solve(mat, rhs)

    s_min, s_max = -np.inf, np.inf
    for plane in (a, b):
        h, w = plane.shape
        for axis, size in ((plane.axis_u, w), (plane.axis_v, h)):
            spacing = (
                plane.pixel_spacing[0]
                if axis is plane.axis_u
                else plane.pixel_spacing[1]
            )
            c0 = (q0 - plane.origin) @ axis / spacing
            slope = direction @ axis / spacing
            if abs(slope) < 1e-12:
                if not (0.0 <= c0 <= size - 1):
                    return np.zeros((0, 3))
                continue
            lo = (0.0 - c0) / slope
            hi = (size - 1 - c0) / slope
            s_min = max(s_min, min(lo, hi))
            s_max = min(s_max, max(lo, hi))
    if not np.isfinite(s_min) or not np.isfinite(s_max) or s_min > s_max:
        return np.zeros((0, 3))
    step = min(min(a.pixel_spacing), min(b.pixel_spacing))
    count = int(np.floor((s_max - s_min) / step)) + 1
    s = s_min + step * np.arange(count)
    return q0 + s[:, None] * direction


def _view_pairs(views):
    pairs = [(views.la_2ch, views.la_4ch)]
    for p in views.sax:
        pairs.append((p, views.la_2ch))
        pairs.append((p, views.la_4ch))
    return pairs


class _Workspace:
    """Precomputed sample coordinates so repeated objective evaluations only
    redo interpolation."""

    def __init__(self, views):
        self.pairs = []
        for a, b in _view_pairs(views):
            pts = intersection_samples(a, b)
            if len(pts) == 0:
                warnings.warn(
                    f"empty intersection between {a.plane_id} and {b.plane_id}; "
                    "term contributes 0"
                )
                continue
            self.pairs.append((a, b, a.world_to_pixels(pts), b.world_to_pixels(pts)))
        self.grids = {}
        for p in views.sax:
            h, w = p.shape
            gx, gy = np.meshgrid(np.arange(w), np.arange(h))
            self.grids[p.plane_id] = np.column_stack(
                [gx.ravel().astype(np.float64), gy.ravel().astype(np.float64)]
            )


def _pair_term(a, b, pix_a, pix_b):
    """Sum of |Ia - Ib| over samples and frames plus displacement gradients."""
    dpa = a.displaced_pixels(pix_a)
    dpb = b.displaced_pixels(pix_b)
    va, ga = _bilinear(a.image, dpa[:, 0], dpa[:, 1])
    vb, gb = _bilinear(b.image, dpb[:, 0], dpb[:, 1])
    diff = va - vb
    sign = np.sign(diff)
    value = np.abs(diff).sum()
    grad_a = np.einsum("tn,tnk->k", sign, ga) / np.array(a.pixel_spacing)
    grad_b = -np.einsum("tn,tnk->k", sign, gb) / np.array(b.pixel_spacing)
    return value, grad_a, grad_b


def mc_objective(views, workspace=None):
    """Multi-view alignment objective and its displacement gradients.

    Value: frame-averaged sum of absolute intensity differences along the
    long-axis/long-axis and short-axis/long-axis intersections, plus half the
    absolute through-stack second difference of the short-axis slices over
    all pixels.  Gradients use bilinear derivatives with the sign subgradient
    of the absolute value (zero at ties).
    """
    ws = workspace or _Workspace(views)
    n_frames = views.n_frames
    grads = {p.plane_id: np.zeros(2) for p in views.planes()}
    total = 0.0
    for a, b, pix_a, pix_b in ws.pairs:
        value, ga, gb = _pair_term(a, b, pix_a, pix_b)
        total += value
        grads[a.plane_id] += ga
        grads[b.plane_id] += gb
    sax = views.sax
    sampled = {}
    for d in range(1, len(sax) - 1):
        for p in (sax[d - 1], sax[d], sax[d + 1]):
            if p.plane_id not in sampled:
                pix = p.displaced_pixels(ws.grids[p.plane_id])
                sampled[p.plane_id] = _bilinear(p.image, pix[:, 0], pix[:, 1])
        vm, gm = sampled[sax[d - 1].plane_id]
        vc, gc = sampled[sax[d].plane_id]
        vp, gp = sampled[sax[d + 1].plane_id]
        second = vm + vp - 2.0 * vc
        sign = np.sign(second)
        total += 0.5 * np.abs(second).sum()
        sp = np.array(sax[d].pixel_spacing)
        grads[sax[d - 1].plane_id] += 0.5 * np.einsum("tn,tnk->k", sign, gm) / sp
        grads[sax[d + 1].plane_id] += 0.5 * np.einsum("tn,tnk->k", sign, gp) / sp
        grads[sax[d].plane_id] += -1.0 * np.einsum("tn,tnk->k", sign, gc) / sp
    total /= n_frames
    for k in grads:
        grads[k] /= n_frames
    return total, grads


def mc_optimize(views, lr=0.1, epochs=1000):
    """Jointly minimise the alignment objective with Adam.

    Returns the best-so-far displacements per plane id and the objective
    trace.  The planes' displacement attributes are set to the best values.
    """
    ws = _Workspace(views)
    planes = views.planes()
    order = [p.plane_id for p in planes]
    params = np.concatenate([p.displacement for p in planes])
    adam = Adam(lr=lr)
    best = (np.inf, params.copy())
    trace = np.empty(epochs)
    for epoch in range(epochs):
        for i, p in enumerate(planes):
            p.displacement = params[2 * i : 2 * i + 2]
        value, grads = mc_objective(views, ws)
        if not np.isfinite(value):
            raise RuntimeError(
                f"motion-correction objective became non-finite at epoch {epoch}"
            )
        trace[epoch] = value
        if value < best[0]:
            best = (value, params.copy())
        grad_vec = np.concatenate([grads[pid] for pid in order])
        params = adam.step(params, grad_vec)
    for i, p in enumerate(planes):
        p.displacement = best[1][2 * i : 2 * i + 2].copy()
    return {pid: best[1][2 * i : 2 * i + 2].copy() for i, pid in enumerate(order)}, trace


def eval_intersections(views):
    """Consistency metrics along all intersection lines.

    Pearson r over paired intensities always; mean per-label Dice over paired
    nearest-neighbour labels when every plane carries labels (omitted
    otherwise).
    """
    ints_a, ints_b = [], []
    labs_a, labs_b = [], []
    have_labels = all(p.label is not None for p in views.planes())
    for a, b in _view_pairs(views):
        pts = intersection_samples(a, b)
        if len(pts) == 0:
            continue
        pix_a = a.world_to_pixels(pts)
        pix_b = b.world_to_pixels(pts)
        dpa = a.displaced_pixels(pix_a)
        dpb = b.displaced_pixels(pix_b)
        va, _ = _bilinear(a.image, dpa[:, 0], dpa[:, 1])
        vb, _ = _bilinear(b.image, dpb[:, 0], dpb[:, 1])
        ints_a.append(va.ravel())
        ints_b.append(vb.ravel())
        if have_labels:
            labs_a.append(_sample_nearest_label(a, pix_a).ravel())
            labs_b.append(_sample_nearest_label(b, pix_b).ravel())
    out = {"pearson_r": pearson_r(np.concatenate(ints_a), np.concatenate(ints_b))}
    if have_labels:
        la = np.concatenate(labs_a)
        lb = np.concatenate(labs_b)
        out["dice"] = _label_dice(la, lb)
    return out


def _label_dice(la, lb):
    """Mean Dice over all foreground labels present in either sample."""
    labels = np.union1d(np.unique(la), np.unique(lb))
    labels = labels[labels != 0]
    scores = []
    for lab in labels:
        ma = la == lab
        mb = lb == lab
        denom = int(ma.sum()) + int(mb.sum())
        if denom:
            scores.append(2.0 * int((ma & mb).sum()) / denom)
    return float(np.mean(scores)) if scores else 1.0
