"""Hot inner loops: exact patch distances, correspondence search, label scatter.

Plain functions over contiguous numpy arrays, compiled (or not) according to
:mod:`labelfuse.backend`. Conventions shared by every kernel:

- volume arrays are C-contiguous and indexed ``[z, y, x]``; template stacks
  are ``[t, z, y, x]``; flat voxel indices are x-fastest
- match fields are parallel 1-D arrays over the ROI voxels in ascending
  flat order: template index, match z/y/x, distance
- distances accumulate in float64 over float32 data; on data quantized to
  the intensity grid every partial sum is exactly representable, which keeps
  the incremental face update bit-identical to a full recomputation
- random draws come from the splitmix64 state array (see labelfuse.rng)
"""

import math

import numpy as np

from .backend import ACTIVE_BACKEND, jit_kernel

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)


@jit_kernel
def rng_next(state):
    s = state[0] + _GOLDEN
    state[0] = s
    z = s
    z = (z ^ (z >> _S30)) * _MIX_A
    z = (z ^ (z >> _S27)) * _MIX_B
    return z ^ (z >> _S31)


@jit_kernel
def rng_below(state, n):
    # modulo draw; bias is negligible for the window sizes used here
    return np.int64(rng_next(state) % np.uint64(n))


@jit_kernel
def ssd_full(a, az, ay, ax, b, bz, by, bx, radius):
    """Sum of squared differences between two patches, z/y/x loop order."""
    acc = 0.0
    for dz in range(-radius, radius + 1):
        for dy in range(-radius, radius + 1):
            for dx in range(-radius, radius + 1):
                d = np.float64(a[az + dz, ay + dy, ax + dx]) - np.float64(
                    b[bz + dz, by + dy, bx + dx]
                )
                acc += d * d
    return acc


@jit_kernel
def ssd_shifted(prev, a, az, ay, ax, b, bz, by, bx, axis, step, radius):
    """Distance after shifting both centers one voxel along ``axis``.

    ``prev`` must be the distance at the unshifted centers. The departing
    face of squared differences is subtracted, the arriving face added, each
    face accumulated in the canonical loop order. axis: 0=x, 1=y, 2=z.
    """
    out = 0.0
    inn = 0.0
    if axis == 0:
        ox = -radius if step > 0 else radius
        ix = radius + 1 if step > 0 else -radius - 1
        for dz in range(-radius, radius + 1):
            for dy in range(-radius, radius + 1):
                d = np.float64(a[az + dz, ay + dy, ax + ox]) - np.float64(
                    b[bz + dz, by + dy, bx + ox]
                )
                out += d * d
                d = np.float64(a[az + dz, ay + dy, ax + ix]) - np.float64(
                    b[bz + dz, by + dy, bx + ix]
                )
                inn += d * d
    elif axis == 1:
        oy = -radius if step > 0 else radius
        iy = radius + 1 if step > 0 else -radius - 1
        for dz in range(-radius, radius + 1):
            for dx in range(-radius, radius + 1):
                d = np.float64(a[az + dz, ay + oy, ax + dx]) - np.float64(
                    b[bz + dz, by + oy, bx + dx]
                )
                out += d * d
                d = np.float64(a[az + dz, ay + iy, ax + dx]) - np.float64(
                    b[bz + dz, by + iy, bx + dx]
                )
                inn += d * d
    else:
        oz = -radius if step > 0 else radius
        iz = radius + 1 if step > 0 else -radius - 1
        for dy in range(-radius, radius + 1):
            for dx in range(-radius, radius + 1):
                d = np.float64(a[az + oz, ay + dy, ax + dx]) - np.float64(
                    b[bz + oz, by + dy, bx + dx]
                )
                out += d * d
                d = np.float64(a[az + iz, ay + dy, ax + dx]) - np.float64(
                    b[bz + iz, by + dy, bx + dx]
                )
                inn += d * d
    return prev - out + inn


@jit_kernel
def init_field(sub, tpls, roi_idx, radius, half_init, state, t_arr, pz, py, px, dist):
    """Seed one search run: uniform template, uniform in-window position.

    Positions whose patch would leave the template are redrawn within the
    window. Draw order per voxel: template, then x/y/z offsets per attempt.
    """
    nz, ny, nx = sub.shape
    ntpl = tpls.shape[0]
    w = 2 * half_init + 1
    for i in range(roi_idx.shape[0]):
        idx = roi_idx[i]
        x = idx % nx
        y = (idx // nx) % ny
        z = idx // (nx * ny)
        tt = rng_below(state, ntpl)
        cx = x
        cy = y
        cz = z
        while True:
            ox = rng_below(state, w) - half_init
            oy = rng_below(state, w) - half_init
            oz = rng_below(state, w) - half_init
            cx = x + ox
            cy = y + oy
            cz = z + oz
            if (
                cx >= radius
                and cx < nx - radius
                and cy >= radius
                and cy < ny - radius
                and cz >= radius
                and cz < nz - radius
            ):
                break
        t_arr[i] = tt
        pz[i] = cz
        py[i] = cy
        px[i] = cx
        dist[i] = ssd_full(sub, z, y, x, tpls[tt], cz, cy, cx, radius)


@jit_kernel
def random_search_entry(sub, tpl, z, y, x, bz, by, bx, bd, radius, half_init, state):
    """Decaying random search around the current best, template pinned.

    One candidate per window level (half-size halves until it reaches 1);
    out-of-bounds candidates are rejected, not redrawn. Returns the
    (possibly updated) best z, y, x, distance.
    """
    nz, ny, nx = tpl.shape
    best_z = np.int64(bz)
    best_y = np.int64(by)
    best_x = np.int64(bx)
    best_d = bd
    rr = half_init
    while rr >= 1:
        w = 2 * rr + 1
        ox = rng_below(state, w) - rr
        oy = rng_below(state, w) - rr
        oz = rng_below(state, w) - rr
        cx = best_x + ox
        cy = best_y + oy
        cz = best_z + oz
        if (
            cx >= radius
            and cx < nx - radius
            and cy >= radius
            and cy < ny - radius
            and cz >= radius
            and cz < nz - radius
        ):
            d = ssd_full(sub, z, y, x, tpl, cz, cy, cx, radius)
            if d < best_d:
                best_z = cz
                best_y = cy
                best_x = cx
                best_d = d
        rr //= 2
    return best_z, best_y, best_x, best_d


@jit_kernel
def sweep_field(
    sub,
    tpls,
    roi_idx,
    roi_rank,
    radius,
    reverse,
    do_search,
    half_init,
    state,
    t_arr,
    pz,
    py,
    px,
    dist,
):
    """One scan of propagation (and optionally interleaved random search).

    Forward sweeps visit ROI voxels in ascending flat order and test the
    shifted matches of the x/y/z neighbors at -1 offsets; reverse sweeps run
    the exact mirror. A candidate is adopted only on strict improvement.
    """
    nz, ny, nx = sub.shape
    n_roi = roi_idx.shape[0]
    step = -1 if reverse else 1
    for ii in range(n_roi):
        i = n_roi - 1 - ii if reverse else ii
        idx = roi_idx[i]
        x = idx % nx
        y = (idx // nx) % ny
        z = idx // (nx * ny)
        for axis in range(3):
            if axis == 0:
                nidx = idx - step
                nbz = z
                nby = y
                nbx = x - step
            elif axis == 1:
                nidx = idx - step * nx
                nbz = z
                nby = y - step
                nbx = x
            else:
                nidx = idx - step * nx * ny
                nbz = z - step
                nby = y
                nbx = x
            j = roi_rank[nidx]
            if j < 0:
                continue
            tt = t_arr[j]
            cz = np.int64(pz[j])
            cy = np.int64(py[j])
            cx = np.int64(px[j])
            if axis == 0:
                cx += step
            elif axis == 1:
                cy += step
            else:
                cz += step
            if (
                cx < radius
                or cx >= nx - radius
                or cy < radius
                or cy >= ny - radius
                or cz < radius
                or cz >= nz - radius
            ):
                continue
            cand = ssd_shifted(
                dist[j], sub, nbz, nby, nbx, tpls[tt], pz[j], py[j], px[j], axis, step, radius
            )
            if cand < dist[i]:
                t_arr[i] = tt
                pz[i] = cz
                py[i] = cy
                px[i] = cx
                dist[i] = cand
        if do_search:
            bz, by, bx, bd = random_search_entry(
                sub,
                tpls[t_arr[i]],
                z,
                y,
                x,
                pz[i],
                py[i],
                px[i],
                dist[i],
                radius,
                half_init,
                state,
            )
            pz[i] = bz
            py[i] = by
            px[i] = bx
            dist[i] = bd


@jit_kernel
def brute_force_field(sub, tpls, roi_idx, radius, half_w, k, t_out, pz_out, py_out, px_out, d_out):
    """Exact k smallest distances over the in-window candidates.

    Ties break toward the earlier (template, flat position) candidate.
    Outputs are (k, n_roi) arrays sorted per voxel.
    """
    nz, ny, nx = sub.shape
    ntpl = tpls.shape[0]
    for i in range(roi_idx.shape[0]):
        idx = roi_idx[i]
        x = idx % nx
        y = (idx // nx) % ny
        z = idx // (nx * ny)
        z0 = max(z - half_w, radius)
        z1 = min(z + half_w, nz - 1 - radius)
        y0 = max(y - half_w, radius)
        y1 = min(y + half_w, ny - 1 - radius)
        x0 = max(x - half_w, radius)
        x1 = min(x + half_w, nx - 1 - radius)
        count = 0
        for tt in range(ntpl):
            for cz in range(z0, z1 + 1):
                for cy in range(y0, y1 + 1):
                    for cx in range(x0, x1 + 1):
                        d = ssd_full(sub, z, y, x, tpls[tt], cz, cy, cx, radius)
                        if count < k:
                            j = count
                            count += 1
                        elif d >= d_out[k - 1, i]:
                            continue
                        else:
                            j = k - 1
                        while j > 0 and d_out[j - 1, i] > d:
                            d_out[j, i] = d_out[j - 1, i]
                            t_out[j, i] = t_out[j - 1, i]
                            pz_out[j, i] = pz_out[j - 1, i]
                            py_out[j, i] = py_out[j - 1, i]
                            px_out[j, i] = px_out[j - 1, i]
                            j -= 1
                        d_out[j, i] = d
                        t_out[j, i] = tt
                        pz_out[j, i] = cz
                        py_out[j, i] = cy
                        px_out[j, i] = cx


@jit_kernel
def fuse_field(
    labels,
    roi_idx,
    t_arr,
    pz,
    py,
    px,
    dist,
    radius,
    alpha,
    sigma,
    eps,
    accum,
    count,
    scratch,
):
    """Scatter bilateral-weighted normalized label patches over the volume.

    Per ROI voxel: the weight bandwidth is alpha^2 * (min distance + eps);
    each of the k matches contributes its whole label patch with weight
    exp(1 - (dist/bandwidth + |center offset| / sigma^2)); the normalized
    patch is added onto the voxels it covers and ``count`` tracks coverage.
    """
    k = t_arr.shape[0]
    nz, ny, nx = accum.shape
    side = 2 * radius + 1
    npatch = side * side * side
    inv_sig2 = 1.0 / (sigma * sigma)
    for i in range(roi_idx.shape[0]):
        idx = roi_idx[i]
        x = idx % nx
        y = (idx // nx) % ny
        z = idx // (nx * ny)
        dmin = dist[0, i]
        for j in range(1, k):
            if dist[j, i] < dmin:
                dmin = dist[j, i]
        h2 = alpha * alpha * (dmin + eps)
        for m in range(npatch):
            scratch[m] = 0.0
        wsum = 0.0
        for j in range(k):
            ddx = np.float64(px[j, i] - x)
            ddy = np.float64(py[j, i] - y)
            ddz = np.float64(pz[j, i] - z)
            spatial = math.sqrt(ddx * ddx + ddy * ddy + ddz * ddz)
            w = math.exp(1.0 - (dist[j, i] / h2 + spatial * inv_sig2))
            wsum += w
            lab = labels[t_arr[j, i]]
            mz = pz[j, i]
            my = py[j, i]
            mx = px[j, i]
            m = 0
            for oz in range(-radius, radius + 1):
                for oy in range(-radius, radius + 1):
                    for ox in range(-radius, radius + 1):
                        if lab[mz + oz, my + oy, mx + ox] != 0:
                            scratch[m] += w
                        m += 1
        m = 0
        for oz in range(-radius, radius + 1):
            for oy in range(-radius, radius + 1):
                for ox in range(-radius, radius + 1):
                    accum[z + oz, y + oy, x + ox] += scratch[m] / wsum
                    count[z + oz, y + oy, x + ox] += 1
                    m += 1


@jit_kernel
def recompute_distances(sub, tpls, roi_idx, radius, t_arr, pz, py, px, out):
    """Fresh full distance at every stored match, for consistency audits."""
    nz, ny, nx = sub.shape
    for i in range(roi_idx.shape[0]):
        idx = roi_idx[i]
        x = idx % nx
        y = (idx // nx) % ny
        z = idx // (nx * ny)
        for j in range(t_arr.shape[0]):
            out[j, i] = ssd_full(
                sub, z, y, x, tpls[t_arr[j, i]], pz[j, i], py[j, i], px[j, i], radius
            )


if ACTIVE_BACKEND == "numpy":
    import functools

    def _quiet(func):
        # splitmix64 relies on uint64 wraparound; silence numpy's overflow
        # warnings on the uncompiled path (numba wraps silently)
        @functools.wraps(func)
        def wrapper(*args):
            with np.errstate(over="ignore"):
                return func(*args)

        return wrapper

    rng_next = _quiet(rng_next)
    rng_below = _quiet(rng_below)
    init_field = _quiet(init_field)
    random_search_entry = _quiet(random_search_entry)
    sweep_field = _quiet(sweep_field)


def warm_up():
    """Compile every kernel on tiny inputs (no-op on the numpy backend)."""
    sub = np.zeros((4, 4, 4), dtype=np.float32)
    tpls = np.zeros((1, 4, 4, 4), dtype=np.float32)
    labels = np.zeros((1, 4, 4, 4), dtype=np.uint8)
    roi_idx = np.array([1 + 4 + 16], dtype=np.int64)
    roi_rank = np.full(64, -1, dtype=np.int32)
    roi_rank[roi_idx[0]] = 0
    t_arr = np.zeros(1, dtype=np.int32)
    pz = np.ones(1, dtype=np.int32)
    py = np.ones(1, dtype=np.int32)
    px = np.ones(1, dtype=np.int32)
    dist = np.zeros(1, dtype=np.float64)
    state = np.zeros(1, dtype=np.uint64)
    init_field(sub, tpls, roi_idx, 1, 0, state, t_arr, pz, py, px, dist)
    sweep_field(sub, tpls, roi_idx, roi_rank, 1, False, True, 1, state, t_arr, pz, py, px, dist)
    sweep_field(sub, tpls, roi_idx, roi_rank, 1, True, False, 1, state, t_arr, pz, py, px, dist)
    random_search_entry(sub, tpls[0], 1, 1, 1, 1, 1, 1, dist[0], 1, 1, state)
    ssd_shifted(dist[0], sub, 1, 1, 1, sub, 1, 1, 1, 0, 1, 1)
    k2 = np.zeros((2, 1), dtype=np.int32)
    kz = np.zeros((2, 1), dtype=np.int32)
    ky = np.zeros((2, 1), dtype=np.int32)
    kx = np.zeros((2, 1), dtype=np.int32)
    kd = np.zeros((2, 1), dtype=np.float64)
    brute_force_field(sub, tpls, roi_idx, 1, 1, 2, k2, kz, ky, kx, kd)
    accum = np.zeros((4, 4, 4), dtype=np.float64)
    count = np.zeros((4, 4, 4), dtype=np.int32)
    scratch = np.zeros(27, dtype=np.float64)
    fuse_field(labels, roi_idx, k2, kz, ky, kx, kd, 1, 2.0, 2.0, 1e-6, accum, count, scratch)
    recompute_distances(sub, tpls, roi_idx, 1, k2, kz, ky, kx, kd)
