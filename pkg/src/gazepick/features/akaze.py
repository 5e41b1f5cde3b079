"""AKAZE: determinant-of-Hessian keypoints in a nonlinear scale space built
with Fast Explicit Diffusion, described with 3-channel M-LDB binary strings.

Parameters follow the reference implementation: Perona-Malik g2 conductivity,
contrast factor from the 70th percentile of the gradient histogram, base
scale 1.6, derivative factor 1.5, descriptor pattern size 10.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np
from scipy.spatial import cKDTree

from .base import AKAZE_BITS, FeatureSet, ImageTooSmall, as_gray, empty_features

MIN_SIZE = 64
SOFFSET = 1.6
DERIVATIVE_FACTOR = 1.5
KCONTRAST_PERCENTILE = 0.7
KCONTRAST_NBINS = 300
FED_TAU_MAX = 0.25
PATTERN_SIZE = 10
# descriptor samples reach PATTERN_SIZE * scale * sqrt(2) from the keypoint
SAMPLE_REACH = PATTERN_SIZE * math.sqrt(2.0)


@dataclass
class _Level:
    octave: int
    sublevel: int
    esigma: float
    etime: float
    Lt: np.ndarray = None
    Lsmooth: np.ndarray = None
    Lx: np.ndarray = None
    Ly: np.ndarray = None
    Ldet: np.ndarray = None

    @property
    def ratio(self) -> int:
        return 1 << self.octave

    @property
    def sigma_size(self) -> int:
        return int(round(self.esigma * DERIVATIVE_FACTOR / self.ratio))


def _gaussian(img, sigma):
    ksize = int(math.ceil(2.0 * (1.0 + (sigma - 0.8) / 0.3)))
    if ksize % 2 == 0:
        ksize += 1
    return cv2.GaussianBlur(img, (ksize, ksize), sigma, sigma, borderType=cv2.BORDER_REPLICATE)


def _deriv_kernels(dx, dy, scale):
    if scale == 1:
        kx, ky = cv2.getDerivKernels(dx, dy, cv2.FILTER_SCHARR, normalize=True, ktype=cv2.CV_32F)
        return kx.ravel(), ky.ravel()
    ksize = 3 + 2 * (scale - 1)
    w = 10.0 / 3.0
    norm = 1.0 / (2.0 * scale * (w + 2.0))
    kernels = []
    for order in (dx, dy):
        k = np.zeros(ksize, np.float32)
        if order == 0:
            k[0], k[ksize // 2], k[-1] = norm, w * norm, norm
        else:
            k[0], k[-1] = -1.0, 1.0
        kernels.append(k)
    return kernels[0], kernels[1]


def _scharr(img, dx, dy, scale=1):
    kx, ky = _deriv_kernels(dx, dy, scale)
    return cv2.sepFilter2D(img, cv2.CV_32F, kx, ky)


def contrast_factor(img, percentile=KCONTRAST_PERCENTILE, nbins=KCONTRAST_NBINS):
    """Gradient magnitude at ``percentile`` of the non-zero gradient histogram."""
    smooth = _gaussian(img, 1.0)
    lx = _scharr(smooth, 1, 0)
    ly = _scharr(smooth, 0, 1)
    mod = np.sqrt(lx[1:-1, 1:-1] ** 2 + ly[1:-1, 1:-1] ** 2)
    hmax = float(mod.max()) if mod.size else 0.0
    if hmax <= 0.0:
        return 0.03
    nz = mod[mod != 0.0]
    bins = np.minimum((nbins * (nz / hmax)).astype(np.int64), nbins - 1)
    hist = np.bincount(bins, minlength=nbins)
    threshold = len(nz) * percentile
    cum = np.cumsum(hist)
    k = int(np.searchsorted(cum, threshold, side="left")) + 1
    if k > nbins:
        return 0.03
    return hmax * k / nbins


def _is_prime(n):
    if n < 2:
        return False
    if n < 4:
        return True
    if n % 2 == 0:
        return False
    return all(n % p for p in range(3, int(math.isqrt(n)) + 1, 2))


def fed_tau_by_process_time(t, tau_max=FED_TAU_MAX, reordering=True):
    """Step sizes of one FED cycle that diffuses for total time ``t``."""
    n = int(math.ceil(math.sqrt(3.0 * t / tau_max + 0.25) - 0.5 - 1e-8) + 0.5)
    if n <= 0:
        return []
    scale = 3.0 * t / (tau_max * n * (n + 1))
    c = 1.0 / (4.0 * n + 2.0)
    d = scale * tau_max / 2.0
    tauh = [d / math.cos(math.pi * (2 * k + 1) * c) ** 2 for k in range(n)]
    if not reordering or n < 3:
        return tauh
    kappa = n // 2
    prime = n + 1
    while not _is_prime(prime):
        prime += 1
    tau = []
    k = 0
    for _ in range(n):
        while True:
            index = ((k + 1) * kappa) % prime - 1
            if 0 <= index < n:
                break
            k += 1
        tau.append(tauh[index])
        k += 1
    return tau


def _pm_g2(lx, ly, k):
    return 1.0 / (1.0 + (lx * lx + ly * ly) / (k * k))


def _nld_step(lt, flow, tau):
    """One explicit diffusion step with zero-flux borders (in place)."""
    lp = np.pad(lt, 1, mode="edge")
    cp = np.pad(flow, 1, mode="edge")
    c = cp[1:-1, 1:-1]
    l = lp[1:-1, 1:-1]
    xpos = (c + cp[1:-1, 2:]) * (lp[1:-1, 2:] - l)
    xneg = (cp[1:-1, :-2] + c) * (l - lp[1:-1, :-2])
    ypos = (c + cp[2:, 1:-1]) * (lp[2:, 1:-1] - l)
    yneg = (cp[:-2, 1:-1] + c) * (l - lp[:-2, 1:-1])
    lt += np.float32(0.5 * tau) * (xpos - xneg + ypos - yneg)


def build_scale_space(img, n_octaves=4, n_sublevels=4):
    """Nonlinear scale space levels for an 8-bit or float image."""
    img = np.asarray(img)
    if img.dtype == np.uint8:
        img = img.astype(np.float32) / 255.0
    img = np.ascontiguousarray(img, dtype=np.float32)
    h, w = img.shape

    levels = []
    for o in range(n_octaves):
        lw, lh = w >> o, h >> o
        if o > 0 and (lw < 80 or lh < 40):
            break
        for s in range(n_sublevels):
            esigma = SOFFSET * 2.0 ** (s / n_sublevels + o)
            levels.append(_Level(o, s, esigma, 0.5 * esigma * esigma))

    kcontrast = contrast_factor(img)
    first = levels[0]
    first.Lt = _gaussian(img, SOFFSET)
    first.Lsmooth = _gaussian(first.Lt, 1.0)

    for prev, cur in zip(levels, levels[1:]):
        if cur.octave > prev.octave:
            size = (w >> cur.octave, h >> cur.octave)
            cur.Lt = cv2.resize(prev.Lt, size, interpolation=cv2.INTER_AREA)
            kcontrast *= 0.75
        else:
            cur.Lt = prev.Lt.copy()
        cur.Lsmooth = _gaussian(cur.Lt, 1.0)
        flow = _pm_g2(_scharr(cur.Lsmooth, 1, 0), _scharr(cur.Lsmooth, 0, 1), kcontrast)
        for tau in fed_tau_by_process_time(cur.etime - prev.etime):
            _nld_step(cur.Lt, flow, tau)

    for lv in levels:
        s = lv.sigma_size
        lx = _scharr(lv.Lsmooth, 1, 0, s)
        ly = _scharr(lv.Lsmooth, 0, 1, s)
        lxx = _scharr(lx, 1, 0, s)
        lyy = _scharr(ly, 0, 1, s)
        lxy = _scharr(lx, 0, 1, s)
        lv.Lx = lx * s
        lv.Ly = ly * s
        s2 = float(s * s)
        lv.Ldet = (lxx * lyy - lxy * lxy) * (s2 * s2)
    return levels


def _local_maxima(det, threshold):
    """Interior pixels above ``threshold`` and strictly above all 8 neighbours."""
    c = det[1:-1, 1:-1]
    mask = c > threshold
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            nb = det[1 + dy : det.shape[0] - 1 + dy, 1 + dx : det.shape[1] - 1 + dx]
            mask &= c > nb
    ys, xs = np.nonzero(mask)
    return ys + 1, xs + 1


def _find_extrema(levels, threshold):
    """Scale-space maxima as (level, row, col, response) arrays.

    A candidate survives unless a stronger one sits within its scale radius
    on the same or an adjacent level.
    """
    lvl, ys, xs, fx, fy, rad, resp = [], [], [], [], [], [], []
    for i, lv in enumerate(levels):
        y, x = _local_maxima(lv.Ldet, threshold)
        r = lv.ratio
        lvl.append(np.full(len(y), i))
        ys.append(y)
        xs.append(x)
        fx.append(x * r + 0.5 * (r - 1))
        fy.append(y * r + 0.5 * (r - 1))
        rad.append(np.full(len(y), lv.esigma * DERIVATIVE_FACTOR))
        resp.append(lv.Ldet[y, x].astype(np.float64))
    lvl, ys, xs, rad, resp = (np.concatenate(a) for a in (lvl, ys, xs, rad, resp))
    if len(lvl) == 0:
        return lvl, ys, xs, resp
    pts = np.column_stack([np.concatenate(fx), np.concatenate(fy)])

    pairs = cKDTree(pts).query_pairs(r=float(rad.max()), output_type="ndarray")
    if len(pairs):
        a, b = pairs[:, 0], pairs[:, 1]
        d2 = ((pts[a] - pts[b]) ** 2).sum(1)
        close = (np.abs(lvl[a] - lvl[b]) <= 1) & (d2 <= np.maximum(rad[a], rad[b]) ** 2)
        a, b = a[close], b[close]
        # ordering key: response, then lower level, then lower index
        a_wins = (resp[a] > resp[b]) | ((resp[a] == resp[b]) & ((lvl[a] < lvl[b]) | ((lvl[a] == lvl[b]) & (a < b))))
        keep = np.ones(len(lvl), bool)
        keep[np.where(a_wins, b, a)] = False
    else:
        keep = np.ones(len(lvl), bool)
    return lvl[keep], ys[keep], xs[keep], resp[keep]


def _refine(levels, i, y, x, n_sublevels):
    """Quadratic fit over the 3x3(x3) neighbourhood of the maxima on level ``i``.

    Returns full-resolution x, y, keypoint diameter and a validity mask.  The
    scale axis is used only when both neighbouring levels share the octave.
    """
    lv = levels[i]
    det = lv.Ldet.astype(np.float64)
    c = det[y, x]
    dx = 0.5 * (det[y, x + 1] - det[y, x - 1])
    dy = 0.5 * (det[y + 1, x] - det[y - 1, x])
    dxx = det[y, x + 1] + det[y, x - 1] - 2 * c
    dyy = det[y + 1, x] + det[y - 1, x] - 2 * c
    dxy = 0.25 * (det[y + 1, x + 1] + det[y - 1, x - 1] - det[y - 1, x + 1] - det[y + 1, x - 1])
    n = len(y)
    offset = np.zeros((n, 3))
    done = np.zeros(n, bool)

    below = levels[i - 1] if i > 0 else None
    above = levels[i + 1] if i + 1 < len(levels) else None
    if below is not None and above is not None and below.octave == lv.octave == above.octave:
        dn = below.Ldet.astype(np.float64)
        up = above.Ldet.astype(np.float64)
        ds = 0.5 * (up[y, x] - dn[y, x])
        dss = up[y, x] + dn[y, x] - 2 * c
        dxs = 0.25 * (up[y, x + 1] - up[y, x - 1] - dn[y, x + 1] + dn[y, x - 1])
        dys = 0.25 * (up[y + 1, x] - up[y - 1, x] - dn[y + 1, x] + dn[y - 1, x])
        H = np.stack(
            [np.stack([dxx, dxy, dxs], -1), np.stack([dxy, dyy, dys], -1), np.stack([dxs, dys, dss], -1)], -2
        )
        ok = np.abs(np.linalg.det(H)) > 1e-20
        if ok.any():
            sol = np.linalg.solve(H[ok], -np.stack([dx, dy, ds], -1)[ok][..., None])[..., 0]
            good = np.all(np.abs(sol) <= 1.0, axis=1)
            idx = np.flatnonzero(ok)[good]
            offset[idx] = sol[good]
            done[idx] = True

    valid = done.copy()
    rest = np.flatnonzero(~done)
    if len(rest):
        H = np.stack([np.stack([dxx, dxy], -1), np.stack([dxy, dyy], -1)], -2)[rest]
        ok = np.abs(np.linalg.det(H)) > 1e-20
        if ok.any():
            g = np.stack([dx, dy], -1)[rest][ok]
            sol = np.linalg.solve(H[ok], -g[..., None])[..., 0]
            good = np.all(np.abs(sol) <= 1.0, axis=1)
            idx = rest[ok][good]
            offset[idx, :2] = sol[good]
            valid[idx] = True

    r = lv.ratio
    px = (x + offset[:, 0]) * r + 0.5 * (r - 1)
    py = (y + offset[:, 1]) * r + 0.5 * (r - 1)
    # keypoint size is a diameter, as in OpenCV
    size = 2.0 * DERIVATIVE_FACTOR * SOFFSET * 2.0 ** (lv.octave + (lv.sublevel + offset[:, 2]) / n_sublevels)
    return px, py, size, valid


def _sample_scale(size, ratio):
    return np.maximum(np.round(0.5 * np.asarray(size) / ratio), 1.0)


_GAUSS25_SIGMA = 2.5
_ORI_OFFSETS = np.array([(i, j) for i in range(-6, 7) for j in range(-6, 7) if i * i + j * j < 36], float)
_ORI_WEIGHTS = np.exp(-(_ORI_OFFSETS**2).sum(1) / (2 * _GAUSS25_SIGMA**2))
_ORI_STARTS = np.arange(0.0, 2 * math.pi, 0.15)


def _orientations(lv, xf, yf, s):
    """Dominant gradient direction in a sliding pi/3 window (radians)."""
    ix = np.rint(xf[:, None] + _ORI_OFFSETS[None, :, 0] * s[:, None]).astype(np.intp)
    iy = np.rint(yf[:, None] + _ORI_OFFSETS[None, :, 1] * s[:, None]).astype(np.intp)
    rx = _ORI_WEIGHTS * lv.Lx[iy, ix]
    ry = _ORI_WEIGHTS * lv.Ly[iy, ix]
    ang = np.mod(np.arctan2(ry, rx), 2 * math.pi)

    a1 = _ORI_STARTS[None, :, None]
    a2 = a1 + math.pi / 3
    wraps = a2 > 2 * math.pi
    a2 = np.where(wraps, a2 - 2 * math.pi, a2)
    A = ang[:, None, :]
    inside = np.where(wraps, (A > 0) & (A < a2) | (A > a1), (A > a1) & (A < a2)).astype(np.float32)
    sx = np.matmul(inside, rx[:, :, None].astype(np.float32))[..., 0]
    sy = np.matmul(inside, ry[:, :, None].astype(np.float32))[..., 0]
    best = np.argmax(sx * sx + sy * sy, axis=1)
    rows = np.arange(len(xf))
    return np.mod(np.arctan2(sy[rows, best], sx[rows, best]), 2 * math.pi)


def _mldb_grid(step):
    ks, ls, cells = [], [], []
    cell = 0
    for i in range(-PATTERN_SIZE, PATTERN_SIZE, step):
        for j in range(-PATTERN_SIZE, PATTERN_SIZE, step):
            for k in range(i, i + step):
                for l in range(j, j + step):
                    ks.append(k)
                    ls.append(l)
                    cells.append(cell)
            cell += 1
    ks = np.array(ks, float)
    ls = np.array(ls, float)
    member = np.zeros((len(cells), cell))
    member[np.arange(len(cells)), cells] = 1.0
    member /= member.sum(0, keepdims=True)
    member = member.astype(np.float32)
    pairs = np.array([(a, b) for a in range(cell) for b in range(a + 1, cell)], np.intp)
    return ks, ls, member, pairs


_MLDB_GRIDS = [_mldb_grid(int(math.ceil(PATTERN_SIZE * m))) for m in (1.0, 2.0 / 3.0, 0.5)]


def _mldb(lv, xf, yf, s, angle):
    co = np.cos(angle)[:, None]
    si = np.sin(angle)[:, None]
    sc = s[:, None]
    bits = []
    for ks, ls, member, pairs in _MLDB_GRIDS:
        sy = yf[:, None] + ls[None] * co * sc + ks[None] * si * sc
        sx = xf[:, None] - ls[None] * si * sc + ks[None] * co * sc
        iy = np.rint(sy).astype(np.intp)
        ix = np.rint(sx).astype(np.intp)
        ri = lv.Lt[iy, ix]
        rx = lv.Lx[iy, ix]
        ry = lv.Ly[iy, ix]
        rry = rx * co + ry * si
        rrx = -rx * si + ry * co
        for chan in (ri, rrx, rry):
            vals = chan @ member
            bits.append(vals[:, pairs[:, 0]] > vals[:, pairs[:, 1]])
    bits = np.concatenate(bits, axis=1)
    assert bits.shape[1] == AKAZE_BITS
    return np.packbits(bits, axis=1, bitorder="little")


def detect_akaze(img, threshold: float = 0.001, n_octaves: int = 4, n_sublevels: int = 4) -> FeatureSet:
    """AKAZE keypoints with M-LDB descriptors (486 bits in 61 bytes)."""
    gray = as_gray(img)
    h, w = gray.shape
    if h < MIN_SIZE or w < MIN_SIZE:
        raise ImageTooSmall(f"AKAZE needs at least {MIN_SIZE}x{MIN_SIZE} pixels, got {w}x{h}")
    if gray.min() == gray.max():
        return empty_features("AKAZE")

    levels = build_scale_space(gray, n_octaves, n_sublevels)
    lvl, ys, xs, resp = _find_extrema(levels, threshold)

    chunks = []
    for i in np.unique(lvl):
        sel = lvl == i
        px, py, size, valid = _refine(levels, int(i), ys[sel], xs[sel], n_sublevels)
        lv = levels[i]
        r = lv.ratio
        xf, yf = px / r, py / r
        s = _sample_scale(size, r)
        reach = SAMPLE_REACH * s + 1.0
        lh, lw = lv.Lt.shape
        inside = valid & (xf - reach >= 0) & (yf - reach >= 0) & (xf + reach <= lw - 1) & (yf + reach <= lh - 1)
        if not inside.any():
            continue
        xf, yf, s = xf[inside], yf[inside], s[inside]
        angle = _orientations(lv, xf, yf, s)
        desc = _mldb(lv, xf, yf, s, angle)
        rows = np.column_stack([px[inside], py[inside], size[inside], resp[sel][inside]])
        chunks.append((rows, angle, desc))
    if not chunks:
        return empty_features("AKAZE")

    rows = np.concatenate([c[0] for c in chunks])
    angle = np.concatenate([c[1] for c in chunks])
    desc = np.concatenate([c[2] for c in chunks])
    # strongest first, position as tie-break
    order = np.lexsort((rows[:, 0], rows[:, 1], -rows[:, 3]))
    return FeatureSet(
        rows[order, :2].copy(),
        rows[order, 2].copy(),
        angle[order].copy(),
        rows[order, 3].copy(),
        np.ascontiguousarray(desc[order]),
        "AKAZE",
        AKAZE_BITS,
    )
