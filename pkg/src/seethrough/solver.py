"""Alternating estimation of background disparity and per-ray static masks.

Every reference pixel owns one disparity estimate d and one K-bit mask S
saying which views' rays actually observe the persistent background there.
The two are optimized by coordinate descent:

- the disparity step (m_step) minimizes, over a small per-pixel candidate
  set, the photometric spread of the descriptors gathered along static rays
  plus a prior anchored to the triangulated support surface:

      E(d) = beta * Var_masked(descriptors at warped rays)
             - log(gamma + exp(-(d - surface)^2 / (2 sigma^2)))

- the mask step (e_step) scores every subset of the valid rays by
  exp(-beta * Var_masked) times a clamped Bernoulli prior per ray, sampled
  from the per-view static-probability maps at the warped positions, and
  keeps the argmax (hard assignment).

Masks selecting fewer than min_static_rays rays cannot produce a variance,
so they score through the fixed penalty VARIANCE_CEILING, the largest value
a real masked variance can reach.  Ties are broken deterministically: the
disparity step prefers the smallest candidate, the mask step the larger
static count and then the smallest mask encoding (bit k = view k).

Candidate sets depend only on the triangulated surface, so they are fixed
across iterations; re-evaluating the previous disparity under the current
mask therefore always bounds the new energy from above, which is the
descent property the tests check.

All maps update double-buffered: each pixel reads the previous iteration's
state and writes only its own slot, so results are independent of pixel
visit order (and of any thread-count hint a caller honors).
"""

from dataclasses import dataclass, field

import numpy as np

from .features import DESCRIPTOR_LENGTH, DESCRIPTOR_MARGIN
from .prior import candidate_disparities, prior_log_density
from .sampling import bilinear, flatten_channels

# largest achievable masked variance: 16 entries, each split 0 / 255
VARIANCE_CEILING = float(DESCRIPTOR_LENGTH) * 127.5 ** 2

MAX_ENUMERATED_VIEWS = 12

STATUS_VALID = 0
STATUS_LOW_TEXTURE = 1
STATUS_NO_STATIC_EVIDENCE = 2

_CHUNK = 1 << 17
_ESTEP_CHUNK = 1 << 14


@dataclass
class SolverParams:
    beta: float = 1.0 / (DESCRIPTOR_LENGTH * 20.0 ** 2)
    threshold: float = 0.7          # static-probability cut for hard decisions
    max_iters: int = 5
    min_static_rays: int = 2
    epsilon_prior: float = 0.01     # Bernoulli clamp for the ray priors


@dataclass
class DisparityMap:
    values: np.ndarray   # (h, w) float32, meaningful where status == STATUS_VALID
    status: np.ndarray   # (h, w) uint8


@dataclass
class SegmentationState:
    """Per reference pixel: bit k set when view k's ray is static / valid."""

    static_bits: np.ndarray  # (h, w) uint32
    valid_bits: np.ndarray   # (h, w) uint32

    def __post_init__(self):
        stray = self.static_bits & ~self.valid_bits
        if stray.any():
            raise ValueError("static rays must be a subset of valid rays")


@dataclass
class EMStats:
    iterations_run: int = 0
    converged_after: int = None
    mean_energy: list = field(default_factory=list)
    prev_energy: list = field(default_factory=list)       # prev d under current mask
    changed_fraction: list = field(default_factory=list)


def masked_variance(descriptors, mask):
    """Spread of the selected descriptors around their masked mean.

    descriptors: (K, 16) array, mask: (K,) bool with at least one set bit.
    Two-pass computation in double precision: sum over selected rays of the
    squared distance to the masked mean, divided by the selection count.
    """
    f = np.asarray(descriptors, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    n = int(m.sum())
    if n < 1:
        raise ValueError("masked variance needs at least one selected ray")
    sel = f[m]
    mean = sel.sum(axis=0) / n
    return float(((sel - mean) ** 2).sum() / n)


def _mask_order(k):
    """All k-bit masks, larger static count first, then smaller encoding."""
    return sorted(range(1 << k), key=lambda m: (-bin(m).count("1"), m))


def e_step(descriptors, valid, static_prob, params):
    """Hard mask assignment by exhaustive enumeration.

    descriptors: (n, K, 16) float, gathered at each instance's rays.
    valid: (n, K) bool; masks may only select valid rays.
    static_prob: (n, K) float, per-ray static probability in [0, 1].

    Scores every subset of rays in the log domain: -beta * masked variance
    (VARIANCE_CEILING when fewer than min_static_rays rays are selected)
    plus sum of log clamped Bernoulli factors.  Returns (n,) uint32 masks,
    ties resolved toward more static rays, then the smaller encoding.
    """
    f = np.asarray(descriptors, dtype=np.float64)
    n_inst, k, c = f.shape
    if k > MAX_ENUMERATED_VIEWS:
        raise ValueError(f"mask enumeration is exponential; refusing {k} views "
                         f"(limit {MAX_ENUMERATED_VIEWS})")
    order = np.array(_mask_order(k), dtype=np.uint32)
    bits = ((order[:, None] >> np.arange(k)[None, :]) & 1).astype(np.float64)  # (M, K)
    npop = bits.sum(axis=1)
    deficient = npop < params.min_static_rays
    safe_n = np.maximum(npop, 1.0)

    eps = params.epsilon_prior
    q = np.clip(np.asarray(static_prob, dtype=np.float64), eps, 1.0 - eps)
    lq1 = np.log(q)
    lq0 = np.log(1.0 - q)
    invalid = ~np.asarray(valid, dtype=bool)

    out = np.empty(n_inst, dtype=np.uint32)
    for lo in range(0, n_inst, _ESTEP_CHUNK):
        hi = min(lo + _ESTEP_CHUNK, n_inst)
        fc = f[lo:hi]
        s1 = np.tensordot(fc, bits, axes=([1], [1]))          # (b, 16, M)
        s2 = np.tensordot(fc * fc, bits, axes=([1], [1]))
        var = (s2 - s1 * s1 / safe_n).sum(axis=1) / safe_n    # (b, M)
        var = np.clip(var, 0.0, None)
        var[:, deficient] = VARIANCE_CEILING
        score = lq1[lo:hi] @ bits.T + lq0[lo:hi] @ (1.0 - bits.T) - params.beta * var
        # a mask touching an invalid ray is not admissible
        score[invalid[lo:hi].astype(np.float64) @ bits.T > 0] = -np.inf
        out[lo:hi] = order[np.argmax(score, axis=1)]
    return out


# -- dense frame solver ---------------------------------------------------------

class DisparitySolver:
    """Per-frame context: precomputed gathers, surface, and candidate plumbing."""

    def __init__(self, frame, rig, tri, params=None, prior_params=None):
        from .prior import PriorParams  # default construction only

        self.frame = frame
        self.rig = rig
        self.tri = tri
        self.params = params or SolverParams()
        self.prior_params = prior_params or PriorParams()
        self.height, self.width = frame.shape
        self.num_views = frame.num_views
        if self.num_views != len(rig):
            raise ValueError("frame view count does not match the rig")
        if self.num_views > MAX_ENUMERATED_VIEWS:
            raise ValueError(f"mask enumeration is exponential; refusing "
                             f"{self.num_views} views (limit {MAX_ENUMERATED_VIEWS})")

        self._desc = [frame.descriptors(k).flat32() for k in range(self.num_views)]
        self._prior_flat = [flatten_channels(frame.priors[k]) for k in range(self.num_views)]
        self._dims = [(rig.intrinsics(k).height, rig.intrinsics(k).width)
                      for k in range(self.num_views)]
        self.mu = np.clip(tri.disparity_map(self.width, self.height),
                          1e-6, self.prior_params.d_max).ravel()
        j_max = int(np.floor(2.0 * self.prior_params.sigma / 0.5 + 1e-12))
        band = 0.5 * np.arange(-j_max, j_max + 1)
        # near-surface offsets first: the incumbent they establish lets the
        # -log prior lower bound prune most of the remaining candidates
        self._band_offsets = band[np.lexsort((band, np.abs(band)))]
        self._coarse = np.arange(1.0, self.prior_params.d_max + 1e-9, 4.0)
        self._support_pairs = None  # built lazily against the active set

    # -- gathering helpers -----------------------------------------------------

    def _ray_coords(self, pix, d, k):
        u = (pix % self.width).astype(np.float64)
        v = (pix // self.width).astype(np.float64)
        pu, pv, ok = self.rig.warp(u, v, d, k)
        kh, kw = self._dims[k]
        ok = ok & (pu >= DESCRIPTOR_MARGIN) & (pu <= kw - DESCRIPTOR_MARGIN - 1) \
            & (pv >= DESCRIPTOR_MARGIN) & (pv <= kh - DESCRIPTOR_MARGIN - 1)
        return pu, pv, ok

    def gather_rays(self, pix, d):
        """Descriptors, validity and ray static priors at disparity d.

        Returns (desc (n, K, 16) float64, valid (n, K) bool, q (n, K) float64).
        Invalid rays carry zero descriptors and q = 0.5; callers must mask.
        """
        n = pix.shape[0]
        k_total = self.num_views
        desc = np.zeros((n, k_total, DESCRIPTOR_LENGTH))
        valid = np.zeros((n, k_total), dtype=bool)
        q = np.full((n, k_total), 0.5)
        for k in range(k_total):
            pu, pv, ok = self._ray_coords(pix, d, k)
            idx = np.flatnonzero(ok)
            if idx.size == 0:
                continue
            flat, fh, fw = self._desc[k]
            desc[idx, k] = bilinear(flat, fh, fw, pu[idx], pv[idx])
            pflat, ph, pw = self._prior_flat[k]
            q[idx, k] = bilinear(pflat, ph, pw, pu[idx], pv[idx])[:, 0]
            valid[idx, k] = True
        return desc, valid, q

    def _energy(self, pix, d, static_bits):
        """Masked-variance energy of candidate disparities, vectorized.

        Gathers only rays whose static bit is set and which stay inside the
        descriptor-valid region at this disparity.  Returns (energy, real)
        where real marks pixels whose variance came from actual rays rather
        than the deficiency penalty.
        """
        n = pix.shape[0]
        s1 = np.zeros((n, DESCRIPTOR_LENGTH))
        s2 = np.zeros((n, DESCRIPTOR_LENGTH))
        count = np.zeros(n, dtype=np.int32)
        for k in range(self.num_views):
            sel = ((static_bits >> np.uint32(k)) & np.uint32(1)).astype(bool)
            if not sel.any():
                continue
            pu, pv, ok = self._ray_coords(pix, d, k)
            idx = np.flatnonzero(sel & ok)
            if idx.size == 0:
                continue
            flat, fh, fw = self._desc[k]
            f = bilinear(flat, fh, fw, pu[idx], pv[idx])
            s1[idx] += f
            s2[idx] += f * f
            count[idx] += 1
        real = count >= self.params.min_static_rays
        nn = np.maximum(count, 1).astype(np.float64)
        var = np.clip((s2 - s1 * s1 / nn[:, None]).sum(axis=1) / nn, 0.0, None)
        var = np.where(real, var, VARIANCE_CEILING)
        energy = self.params.beta * var - prior_log_density(d, self.mu[pix],
                                                            self.prior_params)
        return energy, real

    def pixel_energy(self, u, v, d, static_mask):
        """Reference-API energy of one pixel at one disparity.

        static_mask may be an int bitmask or a length-K boolean sequence.
        """
        if not np.isscalar(static_mask):
            static_mask = sum(1 << k for k, b in enumerate(static_mask) if b)
        pix = np.array([int(v) * self.width + int(u)], dtype=np.int64)
        e, _ = self._energy(pix, np.array([float(d)]),
                            np.array([static_mask], dtype=np.uint32))
        return float(e[0])

    def pixel_candidates(self, u, v):
        """Candidate disparities of one pixel (reference API)."""
        mu = float(self.mu[int(v) * self.width + int(u)])
        pts, disps = self.tri.support_points()
        r = self.prior_params.neighborhood_radius
        near = (np.abs(pts[:, 0] - u) <= r) & (np.abs(pts[:, 1] - v) <= r)
        d2 = (pts[near, 0] - u) ** 2 + (pts[near, 1] - v) ** 2
        neigh = disps[near][d2 <= r * r]
        return candidate_disparities(mu, neigh, self.prior_params)

    # -- candidate plumbing ------------------------------------------------------

    def _build_support_pairs(self, is_active):
        """Unique (pixel, disparity) pairs from support points within radius."""
        pts, disps = self.tri.support_points()
        r = self.prior_params.neighborhood_radius
        ir = int(np.floor(r))
        span = np.arange(-ir, ir + 1)
        du, dv = np.meshgrid(span, span)
        keep = du * du + dv * dv <= r * r
        du = du[keep].astype(np.int64)
        dv = dv[keep].astype(np.int64)

        pix_parts = []
        val_parts = []
        block = max(1, int(2_000_000 // max(du.size, 1)))
        for lo in range(0, pts.shape[0], block):
            hi = min(lo + block, pts.shape[0])
            pu = pts[lo:hi, 0].astype(np.int64)[:, None] + du[None, :]
            pv = pts[lo:hi, 1].astype(np.int64)[:, None] + dv[None, :]
            ok = (pu >= 0) & (pu < self.width) & (pv >= 0) & (pv < self.height)
            pix = (pv * self.width + pu)[ok]
            ok2 = is_active[pix]
            pix = pix[ok2]
            vals = np.broadcast_to(disps[lo:hi, None].astype(np.float32),
                                   (hi - lo, du.size))[ok][ok2]
            pix_parts.append(pix.astype(np.int64))
            val_parts.append(vals)
        if not pix_parts:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float32)
        pix = np.concatenate(pix_parts)
        vals = np.concatenate(val_parts)
        order = np.lexsort((vals, pix))
        pix = pix[order]
        vals = vals[order]
        first = np.ones(pix.size, dtype=bool)
        first[1:] = (pix[1:] != pix[:-1]) | (vals[1:] != vals[:-1])
        return pix[first], vals[first]

    # -- the two steps -----------------------------------------------------------

    def m_step(self, active, static_bits_flat):
        """Per-pixel argmin over the candidate set at fixed masks.

        Returns (d (n,), energy (n,), status (n,) uint8) over active pixels.
        Ties go to the smallest disparity; pixels whose every candidate hit
        the deficiency penalty are flagged STATUS_NO_STATIC_EVIDENCE, pixels
        with an empty candidate set STATUS_LOW_TEXTURE.
        """
        n = active.shape[0]
        best_e = np.full(n, np.inf)
        best_d = np.full(n, np.inf)
        best_real = np.zeros(n, dtype=bool)
        bits = static_bits_flat[active]

        mu_all = self.mu[active]

        def consider(rows, dvals):
            # variance is nonnegative, so -log prior bounds the energy from
            # below; strictly worse bounds cannot beat (or tie) the incumbent
            bound = -prior_log_density(dvals, mu_all[rows], self.prior_params)
            live = bound <= best_e[rows]
            rows = rows[live]
            dvals = dvals[live]
            for lo in range(0, rows.shape[0], _CHUNK):
                hi = min(lo + _CHUNK, rows.shape[0])
                r = rows[lo:hi]
                dv = np.asarray(dvals[lo:hi], dtype=np.float64)
                e, real = self._energy(active[r], dv, bits[r])
                better = (e < best_e[r]) | ((e == best_e[r]) & (dv < best_d[r]))
                rr = r[better]
                best_e[rr] = e[better]
                best_d[rr] = dv[better]
                best_real[rr] = real[better]

        all_rows = np.arange(n)
        for off in self._band_offsets:
            d = mu_all + off
            ok = (d > 0.0) & (d <= self.prior_params.d_max)
            consider(all_rows[ok], d[ok])
        for dval in self._coarse:
            consider(all_rows, np.full(n, dval))

        if self._support_pairs is None:
            is_active = np.zeros(self.height * self.width, dtype=bool)
            is_active[active] = True
            self._support_pairs = self._build_support_pairs(is_active)
            self._pair_rows = np.searchsorted(active, self._support_pairs[0])
        pair_rows, pair_vals = self._pair_rows, self._support_pairs[1]
        if pair_rows.size:
            for lo in range(0, pair_rows.size, _CHUNK):
                hi = min(lo + _CHUNK, pair_rows.size)
                r = pair_rows[lo:hi]
                dv = pair_vals[lo:hi].astype(np.float64)
                keep = (dv > 0.0) & (dv <= self.prior_params.d_max)
                bound = -prior_log_density(dv, mu_all[r], self.prior_params)
                keep &= bound <= best_e[r]
                r = r[keep]
                dv = dv[keep]
                if r.size == 0:
                    continue
                e, real = self._energy(active[r], dv, bits[r])
                # one pixel may carry several values in a chunk: keep its
                # lexicographic (energy, disparity) best, then merge
                order = np.lexsort((dv, e, r))
                r = r[order]
                lead = np.ones(r.size, dtype=bool)
                lead[1:] = r[1:] != r[:-1]
                rr = r[lead]
                ee = e[order][lead]
                dd = dv[order][lead]
                real_l = real[order][lead]
                better = (ee < best_e[rr]) | ((ee == best_e[rr]) & (dd < best_d[rr]))
                sel = rr[better]
                best_e[sel] = ee[better]
                best_d[sel] = dd[better]
                best_real[sel] = real_l[better]

        status = np.full(n, STATUS_VALID, dtype=np.uint8)
        empty = ~np.isfinite(best_e)
        status[empty] = STATUS_LOW_TEXTURE
        status[~empty & ~best_real] = STATUS_NO_STATIC_EVIDENCE
        best_d[empty] = np.nan
        return best_d, best_e, status

    def e_step_at(self, active, d_active):
        """Mask reassignment at the given disparities (chunked core calls)."""
        static = np.empty(active.shape[0], dtype=np.uint32)
        valid_bits = np.empty(active.shape[0], dtype=np.uint32)
        for lo in range(0, active.shape[0], _ESTEP_CHUNK):
            hi = min(lo + _ESTEP_CHUNK, active.shape[0])
            desc, valid, q = self.gather_rays(active[lo:hi], d_active[lo:hi])
            static[lo:hi] = e_step(desc, valid, q, self.params)
            valid_bits[lo:hi] = (valid.astype(np.uint32)
                                 << np.arange(self.num_views, dtype=np.uint32)).sum(axis=1)
        return static, valid_bits

    def initial_masks(self, pix):
        """Threshold the warped static priors at the surface disparity."""
        static = np.empty(pix.shape[0], dtype=np.uint32)
        valid_bits = np.empty(pix.shape[0], dtype=np.uint32)
        for lo in range(0, pix.shape[0], _ESTEP_CHUNK):
            hi = min(lo + _ESTEP_CHUNK, pix.shape[0])
            _, valid, q = self.gather_rays(pix[lo:hi], self.mu[pix[lo:hi]])
            hard = valid & (q >= self.params.threshold)
            weights = np.arange(self.num_views, dtype=np.uint32)
            static[lo:hi] = (hard.astype(np.uint32) << weights).sum(axis=1)
            valid_bits[lo:hi] = (valid.astype(np.uint32) << weights).sum(axis=1)
        return static, valid_bits

    # -- full EM loop -------------------------------------------------------------

    def solve(self, dynamic_only=False):
        """Run the alternation until the disparity map stabilizes.

        Convergence: fewer than 0.1% of solved pixels move by more than half
        a disparity unit between consecutive iterations.  With dynamic_only,
        only pixels whose reference prior falls below the threshold are
        solved; everything else keeps the surface disparity and its initial
        thresholded mask.
        """
        h, w = self.height, self.width
        npix = h * w
        all_pix = np.arange(npix, dtype=np.int64)
        ref_prior = self.frame.priors[self.rig.ref_index].ravel()
        if dynamic_only:
            active = all_pix[ref_prior < self.params.threshold]
        else:
            active = all_pix
        self._support_pairs = None  # pair cache is keyed to the active set

        static_flat, valid_flat = self.initial_masks(all_pix)
        stats = EMStats()
        d_prev = None
        d_active = None
        status_active = None

        for it in range(1, self.params.max_iters + 1):
            if active.size:
                stats.iterations_run = it
                d_active, e_active, status_active = self.m_step(active, static_flat)
                finite = e_active[np.isfinite(e_active)]
                stats.mean_energy.append(float(finite.mean()) if finite.size else float("nan"))
                changed = None
                if d_prev is not None:
                    prev_e, _ = self._energy(active, d_prev, static_flat[active])
                    pf = prev_e[np.isfinite(prev_e)]
                    stats.prev_energy.append(float(pf.mean()) if pf.size else float("nan"))
                    with np.errstate(invalid="ignore"):
                        delta = np.abs(d_active - d_prev)
                    changed = float(np.mean(delta > 0.5))
                    stats.changed_fraction.append(changed)
                solved = status_active != STATUS_LOW_TEXTURE
                upd = active[solved]
                s_new, v_new = self.e_step_at(upd, d_active[solved])
                static_flat = static_flat.copy()
                valid_flat = valid_flat.copy()
                static_flat[upd] = s_new
                valid_flat[upd] = v_new
                if changed is not None and changed < 1e-3:
                    stats.converged_after = it - 1
                    break
                d_prev = d_active
            else:
                stats.converged_after = 0
                break

        values = self.mu.astype(np.float32).copy()
        status = np.full(npix, STATUS_VALID, dtype=np.uint8)
        if active.size and d_active is not None:
            ok = np.isfinite(d_active)
            values[active[ok]] = d_active[ok].astype(np.float32)
            values[active[~ok]] = 0.0
            status[active] = status_active
        disparity = DisparityMap(values=values.reshape(h, w),
                                 status=status.reshape(h, w))
        seg = SegmentationState(static_bits=static_flat.reshape(h, w).copy(),
                                valid_bits=valid_flat.reshape(h, w).copy())
        return disparity, seg, stats


def em_solve(frame, rig, tri, params=None, prior_params=None, dynamic_only=False):
    """Convenience wrapper: build a DisparitySolver and run it."""
    solver = DisparitySolver(frame, rig, tri, params=params, prior_params=prior_params)
    return solver.solve(dynamic_only=dynamic_only)
