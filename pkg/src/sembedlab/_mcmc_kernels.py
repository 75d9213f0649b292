"""Compiled kernels behind the FK sampler.

Counter-based RNG (three splitmix64 rounds keyed on seed, chain and
step), stamped BFS connectivity, single-bond heat-bath updates, and the
medial interface walk with winding accumulation.  Everything operates
on plain arrays so the hot loops stay off the Python heap; the entry
points return error codes instead of raising.
"""

import math

import numba as nb
import numpy as np

# Exit slots for the medial walk, indexed by the entry slot.  Corners of
# a quad are listed ccw; an open primal edge keeps the walk on its side
# of the primal diagonal, a closed one on its side of the dual diagonal.
EXIT_OPEN = np.array([1, 0, 3, 2], dtype=np.int64)
EXIT_CLOSED = np.array([3, 2, 1, 0], dtype=np.int64)

_INV_2_53 = 1.0 / 9007199254740992.0


@nb.njit(nb.uint64(nb.uint64), cache=True)
def _splitmix(x):
    z = x + nb.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> nb.uint64(30))) * nb.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> nb.uint64(27))) * nb.uint64(0x94D049BB133111EB)
    return z ^ (z >> nb.uint64(31))


@nb.njit(nb.float64(nb.int64, nb.int64, nb.int64), cache=True)
def _uniform(seed, chain, counter):
    # Three chained bijective rounds keep distinct (seed, chain, counter)
    # keys on distinct streams.
    h = _splitmix(nb.uint64(seed) ^ nb.uint64(0x5EEDBA5EBA11))
    h = _splitmix(h ^ nb.uint64(chain))
    h = _splitmix(h ^ nb.uint64(counter))
    return (h >> nb.uint64(11)) * _INV_2_53


@nb.njit(cache=True)
def _connected_avoiding(src, dst, skip_quad, open_, indptr, nbr, eq,
                        visited, queue, stamp):
    """BFS through open quads, never crossing skip_quad."""
    if src == dst:
        return True
    visited[src] = stamp
    queue[0] = src
    head = 0
    tail = 1
    while head < tail:
        v = queue[head]
        head += 1
        for i in range(indptr[v], indptr[v + 1]):
            z = eq[i]
            if z == skip_quad or open_[z] == 0:
                continue
            w = nbr[i]
            if visited[w] != stamp:
                if w == dst:
                    return True
                visited[w] = stamp
                queue[tail] = w
                tail += 1
    return False


@nb.njit(cache=True)
def _hb_step(open_, seed, chain, step, free_quads, fp0, fp1, fratio,
             indptr, nbr, eq, visited, queue, stamp):
    """One single-bond heat-bath update at a uniformly random free edge."""
    nf = free_quads.shape[0]
    u1 = _uniform(seed, chain, 2 * step)
    j = int(u1 * nf)
    if j >= nf:
        j = nf - 1
    stamp += 1
    conn = _connected_avoiding(fp0[j], fp1[j], free_quads[j], open_,
                               indptr, nbr, eq, visited, queue, stamp)
    # Conditional odds open:closed given the rest; opening merges two
    # clusters (factor 1/2) unless the endpoints are already joined.
    r = fratio[j]
    if not conn:
        r *= 0.5
    u2 = _uniform(seed, chain, 2 * step + 1)
    open_[free_quads[j]] = nb.uint8(1) if u2 * (1.0 + r) < r else nb.uint8(0)
    return stamp


@nb.njit(cache=True)
def run_steps(open_, seed, chain, step0, nsteps, free_quads, fp0, fp1,
              fratio, indptr, nbr, eq, visited, queue, stamp0):
    stamp = stamp0
    for k in range(nsteps):
        stamp = _hb_step(open_, seed, chain, step0 + k, free_quads, fp0,
                         fp1, fratio, indptr, nbr, eq, visited, queue,
                         stamp)
    return stamp


@nb.njit(cache=True)
def sweep_masks(open_, seed, chain, step0, sweeps, measure_every, free_quads,
                fp0, fp1, fratio, indptr, nbr, eq, visited, queue, stamp0,
                counts):
    """Run sweeps of one step per free edge, recording the free-edge
    bitmask every measure_every sweeps."""
    nf = free_quads.shape[0]
    step = step0
    stamp = stamp0
    for s in range(sweeps):
        for _k in range(nf):
            stamp = _hb_step(open_, seed, chain, step, free_quads, fp0,
                             fp1, fratio, indptr, nbr, eq, visited,
                             queue, stamp)
            step += 1
        if (s + 1) % measure_every == 0:
            mask = 0
            for i in range(nf):
                if open_[free_quads[i]]:
                    mask |= 1 << i
            counts[mask] += 1
    return step, stamp


@nb.njit(cache=True)
def trace(open_, a, b, quad_corners, corner_quads, corner_slot, out):
    """Walk the interface from corner a to corner b.

    Returns the number of corners written to out, or a negative error
    code (-1 bad start, -2 overflow, -3 left the domain).
    """
    z = corner_quads[a, 0]
    s = corner_slot[a, 0]
    n = 0
    out[n] = a
    n += 1
    if z < 0:
        return -1
    while True:
        s2 = EXIT_OPEN[s] if open_[z] else EXIT_CLOSED[s]
        c = quad_corners[z, s2]
        if n >= out.shape[0]:
            return -2
        out[n] = c
        n += 1
        if c == b:
            return n
        if corner_quads[c, 0] == z:
            z2 = corner_quads[c, 1]
            s = corner_slot[c, 1]
        else:
            z2 = corner_quads[c, 0]
            s = corner_slot[c, 0]
        if z2 < 0:
            return -3
        z = z2


@nb.njit(cache=True)
def accumulate(open_, seed, chain, step0, n_samples, thin_steps,
               free_quads, fp0, fp1, fratio, indptr, nbr, eq, visited,
               queue, a, b, quad_corners, corner_quads, corner_slot,
               midx, midy, dirx, diry, phase_sign, acc_re, acc_im,
               acc_cnt, path, taux, tauy):
    """Sample, trace and accumulate the winding-phase observable.

    The curve crosses each corner perpendicularly: its tangent there is
    the corner direction rotated by 90 degrees, oriented with the chord
    to the next midpoint.  Per measured corner c the accumulators
    collect exp(-i*sign*w/2) with w the total turning of those tangents
    from c to b.  Returns (status, next_step).
    """
    step = step0
    stamp = 0
    for _ in range(n_samples):
        for _k in range(thin_steps):
            stamp = _hb_step(open_, seed, chain, step, free_quads, fp0,
                             fp1, fratio, indptr, nbr, eq, visited,
                             queue, stamp)
            step += 1
        n = trace(open_, a, b, quad_corners, corner_quads, corner_slot,
                  path)
        if n < 0:
            return n, step
        for k in range(n):
            if k < n - 1:
                cx = midx[path[k + 1]] - midx[path[k]]
                cy = midy[path[k + 1]] - midy[path[k]]
            else:
                cx = midx[path[k]] - midx[path[k - 1]]
                cy = midy[path[k]] - midy[path[k - 1]]
            cc = path[k]
            tx = -diry[cc]
            ty = dirx[cc]
            if tx * cx + ty * cy < 0.0:
                tx = -tx
                ty = -ty
            taux[k] = tx
            tauy[k] = ty
        c = path[n - 1]
        acc_re[c] += 1.0
        acc_cnt[c] += 1
        w = 0.0
        for k in range(n - 2, -1, -1):
            w += math.atan2(taux[k] * tauy[k + 1] - tauy[k] * taux[k + 1],
                            taux[k] * taux[k + 1] + tauy[k] * tauy[k + 1])
            half = 0.5 * phase_sign * w
            cc = path[k]
            acc_re[cc] += math.cos(half)
            acc_im[cc] -= math.sin(half)
            acc_cnt[cc] += 1
    return 0, step
