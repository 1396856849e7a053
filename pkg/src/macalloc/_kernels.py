"""Inner loops: subset enumeration, rate splitting, successive projection,
Markov sampling and Monte-Carlo rank tables.

Every function here is plain numpy/Python decorated with :func:`njit`, so
with ``MACALLOC_DISABLE_NUMBA=1`` the same code runs in the interpreter.
Subsets are int64 bitmasks (bit ``i`` set <=> user ``i`` in the subset).
"""
import numpy as np

from ._accel import njit

CODABLE = 0
VIOLATED = 1
# relative slack for comparisons that are exact ties in real arithmetic
TIE_TOL = 1e-11


@njit(cache=True)
def subset_sums(x):
    """Sum of ``x`` over every subset, indexed by bitmask (length ``2**M``).

    Each entry is accumulated in increasing user order, so the value for a
    mask does not depend on how the table is built.
    """
    m = x.shape[0]
    out = np.zeros(1 << m)
    for mask in range(1, 1 << m):
        hb = 0
        t = mask
        while t > 1:
            t >>= 1
            hb += 1
        out[mask] = out[mask ^ (1 << hb)] + x[hb]
    return out


@njit(cache=True)
def gaussian_rank_table(q, noise):
    s = subset_sums(q)
    return 0.5 * np.log1p(s / noise)


@njit(cache=True)
def mc_rank_table(q_samples, noise):
    """Sample mean of the Gaussian rank table over rows of effective powers."""
    n, m = q_samples.shape
    acc = np.zeros(1 << m)
    for k in range(n):
        acc += gaussian_rank_table(q_samples[k], noise)
    return acc / n


@njit(cache=True)
def most_violated(table, r, tol):
    """Bitmask maximizing ``sum_S r - rank(S)``; -1 when nothing exceeds tol.

    This is the exhaustive minimizer of ``rank(S) - r(S)``.
    """
    sums = subset_sums(r)
    best = -1
    best_val = tol
    for mask in range(1, table.shape[0]):
        v = sums[mask] - table[mask]
        if v > best_val:
            best_val = v
            best = mask
    return best


@njit(cache=True)
def count_violated(table, r, tol):
    sums = subset_sums(r)
    c = 0
    for mask in range(1, table.shape[0]):
        if sums[mask] - table[mask] > tol:
            c += 1
    return c


@njit(cache=True)
def _elevation(p, r, noise):
    return p / np.expm1(2.0 * r) - noise


@njit(cache=True)
def rate_split(q, r, noise, tol):
    """Merge overlapping messages until single-user codable or a hyper-user
    exceeds its own capacity.

    Returns ``(status, label, order)``. ``label[i]`` is the hyper-user id of
    user ``i`` at termination (-1 for zero-rate users). On ``VIOLATED`` the
    offending set is ``label == label[order[0]]``; on ``CODABLE`` ``order``
    lists users in decoding order (highest elevation first, zero-rate users
    last).
    """
    m = q.shape[0]
    label = -np.ones(m, dtype=np.int64)
    order = -np.ones(m, dtype=np.int64)
    gp = np.zeros(m)
    gr = np.zeros(m)
    alive = np.zeros(m, dtype=np.bool_)
    for i in range(m):
        if r[i] > 0.0:
            label[i] = i
            gp[i] = q[i]
            gr[i] = r[i]
            alive[i] = True

    while True:
        ids = np.nonzero(alive)[0]
        n = ids.shape[0]
        elev = np.empty(n)
        worst = -1
        worst_elev = np.inf
        for j in range(n):
            g = ids[j]
            cap = 0.5 * np.log1p(gp[g] / noise)
            if gr[g] > cap + tol:
                e = -np.inf if gp[g] <= 0.0 else _elevation(gp[g], gr[g], noise)
                if worst < 0 or e < worst_elev - TIE_TOL * (abs(worst_elev) + noise):
                    worst = g
                    worst_elev = e
            elev[j] = _elevation(gp[g], gr[g], noise)
        if worst >= 0:
            for i in range(m):
                if label[i] == worst:
                    order[0] = i
                    break
            return VIOLATED, label, order

        srt = np.argsort(elev, kind="mergesort")
        # runs of elevations equal up to rounding are ordered by group id,
        # so the merge sequence does not hinge on the last ulp
        j = 0
        while j < n:
            k = j + 1
            while k < n and elev[srt[k]] - elev[srt[k - 1]] <= TIE_TOL * (
                    abs(elev[srt[k]]) + noise):
                k += 1
            if k - j > 1:
                srt[j:k] = np.sort(srt[j:k])
            j = k
        merge_at = -1
        for j in range(n - 1):
            lo = ids[srt[j]]
            hi = ids[srt[j + 1]]
            # touching intervals (exact ties up to rounding) are not merged
            edge = elev[srt[j]] + gp[lo]
            if elev[srt[j + 1]] < edge - TIE_TOL * (abs(edge) + noise):
                merge_at = j
                break
        if merge_at < 0:
            k = 0
            for j in range(n - 1, -1, -1):
                g = ids[srt[j]]
                for i in range(m):
                    if label[i] == g:
                        order[k] = i
                        k += 1
            for i in range(m):
                if label[i] < 0:
                    order[k] = i
                    k += 1
            return CODABLE, label, order

        lo = ids[srt[merge_at]]
        hi = ids[srt[merge_at + 1]]
        keep = min(lo, hi)
        drop = max(lo, hi)
        gp[keep] = gp[lo] + gp[hi]
        gr[keep] = gr[lo] + gr[hi]
        alive[drop] = False
        for i in range(m):
            if label[i] == drop:
                label[i] = keep


@njit(cache=True)
def project_halfspace_orthant(y, member, b):
    """Euclidean projection of ``y >= 0`` onto ``{x >= 0: sum_member x <= b}``.

    Only coordinates in ``member`` move, and only downward. When no
    coordinate would go negative this equals the hyperplane projection
    ``y - (excess/|S|) 1_S``.
    """
    out = y.copy()
    idx = np.nonzero(member)[0]
    k = idx.shape[0]
    vals = y[idx]
    total = vals.sum()
    if total <= b:
        return out
    if b <= 0.0:
        for i in idx:
            out[i] = 0.0
        return out
    srt = np.sort(vals)[::-1]
    csum = 0.0
    tau = 0.0
    for j in range(k):
        csum += srt[j]
        t = (csum - b) / (j + 1)
        if j == k - 1 or srt[j + 1] <= t:
            tau = t
            break
    for i in idx:
        v = y[i] - tau
        out[i] = v if v > 0.0 else 0.0
    return out


@njit(cache=True)
def _mask_members(mask, m):
    member = np.zeros(m, dtype=np.bool_)
    for i in range(m):
        if (mask >> i) & 1:
            member[i] = True
    return member


@njit(cache=True)
def approx_project_table(y, table, tol, max_proj):
    """Successive projection using the exhaustive most-violated oracle.

    Returns the projected point, the projected masks and their count.
    """
    m = y.shape[0]
    x = np.maximum(y, 0.0)
    masks = np.zeros(max_proj, dtype=np.int64)
    k = 0
    while k < max_proj:
        mask = most_violated(table, x, tol)
        if mask < 0:
            break
        x = project_halfspace_orthant(x, _mask_members(mask, m), table[mask])
        masks[k] = mask
        k += 1
    return x, masks, k


@njit(cache=True)
def approx_project_split(y, q, noise, tol, max_proj):
    """Successive projection using the rate-splitting oracle.

    Returns the projected point, a ``(max_proj, M)`` membership array of
    projected sets, and the number of projections performed.
    """
    m = y.shape[0]
    x = np.maximum(y, 0.0)
    sets = np.zeros((max_proj, m), dtype=np.bool_)
    k = 0
    while k < max_proj:
        status, label, order = rate_split(q, x, noise, tol)
        if status == CODABLE:
            break
        g = label[order[0]]
        member = label == g
        p = 0.0
        for i in range(m):
            if member[i]:
                p += q[i]
        x = project_halfspace_orthant(x, member, 0.5 * np.log1p(p / noise))
        sets[k] = member
        k += 1
    return x, sets, k


@njit(cache=True)
def markov_walk(cum, n_states, init, uniforms):
    """Independent per-user Markov chains driven by pre-drawn uniforms.

    ``cum[i, s, :]`` is the cumulative transition row of user ``i`` in state
    ``s`` (padded with 1.0 beyond ``n_states[i]``). Returns state indices of
    shape ``(n, M)``; row 0 is ``init``.
    """
    n = uniforms.shape[0]
    m = init.shape[0]
    out = np.empty((n, m), dtype=np.int64)
    out[0] = init
    for t in range(1, n):
        for i in range(m):
            s = out[t - 1, i]
            u = uniforms[t, i]
            ns = n_states[i]
            nxt = ns - 1
            for j in range(ns):
                if u < cum[i, s, j]:
                    nxt = j
                    break
            out[t, i] = nxt
    return out


@njit(cache=True)
def tse_envelope(h, mu, lam, noise):
    """Maximize ``mu'r - lam'p`` over powers and rates for one gain vector.

    In ``x = 1/(noise + z)`` each user's net value per unit of received power
    is the line ``mu_i x / 2 - lam_i / h_i``. Walking the upper envelope of
    these lines from ``x = 1/noise`` down to where it turns negative assigns
    each user one interval of interference levels (identical lines share
    theirs equally). Returns ``(p, r)``.
    """
    m = h.shape[0]
    p = np.zeros(m)
    r = np.zeros(m)
    s = 0.5 * mu
    c = np.empty(m)
    ok = np.zeros(m, dtype=np.bool_)
    for i in range(m):
        if h[i] > 0.0 and mu[i] > 0.0:
            ok[i] = True
            c[i] = lam[i] / h[i]
    x = 1.0 / noise
    cur = -1
    best = 0.0
    for i in range(m):
        if not ok[i]:
            continue
        v = s[i] * x - c[i]
        if v <= 0.0:
            continue
        if cur < 0 or v > best or (v == best and s[i] < s[cur]):
            cur = i
            best = v
    while cur >= 0:
        xr = c[cur] / s[cur]
        nxt = -1
        xn = xr
        for j in range(m):
            if not ok[j] or j == cur or s[j] >= s[cur]:
                continue
            xc = (c[cur] - c[j]) / (s[cur] - s[j])
            if xc > xn or (nxt >= 0 and xc == xn and s[j] < s[nxt]):
                xn = xc
                nxt = j
        if xn > x:
            xn = x
        # users with an identical line share the interval equally
        g = 0
        for j in range(m):
            if ok[j] and s[j] == s[cur] and c[j] == c[cur]:
                g += 1
        for j in range(m):
            if ok[j] and s[j] == s[cur] and c[j] == c[cur]:
                r[j] += 0.5 * np.log(x / xn) / g
                p[j] += (1.0 / xn - 1.0 / x) / (g * h[j])
        x = xn
        cur = nxt
    return p, r


@njit(cache=True)
def tse_batch(H, mu, lam, noise):
    n, m = H.shape
    P = np.empty((n, m))
    R = np.empty((n, m))
    for k in range(n):
        p, r = tse_envelope(H[k], mu, lam, noise)
        P[k] = p
        R[k] = r
    return P, R
