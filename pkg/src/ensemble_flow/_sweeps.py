"""Block-coordinate-ascent sweep engines for the flow estimator.

Two interchangeable implementations of the same iteration:

``run_plain``
    Vectorized numpy in the linear domain.  Readable reference; can
    underflow on long horizons with extreme magnitudes.

``run_scaled``
    Numba-compiled loops storing every iteration vector in normalized
    form (max entry 1) with a separate scalar log-scale, so magnitudes
    never leave the double range no matter how long the horizon.  The
    per-index normalization is exact in real arithmetic because the
    primal reconstruction only uses scale-free ratios.

Both return ``(status, err_t, err_idx, sweeps, residual, trace)`` plus
their final state.  Status codes: 0 converged, 1 sweep budget exhausted,
3 observation update hit 0/0, 4 a backward product collapsed to zero,
5 a state with mass has zero continuation weight, 6 the forward vector
collapsed to zero.  ``err_t`` is 1-based; ``err_idx`` is the state or
symbol involved (-1 when not applicable).

One sweep updates u1 first and then every v_{t,s} in ascending t (cycling
through sensors inside each t), refreshing the forward vectors y
incrementally and recomputing the backward vectors w once per sweep; with
the cached intermediates a sweep costs O(T n max(n, m)) operations.
"""

import math

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        return deco if not (args and callable(args[0])) else args[0]


def _dual_value_plain(e, mu0, u1, aw0, phi, v):
    term1 = -float((mu0 * u1) @ aw0) / e
    pos = mu0 > 0.0
    term2 = float(np.sum(mu0[pos] * np.log(u1[pos]))) if np.any(pos) else 0.0
    term3 = 0.0
    for t in range(len(phi)):
        for s in range(len(phi[t])):
            p = phi[t][s]
            mask = p > 0.0
            if np.any(mask):
                term3 += float(np.sum(p[mask] * np.log(v[t][s][mask])))
    return term1 + term2 + term3


def run_plain(a, b_list, phi, mu0, tol, max_sweeps, v_init, on_update=None):
    """Linear-domain sweep loop.

    ``phi`` is a T-list of S-lists of count vectors; ``v_init`` matches
    its shape.  ``on_update``, when given, is called with the full dual
    objective value after every single block update (used by tests to
    assert per-update monotonicity; it forces a fresh backward pass per
    call, so it is only for small instances).
    """
    e = math.e
    n = a.shape[0]
    horizon = len(phi)
    n_sensors = len(b_list)
    total = float(mu0.sum())
    v = [[np.array(v_init[t][s], dtype=np.float64) for s in range(n_sensors)] for t in range(horizon)]
    u1 = np.ones(n)
    trace = []
    mu = np.zeros((horizon, n))
    w = [None] * horizon
    aw = [None] * (horizon + 1)
    y_hist = [None] * horizon

    def backward(vcur):
        c = []
        for t in range(horizon):
            ct = np.ones(n)
            for s in range(n_sensors):
                ct = ct * (b_list[s] @ vcur[t][s])
            if ct.max() <= 0.0:
                return None, (4, t + 1, -1)
            c.append(ct)
        wl = [None] * horizon
        awl = [None] * (horizon + 1)
        awl[horizon] = np.ones(n)
        wl[horizon - 1] = c[horizon - 1]
        for t in range(horizon - 2, -1, -1):
            awl[t + 1] = a @ wl[t + 1]
            wl[t] = c[t] * awl[t + 1]
        awl[0] = a @ wl[0]
        return (c, wl, awl), None

    def report_update():
        if on_update is None:
            return
        state, err = backward(v)
        if state is None:
            return
        _, _, awl = state
        on_update(_dual_value_plain(e, mu0, u1, awl[0], phi, v))

    sweeps = 0
    while True:
        state, err = backward(v)
        if err is not None:
            return err + (sweeps, np.inf, trace, u1, v, w, aw, y_hist, mu)
        c, w, aw = state

        rabs = 0.0
        prev = mu0
        for t in range(horizon):
            g = aw[t]
            bad = (prev > 0.0) & (g <= 0.0)
            if np.any(bad):
                i = int(np.nonzero(bad)[0][0])
                return (5, t + 1, i, sweeps, np.inf, trace, u1, v, w, aw, y_hist, mu)
            ratio = np.divide(prev, g, out=np.zeros(n), where=prev > 0.0)
            mu[t] = w[t] * (a.T @ ratio)
            for s in range(n_sensors):
                bv = b_list[s] @ v[t][s]
                bad = (mu[t] > 0.0) & (bv <= 0.0)
                if np.any(bad):
                    i = int(np.nonzero(bad)[0][0])
                    return (5, t + 1, i, sweeps, np.inf, trace, u1, v, w, aw, y_hist, mu)
                ratio2 = np.divide(mu[t], bv, out=np.zeros(n), where=mu[t] > 0.0)
                dsum = v[t][s] * (b_list[s].T @ ratio2)
                rabs = max(rabs, float(np.abs(dsum - phi[t][s]).max()))
            prev = mu[t]
        residual = rabs / total

        trace.append(_dual_value_plain(e, mu0, u1, aw[0], phi, v))
        converged = (
            residual <= tol
            and len(trace) >= 2
            and abs(trace[-1] - trace[-2]) <= tol * (1.0 + abs(trace[-1]))
        )
        if converged:
            return (0, -1, -1, sweeps, residual, trace, u1, v, w, aw, y_hist, mu)
        if sweeps >= max_sweeps:
            return (1, -1, -1, sweeps, residual, trace, u1, v, w, aw, y_hist, mu)

        sweeps += 1
        u1 = np.divide(e, aw[0], out=np.zeros(n), where=aw[0] > 0.0)
        report_update()
        y = a.T @ (mu0 * u1)
        for t in range(horizon):
            if y.max() <= 0.0:
                return (6, t + 1, -1, sweeps, np.inf, trace, u1, v, w, aw, y_hist, mu)
            y_hist[t] = y
            for s in range(n_sensors):
                cms = np.ones(n)
                for s2 in range(n_sensors):
                    if s2 != s:
                        cms = cms * (b_list[s2] @ v[t][s2])
                denom = b_list[s].T @ (y * cms * aw[t + 1])
                p = phi[t][s]
                bad = (p > 0.0) & (denom <= 0.0)
                if np.any(bad):
                    k = int(np.nonzero(bad)[0][0])
                    return (3, t + 1, k, sweeps, np.inf, trace, u1, v, w, aw, y_hist, mu)
                v[t][s] = np.divide(e * p, denom, out=np.zeros_like(p), where=p > 0.0)
                report_update()
            if t < horizon - 1:
                ct = np.ones(n)
                for s in range(n_sensors):
                    ct = ct * (b_list[s] @ v[t][s])
                y = a.T @ (y * ct)


@njit(cache=True)
def _scaled_kernel(a, at, b_cat, b_cat_t, offsets, phi, mu0, tol, max_sweeps,
                   vhat, v_ls, u1hat_out, mu, what, w_ls, yhat, y_ls, trace):
    n = a.shape[0]
    horizon = phi.shape[0]
    n_sensors = offsets.shape[0] - 1
    e = math.e
    total = 0.0
    for i in range(n):
        total += mu0[i]

    chat = np.empty((horizon, n))
    c_ls = np.empty(horizon)
    awhat = np.empty((horizon + 1, n))
    aw_ls = np.empty(horizon + 1)
    tmp = np.empty(n)
    tmp2 = np.empty(n)
    cms = np.empty(n)
    ycur = np.empty(n)
    u1_ls = 0.0
    for i in range(n):
        u1hat_out[i] = 1.0
    ycur_ls = 0.0

    n_trace = 0
    sweeps = 0
    residual = np.inf
    sweep = 0
    while True:
        # ---- backward pass: c_t = prod_s B_s v_ts, w_T = c_T, w_t = c_t * (A w_{t+1})
        for t in range(horizon):
            for i in range(n):
                chat[t, i] = 1.0
            ls = 0.0
            for s in range(n_sensors):
                lo = offsets[s]
                hi = offsets[s + 1]
                for i in range(n):
                    acc = 0.0
                    for k in range(lo, hi):
                        acc += b_cat[i, k] * vhat[t, k]
                    chat[t, i] *= acc
                ls += v_ls[t, s]
            mx = 0.0
            for i in range(n):
                if chat[t, i] > mx:
                    mx = chat[t, i]
            if mx <= 0.0:
                return 4, t + 1, -1, sweeps, residual, n_trace, u1_ls, ycur_ls
            inv = 1.0 / mx
            for i in range(n):
                chat[t, i] *= inv
            c_ls[t] = ls + math.log(mx)

        for i in range(n):
            awhat[horizon, i] = 1.0
            what[horizon - 1, i] = chat[horizon - 1, i]
        aw_ls[horizon] = 0.0
        w_ls[horizon - 1] = c_ls[horizon - 1]
        for t in range(horizon - 2, -1, -1):
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += a[i, j] * what[t + 1, j]
                awhat[t + 1, i] = acc
            aw_ls[t + 1] = w_ls[t + 1]
            mx = 0.0
            for i in range(n):
                val = chat[t, i] * awhat[t + 1, i]
                tmp[i] = val
                if val > mx:
                    mx = val
            if mx <= 0.0:
                return 4, t + 1, -1, sweeps, residual, n_trace, u1_ls, ycur_ls
            inv = 1.0 / mx
            for i in range(n):
                what[t, i] = tmp[i] * inv
            w_ls[t] = c_ls[t] + w_ls[t + 1] + math.log(mx)
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += a[i, j] * what[0, j]
            awhat[0, i] = acc
        aw_ls[0] = w_ls[0]

        # ---- hidden marginals and observation-constraint residual
        rabs = 0.0
        for t in range(horizon):
            for i in range(n):
                prev = mu0[i] if t == 0 else mu[t - 1, i]
                g = awhat[t, i]
                if prev > 0.0:
                    if g <= 0.0:
                        return 5, t + 1, i, sweeps, residual, n_trace, u1_ls, ycur_ls
                    tmp[i] = prev / g
                else:
                    tmp[i] = 0.0
            for j in range(n):
                acc = 0.0
                for i in range(n):
                    acc += at[j, i] * tmp[i]
                mu[t, j] = what[t, j] * acc
            for s in range(n_sensors):
                lo = offsets[s]
                hi = offsets[s + 1]
                for i in range(n):
                    acc = 0.0
                    for k in range(lo, hi):
                        acc += b_cat[i, k] * vhat[t, k]
                    if mu[t, i] > 0.0:
                        if acc <= 0.0:
                            return 5, t + 1, i, sweeps, residual, n_trace, u1_ls, ycur_ls
                        tmp[i] = mu[t, i] / acc
                    else:
                        tmp[i] = 0.0
                for k in range(lo, hi):
                    acc = 0.0
                    for i in range(n):
                        acc += b_cat_t[k, i] * tmp[i]
                    d = vhat[t, k] * acc - phi[t, k]
                    if d < 0.0:
                        d = -d
                    if d > rabs:
                        rabs = d
        residual = rabs / total

        # ---- dual objective at this boundary
        dot = 0.0
        for i in range(n):
            dot += mu0[i] * u1hat_out[i] * awhat[0, i]
        if dot > 0.0:
            z = math.log(dot) + u1_ls + aw_ls[0] - 1.0
            term1 = -math.exp(z) if z < 700.0 else -np.inf
        else:
            term1 = 0.0
        term2 = 0.0
        for i in range(n):
            if mu0[i] > 0.0:
                term2 += mu0[i] * (math.log(u1hat_out[i]) + u1_ls)
        term3 = 0.0
        for t in range(horizon):
            for s in range(n_sensors):
                for k in range(offsets[s], offsets[s + 1]):
                    if phi[t, k] > 0.0:
                        term3 += phi[t, k] * (math.log(vhat[t, k]) + v_ls[t, s])
        trace[n_trace] = term1 + term2 + term3
        n_trace += 1

        converged = residual <= tol and n_trace >= 2 and (
            abs(trace[n_trace - 1] - trace[n_trace - 2])
            <= tol * (1.0 + abs(trace[n_trace - 1]))
        )
        if converged:
            return 0, -1, -1, sweeps, residual, n_trace, u1_ls, ycur_ls
        if sweep >= max_sweeps:
            return 1, -1, -1, sweeps, residual, n_trace, u1_ls, ycur_ls

        # ---- update phase: u1 first, then v_{t,s} ascending in t
        sweep += 1
        sweeps += 1
        minpos = np.inf
        for i in range(n):
            g = awhat[0, i]
            if g > 0.0 and g < minpos:
                minpos = g
        if not np.isfinite(minpos):
            return 5, 1, -1, sweeps, residual, n_trace, u1_ls, ycur_ls
        for i in range(n):
            g = awhat[0, i]
            u1hat_out[i] = minpos / g if g > 0.0 else 0.0
        u1_ls = 1.0 - aw_ls[0] - math.log(minpos)

        for i in range(n):
            tmp[i] = mu0[i] * u1hat_out[i]
        mx = 0.0
        for j in range(n):
            acc = 0.0
            for i in range(n):
                acc += at[j, i] * tmp[i]
            ycur[j] = acc
            if acc > mx:
                mx = acc
        if mx <= 0.0:
            return 6, 1, -1, sweeps, residual, n_trace, u1_ls, ycur_ls
        inv = 1.0 / mx
        for j in range(n):
            ycur[j] *= inv
        ycur_ls = u1_ls + math.log(mx)

        for t in range(horizon):
            for j in range(n):
                yhat[t, j] = ycur[j]
            y_ls[t] = ycur_ls
            for s in range(n_sensors):
                for i in range(n):
                    cms[i] = 1.0
                cms_ls = 0.0
                for s2 in range(n_sensors):
                    if s2 == s:
                        continue
                    lo2 = offsets[s2]
                    hi2 = offsets[s2 + 1]
                    for i in range(n):
                        acc = 0.0
                        for k in range(lo2, hi2):
                            acc += b_cat[i, k] * vhat[t, k]
                        cms[i] *= acc
                    cms_ls += v_ls[t, s2]
                if n_sensors > 1:
                    mx = 0.0
                    for i in range(n):
                        if cms[i] > mx:
                            mx = cms[i]
                    if mx <= 0.0:
                        return 4, t + 1, -1, sweeps, residual, n_trace, u1_ls, ycur_ls
                    inv = 1.0 / mx
                    for i in range(n):
                        cms[i] *= inv
                    cms_ls += math.log(mx)
                for i in range(n):
                    tmp[i] = ycur[i] * cms[i] * awhat[t + 1, i]
                den_ls = ycur_ls + cms_ls + aw_ls[t + 1]
                lo = offsets[s]
                hi = offsets[s + 1]
                mxv = 0.0
                for k in range(lo, hi):
                    acc = 0.0
                    for i in range(n):
                        acc += b_cat_t[k, i] * tmp[i]
                    p = phi[t, k]
                    if p > 0.0:
                        if acc <= 0.0:
                            return 3, t + 1, k - lo, sweeps, residual, n_trace, u1_ls, ycur_ls
                        val = p / acc
                    else:
                        val = 0.0
                    vhat[t, k] = val
                    if val > mxv:
                        mxv = val
                if mxv <= 0.0:
                    return 3, t + 1, -1, sweeps, residual, n_trace, u1_ls, ycur_ls
                inv = 1.0 / mxv
                for k in range(lo, hi):
                    vhat[t, k] *= inv
                v_ls[t, s] = 1.0 - den_ls + math.log(mxv)
            if t < horizon - 1:
                for i in range(n):
                    tmp[i] = 1.0
                cls = 0.0
                for s in range(n_sensors):
                    lo = offsets[s]
                    hi = offsets[s + 1]
                    for i in range(n):
                        acc = 0.0
                        for k in range(lo, hi):
                            acc += b_cat[i, k] * vhat[t, k]
                        tmp[i] *= acc
                    cls += v_ls[t, s]
                for i in range(n):
                    tmp[i] *= ycur[i]
                mx = 0.0
                for j in range(n):
                    acc = 0.0
                    for i in range(n):
                        acc += at[j, i] * tmp[i]
                    tmp2[j] = acc
                    if acc > mx:
                        mx = acc
                if mx <= 0.0:
                    return 6, t + 2, -1, sweeps, residual, n_trace, u1_ls, ycur_ls
                inv = 1.0 / mx
                for j in range(n):
                    ycur[j] = tmp2[j] * inv
                ycur_ls = ycur_ls + cls + math.log(mx)


def run_scaled(a, b_list, phi, mu0, tol, max_sweeps, v_init):
    """Drive the numba kernel; same contract as :func:`run_plain`.

    Returns normalized state vectors together with their log-scales:
    ``(status, err_t, err_idx, sweeps, residual, trace, u1hat, u1_ls,
    vhat, v_ls, what, w_ls, yhat, y_ls, mu)`` where ``vhat`` is a
    (T, sum m_s) array sliced by sensor offsets.
    """
    n = a.shape[0]
    horizon = len(phi)
    n_sensors = len(b_list)
    widths = [b.shape[1] for b in b_list]
    offsets = np.zeros(n_sensors + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(widths)
    m_tot = int(offsets[-1])

    a = np.ascontiguousarray(a, dtype=np.float64)
    at = np.ascontiguousarray(a.T)
    b_cat = np.ascontiguousarray(np.concatenate([np.asarray(b, dtype=np.float64) for b in b_list], axis=1))
    b_cat_t = np.ascontiguousarray(b_cat.T)
    phi_cat = np.empty((horizon, m_tot))
    vhat = np.empty((horizon, m_tot))
    v_ls = np.zeros((horizon, n_sensors))
    for t in range(horizon):
        for s in range(n_sensors):
            lo, hi = offsets[s], offsets[s + 1]
            phi_cat[t, lo:hi] = phi[t][s]
            vs = np.asarray(v_init[t][s], dtype=np.float64)
            mx = vs.max()
            vhat[t, lo:hi] = vs / mx
            v_ls[t, s] = math.log(mx)

    u1hat = np.empty(n)
    mu = np.empty((horizon, n))
    what = np.empty((horizon, n))
    w_ls = np.empty(horizon)
    yhat = np.zeros((horizon, n))
    y_ls = np.zeros(horizon)
    trace = np.empty(max_sweeps + 2)

    status, err_t, err_idx, sweeps, residual, n_trace, u1_ls, _ = _scaled_kernel(
        a, at, b_cat, b_cat_t, offsets, phi_cat, np.asarray(mu0, dtype=np.float64),
        float(tol), int(max_sweeps), vhat, v_ls, u1hat, mu, what, w_ls, yhat, y_ls, trace,
    )
    return (
        int(status), int(err_t), int(err_idx), int(sweeps), float(residual),
        trace[:n_trace].tolist(), u1hat, float(u1_ls), vhat, v_ls, what, w_ls, yhat, y_ls, mu, offsets,
    )
