"""Numba-compiled random-walk Metropolis-Hastings-within-Gibbs kernel.

One chain sweeps every free parameter in a fixed order (all alpha, all beta,
all free u, all free v, all sigma2).  Acceptance decisions use incremental
log-likelihood deltas: a single-parameter proposal only touches one cell's
intensities (and the per-cause yearly totals), so no full likelihood
evaluation is ever needed inside the loop.  The per-parameter delta algebra
is unit-tested against the full vectorized likelihood.
"""

import math

import numpy as np
from numba import njit

SQRT2 = math.sqrt(2.0)


@njit(cache=True)
def _laplace_cdf(x):
    if x < 0.0:
        return 0.5 * math.exp(x)
    return 1.0 - 0.5 * math.exp(-x)


@njit(cache=True)
def _norm_cdf(z):
    return 0.5 * (1.0 + math.erf(z / SQRT2))


@njit(cache=True)
def _softmax_cell(u_row, v_row, tw, out):
    """Weights for one cell at every t; tw is (K+1, T), out is (K+1, T)."""
    kp1, t_n = tw.shape
    for t in range(t_n):
        hi = -1e308
        for k in range(kp1):
            z = u_row[k] + v_row[k] * tw[k, t]
            if z > hi:
                hi = z
        s = 0.0
        for k in range(kp1):
            e = math.exp(u_row[k] + v_row[k] * tw[k, t] - hi)
            out[k, t] = e
            s += e
        for k in range(kp1):
            out[k, t] /= s


@njit(cache=True)
def _build_state(m, tq, tw, alpha, beta, u, v, q, w, rho, rhok):
    c_n, t_n = m.shape
    kp1 = w.shape[1]
    rhok[:, :] = 0.0
    for c in range(c_n):
        _softmax_cell(u[c], v[c], tw, w[c])
        for t in range(t_n):
            q[c, t] = _laplace_cdf(alpha[c] + beta[c] * tq[c, t])
            mq = m[c, t] * q[c, t]
            for k in range(kp1):
                rho[c, k, t] = mq * w[c, k, t]
                if k >= 1:
                    rhok[k - 1, t] += rho[c, k, t]


@njit(cache=True)
def _full_loglik(m, n, nk, rho, rhok, sigma2):
    """Reference full evaluation; used at kernel start-up and in tests."""
    c_n, kp1, t_n = rho.shape
    k_n = kp1 - 1
    total = 0.0
    for t in range(t_n):
        for c in range(c_n):
            for k in range(kp1):
                r = rho[c, k, t]
                cnt = n[c, k, t]
                if k == 0:
                    total -= r
                if cnt > 0:
                    if r == 0.0:
                        return -np.inf
                    total += cnt * math.log(r) - math.lgamma(cnt + 1.0)
        for k in range(k_n):
            r = 1.0 / sigma2[k]
            total += (math.lgamma(r + nk[k, t]) - math.lgamma(r)
                      - r * math.log(sigma2[k])
                      - (r + nk[k, t]) * math.log(r + rhok[k, t]))
    return total


@njit(cache=True)
def _delta_q_update(c, q_new, m, n, nk, q, w, rho, rhok, sigma2):
    """Log-likelihood change from replacing cell c's death probabilities."""
    t_n = m.shape[1]
    k_n = rhok.shape[0]
    delta = 0.0
    for t in range(t_n):
        if m[c, t] == 0:
            continue
        g = q_new[t] / q[c, t]
        log_g = math.log(g)
        rho0 = rho[c, 0, t]
        delta += -(rho0 * g - rho0)
        if n[c, 0, t] > 0:
            delta += n[c, 0, t] * log_g
        for k in range(k_n):
            r_old = rho[c, k + 1, t]
            r_new = r_old * g
            if n[c, k + 1, t] > 0:
                delta += n[c, k + 1, t] * log_g
            inv = 1.0 / sigma2[k]
            delta -= (inv + nk[k, t]) * (math.log(inv + rhok[k, t] + r_new - r_old)
                                         - math.log(inv + rhok[k, t]))
    return delta


@njit(cache=True)
def _apply_q_update(c, q_new, m, q, w, rho, rhok):
    t_n = m.shape[1]
    kp1 = rho.shape[1]
    for t in range(t_n):
        q[c, t] = q_new[t]
        mq = m[c, t] * q_new[t]
        for k in range(kp1):
            r_new = mq * w[c, k, t]
            if k >= 1:
                rhok[k - 1, t] += r_new - rho[c, k, t]
            rho[c, k, t] = r_new


@njit(cache=True)
def _delta_w_update(c, w_new, m, n, nk, q, w, rho, rhok, sigma2):
    """Log-likelihood change from replacing cell c's cause weights."""
    t_n = m.shape[1]
    k_n = rhok.shape[0]
    delta = 0.0
    for t in range(t_n):
        if m[c, t] == 0:
            continue
        mq = m[c, t] * q[c, t]
        rho0_new = mq * w_new[0, t]
        delta += -(rho0_new - rho[c, 0, t])
        if n[c, 0, t] > 0:
            delta += n[c, 0, t] * (math.log(w_new[0, t]) - math.log(w[c, 0, t]))
        for k in range(k_n):
            r_new = mq * w_new[k + 1, t]
            if n[c, k + 1, t] > 0:
                delta += n[c, k + 1, t] * (math.log(w_new[k + 1, t])
                                           - math.log(w[c, k + 1, t]))
            inv = 1.0 / sigma2[k]
            delta -= (inv + nk[k, t]) * (math.log(inv + rhok[k, t] + r_new - rho[c, k + 1, t])
                                         - math.log(inv + rhok[k, t]))
    return delta


@njit(cache=True)
def _apply_w_update(c, w_new, m, q, w, rho, rhok):
    t_n = m.shape[1]
    kp1 = rho.shape[1]
    for t in range(t_n):
        mq = m[c, t] * q[c, t]
        for k in range(kp1):
            w[c, k, t] = w_new[k, t]
            r_new = mq * w_new[k, t]
            if k >= 1:
                rhok[k - 1, t] += r_new - rho[c, k, t]
            rho[c, k, t] = r_new


@njit(cache=True)
def _delta_sigma2(k, s2_new, nk, rhok, sigma2):
    """Log-likelihood change from replacing sigma2[k] (gamma terms only)."""
    t_n = rhok.shape[1]
    r_new = 1.0 / s2_new
    r_old = 1.0 / sigma2[k]
    delta = 0.0
    for t in range(t_n):
        delta += (math.lgamma(r_new + nk[k, t]) - math.lgamma(r_new)
                  - r_new * math.log(s2_new)
                  - (r_new + nk[k, t]) * math.log(r_new + rhok[k, t]))
        delta -= (math.lgamma(r_old + nk[k, t]) - math.lgamma(r_old)
                  - r_old * math.log(sigma2[k])
                  - (r_old + nk[k, t]) * math.log(r_old + rhok[k, t]))
    return delta


@njit(cache=True)
def _run_chain(m, n, nk, tq, tw, alpha, beta, u, v, sigma2, prop_sd,
               n_steps, burn_in, adapt_window, seed, sigma2_max, thin):
    """Run one chain in place; returns (draws, accept_counts, prop_sd).

    Parameter order in the flat vector: alpha (C), beta (C), u[:,1:] row
    major, v[:,1:] row major, sigma2 (K).  accept_counts are post-burn-in.
    """
    np.random.seed(seed)
    c_n, t_n = m.shape
    kp1 = u.shape[1]
    k_n = kp1 - 1
    p_n = 2 * c_n + 2 * c_n * k_n + k_n

    # mean trend values, used to shear the slope proposals: moving a slope
    # together with an offsetting level keeps the fit at the average observed
    # trend fixed, which decorrelates the otherwise nearly collinear
    # (level, slope) pairs
    tq_bar = np.empty(c_n)
    for c in range(c_n):
        s = 0.0
        for t in range(t_n):
            s += tq[c, t]
        tq_bar[c] = s / t_n
    tw_bar = np.empty(kp1)
    for k in range(kp1):
        s = 0.0
        for t in range(t_n):
            s += tw[k, t]
        tw_bar[k] = s / t_n

    q = np.empty((c_n, t_n))
    w = np.empty((c_n, kp1, t_n))
    rho = np.empty((c_n, kp1, t_n))
    rhok = np.empty((k_n, t_n))
    _build_state(m, tq, tw, alpha, beta, u, v, q, w, rho, rhok)

    q_new = np.empty(t_n)
    w_new = np.empty((kp1, t_n))

    n_post = n_steps - burn_in
    n_keep = (n_post + thin - 1) // thin
    draws = np.empty((n_keep, p_n))
    acc = np.zeros(p_n, dtype=np.int64)
    acc_win = np.zeros(p_n, dtype=np.int64)
    kept = 0

    for step in range(n_steps):
        post = step >= burn_in
        p = 0
        # alpha, beta blocks: symmetric normal proposals; beta moves are
        # sheared so the level at the mean trend is preserved
        for which in range(2):
            for c in range(c_n):
                step_sz = prop_sd[p] * np.random.standard_normal()
                if which == 0:
                    a_new = alpha[c] + step_sz
                    b_new = beta[c]
                else:
                    a_new = alpha[c] - step_sz * tq_bar[c]
                    b_new = beta[c] + step_sz
                for t in range(t_n):
                    q_new[t] = _laplace_cdf(a_new + b_new * tq[c, t])
                delta = _delta_q_update(c, q_new, m, n, nk, q, w, rho, rhok, sigma2)
                if math.log(np.random.random()) < delta:
                    alpha[c] = a_new
                    beta[c] = b_new
                    _apply_q_update(c, q_new, m, q, w, rho, rhok)
                    acc_win[p] += 1
                    if post:
                        acc[p] += 1
                p += 1
        # u then v blocks (gauge column k=0 is never proposed); v moves are
        # sheared against u just like beta against alpha
        for which in range(2):
            for c in range(c_n):
                for k in range(1, kp1):
                    step_sz = prop_sd[p] * np.random.standard_normal()
                    old_u = u[c, k]
                    old_v = v[c, k]
                    if which == 0:
                        u[c, k] = old_u + step_sz
                    else:
                        v[c, k] = old_v + step_sz
                        u[c, k] = old_u - step_sz * tw_bar[k]
                    _softmax_cell(u[c], v[c], tw, w_new)
                    delta = _delta_w_update(c, w_new, m, n, nk, q, w, rho, rhok, sigma2)
                    if math.log(np.random.random()) < delta:
                        _apply_w_update(c, w_new, m, q, w, rho, rhok)
                        acc_win[p] += 1
                        if post:
                            acc[p] += 1
                    else:
                        u[c, k] = old_u
                        v[c, k] = old_v
                    p += 1
        # sigma2 blocks: truncated-normal proposals on (0, sigma2_max)
        for k in range(k_n):
            sd = prop_sd[p]
            while True:
                s2_new = sigma2[k] + sd * np.random.standard_normal()
                if 0.0 < s2_new < sigma2_max:
                    break
            delta = _delta_sigma2(k, s2_new, nk, rhok, sigma2)
            z_cur = (_norm_cdf((sigma2_max - sigma2[k]) / sd)
                     - _norm_cdf(-sigma2[k] / sd))
            z_new = (_norm_cdf((sigma2_max - s2_new) / sd)
                     - _norm_cdf(-s2_new / sd))
            hastings = math.log(z_cur) - math.log(z_new)
            if math.log(np.random.random()) < delta + hastings:
                sigma2[k] = s2_new
                acc_win[p] += 1
                if post:
                    acc[p] += 1
            p += 1

        # proposal-scale adaptation, burn-in only
        if not post and (step + 1) % adapt_window == 0:
            for j in range(p_n):
                rate = acc_win[j] / adapt_window
                if rate > 0.35:
                    prop_sd[j] *= 1.1
                elif rate < 0.15:
                    prop_sd[j] *= 0.9
                acc_win[j] = 0

        if post and (step - burn_in) % thin == 0:
            j = 0
            for c in range(c_n):
                draws[kept, j] = alpha[c]
                j += 1
            for c in range(c_n):
                draws[kept, j] = beta[c]
                j += 1
            for c in range(c_n):
                for k in range(1, kp1):
                    draws[kept, j] = u[c, k]
                    j += 1
            for c in range(c_n):
                for k in range(1, kp1):
                    draws[kept, j] = v[c, k]
                    j += 1
            for k in range(k_n):
                draws[kept, j] = sigma2[k]
                j += 1
            kept += 1

    return draws, acc, prop_sd
