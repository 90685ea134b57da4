"""Compiled inner loops shared by the filters, the world and the planners.

Everything here works on plain float64 arrays so that the Python-facing
modules can wrap them without copying.  Parameter packs:

* ``mparams`` = (dt, sigma_w, sigma_w_bias, v_max)
* ``oparams`` = (xi_r, xi_theta, sigma_rb, sigma_tb, sensing_range)
* ``dparams`` = (w_x, w_y, w_theta, xi_sigma)
* ``cparams`` = (xi_p, xi_T, dt_cost)
"""
import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi

STATUS_REACHED = 0
STATUS_COLLISION = 1
STATUS_CAP = 2


@njit(cache=True)
def wrap_angle(a):
    # maps to (-pi, pi]
    return a - TWO_PI * math.ceil((a - math.pi) / TWO_PI)


@njit(cache=True)
def motion_noise_std(u, mparams):
    dt = mparams[0]
    out = np.empty(3)
    for i in range(3):
        out[i] = mparams[1] * abs(u[i]) * dt + mparams[2]
    return out


@njit(cache=True)
def propagate(x, u, w, dt):
    out = np.empty(3)
    out[0] = x[0] + u[0] * dt + w[0]
    out[1] = x[1] + u[1] * dt + w[1]
    out[2] = wrap_angle(x[2] + u[2] * dt + w[2])
    return out


@njit(cache=True)
def observe(x, landmarks, oparams, noise):
    """Range-bearing readings for every landmark inside the sensing range.

    ``noise`` holds two standard normals per landmark (range, bearing) and is
    consumed by landmark index whether or not the landmark is visible.
    """
    n_lm = landmarks.shape[0]
    ids = np.empty(n_lm, dtype=np.int64)
    z = np.empty((n_lm, 2))
    n = 0
    for i in range(n_lm):
        dx = landmarks[i, 0] - x[0]
        dy = landmarks[i, 1] - x[1]
        d = math.sqrt(dx * dx + dy * dy)
        if d > oparams[4] or d < 1e-12:
            continue
        r = d + (oparams[0] * d + oparams[2]) * noise[2 * i]
        if r < 1e-9:
            r = 1e-9
        b = math.atan2(dy, dx) - x[2] + (oparams[1] * d + oparams[3]) * noise[2 * i + 1]
        ids[n] = i
        z[n, 0] = r
        z[n, 1] = wrap_angle(b)
        n += 1
    return ids[:n], z[:n]


@njit(cache=True)
def symmetrize(P):
    return 0.5 * (P + P.T)


@njit(cache=True)
def ekf_predict(mean, cov, u, mparams):
    dt = mparams[0]
    std = motion_noise_std(u, mparams)
    m = np.empty(3)
    m[0] = mean[0] + u[0] * dt
    m[1] = mean[1] + u[1] * dt
    m[2] = wrap_angle(mean[2] + u[2] * dt)
    P = cov.copy()
    for i in range(3):
        P[i, i] += std[i] * std[i]
    return m, symmetrize(P)


@njit(cache=True)
def observation_jacobian(mean, lx, ly):
    dx = lx - mean[0]
    dy = ly - mean[1]
    q = dx * dx + dy * dy
    r = math.sqrt(q)
    H = np.zeros((2, 3))
    H[0, 0] = -dx / r
    H[0, 1] = -dy / r
    H[1, 0] = dy / q
    H[1, 1] = -dx / q
    H[1, 2] = -1.0
    return H, r, math.atan2(dy, dx) - mean[2]


@njit(cache=True)
def ekf_update(mean, cov, ids, z, landmarks, oparams):
    """Sequential per-landmark EKF correction.

    All readings are linearized at the predicted mean, which makes the
    sequential form algebraically identical to the stacked batch update.
    Returns (mean, cov, regularized_flag).
    """
    m0 = mean.copy()
    m = mean.copy()
    P = cov.copy()
    flagged = False
    for n in range(ids.shape[0]):
        i = ids[n]
        H, r, bearing = observation_jacobian(m0, landmarks[i, 0], landmarks[i, 1])
        if r < 1e-9:
            continue
        sr = oparams[0] * r + oparams[2]
        sb = oparams[1] * r + oparams[3]
        R00 = sr * sr
        R11 = sb * sb
        dm0 = m[0] - m0[0]
        dm1 = m[1] - m0[1]
        dm2 = wrap_angle(m[2] - m0[2])
        y0 = z[n, 0] - r - (H[0, 0] * dm0 + H[0, 1] * dm1)
        y1 = wrap_angle(z[n, 1] - bearing - (H[1, 0] * dm0 + H[1, 1] * dm1 + H[1, 2] * dm2))
        PHt = P @ H.T
        S = H @ PHt
        S[0, 0] += R00
        S[1, 1] += R11
        det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
        if not (abs(det) > 1e-300) or not math.isfinite(det):
            S[0, 0] += 1e-9
            S[1, 1] += 1e-9
            det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
            flagged = True
        Si = np.empty((2, 2))
        Si[0, 0] = S[1, 1] / det
        Si[1, 1] = S[0, 0] / det
        Si[0, 1] = -S[0, 1] / det
        Si[1, 0] = -S[1, 0] / det
        K = PHt @ Si
        m[0] += K[0, 0] * y0 + K[0, 1] * y1
        m[1] += K[1, 0] * y0 + K[1, 1] * y1
        m[2] = wrap_angle(m[2] + K[2, 0] * y0 + K[2, 1] * y1)
        IKH = np.eye(3) - K @ H
        KRKt = np.empty((3, 3))
        for a in range(3):
            for b in range(3):
                KRKt[a, b] = K[a, 0] * R00 * K[b, 0] + K[a, 1] * R11 * K[b, 1]
        P = IKH @ P @ IKH.T + KRKt
    return m, symmetrize(P), flagged


@njit(cache=True)
def trace3(P):
    return P[0, 0] + P[1, 1] + P[2, 2]


@njit(cache=True)
def step_cost(cov, cparams):
    return cparams[0] * trace3(cov) + cparams[1] * cparams[2]


@njit(cache=True)
def belief_distance(m1, P1, m2, P2, dparams):
    dx = dparams[0] * (m1[0] - m2[0])
    dy = dparams[1] * (m1[1] - m2[1])
    dt = dparams[2] * wrap_angle(m1[2] - m2[2])
    fro = 0.0
    for a in range(3):
        for b in range(3):
            d = P1[a, b] - P2[a, b]
            fro += d * d
    return math.sqrt(dx * dx + dy * dy + dt * dt) + dparams[3] * math.sqrt(fro)


@njit(cache=True)
def belief_distance_batch(m, P, means, covs, dparams):
    n = means.shape[0]
    out = np.empty(n)
    for j in range(n):
        out[j] = belief_distance(m, P, means[j], covs[j], dparams)
    return out


@njit(cache=True)
def segment_collides(ax, ay, bx, by, rects, bounds):
    """Swept point test against pre-inflated rectangles and pre-shrunk bounds.

    Rectangles are closed sets; touching a boundary counts as contact.
    """
    if ax < bounds[0] or ax > bounds[2] or ay < bounds[1] or ay > bounds[3]:
        return True
    if bx < bounds[0] or bx > bounds[2] or by < bounds[1] or by > bounds[3]:
        return True
    dx = bx - ax
    dy = by - ay
    for k in range(rects.shape[0]):
        t0 = 0.0
        t1 = 1.0
        hit = True
        for side in range(4):
            if side == 0:
                p = -dx
                q = ax - rects[k, 0]
            elif side == 1:
                p = dx
                q = rects[k, 2] - ax
            elif side == 2:
                p = -dy
                q = ay - rects[k, 1]
            else:
                p = dy
                q = rects[k, 3] - ay
            if p == 0.0:
                if q < 0.0:
                    hit = False
                    break
            else:
                t = q / p
                if p < 0.0:
                    if t > t0:
                        t0 = t
                else:
                    if t < t1:
                        t1 = t
                if t0 > t1:
                    hit = False
                    break
        if hit:
            return True
    return False


@njit(cache=True)
def visible_neighbors(m, P, means, covs, dparams, k, rects, bounds):
    """Indices of the ``k`` nearest centers (belief metric) with a free segment."""
    d = belief_distance_batch(m, P, means, covs, dparams)
    order = np.argsort(d, kind="mergesort")
    out = np.empty(min(k, means.shape[0]), dtype=np.int64)
    n = 0
    for idx in order:
        if n >= k:
            break
        if not segment_collides(m[0], m[1], means[idx, 0], means[idx, 1], rects, bounds):
            out[n] = idx
            n += 1
    return out[:n], d


@njit(cache=True)
def control_law(mean, k, start, target, n_nom, gain, stab_gain, v_max, dt):
    """Time-varying tracking law along a straight nominal, then node stabilization."""
    u = np.empty(3)
    e = np.empty(3)
    if k < n_nom:
        frac = k / n_nom
        dth = wrap_angle(target[2] - start[2])
        xn0 = start[0] + frac * (target[0] - start[0])
        xn1 = start[1] + frac * (target[1] - start[1])
        xn2 = wrap_angle(start[2] + frac * dth)
        e[0] = mean[0] - xn0
        e[1] = mean[1] - xn1
        e[2] = wrap_angle(mean[2] - xn2)
        un = np.empty(3)
        un[0] = (target[0] - start[0]) / (n_nom * dt)
        un[1] = (target[1] - start[1]) / (n_nom * dt)
        un[2] = dth / (n_nom * dt)
        for i in range(3):
            u[i] = un[i] - (gain[i, 0] * e[0] + gain[i, 1] * e[1] + gain[i, 2] * e[2])
    else:
        e[0] = mean[0] - target[0]
        e[1] = mean[1] - target[1]
        e[2] = wrap_angle(mean[2] - target[2])
        for i in range(3):
            u[i] = -(stab_gain[i, 0] * e[0] + stab_gain[i, 1] * e[1] + stab_gain[i, 2] * e[2])
    for i in range(3):
        if u[i] > v_max:
            u[i] = v_max
        elif u[i] < -v_max:
            u[i] = -v_max
    return u


@njit(cache=True)
def sim_step(x, mean, cov, u, noise, mparams, landmarks, oparams, rects, bounds):
    """One generative step plus belief evolution.

    ``noise`` = 3 motion normals followed by 2 normals per landmark.
    Returns (x_next, mean_next, cov_next, collided).
    """
    std = motion_noise_std(u, mparams)
    w = np.empty(3)
    for i in range(3):
        w[i] = std[i] * noise[i]
    xn = propagate(x, u, w, mparams[0])
    if segment_collides(x[0], x[1], xn[0], xn[1], rects, bounds):
        return xn, mean, cov, True
    ids, z = observe(xn, landmarks, oparams, noise[3:])
    mp, Pp = ekf_predict(mean, cov, u, mparams)
    mu, Pu, _ = ekf_update(mp, Pp, ids, z, landmarks, oparams)
    return xn, mu, Pu, False


@njit(cache=True)
def seed_kernel_rng(seed):
    np.random.seed(seed)


@njit(cache=True)
def traverse(x, mean, cov, age, start, target, n_nom, gain, stab_gain,
             goal_mean, goal_cov, eps, cap,
             mparams, landmarks, oparams, rects, bounds, dparams, cparams, seed, noise_scale=1.0):
    """Closed-loop run of one controller until its target ball is entered.

    Membership is checked before every step, so a belief already inside the
    ball returns immediately with zero cost.  Uses the kernel-local RNG
    seeded from ``seed``; ``noise_scale=0`` gives the noiseless run.
    Returns (status, cost, steps, x, mean, cov).
    """
    if seed >= 0:
        np.random.seed(seed)
    n_lm = landmarks.shape[0]
    noise = np.empty(3 + 2 * n_lm)
    cost = 0.0
    k = age
    for step in range(cap + 1):
        if belief_distance(mean, cov, goal_mean, goal_cov, dparams) <= eps:
            return STATUS_REACHED, cost, step, x, mean, cov
        if step == cap:
            break
        u = control_law(mean, k, start, target, n_nom, gain, stab_gain, mparams[3], mparams[0])
        cost += step_cost(cov, cparams)
        for i in range(noise.shape[0]):
            noise[i] = noise_scale * np.random.standard_normal()
        xn, mn, Pn, hit = sim_step(x, mean, cov, u, noise, mparams, landmarks, oparams, rects, bounds)
        if hit:
            return STATUS_COLLISION, cost, step + 1, xn, mean, cov
        x = xn
        mean = mn
        cov = Pn
        k += 1
    return STATUS_CAP, cost, cap, x, mean, cov


@njit(cache=True)
def nominal_steps(mean, target, step):
    dist = math.sqrt((target[0] - mean[0]) ** 2 + (target[1] - mean[1]) ** 2)
    dth = abs(wrap_angle(target[2] - mean[2]))
    n = max(math.ceil(dist / step - 1e-12), math.ceil(dth / step - 1e-12))
    return max(n, 0)


@njit(cache=True)
def bridge_control(mean, target, gain, stab_gain, mparams):
    """First control of a fresh edge controller anchored at the current mean."""
    n = nominal_steps(mean, target, mparams[3] * mparams[0])
    return control_law(mean, 0, mean, target, n, gain, stab_gain, mparams[3], mparams[0])


@njit(cache=True)
def heuristic_edge_cost(mean, cov, target, step, cparams):
    """Straight-line step count to the target priced at the current step cost."""
    dist = math.sqrt((target[0] - mean[0]) ** 2 + (target[1] - mean[1]) ** 2)
    return math.ceil(dist / step - 1e-12) * step_cost(cov, cparams)


@njit(cache=True)
def rollout_weights(denominators, eta_w):
    n = denominators.shape[0]
    w = np.empty(n)
    for i in range(n):
        d = denominators[i]
        if d < 1e-12:
            d = 1e-12
        w[i] = 1.0 / d + eta_w
    return w / w.sum()


@njit(cache=True)
def sample_index(p, u):
    acc = 0.0
    for i in range(p.shape[0]):
        acc += p[i]
        if u < acc:
            return i
    return p.shape[0] - 1


@njit(cache=True)
def rollout(x, mean, cov, k, K_sr, prev, targets, target_covs, J, stab_gains, gain,
            k_nb, eta_w, J_fail, cap, goal_mean, goal_cov, eps, mode, heur_scale,
            mparams, landmarks, oparams, rects, bounds, plan_rects, plan_bounds, dparams, cparams, seed):
    """Sampled cost-to-go from (x, belief) at tree depth ``k``.

    ``mode`` 0 bridges into the roadmap: short-range steps pick neighbor
    targets with probability proportional to 1/(C + J) + eta_w, then the
    last controller is followed until its target ball is entered and the
    target's value is added.  ``mode`` 1 picks targets uniformly and ends
    at depth ``K_sr`` with ``heur_scale`` times the distance to the goal.
    """
    np.random.seed(seed)
    n_lm = landmarks.shape[0]
    noise = np.empty(3 + 2 * n_lm)
    step = mparams[3] * mparams[0]
    acc = 0.0
    while True:
        if belief_distance(mean, cov, goal_mean, goal_cov, dparams) <= eps:
            return acc
        if k > K_sr:
            if mode == 1:
                d = math.sqrt((goal_mean[0] - mean[0]) ** 2 + (goal_mean[1] - mean[1]) ** 2)
                return acc + heur_scale * d
            if prev < 0:
                return acc + J_fail
            n = nominal_steps(mean, targets[prev], step)
            status, c, _, x, mean, cov = traverse(
                x, mean, cov, 0, mean.copy(), targets[prev], n, gain, stab_gains[prev],
                targets[prev], target_covs[prev], eps, cap,
                mparams, landmarks, oparams, rects, bounds, dparams, cparams, -1, 1.0)
            if status == STATUS_REACHED:
                return acc + c + J[prev]
            return acc + c + J_fail
        idx, _ = visible_neighbors(mean, cov, targets, target_covs, dparams, k_nb, plan_rects, plan_bounds)
        if idx.shape[0] == 0:
            return acc + J_fail
        if mode == 1:
            j = idx[int(np.random.random() * idx.shape[0]) % idx.shape[0]]
        else:
            den = np.empty(idx.shape[0])
            for n in range(idx.shape[0]):
                den[n] = heuristic_edge_cost(mean, cov, targets[idx[n]], step, cparams) + J[idx[n]]
            j = idx[sample_index(rollout_weights(den, eta_w), np.random.random())]
        prev = j
        u = bridge_control(mean, targets[j], gain, stab_gains[j], mparams)
        acc += step_cost(cov, cparams)
        for i in range(noise.shape[0]):
            noise[i] = np.random.standard_normal()
        xn, mn, Pn, hit = sim_step(x, mean, cov, u, noise, mparams, landmarks, oparams, rects, bounds)
        if hit:
            return acc + J_fail
        x = xn
        mean = mn
        cov = Pn
        k += 1
