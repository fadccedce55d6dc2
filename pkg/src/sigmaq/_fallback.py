"""Pure-numpy twins of the compiled kernels.

Same signatures and the same stream layout as ``_kernels.pyx``: a stream is
keyed by ``(seed, stream_index)`` and every 64-bit word comes from a
Philox4x64-10 block with counter ``(block, step, tag, 0)``.
"""
from __future__ import annotations

import numpy as np
from scipy.special import gammaln

BACKEND = "python"

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_TAG_POISSON = 2
_TAG_GAMMA = 3
_MAX_ATTEMPTS = 100000


def _mulhilo(a, b):
    a_lo, a_hi = a & _LO, a >> _S32
    b_lo, b_hi = b & _LO, b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    mid = (ll >> _S32) + (lh & _LO) + (hl & _LO)
    hi = a_hi * b_hi + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    return hi, a * b


def philox(c0, c1, c2, c3, k0, k1):
    """Vectorised Philox4x64-10; all arguments broadcast as uint64 arrays."""
    c0, c1, c2, c3, k0, k1 = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.uint64) for v in (c0, c1, c2, c3, k0, k1))
    )
    with np.errstate(over="ignore"):
        for r in range(10):
            if r:
                k0 = k0 + _W0
                k1 = k1 + _W1
            h0, l0 = _mulhilo(_M0, c0)
            h1, l1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = h1 ^ c1 ^ k0, l1, h0 ^ c3 ^ k1, l0
    return c0, c1, c2, c3


def u53(w):
    return ((w >> _S11).astype(np.float64) + 0.5) * 1.1102230246251565e-16


def philox_block(seed, stream, c0, c1, c2, c3):
    return np.array([int(v) for v in philox(c0, c1, c2, c3, seed, stream)], dtype=np.uint64)


def _stream_keys(seed, stream0, n_paths):
    k1 = np.uint64(stream0) + np.arange(n_paths, dtype=np.uint64)
    return np.uint64(seed), k1


def _words(seed, stream0, n_paths, n_words, tag):
    k0, k1 = _stream_keys(seed, stream0, n_paths)
    n_blocks = -(-n_words // 4)
    blk = np.arange(n_blocks, dtype=np.uint64)[None, :]
    w = philox(blk, 0, tag, 0, k0, k1[:, None])
    return np.stack(w, axis=-1).reshape(n_paths, 4 * n_blocks)


_PA = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
       1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
       3.3430575583588128105e4, 2.5090809287301226727e3)
_PB = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
       2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
       5.2264952788528545610e3)
_PC = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
       3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
       2.27238449892691845833e-2, 7.74545014278341407640e-4)
_PD = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
       1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
       1.05075007164441684324e-9)
_PE = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
       2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
       2.71155556874348757815e-5, 2.01033439929228813265e-7)
_PF = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
       7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
       2.04426310338993978564e-15)


def _horner(coef, r):
    acc = coef[-1] * r + coef[-2]
    for c in coef[-3::-1]:
        acc = acc * r + c
    return acc


def ppnd16(p):
    """Inverse standard normal CDF (Wichura's AS241), evaluated like the C kernel."""
    p = np.asarray(p, dtype=np.float64)
    q = p - 0.5
    out = np.empty_like(p)
    central = np.abs(q) <= 0.425
    qc = q[central]
    r = 0.180625 - qc * qc
    out[central] = qc * _horner(_PA, r) / _horner(_PB, r)
    tail = ~central
    if tail.any():
        qt, pt = q[tail], p[tail]
        r = np.sqrt(-np.log(np.where(qt < 0.0, pt, 1.0 - pt)))
        near = r <= 5.0
        val = np.empty_like(r)
        rn = r[near] - 1.6
        val[near] = _horner(_PC, rn) / _horner(_PD, rn)
        rf = r[~near] - 5.0
        val[~near] = _horner(_PE, rf) / _horner(_PF, rf)
        out[tail] = np.where(qt < 0.0, -val, val)
    return out


def fill_normals(seed, stream0, out, tag):
    n_paths, n = out.shape
    if n == 0:
        return
    out[:] = ppnd16(u53(_words(seed, stream0, n_paths, n, tag))[:, :n])


def brownian(seed, stream0, dt, mu, x0, out):
    n_paths, n1 = out.shape
    z = np.empty((n_paths, n1 - 1))
    fill_normals(seed, stream0, z, 0)
    inc = np.empty((n_paths, n1))
    inc[:, 0] = x0
    inc[:, 1:] = mu * dt + np.sqrt(dt) * z
    np.cumsum(inc, axis=1, out=out)


def fill_uniforms(seed, stream0, out, tag):
    n_paths, n = out.shape
    if n == 0:
        return
    out[:] = u53(_words(seed, stream0, n_paths, n, tag))[:, :n]


def _block_at(seed, k1, attempt, step, tag):
    return philox(attempt, step, tag, 0, seed, k1)


def poisson_draws(seed, stream0, lam, step, _k1=None):
    lam = np.asarray(lam, dtype=np.float64)
    k1 = _stream_keys(seed, stream0, lam.size)[1] if _k1 is None else _k1
    seed = np.uint64(seed)
    out = np.zeros(lam.size)

    small = (lam > 0.0) & (lam < 10.0)
    if small.any():
        ls = lam[small]
        u = u53(_block_at(seed, k1[small], 0, step, _TAG_POISSON)[0])
        p = np.exp(-ls)
        F = p.copy()
        k = np.zeros(ls.size)
        active = u > F
        while active.any():
            k = np.where(active, k + 1.0, k)
            p = np.where(active, p * ls / np.maximum(k, 1.0), p)
            F = np.where(active, F + p, F)
            active = active & (u > F) & (k < 1000)
        out[small] = k

    big = np.flatnonzero(lam >= 10.0)
    if big.size:
        lb = lam[big]
        slam, loglam = np.sqrt(lb), np.log(lb)
        b = 0.931 + 2.53 * slam
        a = -0.059 + 0.02483 * b
        invalpha = 1.1239 + 1.1328 / (b - 3.4)
        vr = 0.9277 - 3.6224 / (b - 2.0)
        pending = np.arange(big.size)
        for att in range(_MAX_ATTEMPTS):
            if pending.size == 0:
                break
            w = _block_at(seed, k1[big[pending]], att, step, _TAG_POISSON)
            U = u53(w[0]) - 0.5
            V = u53(w[1])
            us = 0.5 - np.abs(U)
            ap, bp = a[pending], b[pending]
            k = np.floor((2.0 * ap / us + bp) * U + lb[pending] + 0.43)
            quick = (us >= 0.07) & (V <= vr[pending])
            reject = ~quick & ((k < 0.0) | ((us < 0.013) & (V > us)))
            with np.errstate(invalid="ignore", divide="ignore"):
                slow = (~quick & ~reject) & (
                    np.log(V) + np.log(invalpha[pending]) - np.log(ap / (us * us) + bp)
                    <= -lb[pending] + k * loglam[pending] - gammaln(k + 1.0)
                )
            done = quick | slow
            out[big[pending[done]]] = k[done]
            pending = pending[~done]
    return out


def gamma_draws(seed, stream0, shape, step, _k1=None):
    shape = np.asarray(shape, dtype=np.float64)
    k1 = _stream_keys(seed, stream0, shape.size)[1] if _k1 is None else _k1
    seed = np.uint64(seed)
    boost = shape < 1.0
    aa = np.where(boost, shape + 1.0, shape)
    d = aa - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = d.copy()
    pending = np.arange(shape.size)
    for att in range(_MAX_ATTEMPTS):
        if pending.size == 0:
            break
        w = _block_at(seed, k1[pending], att, step, _TAG_GAMMA)
        x = ppnd16(u53(w[0]))
        v = 1.0 + c[pending] * x
        ok = v > 0.0
        v = v * v * v
        u = u53(w[1])
        with np.errstate(invalid="ignore", divide="ignore"):
            dp = d[pending]
            acc = ok & (
                (u < 1.0 - 0.0331 * (x * x) * (x * x))
                | (np.log(u) < 0.5 * x * x + dp * (1.0 - v + np.log(np.where(ok, v, 1.0))))
            )
        idx = pending[acc]
        g = dp[acc] * v[acc]
        bst = boost[idx]
        if bst.any():
            g[bst] *= np.power(u53(w[2][acc][bst]), 1.0 / shape[idx][bst])
        out[idx] = g
        pending = pending[~acc]
    return out


def squared_bessel(seed, stream0, out, dt, delta, x0):
    n_paths = out.shape[0]
    n_steps = out.shape[1] - 1
    k1 = _stream_keys(seed, stream0, n_paths)[1]
    z = np.full(n_paths, float(x0))
    out[:, 0] = z
    for i in range(n_steps):
        j = poisson_draws(seed, stream0, z / (2.0 * dt), i, _k1=k1)
        z = 2.0 * dt * gamma_draws(seed, stream0, 0.5 * delta + j, i, _k1=k1)
        out[:, i + 1] = z


def reflected(seed, stream0, dt, x, a, low):
    n_paths, n1 = x.shape
    n_steps = n1 - 1
    b = np.empty((n_paths, n1))
    u = np.empty((n_paths, n_steps))
    brownian(seed, stream0, dt, 0.0, 0.0, b)
    fill_uniforms(seed, stream0, u, 1)
    db = b[:, 1:] - b[:, :-1]
    m = 0.5 * (b[:, :-1] + b[:, 1:] + np.sqrt(db * db - 2.0 * dt * np.log(u)))
    s = np.zeros((n_paths, n1))
    np.maximum.accumulate(np.maximum(m, 0.0), axis=1, out=s[:, 1:])
    x[:] = s - b
    a[:] = s
    low[:] = s[:, 1:] - m


def ar1(coef, scale, noise, out):
    for i in range(coef.shape[0]):
        out[:, i + 1] = coef[i] * out[:, i] + scale[i] * noise[:, i]
