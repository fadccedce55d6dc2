# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: counter-based random streams and exact transition samplers.

Every function here has a numpy twin in ``_fallback.py`` with the same
signature and the same consumption of the random stream, so both backends
draw identical numbers (up to last-ulp differences of libm).
"""
from libc.stdint cimport uint64_t

cdef extern from *:
    """
    #include <stdint.h>
    #include <math.h>

    #define SQ_M0 0xD2E7470EE14C6C93ULL
    #define SQ_M1 0xCA5A826395121157ULL
    #define SQ_W0 0x9E3779B97F4A7C15ULL
    #define SQ_W1 0xBB67AE8584CAA73BULL
    #define SQ_TWO_PI 6.283185307179586
    #define SQ_TAG_POISSON 2ULL
    #define SQ_TAG_GAMMA 3ULL
    #define SQ_MAX_ATTEMPTS 100000

    static inline uint64_t sq_mulhilo(uint64_t a, uint64_t b, uint64_t *hi) {
        __uint128_t p = (__uint128_t)a * (__uint128_t)b;
        *hi = (uint64_t)(p >> 64);
        return (uint64_t)p;
    }

    /* Philox4x64-10 (Salmon et al.), same word order as numpy.random.Philox. */
    static inline void sq_philox(uint64_t c0, uint64_t c1, uint64_t c2, uint64_t c3,
                                 uint64_t k0, uint64_t k1, uint64_t *out) {
        uint64_t h0, h1, l0, l1;
        for (int r = 0; r < 10; r++) {
            if (r) { k0 += SQ_W0; k1 += SQ_W1; }
            l0 = sq_mulhilo(SQ_M0, c0, &h0);
            l1 = sq_mulhilo(SQ_M1, c2, &h1);
            c0 = h1 ^ c1 ^ k0;
            c1 = l1;
            c2 = h0 ^ c3 ^ k1;
            c3 = l0;
        }
        out[0] = c0; out[1] = c1; out[2] = c2; out[3] = c3;
    }

    static inline double sq_u53(uint64_t w) {
        return ((double)(w >> 11) + 0.5) * 1.1102230246251565e-16;
    }

    /* Inverse normal CDF, Wichura (1988) AS241 PPND16. */
    static inline double sq_ppnd16(double p) {
        double q = p - 0.5, r, val;
        if (fabs(q) <= 0.425) {
            r = 0.180625 - q * q;
            return q * (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r
                        + 6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r
                        + 1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r
                        + 1.3314166789178437745e+2) * r + 3.3871328727963666080e+0)
                     / (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r
                        + 3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r
                        + 5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r
                        + 4.2313330701600911252e+1) * r + 1.0);
        }
        r = q < 0.0 ? p : 1.0 - p;
        r = sqrt(-log(r));
        if (r <= 5.0) {
            r -= 1.6;
            val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
                    + 2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r
                    + 3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r
                    + 4.63033784615654529590e+0) * r + 1.42343711074968357734e+0)
                / (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
                    + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
                    + 6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r
                    + 2.05319162663775882187e+0) * r + 1.0);
        } else {
            r -= 5.0;
            val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
                    + 2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r
                    + 5.46378491116411436990e+0) * r + 6.65790464350110377720e+0)
                / (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
                    + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
                    + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
                    + 5.99832206555887937690e-1) * r + 1.0);
        }
        return q < 0.0 ? -val : val;
    }

    static void sq_fill_normals(uint64_t k0, uint64_t k1, uint64_t tag,
                                double *out, long n) {
        uint64_t w[4];
        long j = 0;
        for (long blk = 0; j < n; blk++) {
            sq_philox((uint64_t)blk, 0ULL, tag, 0ULL, k0, k1, w);
            for (int h = 0; h < 4 && j < n; h++) out[j++] = sq_ppnd16(sq_u53(w[h]));
        }
    }

    static void sq_brownian(uint64_t k0, uint64_t k1, double dt, double mu, double x0,
                            double *out, long n_steps) {
        uint64_t w[4];
        double sdt = sqrt(dt), drift = mu * dt, b = x0;
        long j = 0;
        out[0] = b;
        for (long blk = 0; j < n_steps; blk++) {
            sq_philox((uint64_t)blk, 0ULL, 0ULL, 0ULL, k0, k1, w);
            for (int h = 0; h < 4 && j < n_steps; h++) {
                b = b + (drift + sdt * sq_ppnd16(sq_u53(w[h])));
                out[++j] = b;
            }
        }
    }

    static void sq_fill_uniforms(uint64_t k0, uint64_t k1, uint64_t tag,
                                 double *out, long n) {
        uint64_t w[4];
        long j = 0;
        for (long blk = 0; j < n; blk++) {
            sq_philox((uint64_t)blk, 0ULL, tag, 0ULL, k0, k1, w);
            for (int h = 0; h < 4 && j < n; h++) out[j++] = sq_u53(w[h]);
        }
    }

    /* Poisson(lam): inversion below 10, PTRS (Hoermann 1993) above. */
    static double sq_poisson(uint64_t k0, uint64_t k1, uint64_t step, double lam) {
        uint64_t w[4];
        if (!(lam > 0.0)) return 0.0;
        if (lam < 10.0) {
            sq_philox(0ULL, step, SQ_TAG_POISSON, 0ULL, k0, k1, w);
            double u = sq_u53(w[0]);
            double p = exp(-lam), F = p;
            long k = 0;
            while (u > F && k < 1000) { k++; p *= lam / (double)k; F += p; }
            return (double)k;
        }
        double slam = sqrt(lam), loglam = log(lam);
        double b = 0.931 + 2.53 * slam;
        double a = -0.059 + 0.02483 * b;
        double invalpha = 1.1239 + 1.1328 / (b - 3.4);
        double vr = 0.9277 - 3.6224 / (b - 2.0);
        double k = 0.0;
        for (uint64_t att = 0; att < SQ_MAX_ATTEMPTS; att++) {
            sq_philox(att, step, SQ_TAG_POISSON, 0ULL, k0, k1, w);
            double U = sq_u53(w[0]) - 0.5;
            double V = sq_u53(w[1]);
            double us = 0.5 - fabs(U);
            k = floor((2.0 * a / us + b) * U + lam + 0.43);
            if (us >= 0.07 && V <= vr) return k;
            if (k < 0.0 || (us < 0.013 && V > us)) continue;
            if (log(V) + log(invalpha) - log(a / (us * us) + b)
                    <= -lam + k * loglam - lgamma(k + 1.0)) return k;
        }
        return k < 0.0 ? 0.0 : k;
    }

    /* Gamma(shape, 1): Marsaglia-Tsang, boosted by U^(1/shape) below 1. */
    static double sq_gamma(uint64_t k0, uint64_t k1, uint64_t step, double shape) {
        uint64_t w[4];
        int boost = shape < 1.0;
        double aa = boost ? shape + 1.0 : shape;
        double d = aa - 1.0 / 3.0, c = 1.0 / sqrt(9.0 * d);
        double g = d;
        for (uint64_t att = 0; att < SQ_MAX_ATTEMPTS; att++) {
            sq_philox(att, step, SQ_TAG_GAMMA, 0ULL, k0, k1, w);
            double x = sq_ppnd16(sq_u53(w[0]));
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = sq_u53(w[1]);
            if (u < 1.0 - 0.0331 * (x * x) * (x * x)
                    || log(u) < 0.5 * x * x + d * (1.0 - v + log(v))) {
                g = d * v;
                if (boost) g *= pow(sq_u53(w[2]), 1.0 / shape);
                return g;
            }
        }
        return g;
    }

    static void sq_squared_bessel(uint64_t k0, uint64_t k1, double *out, long n_steps,
                                  double dt, double delta, double x0) {
        double z = x0;
        out[0] = z;
        for (long i = 0; i < n_steps; i++) {
            double j = sq_poisson(k0, k1, (uint64_t)i, z / (2.0 * dt));
            z = 2.0 * dt * sq_gamma(k0, k1, (uint64_t)i, 0.5 * delta + j);
            out[i + 1] = z;
        }
    }

    static void sq_reflected(uint64_t k0, uint64_t k1, double dt, long n_steps,
                             double *x, double *a, double *low, double *nbuf, double *ubuf) {
        sq_brownian(k0, k1, dt, 0.0, 0.0, nbuf, n_steps);
        sq_fill_uniforms(k0, k1, 1ULL, ubuf, n_steps);
        double b = 0.0, s = 0.0;
        x[0] = 0.0; a[0] = 0.0;
        for (long i = 0; i < n_steps; i++) {
            double bn = nbuf[i + 1];
            double db = bn - b;
            double m = 0.5 * (b + bn + sqrt(db * db - 2.0 * dt * log(ubuf[i])));
            if (m > s) s = m;
            b = bn;
            x[i + 1] = s - b;
            a[i + 1] = s;
            low[i] = s - m;
        }
    }
    """
    void sq_philox(uint64_t c0, uint64_t c1, uint64_t c2, uint64_t c3,
                   uint64_t k0, uint64_t k1, uint64_t *out) nogil
    void sq_fill_normals(uint64_t k0, uint64_t k1, uint64_t tag, double *out, long n) nogil
    void sq_fill_uniforms(uint64_t k0, uint64_t k1, uint64_t tag, double *out, long n) nogil
    double sq_ppnd16(double p) nogil
    void sq_brownian(uint64_t k0, uint64_t k1, double dt, double mu, double x0,
                     double *out, long n_steps) nogil
    double sq_poisson(uint64_t k0, uint64_t k1, uint64_t step, double lam) nogil
    double sq_gamma(uint64_t k0, uint64_t k1, uint64_t step, double shape) nogil
    void sq_squared_bessel(uint64_t k0, uint64_t k1, double *out, long n_steps,
                           double dt, double delta, double x0) nogil
    void sq_reflected(uint64_t k0, uint64_t k1, double dt, long n_steps,
                      double *x, double *a, double *low, double *nbuf, double *ubuf) nogil

import numpy as np

BACKEND = "cython"


def philox_block(uint64_t seed, uint64_t stream, uint64_t c0, uint64_t c1, uint64_t c2, uint64_t c3):
    cdef uint64_t w[4]
    sq_philox(c0, c1, c2, c3, seed, stream, w)
    return np.array([w[0], w[1], w[2], w[3]], dtype=np.uint64)


def fill_normals(uint64_t seed, uint64_t stream0, double[:, ::1] out, uint64_t tag):
    cdef Py_ssize_t p, n_paths = out.shape[0]
    cdef long n = out.shape[1]
    with nogil:
        for p in range(n_paths):
            sq_fill_normals(seed, stream0 + p, tag, &out[p, 0], n)


def brownian(uint64_t seed, uint64_t stream0, double dt, double mu, double x0, double[:, ::1] out):
    """Brownian paths ``x0 + mu*t + B_t`` from the normal stream (tag 0)."""
    cdef Py_ssize_t p, n_paths = out.shape[0]
    cdef long n_steps = out.shape[1] - 1
    with nogil:
        for p in range(n_paths):
            sq_brownian(seed, stream0 + p, dt, mu, x0, &out[p, 0], n_steps)


def ppnd16(double[::1] p):
    cdef Py_ssize_t i, n = p.shape[0]
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = sq_ppnd16(p[i])
    return out


def fill_uniforms(uint64_t seed, uint64_t stream0, double[:, ::1] out, uint64_t tag):
    cdef Py_ssize_t p, n_paths = out.shape[0]
    cdef long n = out.shape[1]
    with nogil:
        for p in range(n_paths):
            sq_fill_uniforms(seed, stream0 + p, tag, &out[p, 0], n)


def poisson_draws(uint64_t seed, uint64_t stream0, double[::1] lam, uint64_t step):
    """One Poisson draw per stream (``stream0 + p``) at the given step counter."""
    cdef Py_ssize_t p, n = lam.shape[0]
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for p in range(n):
            o[p] = sq_poisson(seed, stream0 + p, step, lam[p])
    return out


def gamma_draws(uint64_t seed, uint64_t stream0, double[::1] shape, uint64_t step):
    cdef Py_ssize_t p, n = shape.shape[0]
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for p in range(n):
            o[p] = sq_gamma(seed, stream0 + p, step, shape[p])
    return out


def squared_bessel(uint64_t seed, uint64_t stream0, double[:, ::1] out,
                   double dt, double delta, double x0):
    cdef Py_ssize_t p, n_paths = out.shape[0]
    cdef long n_steps = out.shape[1] - 1
    with nogil:
        for p in range(n_paths):
            sq_squared_bessel(seed, stream0 + p, &out[p, 0], n_steps, dt, delta, x0)


def reflected(uint64_t seed, uint64_t stream0, double dt,
              double[:, ::1] x, double[:, ::1] a, double[:, ::1] low):
    cdef Py_ssize_t p, n_paths = x.shape[0]
    cdef long n_steps = x.shape[1] - 1
    nb = np.empty(n_steps + 1)
    ub = np.empty(max(n_steps, 1))
    cdef double[::1] nbv = nb
    cdef double[::1] ubv = ub
    with nogil:
        for p in range(n_paths):
            sq_reflected(seed, stream0 + p, dt, n_steps, &x[p, 0], &a[p, 0], &low[p, 0],
                         &nbv[0], &ubv[0])


def ar1(double[::1] coef, double[::1] scale, double[:, ::1] noise, double[:, ::1] out):
    """``out[:, i+1] = coef[i] * out[:, i] + scale[i] * noise[:, i]``; ``out[:, 0]`` is preset."""
    cdef Py_ssize_t p, i, n_paths = out.shape[0], n = coef.shape[0]
    with nogil:
        for p in range(n_paths):
            for i in range(n):
                out[p, i + 1] = coef[i] * out[p, i] + scale[i] * noise[p, i]
