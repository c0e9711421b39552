# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled GMM-EKF step kernel.

Fixed structure: 7 augmented states, 2 or 3 measurement channels, fitted
steering-model orders (2,3,0,1).  Mirrors advisor._ekf_py.gmm_step_py; the
pure-Python path remains the reference implementation.

Status codes: 0 ok, 1 singular innovation, 2 all weights vanished,
3 covariance not PSD, 4 nonpositive xi1.
"""
from libc.math cimport atan, exp, sqrt, log, M_PI, INFINITY, isfinite


cdef int _cholesky(double* a, double* l, int n) noexcept nogil:
    """Lower Cholesky of the n x n matrix a into l; returns 0 on success."""
    cdef int i, j, k
    cdef double s
    for i in range(n * n):
        l[i] = 0.0
    for j in range(n):
        s = a[j * n + j]
        for k in range(j):
            s -= l[j * n + k] * l[j * n + k]
        if s <= 0.0:
            return 1
        l[j * n + j] = sqrt(s)
        for i in range(j + 1, n):
            s = a[i * n + j]
            for k in range(j):
                s -= l[i * n + k] * l[j * n + k]
            l[i * n + j] = s / l[j * n + j]
    return 0


cdef void _angle_grads(double x1, double x2, double x3, double near, double far,
                       double* dphi, double* dom) noexcept nogil:
    cdef double den = x1 * x1 + x3 * x3
    dphi[0] = -x3 / den
    dphi[1] = near / (near * near + x2 * x2)
    dphi[2] = x1 / den
    dom[0] = -x3 / den
    dom[1] = far / (far * far + x2 * x2)
    dom[2] = x1 / den


def gmm_step(double[:, ::1] means, double[:, :, ::1] covs, double[::1] weights,
             double[::1] coeffs, double ts, double near, double far,
             double v_floor, double[::1] u, double[::1] z,
             double[:, ::1] rmat, double[:, ::1] qmat,
             int use_human, int paper_mode, double weight_floor):
    cdef int ncomp = means.shape[0]
    cdef int m = 3 if use_human else 2
    cdef int ci, i, j, k, col
    cdef double a1 = coeffs[0], a2 = coeffs[1]
    cdef double b0 = coeffs[2], b1 = coeffs[3], b2 = coeffs[4], b3 = coeffs[5]
    cdef double c0 = coeffs[6], d0 = coeffs[7], d1 = coeffs[8]
    cdef double k5 = b3, k6 = b2 + a2 * b0, k7 = b1 + a1 * b0
    cdef double x1, phi, om, heading, scale, s, quad, log_det, total, peak
    cdef double A[49]
    cdef double P[49]
    cdef double T[49]
    cdef double L7[49]
    cdef double C[21]
    cdef double G[21]
    cdef double PCt[21]
    cdef double CP[21]
    cdef double rho[9]
    cdef double rhoinv[9]
    cdef double Lm[9]
    cdef double ybuf[3]
    cdef double xbuf[3]
    cdef double zhat[3]
    cdef double resid[3]
    cdef double mean[7]
    cdef double newmean[7]
    cdef double dphi[3]
    cdef double dom[3]
    cdef double liks[64]

    if ncomp > 64:
        return 5

    for ci in range(ncomp):
        for i in range(7):
            mean[i] = means[ci, i]
        for i in range(7):
            for j in range(7):
                P[i * 7 + j] = covs[ci, i, j]
        if mean[0] <= 0.0:
            return 4
        x1 = mean[0] if mean[0] > v_floor else v_floor

        # state jacobian at the pre-propagation mean
        for i in range(49):
            A[i] = 0.0
        A[0 * 7 + 0] = 1.0
        A[1 * 7 + 1] = 1.0
        A[1 * 7 + 2] = ts
        A[2 * 7 + 2] = 1.0
        A[3 * 7 + 3] = 1.0
        if paper_mode:
            A[4 * 7 + 1] = k5 / near
            A[4 * 7 + 2] = k5 / x1
            A[5 * 7 + 1] = k6 / near + a2 * c0 / near
            A[5 * 7 + 2] = (k6 + a2 * c0) / x1 + a2 * d0
            A[6 * 7 + 1] = k7 / near + a1 * c0 / far
            A[6 * 7 + 2] = (k7 + a1 * c0) / x1 + d1 + a1 * d0
        else:
            _angle_grads(x1, mean[1], mean[2], near, far, dphi, dom)
            for j in range(3):
                A[4 * 7 + j] = k5 * dphi[j]
                A[5 * 7 + j] = k6 * dphi[j] + a2 * c0 * dom[j]
                A[6 * 7 + j] = k7 * dphi[j] + a1 * c0 * dom[j]
            A[5 * 7 + 2] += a2 * d0
            A[6 * 7 + 2] += d1 + a1 * d0
        A[5 * 7 + 4] = 1.0
        A[5 * 7 + 6] = a2
        A[6 * 7 + 5] = 1.0
        A[6 * 7 + 6] = a1

        # mean propagation
        heading = atan(mean[2] / x1)
        phi = heading + atan(mean[1] / near)
        om = heading + atan(mean[1] / far)
        newmean[0] = mean[0] + ts * u[0]
        newmean[1] = mean[1] + ts * mean[2] + 0.5 * ts * ts * u[1]
        newmean[2] = mean[2] + ts * u[1]
        newmean[3] = mean[3]
        newmean[4] = b3 * phi
        newmean[5] = k6 * phi + a2 * c0 * om + a2 * d0 * mean[2] + mean[4] + a2 * mean[6]
        newmean[6] = k7 * phi + a1 * c0 * om + (d1 + a1 * d0) * mean[2] + mean[5] + a1 * mean[6]
        for i in range(7):
            mean[i] = newmean[i]

        # covariance propagation: P = A P A^T + Q, resymmetrized
        for i in range(7):
            for j in range(7):
                s = 0.0
                for k in range(7):
                    s += A[i * 7 + k] * P[k * 7 + j]
                T[i * 7 + j] = s
        for i in range(7):
            for j in range(7):
                s = qmat[i, j]
                for k in range(7):
                    s += T[i * 7 + k] * A[j * 7 + k]
                P[i * 7 + j] = s
        for i in range(7):
            for j in range(i + 1, 7):
                s = 0.5 * (P[i * 7 + j] + P[j * 7 + i])
                P[i * 7 + j] = s
                P[j * 7 + i] = s
        scale = 0.0
        for i in range(7):
            scale += P[i * 7 + i]
        scale = scale / 7.0
        if scale < 1.0:
            scale = 1.0
        for i in range(49):
            T[i] = P[i]
        for i in range(7):
            T[i * 7 + i] += 1e-10 * scale
        if _cholesky(T, L7, 7):
            return 3

        # measurement jacobian / prediction at the propagated mean
        if mean[0] <= 0.0:
            return 4
        x1 = mean[0] if mean[0] > v_floor else v_floor
        for i in range(21):
            C[i] = 0.0
        C[0 * 7 + 0] = 1.0
        C[1 * 7 + 1] = 1.0
        C[1 * 7 + 3] = 1.0
        if use_human:
            if paper_mode:
                C[2 * 7 + 1] = b0 / near + c0 / far
                C[2 * 7 + 2] = (b0 + c0) / x1 + d0
            else:
                _angle_grads(x1, mean[1], mean[2], near, far, dphi, dom)
                for j in range(3):
                    C[2 * 7 + j] = b0 * dphi[j] + c0 * dom[j]
                C[2 * 7 + 2] += d0
            C[2 * 7 + 6] = 1.0
        heading = atan(mean[2] / x1)
        phi = heading + atan(mean[1] / near)
        om = heading + atan(mean[1] / far)
        zhat[0] = mean[0]
        zhat[1] = mean[1] + mean[3]
        zhat[2] = mean[6] + b0 * phi + c0 * om + d0 * mean[2]
        for i in range(m):
            resid[i] = z[i] - zhat[i]

        # innovation covariance rho = C P C^T + R
        for i in range(7):
            for j in range(m):
                s = 0.0
                for k in range(7):
                    s += P[i * 7 + k] * C[j * 7 + k]
                PCt[i * 3 + j] = s
        for i in range(m):
            for j in range(m):
                s = rmat[i, j]
                for k in range(7):
                    s += C[i * 7 + k] * PCt[k * 3 + j]
                rho[i * 3 + j] = s
        # compact m x m copy for cholesky
        for i in range(m):
            for j in range(m):
                T[i * m + j] = rho[i * 3 + j]
        if _cholesky(T, Lm, m):
            return 1
        log_det = 0.0
        for i in range(m):
            log_det += 2.0 * log(Lm[i * m + i])
        # quad = resid^T rho^-1 resid via forward solve
        for i in range(m):
            s = resid[i]
            for k in range(i):
                s -= Lm[i * m + k] * ybuf[k]
            ybuf[i] = s / Lm[i * m + i]
        quad = 0.0
        for i in range(m):
            quad += ybuf[i] * ybuf[i]
        # rho_inv via cholesky solves against identity columns
        for col in range(m):
            for i in range(m):
                s = 1.0 if i == col else 0.0
                for k in range(i):
                    s -= Lm[i * m + k] * ybuf[k]
                ybuf[i] = s / Lm[i * m + i]
            for i in range(m - 1, -1, -1):
                s = ybuf[i]
                for k in range(i + 1, m):
                    s -= Lm[k * m + i] * xbuf[k]
                xbuf[i] = s / Lm[i * m + i]
            for i in range(m):
                rhoinv[i * 3 + col] = xbuf[i]

        # gain G = P C^T rho^-1  (7 x m)
        for i in range(7):
            for j in range(m):
                s = 0.0
                for k in range(m):
                    s += PCt[i * 3 + k] * rhoinv[k * 3 + j]
                G[i * 3 + j] = s
        for i in range(m):
            resid[i] = z[i] - zhat[i]
        for i in range(7):
            s = 0.0
            for k in range(m):
                s += G[i * 3 + k] * resid[k]
            mean[i] += s

        # Joseph form: P = (I-GC) P (I-GC)^T + G R G^T
        for i in range(7):
            for j in range(7):
                s = 1.0 if i == j else 0.0
                for k in range(m):
                    s -= G[i * 3 + k] * C[k * 7 + j]
                A[i * 7 + j] = s  # reuse A as I-GC
        for i in range(7):
            for j in range(7):
                s = 0.0
                for k in range(7):
                    s += A[i * 7 + k] * P[k * 7 + j]
                T[i * 7 + j] = s
        for i in range(7):
            for j in range(7):
                s = 0.0
                for k in range(7):
                    s += T[i * 7 + k] * A[j * 7 + k]
                P[i * 7 + j] = s
        for i in range(7):
            for j in range(m):
                s = 0.0
                for k in range(m):
                    s += G[i * 3 + k] * rmat[k, j]
                CP[i * 3 + j] = s  # reuse CP as G R
        for i in range(7):
            for j in range(7):
                s = 0.0
                for k in range(m):
                    s += CP[i * 3 + k] * G[j * 3 + k]
                P[i * 7 + j] += s
        for i in range(7):
            for j in range(i + 1, 7):
                s = 0.5 * (P[i * 7 + j] + P[j * 7 + i])
                P[i * 7 + j] = s
                P[j * 7 + i] = s
        scale = 0.0
        for i in range(7):
            scale += P[i * 7 + i]
        scale = scale / 7.0
        if scale < 1.0:
            scale = 1.0
        for i in range(49):
            T[i] = P[i]
        for i in range(7):
            T[i * 7 + i] += 1e-10 * scale
        if _cholesky(T, L7, 7):
            return 3

        # log likelihood (log-space normalization keeps ratios through underflow)
        if weights[ci] > 0.0:
            liks[ci] = log(weights[ci]) - 0.5 * (quad + log_det + m * log(2.0 * M_PI))
        else:
            liks[ci] = -INFINITY

        for i in range(7):
            means[ci, i] = mean[i]
        for i in range(7):
            for j in range(7):
                covs[ci, i, j] = P[i * 7 + j]

    peak = -INFINITY
    for ci in range(ncomp):
        if liks[ci] > peak:
            peak = liks[ci]
    if not isfinite(peak):
        return 2
    total = 0.0
    for ci in range(ncomp):
        liks[ci] = exp(liks[ci] - peak)
        if liks[ci] < weight_floor:
            liks[ci] = weight_floor
        total += liks[ci]
    for ci in range(ncomp):
        weights[ci] = liks[ci] / total
    return 0
