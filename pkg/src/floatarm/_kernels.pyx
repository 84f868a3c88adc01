# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels; semantics follow ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, fabs, INFINITY, isfinite

cnp.import_array()

cdef enum:
    MAXJ = 16

cdef enum:
    C_SOLVED = 0
    C_MAX_ITER = 1
    C_INFEASIBLE = 2

STATUS_SOLVED = C_SOLVED
STATUS_MAX_ITER = C_MAX_ITER
STATUS_INFEASIBLE = C_INFEASIBLE


cdef inline void cross(const double* a, const double* b, double* out) noexcept nogil:
    cdef double x = a[1] * b[2] - a[2] * b[1]
    cdef double y = a[2] * b[0] - a[0] * b[2]
    cdef double z = a[0] * b[1] - a[1] * b[0]
    out[0] = x
    out[1] = y
    out[2] = z


cdef inline void matvec3(const double* R, const double* v, double* out) noexcept nogil:
    cdef double x = R[0] * v[0] + R[1] * v[1] + R[2] * v[2]
    cdef double y = R[3] * v[0] + R[4] * v[1] + R[5] * v[2]
    cdef double z = R[6] * v[0] + R[7] * v[1] + R[8] * v[2]
    out[0] = x
    out[1] = y
    out[2] = z


cdef inline void matTvec3(const double* R, const double* v, double* out) noexcept nogil:
    cdef double x = R[0] * v[0] + R[3] * v[1] + R[6] * v[2]
    cdef double y = R[1] * v[0] + R[4] * v[1] + R[7] * v[2]
    cdef double z = R[2] * v[0] + R[5] * v[1] + R[8] * v[2]
    out[0] = x
    out[1] = y
    out[2] = z


cdef inline void axis_rot(const double* a, double angle, double* out) noexcept nogil:
    cdef double x = a[0], y = a[1], z = a[2]
    cdef double c = cos(angle), s = sin(angle)
    cdef double C = 1.0 - c
    out[0] = c + x * x * C
    out[1] = x * y * C - z * s
    out[2] = x * z * C + y * s
    out[3] = y * x * C + z * s
    out[4] = c + y * y * C
    out[5] = y * z * C - x * s
    out[6] = z * x * C - y * s
    out[7] = z * y * C + x * s
    out[8] = c + z * z * C


cdef inline void matmul3(const double* A, const double* B, double* out) noexcept nogil:
    cdef int r, c
    for r in range(3):
        for c in range(3):
            out[3 * r + c] = A[3 * r] * B[c] + A[3 * r + 1] * B[3 + c] + A[3 * r + 2] * B[6 + c]


cdef void rnea_c(int n, const double* rot, const double* pos, const double* axes,
                 const double* mass, const double* com, const double* inertia,
                 const double* armature, const double* q, const double* qd,
                 const double* qdd, const double* w0, const double* dw0,
                 const double* dv0, double* tau) noexcept nogil:
    cdef double Rl[MAXJ * 9]
    cdef double F[MAXJ * 3]
    cdef double N[MAXJ * 3]
    cdef double Rj[9]
    cdef double w[3]
    cdef double dw[3]
    cdef double dv[3]
    cdef double t1[3]
    cdef double t2[3]
    cdef double t3[3]
    cdef double wp[3]
    cdef double f[3]
    cdef double nm[3]
    cdef double fc[3]
    cdef double Iw[3]
    cdef int i, k
    cdef const double* p
    cdef const double* a
    cdef const double* c
    cdef const double* I
    cdef double* R
    for k in range(3):
        w[k] = w0[k]
        dw[k] = dw0[k]
        dv[k] = dv0[k]
    for i in range(n):
        R = &Rl[9 * i]
        axis_rot(&axes[3 * i], q[i], Rj)
        matmul3(&rot[9 * i], Rj, R)
        p = &pos[3 * i]
        a = &axes[3 * i]
        # dv = R^T (dv + dw x p + w x (w x p))
        cross(dw, p, t1)
        cross(w, p, t2)
        cross(w, t2, t3)
        for k in range(3):
            t1[k] = dv[k] + t1[k] + t3[k]
        matTvec3(R, t1, dv)
        matTvec3(R, w, wp)
        for k in range(3):
            w[k] = wp[k] + qd[i] * a[k]
        # dw = R^T dw + qd (wp x a) + qdd a
        matTvec3(R, dw, t1)
        cross(wp, a, t2)
        for k in range(3):
            dw[k] = t1[k] + qd[i] * t2[k] + qdd[i] * a[k]
        c = &com[3 * i]
        cross(dw, c, t1)
        cross(w, c, t2)
        cross(w, t2, t3)
        for k in range(3):
            F[3 * i + k] = mass[i] * (dv[k] + t1[k] + t3[k])
        I = &inertia[9 * i]
        matvec3(I, dw, t1)
        matvec3(I, w, Iw)
        cross(w, Iw, t2)
        for k in range(3):
            N[3 * i + k] = t1[k] + t2[k]
    for k in range(3):
        f[k] = 0.0
        nm[k] = 0.0
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            R = &Rl[9 * (i + 1)]
            matvec3(R, f, fc)
            matvec3(R, nm, t1)
            cross(&pos[3 * (i + 1)], fc, t2)
            for k in range(3):
                nm[k] = t1[k] + t2[k]
                f[k] = fc[k]
        cross(&com[3 * i], &F[3 * i], t1)
        for k in range(3):
            nm[k] = nm[k] + N[3 * i + k] + t1[k]
            f[k] = f[k] + F[3 * i + k]
        a = &axes[3 * i]
        tau[i] = nm[0] * a[0] + nm[1] * a[1] + nm[2] * a[2] + armature[i] * qdd[i]


cdef int cholesky(int n, double* M) noexcept nogil:
    """In-place lower Cholesky of a row-major n x n matrix; returns 0 on failure."""
    cdef int i, j, k
    cdef double s
    for j in range(n):
        s = M[j * n + j]
        for k in range(j):
            s -= M[j * n + k] * M[j * n + k]
        if not (s > 0.0):
            return 0
        M[j * n + j] = sqrt(s)
        for i in range(j + 1, n):
            s = M[i * n + j]
            for k in range(j):
                s -= M[i * n + k] * M[j * n + k]
            M[i * n + j] = s / M[j * n + j]
    return 1


cdef void cho_solve(int n, const double* L, double* b) noexcept nogil:
    """Solve (L L^T) x = b in place, L lower triangular row-major."""
    cdef int i, k
    cdef double s
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i * n + k] * b[k]
        b[i] = s / L[i * n + i]
    for i in range(n - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, n):
            s -= L[k * n + i] * b[k]
        b[i] = s / L[i * n + i]


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def rnea(rot, pos, axes, mass, com, inertia, armature, q, qd, qdd, w0, dw0, dv0):
    """Recursive Newton-Euler joint torques for a base moving with (w0, dw0, dv0)."""
    cdef int n = len(q)
    if n > MAXJ:
        raise ValueError("too many joints")
    cdef const double[::1] r_ = _c(rot).ravel(), p_ = _c(pos).ravel(), a_ = _c(axes).ravel()
    cdef const double[::1] m_ = _c(mass), c_ = _c(com).ravel(), i_ = _c(inertia).ravel()
    cdef const double[::1] ar_ = _c(armature), q_ = _c(q), qd_ = _c(qd), qdd_ = _c(qdd)
    cdef const double[::1] w_ = _c(w0), dw_ = _c(dw0), dv_ = _c(dv0)
    out = np.empty(n)
    cdef double[::1] o_ = out
    rnea_c(n, &r_[0], &p_[0], &a_[0], &m_[0], &c_[0], &i_[0], &ar_[0], &q_[0], &qd_[0],
           &qdd_[0], &w_[0], &dw_[0], &dv_[0], &o_[0])
    return out


cdef void mass_matrix_c(int n, const double* rot, const double* pos, const double* axes,
                        const double* mass, const double* com, const double* inertia,
                        const double* armature, const double* q, double* M) noexcept nogil:
    cdef double zero[MAXJ]
    cdef double e[MAXJ]
    cdef double col[MAXJ]
    cdef double z3[3]
    cdef int i, j
    for i in range(n):
        zero[i] = 0.0
        e[i] = 0.0
    for i in range(3):
        z3[i] = 0.0
    for j in range(n):
        e[j] = 1.0
        rnea_c(n, rot, pos, axes, mass, com, inertia, armature, q, zero, e, z3, z3, z3, col)
        e[j] = 0.0
        for i in range(n):
            M[i * n + j] = col[i]


def mass_matrix(rot, pos, axes, mass, com, inertia, armature, q):
    """Joint-space inertia matrix by unit-acceleration probing of ``rnea``."""
    cdef int n = len(q)
    if n > MAXJ:
        raise ValueError("too many joints")
    cdef const double[::1] r_ = _c(rot).ravel(), p_ = _c(pos).ravel(), a_ = _c(axes).ravel()
    cdef const double[::1] m_ = _c(mass), c_ = _c(com).ravel(), i_ = _c(inertia).ravel()
    cdef const double[::1] ar_ = _c(armature), q_ = _c(q)
    M = np.empty((n, n))
    cdef double[:, ::1] M_ = M
    mass_matrix_c(n, &r_[0], &p_[0], &a_[0], &m_[0], &c_[0], &i_[0], &ar_[0], &q_[0], &M_[0, 0])
    return M


def forward_dynamics(rot, pos, axes, mass, com, inertia, armature, q, qd, tau, w0, dw0, dv0):
    """Joint accelerations ``M^-1 (tau - bias)``; raises ``LinAlgError`` if M is not SPD."""
    cdef int n = len(q)
    if n > MAXJ:
        raise ValueError("too many joints")
    cdef const double[::1] r_ = _c(rot).ravel(), p_ = _c(pos).ravel(), a_ = _c(axes).ravel()
    cdef const double[::1] m_ = _c(mass), c_ = _c(com).ravel(), i_ = _c(inertia).ravel()
    cdef const double[::1] ar_ = _c(armature), q_ = _c(q), qd_ = _c(qd), t_ = _c(tau)
    cdef const double[::1] w_ = _c(w0), dw_ = _c(dw0), dv_ = _c(dv0)
    cdef double M[MAXJ * MAXJ]
    cdef double zero[MAXJ]
    cdef double bias[MAXJ]
    cdef int i, j, ok
    out = np.empty(n)
    cdef double[::1] o_ = out
    with nogil:
        for i in range(n):
            zero[i] = 0.0
        rnea_c(n, &r_[0], &p_[0], &a_[0], &m_[0], &c_[0], &i_[0], &ar_[0], &q_[0], &qd_[0],
               zero, &w_[0], &dw_[0], &dv_[0], bias)
        mass_matrix_c(n, &r_[0], &p_[0], &a_[0], &m_[0], &c_[0], &i_[0], &ar_[0], &q_[0], M)
        for i in range(n):
            for j in range(i):
                M[i * n + j] = 0.5 * (M[i * n + j] + M[j * n + i])
        ok = cholesky(n, M)
        if ok:
            for i in range(n):
                o_[i] = t_[i] - bias[i]
            cho_solve(n, M, &o_[0])
    if not ok:
        raise np.linalg.LinAlgError("mass matrix is not positive definite")
    return out


cdef inline double clip(double v, double lo, double hi) noexcept nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


def admm(P, g, A, lb, ub, L, x, z, y, double rho, double sigma, double alpha,
         double eps_abs, double eps_rel, double eps_pinf, int max_iter, int check_every):
    """Operator-splitting iterations for ``min 1/2 x'Px + g'x  s.t. lb <= Ax <= ub``.

    ``L`` is the lower Cholesky factor of ``P + sigma I + rho A'A``. ``x``,
    ``z`` and ``y`` are updated in place (they must be contiguous float64).
    Returns ``(iterations, status, primal_residual, dual_residual)``.
    """
    cdef const double[:, ::1] P_ = _c(P), L_ = _c(L)
    cdef const double[::1] g_ = _c(g)
    cdef int n = P_.shape[0]
    A = _c(A).reshape(-1, n)
    cdef int m = A.shape[0]
    cdef const double[:, ::1] A_ = A
    cdef const double[::1] lb_ = _c(lb), ub_ = _c(ub)
    cdef double[::1] x_ = x, z_ = z, y_ = y
    cdef double[::1] rhs = np.empty(n), zt = np.empty(max(m, 1)), dy = np.empty(max(m, 1))
    cdef double[::1] tmp = np.empty(max(m, 1)), vn = np.empty(n), vn2 = np.empty(n)
    cdef int it = 0, i, j, status = C_MAX_ITER, done = 0
    cdef double s, zr, zn, rp = INFINITY, rd = INFINITY, ep, ed
    cdef double nAx, nz, nPx, nATy, ng, ndy, val
    cdef int infeas
    with nogil:
        ng = 0.0
        for i in range(n):
            if fabs(g_[i]) > ng:
                ng = fabs(g_[i])
        while it < max_iter and not done:
            it += 1
            for j in range(m):
                tmp[j] = rho * z_[j] - y_[j]
            for i in range(n):
                s = sigma * x_[i] - g_[i]
                for j in range(m):
                    s += A_[j, i] * tmp[j]
                rhs[i] = s
            cho_solve(n, &L_[0, 0], &rhs[0])
            for i in range(n):
                x_[i] = alpha * rhs[i] + (1.0 - alpha) * x_[i]
            for j in range(m):
                s = 0.0
                for i in range(n):
                    s += A_[j, i] * rhs[i]
                zr = alpha * s + (1.0 - alpha) * z_[j]
                zn = clip(zr + y_[j] / rho, lb_[j], ub_[j])
                dy[j] = rho * (zr - zn)
                y_[j] = y_[j] + dy[j]
                z_[j] = zn
            if it % check_every == 0 or it == max_iter:
                rp = 0.0
                nAx = 0.0
                nz = 0.0
                for j in range(m):
                    s = 0.0
                    for i in range(n):
                        s += A_[j, i] * x_[i]
                    if fabs(s - z_[j]) > rp:
                        rp = fabs(s - z_[j])
                    if fabs(s) > nAx:
                        nAx = fabs(s)
                    if fabs(z_[j]) > nz:
                        nz = fabs(z_[j])
                rd = 0.0
                nPx = 0.0
                nATy = 0.0
                for i in range(n):
                    s = 0.0
                    for j in range(n):
                        s += P_[i, j] * x_[j]
                    vn[i] = s
                    if fabs(s) > nPx:
                        nPx = fabs(s)
                    s = 0.0
                    for j in range(m):
                        s += A_[j, i] * y_[j]
                    vn2[i] = s
                    if fabs(s) > nATy:
                        nATy = fabs(s)
                    s = fabs(vn[i] + g_[i] + vn2[i])
                    if s > rd:
                        rd = s
                ep = eps_abs + eps_rel * (nAx if nAx > nz else nz)
                ed = nPx
                if nATy > ed:
                    ed = nATy
                if ng > ed:
                    ed = ng
                ed = eps_abs + eps_rel * ed
                if rp <= ep and rd <= ed:
                    status = C_SOLVED
                    done = 1
                elif m > 0:
                    infeas = 1
                    ndy = 0.0
                    for j in range(m):
                        if fabs(dy[j]) > ndy:
                            ndy = fabs(dy[j])
                    if ndy <= 1e-12:
                        infeas = 0
                    if infeas:
                        for i in range(n):
                            s = 0.0
                            for j in range(m):
                                s += A_[j, i] * dy[j]
                            if fabs(s) > eps_pinf * ndy:
                                infeas = 0
                                break
                    if infeas:
                        val = 0.0
                        for j in range(m):
                            if dy[j] > 0.0:
                                if not isfinite(ub_[j]):
                                    infeas = 0
                                    break
                                val += ub_[j] * dy[j]
                            elif dy[j] < 0.0:
                                if not isfinite(lb_[j]):
                                    infeas = 0
                                    break
                                val += lb_[j] * dy[j]
                        if infeas and val < -eps_pinf * ndy:
                            status = C_INFEASIBLE
                            done = 1
    return it, status, rp, rd


cdef inline double clamp_scale(double v) noexcept nogil:
    return 1.0 / sqrt(clip(v, 1e-4, 1e4))


def equilibrate(P, g, A, int iters):
    """Modified Ruiz scaling: returns ``(D, E, c, Ps, gs, As)``."""
    Ps = np.array(P, dtype=np.float64, order="C", copy=True)
    gs = np.array(g, dtype=np.float64, copy=True)
    cdef int n = Ps.shape[0]
    As = np.array(A, dtype=np.float64, order="C", copy=True).reshape(-1, n)
    cdef int m = As.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    cdef double[:, ::1] P_ = Ps, A_ = As
    cdef double[::1] g_ = gs, D_ = D, E_ = E
    cdef double[::1] dn = np.empty(n), em = np.empty(max(m, 1))
    cdef double c = 1.0, v, avg, gmax, cs, colmax
    cdef int it, i, j
    with nogil:
        for it in range(iters):
            for i in range(n):
                v = 0.0
                for j in range(n):
                    if fabs(P_[j, i]) > v:
                        v = fabs(P_[j, i])
                for j in range(m):
                    if fabs(A_[j, i]) > v:
                        v = fabs(A_[j, i])
                dn[i] = clamp_scale(v)
            # row and column factors both come from the current matrix
            for j in range(m):
                v = 0.0
                for i in range(n):
                    if fabs(A_[j, i]) > v:
                        v = fabs(A_[j, i])
                em[j] = clamp_scale(v)
            for i in range(n):
                for j in range(n):
                    P_[i, j] = dn[i] * P_[i, j] * dn[j]
                g_[i] = dn[i] * g_[i]
                D_[i] = D_[i] * dn[i]
            for j in range(m):
                for i in range(n):
                    A_[j, i] = em[j] * A_[j, i] * dn[i]
                E_[j] = E_[j] * em[j]
            avg = 0.0
            gmax = 0.0
            for i in range(n):
                colmax = 0.0
                for j in range(n):
                    if fabs(P_[j, i]) > colmax:
                        colmax = fabs(P_[j, i])
                avg += colmax
                if fabs(g_[i]) > gmax:
                    gmax = fabs(g_[i])
            if n > 0:
                avg /= n
            cs = 1.0 / clip(avg if avg > gmax else gmax, 1e-4, 1e4)
            for i in range(n):
                for j in range(n):
                    P_[i, j] = P_[i, j] * cs
                g_[i] = g_[i] * cs
            c *= cs
    return D, E, c, Ps, gs, As
