# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled synthesis kernel.

Fuses the per-sample fold kinematics (reference vibration, clamped
displacement field, trapezoid glottal area) with the waveguide loop
(glottal flow, noise gate, junction scatter, lip radiation, lung
reflection).  Arithmetic mirrors the pure-python path in
subvox.waveguide / subvox.kinematics operation for operation.
"""

import numpy as np

from libc.math cimport M_PI, fabs, isfinite, sin, sqrt


def simulate_kernel(double[:, ::1] xi0, double[::1] amp_y, double[::1] w_y,
                    double[::1] phi_z,
                    int M, double f_o, double eps_am, double eps_fm,
                    double phi_am, double phi_fm,
                    double[::1] nu, double delta, double re_coeff, double Re_c,
                    int k_sub, double gain_sub, int k_sup, double gain_sup,
                    double c, double rho, double A_e, double A_s, double P_L,
                    double lip_a1, double lip_po_g, double lip_br0,
                    double lip_br1,
                    double f_sim, double[::1] out_po, double[::1] out_area):
    """Run the synthesis loop; fills out_po and out_area.

    Returns -1 on success, else the index of the first sample where the
    state went non-finite.
    """
    cdef Py_ssize_t n = out_po.shape[0]
    cdef Py_ssize_t n_y = xi0.shape[0]
    cdef Py_ssize_t n_z = xi0.shape[1]
    cdef double[::1] r_z = np.empty(n_z)
    cdef double[::1] fwd_sub = np.zeros(k_sub)
    cdef double[::1] bwd_sub = np.zeros(k_sub)
    cdef double[::1] fwd_sup = np.zeros(k_sup)
    cdef double[::1] bwd_sup = np.zeros(k_sup)

    cdef double TWO_PI = 2.0 * M_PI
    cdef double a_star = (A_e * A_s) / (A_e + A_s)
    cdef double rc = rho * c
    cdef int idx_sub = 0, idx_sup = 0
    cdef double lip_w = 0.0
    cdef Py_ssize_t i, j, iy, jm
    cdef double t, base, psi, inner, area, v, m, f1, f3, denom
    cdef double m_prev, seg, pmax, dd, p1, p2
    cdef double h_y = w_y[0]
    cdef double f_s, b_L, f_r, b_e, u, u_g, un, f_e, b_s, f_L
    cdef double x, ke, ratio, dp, root, mag
    cdef double w_new, p_o, b_r

    for i in range(n):
        t = i / f_sim
        base = TWO_PI * f_o * t

        # reference vibration per vertical layer
        for j in range(n_z):
            psi = base - phi_z[j]
            if M == 1:
                r_z[j] = sin(psi)
            else:
                inner = psi / M
                r_z[j] = (1.0 + eps_am * sin(inner + phi_am)) \
                    * sin(psi + eps_fm * M * sin(inner + phi_fm))

        # projected width per y: minimum over z refined below the grid
        # scale (parabola through the minimum node and its neighbours on
        # the uniform grid), then the exact integral of the clamped
        # linear interpolant along y
        area = 0.0
        m_prev = 0.0
        for iy in range(n_y):
            m = 1e300
            jm = 0
            for j in range(n_z):
                v = xi0[iy, j] + amp_y[iy] * r_z[j]
                if v < m:
                    m = v
                    jm = j
            if 0 < jm < n_z - 1:
                f1 = xi0[iy, jm - 1] + amp_y[iy] * r_z[jm - 1]
                f3 = xi0[iy, jm + 1] + amp_y[iy] * r_z[jm + 1]
                denom = f1 - 2.0 * m + f3
                if denom > 0.0:
                    v = m - (f1 - f3) * (f1 - f3) / (8.0 * denom)
                    if v < m:
                        m = v
            if iy > 0:
                if (m_prev > 0.0) != (m > 0.0):
                    pmax = m_prev if m_prev > m else m
                    dd = m_prev - m
                    if dd < 0.0:
                        dd = -dd
                    seg = 0.5 * pmax * pmax / dd
                else:
                    p1 = m_prev if m_prev > 0.0 else 0.0
                    p2 = m if m > 0.0 else 0.0
                    seg = 0.5 * (p1 + p2)
                area += seg
            m_prev = m
        area = 2.0 * h_y * area
        out_area[i] = area

        # waves arriving at the ports this sample
        f_s = gain_sub * fwd_sub[idx_sub]
        b_L = gain_sub * bwd_sub[idx_sub]
        f_r = gain_sup * fwd_sup[idx_sup]
        b_e = gain_sup * bwd_sup[idx_sup]
        if not (isfinite(f_s) and isfinite(b_e)):
            return i

        # Bernoulli flow with pressure recovery, mirrored for negative drops
        if area <= 0.0:
            u = 0.0
        else:
            x = area / A_e
            ke = 2.0 * x * (1.0 - x)
            ratio = area / a_star
            dp = f_s - b_e
            root = sqrt(ratio * ratio
                        + 4.0 * (1.0 - ke) * fabs(dp) / (c * c * rho))
            mag = (area * c / (1.0 - ke)) * (root - ratio)
            if dp > 0.0:
                u = mag
            elif dp < 0.0:
                u = -mag
            else:
                u = 0.0

        if u * re_coeff > Re_c:
            un = nu[i]
        else:
            un = delta * nu[i]
        u_g = u + un

        f_e = b_e + (rc / A_e) * u_g
        b_s = f_s - (rc / A_s) * u_g

        w_new = f_r - lip_a1 * lip_w
        p_o = lip_po_g * (w_new - lip_w)
        b_r = lip_br0 * w_new + lip_br1 * lip_w
        lip_w = w_new

        f_L = 0.9 * P_L - 0.8 * b_L

        fwd_sub[idx_sub] = f_L
        bwd_sub[idx_sub] = b_s
        idx_sub = (idx_sub + 1) % k_sub
        fwd_sup[idx_sup] = f_e
        bwd_sup[idx_sup] = b_r
        idx_sup = (idx_sup + 1) % k_sup

        out_po[i] = p_o
        if not (isfinite(u_g) and isfinite(p_o)):
            return i
    return -1
