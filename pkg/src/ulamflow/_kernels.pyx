# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled RK4 particle kernels.

Arithmetic mirrors ``integrate.rk4_numpy`` operation for operation so that
both backends produce the same bits on IEEE hardware (no fast-math).
"""
from libc.math cimport cos, fmod, floor

cdef double PI = 3.141592653589793
cdef double DEG2RAD = PI / 180.0
cdef double RAD_PER_S_TO_DEG_PER_H = 3600.0 * 180.0 / PI


cdef inline double _pymod(double a, double b) noexcept nogil:
    cdef double r = fmod(a, b)
    if r != 0.0 and ((r < 0.0) != (b < 0.0)):
        r += b
    return r


cdef inline double _alpha(double t) noexcept nogil:
    cdef double s = _pymod(t, 100.0)
    cdef double c
    if s > 10.0 and s < 40.0:
        c = cos((s - 10.0) * PI / 60.0)
        return c * c
    if s >= 40.0 and s <= 60.0:
        return 0.0
    if s > 60.0 and s < 90.0:
        c = cos((s - 30.0) * PI / 60.0)
        return c * c
    return 1.0


def forcing_table(double t, double h, int nsub, int kind, double gamma):
    """Forcing at the three distinct RK4 stage times of every substep."""
    import numpy as np
    out = np.empty((nsub, 3))
    cdef double[:, ::1] o = out
    cdef int i, s
    cdef double ti, tt, c
    for i in range(nsub):
        ti = t + i * h
        for s in range(3):
            tt = ti + (0.5 * h if s == 1 else (h if s == 2 else 0.0))
            o[i, s] = _alpha(tt)
            if kind == 1:
                c = cos(10.0 * tt)
                o[i, s] = o[i, s] + gamma * (c * c)
    return out


cdef inline double _dw(double x, double a) noexcept nogil:
    return x * (x / 2.0 + a) * (a - x / 2.0)


cdef inline bint _check(double *x, const double[::1] lo, const double[::1] hi,
                        const unsigned char[::1] per, int bounded) noexcept nogil:
    """Wrap periodic axes in place; return True if the point is inside."""
    cdef int d
    for d in range(2):
        if per[d]:
            x[d] = lo[d] + _pymod(x[d] - lo[d], hi[d] - lo[d])
        elif bounded and (x[d] < lo[d] or x[d] > hi[d]):
            return False
    return True


def rk4_double_well(double[:, ::1] pts, unsigned char[::1] escaped,
                    const double[:, ::1] forcing, double h,
                    const double[::1] lo, const double[::1] hi,
                    const unsigned char[::1] per, int bounded):
    """Advance double-well particles in place; returns count of non-finite states."""
    cdef Py_ssize_t p, P = pts.shape[0]
    cdef int i, nsub = forcing.shape[0]
    cdef double x, y, a1, a2, a3, hh = 0.5 * h, h6 = h / 6.0
    cdef double k1x, k1y, k2x, k2y, k3x, k3y, k4x, k4y
    cdef double xn[2]
    cdef int bad = 0
    with nogil:
        for p in range(P):
            if escaped[p]:
                continue
            xn[0] = pts[p, 0]
            xn[1] = pts[p, 1]
            if bounded and not _check(xn, lo, hi, per, bounded):
                escaped[p] = 1
                continue
            x = pts[p, 0]
            y = pts[p, 1]
            for i in range(nsub):
                a1 = forcing[i, 0]
                a2 = forcing[i, 1]
                a3 = forcing[i, 2]
                k1x = y
                k1y = _dw(x, a1)
                k2x = y + hh * k1y
                k2y = _dw(x + hh * k1x, a2)
                k3x = y + hh * k2y
                k3y = _dw(x + hh * k2x, a2)
                k4x = y + h * k3y
                k4y = _dw(x + h * k3x, a3)
                xn[0] = x + h6 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
                xn[1] = y + h6 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
                if not (xn[0] - xn[0] == 0.0 and xn[1] - xn[1] == 0.0):
                    bad += 1
                    escaped[p] = 1
                    break
                if bounded and not _check(xn, lo, hi, per, bounded):
                    escaped[p] = 1
                    break
                x = xn[0]
                y = xn[1]
            pts[p, 0] = x
            pts[p, 1] = y
    return bad


cdef inline bint _grid_vel(double lon, double lat, int it, double ft,
                           const double[:, :, ::1] u, const double[:, :, ::1] v,
                           double lon0, double dlon, double lat0, double dlat,
                           double lat_lo, double lat_hi, double radius,
                           double *out) noexcept nogil:
    cdef Py_ssize_t nlat = u.shape[1], nlon = u.shape[2]
    cdef double yy, fy, xx, fx, fl, a, b, u0, u1, v0, v1, uu, vv, coslat
    cdef Py_ssize_t iy, ix, ix1
    if not (lat >= lat_lo and lat <= lat_hi):
        return False
    yy = (lat - lat0) / dlat
    iy = <Py_ssize_t>floor(yy)
    if iy < 0:
        iy = 0
    if iy > nlat - 2:
        iy = nlat - 2
    fy = yy - iy
    xx = _pymod(lon - lon0, 360.0) / dlon
    fl = floor(xx)
    ix = (<Py_ssize_t>fl) % nlon
    fx = xx - fl
    ix1 = (ix + 1) % nlon

    a = u[it, iy, ix] * (1 - fx) + u[it, iy, ix1] * fx
    b = u[it, iy + 1, ix] * (1 - fx) + u[it, iy + 1, ix1] * fx
    u0 = a * (1 - fy) + b * fy
    a = u[it + 1, iy, ix] * (1 - fx) + u[it + 1, iy, ix1] * fx
    b = u[it + 1, iy + 1, ix] * (1 - fx) + u[it + 1, iy + 1, ix1] * fx
    u1 = a * (1 - fy) + b * fy
    a = v[it, iy, ix] * (1 - fx) + v[it, iy, ix1] * fx
    b = v[it, iy + 1, ix] * (1 - fx) + v[it, iy + 1, ix1] * fx
    v0 = a * (1 - fy) + b * fy
    a = v[it + 1, iy, ix] * (1 - fx) + v[it + 1, iy, ix1] * fx
    b = v[it + 1, iy + 1, ix] * (1 - fx) + v[it + 1, iy + 1, ix1] * fx
    v1 = a * (1 - fy) + b * fy
    uu = u0 * (1 - ft) + u1 * ft
    vv = v0 * (1 - ft) + v1 * ft
    coslat = cos(lat * DEG2RAD)
    out[0] = uu / (radius * coslat) * RAD_PER_S_TO_DEG_PER_H
    out[1] = vv / radius * RAD_PER_S_TO_DEG_PER_H
    return True


def rk4_gridded(double[:, ::1] pts, unsigned char[::1] escaped,
                const long[:, ::1] frame, const double[:, ::1] frac, double h,
                const double[:, :, ::1] u, const double[:, :, ::1] v,
                double lon0, double dlon, double lat0, double dlat,
                double lat_lo, double lat_hi, double radius,
                const double[::1] lo, const double[::1] hi,
                const unsigned char[::1] per, int bounded):
    """Advance particles through a gridded field in place.

    ``frame``/``frac`` hold the lower time index and fraction for the three
    stage times of each substep; a latitude outside the data at any stage
    marks the particle escaped.
    """
    cdef Py_ssize_t p, P = pts.shape[0]
    cdef int i, nsub = frame.shape[0]
    cdef double hh = 0.5 * h, h6 = h / 6.0
    cdef double k1[2]
    cdef double k2[2]
    cdef double k3[2]
    cdef double k4[2]
    cdef double xn[2]
    cdef double x, y
    cdef int bad = 0
    with nogil:
        for p in range(P):
            if escaped[p]:
                continue
            xn[0] = pts[p, 0]
            xn[1] = pts[p, 1]
            if bounded and not _check(xn, lo, hi, per, bounded):
                escaped[p] = 1
                continue
            x = pts[p, 0]
            y = pts[p, 1]
            for i in range(nsub):
                if not _grid_vel(x, y, frame[i, 0], frac[i, 0], u, v, lon0, dlon,
                                 lat0, dlat, lat_lo, lat_hi, radius, k1):
                    escaped[p] = 1
                    break
                if not _grid_vel(x + hh * k1[0], y + hh * k1[1], frame[i, 1], frac[i, 1],
                                 u, v, lon0, dlon, lat0, dlat, lat_lo, lat_hi, radius, k2):
                    escaped[p] = 1
                    break
                if not _grid_vel(x + hh * k2[0], y + hh * k2[1], frame[i, 1], frac[i, 1],
                                 u, v, lon0, dlon, lat0, dlat, lat_lo, lat_hi, radius, k3):
                    escaped[p] = 1
                    break
                if not _grid_vel(x + h * k3[0], y + h * k3[1], frame[i, 2], frac[i, 2],
                                 u, v, lon0, dlon, lat0, dlat, lat_lo, lat_hi, radius, k4):
                    escaped[p] = 1
                    break
                xn[0] = x + h6 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
                xn[1] = y + h6 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
                if not (xn[0] - xn[0] == 0.0 and xn[1] - xn[1] == 0.0):
                    bad += 1
                    escaped[p] = 1
                    break
                if bounded and not _check(xn, lo, hi, per, bounded):
                    escaped[p] = 1
                    break
                x = xn[0]
                y = xn[1]
            pts[p, 0] = x
            pts[p, 1] = y
    return bad
