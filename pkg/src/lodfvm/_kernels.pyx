# Compiled Thomas sweeps over batches of contiguous lanes.
#
# Element (row j, lane l) of a batch lives at data[j*stride + l]; lane l uses
# the coefficients of substrate l % n_subs.  Every kernel drops the GIL so
# simulated ranks running in threads overlap on multi-core hosts.
#
# The arithmetic per element is exactly (d - a*p) / denom forward and
# d - c*x backward, evaluated in that order, so results are bitwise equal
# to the numpy fallback and to any split of the lanes into blocks.

cimport cython

BACKEND = "cython"


cdef inline void _fwd_first(double* cur, Py_ssize_t m, Py_ssize_t s0, Py_ssize_t n_subs,
                            const double* den) noexcept nogil:
    cdef Py_ssize_t i, s = s0
    if n_subs == 1:
        for i in range(m):
            cur[i] = cur[i] / den[0]
        return
    for i in range(m):
        cur[i] = cur[i] / den[s]
        s += 1
        if s == n_subs:
            s = 0


cdef inline void _fwd_row(double* cur, const double* prev, Py_ssize_t m, Py_ssize_t s0,
                          Py_ssize_t n_subs, const double* lower, const double* den) noexcept nogil:
    cdef Py_ssize_t i, s = s0
    if n_subs == 1:
        for i in range(m):
            cur[i] = (cur[i] - lower[0] * prev[i]) / den[0]
        return
    for i in range(m):
        cur[i] = (cur[i] - lower[s] * prev[i]) / den[s]
        s += 1
        if s == n_subs:
            s = 0


cdef inline void _bwd_row(double* cur, const double* nxt, Py_ssize_t m, Py_ssize_t s0,
                          Py_ssize_t n_subs, const double* cc) noexcept nogil:
    cdef Py_ssize_t i, s = s0
    if n_subs == 1:
        for i in range(m):
            cur[i] = cur[i] - cc[0] * nxt[i]
        return
    for i in range(m):
        cur[i] = cur[i] - cc[s] * nxt[i]
        s += 1
        if s == n_subs:
            s = 0


cdef void _forward(double* base, Py_ssize_t n, Py_ssize_t stride, Py_ssize_t lo, Py_ssize_t m,
                   Py_ssize_t n_subs, const double* lower, const double* denom,
                   const double* seed) noexcept nogil:
    cdef Py_ssize_t j
    cdef Py_ssize_t s0 = lo % n_subs
    cdef double* cur = base + lo
    if seed == NULL:
        _fwd_first(cur, m, s0, n_subs, denom)
    else:
        _fwd_row(cur, seed, m, s0, n_subs, lower, denom)
    for j in range(1, n):
        cur = base + j * stride + lo
        _fwd_row(cur, cur - stride, m, s0, n_subs, lower, denom + j * n_subs)


cdef void _backward(double* base, Py_ssize_t n, Py_ssize_t stride, Py_ssize_t lo, Py_ssize_t m,
                    Py_ssize_t n_subs, const double* cc, const double* seed) noexcept nogil:
    cdef Py_ssize_t j
    cdef Py_ssize_t s0 = lo % n_subs
    cdef double* cur
    if seed != NULL:
        cur = base + (n - 1) * stride + lo
        _bwd_row(cur, seed, m, s0, n_subs, cc + (n - 1) * n_subs)
    for j in range(n - 2, -1, -1):
        cur = base + j * stride + lo
        _bwd_row(cur, cur + stride, m, s0, n_subs, cc + j * n_subs)


def _check(Py_ssize_t size, Py_ssize_t n, Py_ssize_t stride, Py_ssize_t lo, Py_ssize_t hi,
           Py_ssize_t n_subs, Py_ssize_t coef_rows):
    if n < 1 or n_subs < 1 or lo < 0 or hi < lo or hi > stride:
        raise ValueError(f"bad sweep geometry n={n} stride={stride} lanes=[{lo},{hi})")
    if (n - 1) * stride + hi > size:
        raise ValueError("sweep runs past the end of the data buffer")
    if coef_rows < n:
        raise ValueError(f"{coef_rows} coefficient rows for a {n}-row sweep")


def forward_sweep(double[::1] data, Py_ssize_t n, Py_ssize_t stride, Py_ssize_t lane_lo,
                  Py_ssize_t lane_hi, Py_ssize_t n_subs, const double[::1] lower,
                  const double[:, ::1] denom, const double[::1] seed=None):
    """Forward elimination of rows 0..n-1 for lanes [lane_lo, lane_hi), in place.

    ``seed`` holds the eliminated values of the row preceding row 0; when
    absent, row 0 is the first row of the global line.
    """
    _check(data.shape[0], n, stride, lane_lo, lane_hi, n_subs, denom.shape[0])
    cdef Py_ssize_t m = lane_hi - lane_lo
    cdef const double* sp = NULL
    if m == 0:
        return
    if seed is not None:
        if seed.shape[0] != m:
            raise ValueError(f"seed holds {seed.shape[0]} values for {m} lanes")
        sp = &seed[0]
    with nogil:
        _forward(&data[0], n, stride, lane_lo, m, n_subs, &lower[0], &denom[0, 0], sp)


def backward_sweep(double[::1] data, Py_ssize_t n, Py_ssize_t stride, Py_ssize_t lane_lo,
                   Py_ssize_t lane_hi, Py_ssize_t n_subs, const double[:, ::1] constant_c,
                   const double[::1] seed=None):
    """Back substitution of rows n-1..0 for lanes [lane_lo, lane_hi), in place.

    ``seed`` holds the solved values of the row following row n-1; when
    absent, row n-1 is the last row of the global line and is already solved.
    """
    _check(data.shape[0], n, stride, lane_lo, lane_hi, n_subs, constant_c.shape[0])
    cdef Py_ssize_t m = lane_hi - lane_lo
    cdef const double* sp = NULL
    if m == 0:
        return
    if seed is not None:
        if seed.shape[0] != m:
            raise ValueError(f"seed holds {seed.shape[0]} values for {m} lanes")
        sp = &seed[0]
    with nogil:
        _backward(&data[0], n, stride, lane_lo, m, n_subs, &constant_c[0, 0], sp)


def solve_batch(double[::1] data, Py_ssize_t n_outer, Py_ssize_t outer_stride, Py_ssize_t n,
                Py_ssize_t stride, Py_ssize_t n_lanes, Py_ssize_t n_subs,
                const double[::1] lower, const double[:, ::1] denom,
                const double[:, ::1] constant_c):
    """Full solve of ``n_outer`` independent batches of lines.

    Batch o starts at data[o*outer_stride]; each holds lanes [0, n_lanes).
    """
    cdef Py_ssize_t o
    cdef double* base
    if n_outer <= 0 or n_lanes == 0:
        return
    _check(data.shape[0] - (n_outer - 1) * outer_stride, n, stride, 0, n_lanes, n_subs,
           min(denom.shape[0], constant_c.shape[0]))
    with nogil:
        for o in range(n_outer):
            base = &data[0] + o * outer_stride
            _forward(base, n, stride, 0, n_lanes, n_subs, &lower[0], &denom[0, 0], NULL)
            _backward(base, n, stride, 0, n_lanes, n_subs, &constant_c[0, 0], NULL)
