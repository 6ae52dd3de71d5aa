# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: Euler stepping through a postfix expression program,
windowed occupation sums and the discrete Tanaka sum."""
from libc.math cimport exp, log, sqrt, sin, cos, tanh, pow, floor, isfinite
from libc.stdlib cimport malloc, free

cdef enum:
    OP_CONST = 0
    OP_T = 1
    OP_X = 2
    OP_ADD = 3
    OP_SUB = 4
    OP_MUL = 5
    OP_DIV = 6
    OP_POW = 7
    OP_NEG = 8
    OP_EXP = 9
    OP_LOG = 10
    OP_SQRT = 11
    OP_SIN = 12
    OP_COS = 13
    OP_TANH = 14


cdef int run(const int[::1] ops, const double[::1] consts, double* stack,
             double t, double x, double* result) noexcept nogil:
    # returns 0 on success, 1 on a domain error
    cdef Py_ssize_t pc, sp = 0
    cdef int op
    cdef double a, b
    for pc in range(ops.shape[0]):
        op = ops[pc]
        if op == OP_CONST:
            stack[sp] = consts[pc]
            sp += 1
        elif op == OP_T:
            stack[sp] = t
            sp += 1
        elif op == OP_X:
            stack[sp] = x
            sp += 1
        elif op <= OP_POW:
            sp -= 1
            b = stack[sp]
            a = stack[sp - 1]
            if op == OP_ADD:
                a = a + b
            elif op == OP_SUB:
                a = a - b
            elif op == OP_MUL:
                a = a * b
            elif op == OP_DIV:
                if b == 0.0:
                    return 1
                a = a / b
            else:
                if a == 0.0 and b < 0:
                    return 1
                if a < 0 and b != floor(b):
                    return 1
                a = pow(a, b)
            stack[sp - 1] = a
        else:
            a = stack[sp - 1]
            if op == OP_NEG:
                a = -a
            elif op == OP_EXP:
                a = exp(a)
            elif op == OP_LOG:
                if a <= 0:
                    return 1
                a = log(a)
            elif op == OP_SQRT:
                if a < 0:
                    return 1
                a = sqrt(a)
            elif op == OP_SIN:
                a = sin(a)
            elif op == OP_COS:
                a = cos(a)
            else:
                a = tanh(a)
            stack[sp - 1] = a
    result[0] = stack[0]
    return 0


def euler(mu_prog, sig_prog, mu_f, sig_f, double x0, double T, Py_ssize_t n,
          const double[::1] z, double[::1] values, double[::1] qv, double[::1] drift):
    cdef const int[::1] mops = mu_prog[0]
    cdef const double[::1] mcs = mu_prog[1]
    cdef const int[::1] sops = sig_prog[0]
    cdef const double[::1] scs = sig_prog[1]
    cdef int depth = max(mu_prog[2], sig_prog[2]) + 1
    cdef double* stack = <double*> malloc(depth * sizeof(double))
    cdef double dt = T / n
    cdef double sqdt = sqrt(dt)
    cdef double x = x0, t, m, s
    cdef Py_ssize_t i
    cdef int status = 0
    cdef Py_ssize_t step = 0
    if stack == NULL:
        raise MemoryError()
    values[0] = x
    with nogil:
        for i in range(n):
            t = T * <double>i / <double>n
            if run(mops, mcs, stack, t, x, &m) or run(sops, scs, stack, t, x, &s):
                status = 1
                step = i
                break
            if not (isfinite(m) and isfinite(s)):
                status = 3
                step = i
                break
            if s < 0:
                status = 2
                step = i
                break
            drift[i] = m * dt
            qv[i] = s * s * dt
            x = x + (m * dt + s * (sqdt * z[i]))
            if not isfinite(x):
                status = 3
                step = i + 1
                break
            values[i + 1] = x
    free(stack)
    return status, step


def window_cumsum(const double[::1] y, const double[::1] w, double lo, double hi,
                  int mode, double[::1] out):
    cdef Py_ssize_t i, n = y.shape[0]
    cdef double acc = 0.0, v
    cdef bint inside
    with nogil:
        out[0] = 0.0
        for i in range(n):
            v = y[i]
            if mode == 0:
                inside = v >= lo and v < hi
            elif mode == 1:
                inside = v > lo and v <= hi
            else:
                inside = v > lo and v < hi
            acc = acc + (w[i] if inside else 0.0)
            out[i + 1] = acc


def tanaka_cumsum(const double[::1] x, double a, double[::1] out):
    cdef Py_ssize_t i, n = x.shape[0] - 1
    cdef double acc = 0.0, d, inc
    with nogil:
        out[0] = 0.0
        for i in range(n):
            d = x[i + 1] - a
            if x[i] > a:
                inc = 2.0 * (-d if -d > 0.0 else 0.0)
            else:
                inc = 2.0 * (d if d > 0.0 else 0.0)
            acc = acc + inc
            out[i + 1] = acc
