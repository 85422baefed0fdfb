"""Pure-numpy fallback for the compiled recurrence kernels."""
import numpy as np


def _scan(gate, drive):
    h = np.empty(gate.shape)
    prev = np.zeros(gate.shape[1])
    for t in range(gate.shape[0]):
        prev = gate[t] * prev + drive[t]
        h[t] = prev
    return h


def _adjoint(gate, grad_h):
    # accumulated adjoint of h, backwards through time
    acc = np.empty(gate.shape)
    carry = np.zeros(gate.shape[1])
    for t in range(gate.shape[0] - 1, -1, -1):
        carry = grad_h[t] + carry
        acc[t] = carry
        carry = carry * gate[t]
    return acc


def _flip_tail(v, n_fwd):
    # reverse time for the backward-running columns
    v = np.array(v, dtype=np.float64)
    v[:, n_fwd:] = v[::-1, n_fwd:]
    return v


def gated_scan(z, sz, a, n_fwd):
    z, sz, a = (_flip_tail(v, n_fwd) for v in (z, sz, a))
    return _flip_tail(_scan(a, (1.0 - a) * z * sz), n_fwd)


def gated_scan_backward(z, sz, a, h, grad_h, n_fwd):
    z, sz, a, h, grad_h = (_flip_tail(v, n_fwd) for v in (z, sz, a, h, grad_h))
    acc = _adjoint(a, grad_h)
    prev = np.zeros_like(h)
    prev[1:] = h[:-1]
    dzg = acc * (prev - z * sz) * a * (1.0 - a)
    dz = acc * (1.0 - a) * sz * (1.0 + z * (1.0 - sz))
    return _flip_tail(dz, n_fwd), _flip_tail(dzg, n_fwd)
