"""Central finite-difference verification of recorded gradients."""

import numpy as np

from .tensor import Tensor, no_grad


class NonDeterminismError(RuntimeError):
    """The checked function returned different values for identical parameters."""


def finite_difference_check(f, params, h=1e-5, floor=None, max_entries=None, seed=0):
    """Worst relative error between autodiff gradients and central differences.

    ``f`` is a zero-argument callable that rebuilds the graph and returns a
    scalar :class:`Tensor`.  With ``max_entries`` set, at most that many
    entries of each parameter are probed (chosen with ``seed``).

    Gradients below ``floor`` in magnitude count as zero.  The default,
    ``1e-6 * max(|f|, 1)``, sits well above central-difference roundoff
    (about ``eps * |f| / h``), so structurally zero entries do not register
    as relative errors.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = f()
    loss.backward()
    analytic = [
        np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params
    ]
    with no_grad():
        a = _value(f)
        b = _value(f)
    if a != b:
        raise NonDeterminismError(f"f evaluated twice gave {a!r} and {b!r}")
    if floor is None:
        floor = 1e-6 * max(abs(a), 1.0)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for i in idx:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                fp = _value(f)
                flat[i] = orig - h
                fm = _value(f)
                flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            ana = float(gflat[i])
            err = abs(num - ana) / max(abs(num), abs(ana), floor)
            worst = max(worst, err)
    return worst


def _value(f):
    out = f()
    if not isinstance(out, Tensor):
        raise TypeError("checked function must return a Tensor")
    return float(out.data)
