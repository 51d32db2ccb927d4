"""Fixed-step classical Runge-Kutta integration over flat state vectors.

One integrator serves every ODE in the package so that reductions between
models (single-type vs multi-type, single-phase vs multi-phase) compare
trajectories produced by bitwise-identical stepping code.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import IntegrationError

__all__ = ["rk4"]


def rk4(rhs, x0, dt, n_steps, *, out_every=0, sections=None, renorm_tol=1e-12):
    """Integrate ``dx/dt = rhs(x)`` with fixed-step RK4.

    Parameters
    ----------
    rhs : callable
        Maps a state vector to its derivative (same shape).
    x0 : array_like
        Initial state.
    dt : float
        Step size.
    n_steps : int
        Number of steps; final time is ``n_steps * dt``.
    out_every : int
        Record the state every ``out_every`` steps (0 records only the
        endpoints).  The final state is always recorded.
    sections : list of (start, stop, target), optional
        Conserved-mass sections.  After each step the sum over
        ``x[start:stop]`` is rescaled to ``target`` whenever it drifts by
        more than ``renorm_tol``; a non-finite sum aborts with the step index.

    Returns
    -------
    times : ndarray
        Recorded times, starting at 0.
    states : ndarray, shape (len(times), len(x0))
    """
    x = np.array(x0, dtype=float)
    if sections is None:
        sections = [(0, x.size, float(x.sum()))]
    times = [0.0]
    states = [x.copy()]
    sixth = dt / 6.0
    half = dt / 2.0
    for step in range(1, n_steps + 1):
        k1 = rhs(x)
        k2 = rhs(x + half * k1)
        k3 = rhs(x + half * k2)
        k4 = rhs(x + dt * k3)
        x = x + sixth * (k1 + 2.0 * (k2 + k3) + k4)
        for start, stop, target in sections:
            total = x[start:stop].sum()
            if not math.isfinite(total):
                raise IntegrationError(
                    f"state left the simplex (non-finite mass) at step {step}", step=step
                )
            if abs(total - target) > renorm_tol:
                x[start:stop] *= target / total
        if (out_every and step % out_every == 0) or step == n_steps:
            times.append(step * dt)
            states.append(x.copy())
    return np.asarray(times), np.asarray(states)
