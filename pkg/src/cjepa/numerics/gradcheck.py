"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradReport:
    """Per-parameter max relative error |a-n| / max(|a|,|n|,1e-8)."""

    step: float
    per_param: dict = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values(), default=0.0)


def grad_check(closure, store, step=1e-5, max_entries=64, rng=None):
    """Compare analytic gradients of ``closure`` against central differences.

    ``closure()`` must rebuild the forward pass from the current store values
    and return a scalar loss Tensor. Parameters with more than ``max_entries``
    entries are subsampled (at least 64 entries each). Always returns a
    report, never raises on mismatch.
    """
    if not (0.0 < step <= 1e-2):
        raise ValueError(f"step must be in (0, 1e-2], got {step}")
    if rng is None:
        rng = np.random.default_rng(0)
    store.zero_grad()
    loss = closure()
    loss.backward()
    analytic = {n: (t.grad.copy() if t.grad is not None
                    else np.zeros_like(t.data))
                for n, t in store.items()}
    store.zero_grad()

    report = GradReport(step=step)
    for name, p in store.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if n > max_entries:
            idx = rng.choice(n, size=max(64, max_entries), replace=False)
        else:
            idx = np.arange(n)
        a_flat = analytic[name].reshape(-1)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = closure().item()
            flat[i] = orig - step
            down = closure().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = a_flat[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > worst:
                worst = rel
        report.per_param[name] = worst
    return report
