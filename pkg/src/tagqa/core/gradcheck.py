"""Central finite-difference verification of autograd gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    n_checked: int
    tolerance: float
    worst: str = ""

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def finite_difference_check(
    f,
    params,
    tolerance: float = 1e-4,
    h: float = 1e-5,
    max_entries_per_param: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare autograd gradients of scalar ``f()`` with central differences.

    ``params`` is a Tensor, a list of Tensors or a name->Tensor dict; ``f``
    takes no arguments and closes over them. Relative error per entry is
    ``|a - n| / max(|a|, |n|, floor)``. With ``max_entries_per_param`` set, a
    seeded random subset of each parameter's entries is probed.
    """
    if isinstance(params, Tensor):
        named = {"x": params}
    elif isinstance(params, dict):
        named = dict(params)
    else:
        named = {f"p{i}": p for i, p in enumerate(params)}

    for p in named.values():
        p.requires_grad = True
        p.grad = None
    loss = f()
    loss.backward()
    analytic = {
        k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for k, p in named.items()
    }

    rng = np.random.default_rng(seed)
    max_rel = max_abs = 0.0
    worst = ""
    n = 0
    with no_grad():
        for name, p in named.items():
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries_per_param is not None and flat.size > max_entries_per_param:
                idx = np.sort(rng.choice(flat.size, max_entries_per_param, replace=False))
            ga = analytic[name].reshape(-1)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f().data)
                flat[i] = orig - h
                fm = float(f().data)
                flat[i] = orig
                num = (fp - fm) / (2.0 * h)
                err = abs(ga[i] - num)
                rel = err / max(abs(ga[i]), abs(num), floor)
                n += 1
                max_abs = max(max_abs, err)
                if rel > max_rel:
                    max_rel = rel
                    worst = f"{name}[{int(i)}]"
    return GradCheckReport(max_rel, max_abs, n, tolerance, worst)
