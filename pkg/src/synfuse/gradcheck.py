"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass
class GradReport:
    max_rel_error: float
    worst: str  # "name[index]" of the worst entry
    checked: int


def relative_error(analytic, numeric, floor=1e-6):
    """|a − n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from dividing by noise."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(loss_fn, tensors, h=1e-5, max_entries=None, rng=None, floor=1e-6):
    """Compare tape gradients of ``loss_fn()`` (a 1×1 Tensor) with central differences.

    ``tensors`` are leaves whose ``value`` arrays are perturbed in place; each must
    have ``requires_grad``. ``loss_fn`` has to be deterministic (reseed any dropout
    RNG inside it). With ``max_entries`` only that many random entries per tensor
    are probed.
    """
    for t in tensors:
        t.grad = np.zeros_like(t.value)
    with ad.Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    analytic = [t.grad.copy() for t in tensors]
    rng = rng if rng is not None else np.random.default_rng(0)

    worst, where, checked = 0.0, "", 0
    with ad.no_tape():
        for k, t in enumerate(tensors):
            flat = t.value.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, size=max_entries, replace=False)
            for i in idx:
                keep = flat[i]
                flat[i] = keep + h
                up = loss_fn().item()
                flat[i] = keep - h
                down = loss_fn().item()
                flat[i] = keep
                numeric = (up - down) / (2 * h)
                err = relative_error(analytic[k].reshape(-1)[i], numeric, floor)
                checked += 1
                if err > worst:
                    worst, where = err, f"{getattr(t, 'name', f'tensor{k}')}[{int(i)}]"
    return GradReport(worst, where, checked)
