"""Adversarial inputs for reconstruction networks.

The attack solves

    min_{z in [0,1]^n}  ||Phi(z) - target||^2 + lam * ||z - x_tilde||^2

with box-constrained L-BFGS (scipy's L-BFGS-B) or a projected-gradient
fallback, starting from ``x_tilde``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import nn
from .errors import ConfigError, ContractError, NumericalError

DENOISE_SIGMA = 25.0 / 255.0


@dataclass
class AttackConfig:
    lam: float = 0.5
    patch_size: int = 9
    max_iterations: int = 500
    rel_tol: float = 1e-7
    window: int = 10
    optimizer: str = "lbfgsb"  # or "pgd"
    memory: int = 10
    noise_sigma: float = DENOISE_SIGMA
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.patch_size < 0:
            raise ConfigError("patch_size must be non-negative")
        if self.optimizer not in ("lbfgsb", "pgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class AttackResult:
    x_adv: np.ndarray
    trace: list = field(default_factory=list)  # objective at every accepted iterate, start included
    n_evals: int = 0

    @property
    def initial(self) -> float:
        return self.trace[0]

    @property
    def final(self) -> float:
        return self.trace[-1]


def patch_size_for(task: str, image_side: int) -> int:
    """Patch side keeping the area ratio of a 50-px patch on full-size data."""
    ref = {"ct": 512, "denoise": 181}[task]
    return int(round(50 / ref * image_side))


def random_patch(shape, size, rng):
    h, w = shape[:2]
    if size > min(h, w):
        raise ContractError(f"patch of size {size} does not fit into {h}x{w}")
    mask = np.zeros(shape[:2], dtype=bool)
    if size == 0:
        return mask
    i = rng.integers(0, h - size + 1)
    j = rng.integers(0, w - size + 1)
    mask[i:i + size, j:j + size] = True
    return mask


def adv_target_denoise(x_rec, cfg: AttackConfig):
    """Reconstruction with Gaussian noise added inside a random square patch.

    Returns ``(target, mask)``; the target is clipped to [0, 1] and equals
    ``x_rec`` bitwise outside the mask.
    """
    x_rec = np.asarray(x_rec, dtype=np.float64)
    rng = np.random.default_rng([cfg.seed, 1])
    mask = random_patch(x_rec.shape, cfg.patch_size, rng)
    noise = cfg.noise_sigma * rng.standard_normal(x_rec.shape)
    target = x_rec.copy()
    target[mask] = np.clip(x_rec[mask] + noise[mask], 0.0, 1.0)
    return target, mask


def adv_target_ct(x_rec, cfg: AttackConfig):
    """Subtract 1.5 times the image mean inside a random square (no clipping)."""
    x_rec = np.asarray(x_rec, dtype=np.float64)
    if not np.all(np.isfinite(x_rec)):
        raise ContractError("x_rec must be finite")
    rng = np.random.default_rng([cfg.seed, 2])
    mask = random_patch(x_rec.shape, cfg.patch_size, rng)
    target = x_rec.copy()
    target[mask] = x_rec[mask] - 1.5 * x_rec.mean()
    return target, mask


def attack_objective(spec, params, x_tilde, target, lam):
    """Objective and gradient closure over flat vectors.

    Images are ``(H, W)`` or ``(H, W, C)``.  When the network emits more
    channels than the target (a ProbOut head) only the leading channels are
    compared.
    """
    shape = np.shape(x_tilde)
    img_shape = shape if len(shape) == 3 else (*shape, 1)
    tgt = np.asarray(target, dtype=np.float64).reshape(img_shape)
    x0 = np.asarray(x_tilde, dtype=np.float64).reshape(-1)
    c = tgt.shape[-1]

    def fun(z):
        zb = z.reshape(1, *img_shape)
        out, tr = nn.forward(spec, params, zb, record=True)
        r = out[0, ..., :c] - tgt
        d = z - x0
        f = float(np.sum(r * r) + lam * np.dot(d, d))
        g_out = np.zeros_like(out)
        g_out[0, ..., :c] = 2 * r
        _, gx = nn.backward(spec, params, tr, g_out)
        g = gx.reshape(-1) + 2 * lam * d
        return f, g

    return fun


class _Stop(Exception):
    pass


def _converged(trace, window, rel_tol):
    if len(trace) <= window:
        return False
    old, new = trace[-window - 1], trace[-1]
    return old - new <= rel_tol * max(abs(old), 1e-300)


def find_adversarial_input(spec, params, x_tilde, target, cfg: AttackConfig) -> AttackResult:
    """Minimise the attack objective over the unit box, starting at ``x_tilde``.

    Stops after ``cfg.max_iterations`` accepted iterates or when the
    objective decreased by less than ``cfg.rel_tol`` (relative) over the
    last ``cfg.window`` iterates.  Returns the best feasible iterate.
    """
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    if x_tilde.min() < 0 or x_tilde.max() > 1:
        raise ContractError("x_tilde must lie in [0, 1]")
    fun = attack_objective(spec, params, x_tilde, target, cfg.lam)
    x0 = x_tilde.reshape(-1).copy()
    f0, g0 = fun(x0)
    if not np.isfinite(f0):
        raise NumericalError("attack objective is not finite at the start point", state=x0)
    if cfg.optimizer == "pgd":
        x, trace, evals = _projected_gradient(fun, x0, f0, g0, cfg)
    else:
        x, trace, evals = _lbfgsb(fun, x0, f0, cfg)
    x = np.clip(x, 0.0, 1.0)
    return AttackResult(x.reshape(x_tilde.shape), trace, evals)


def _lbfgsb(fun, x0, f0, cfg):
    trace = [f0]
    best = {"x": x0.copy(), "f": f0}
    evals = [1]

    def wrapped(z):
        f, g = fun(z)
        evals[0] += 1
        if not np.isfinite(f):
            raise NumericalError("attack objective became non-finite", state=z.copy())
        return f, g

    def callback(intermediate_result):
        f = float(intermediate_result.fun)
        if f <= best["f"]:
            best["x"], best["f"] = intermediate_result.x.copy(), f
        trace.append(best["f"])
        if f == 0.0 or _converged(trace, cfg.window, cfg.rel_tol):
            raise StopIteration

    if cfg.max_iterations > 0 and f0 > 0:
        minimize(
            wrapped,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=[(0.0, 1.0)] * x0.size,
            callback=callback,
            options={"maxiter": cfg.max_iterations, "maxcor": cfg.memory, "ftol": 0.0, "gtol": 1e-12,
                     "maxfun": 20 * max(cfg.max_iterations, 1)},
        )
    return best["x"], trace, evals[0]


def _projected_gradient(fun, x, f, g, cfg):
    """Projected gradient with Barzilai-Borwein steps and Armijo backtracking."""
    trace = [f]
    evals = 1
    step = 1.0 / max(np.linalg.norm(g), 1e-12)
    for _ in range(cfg.max_iterations):
        if f == 0.0:
            break
        while True:
            x_new = np.clip(x - step * g, 0.0, 1.0)
            d = x_new - x
            f_new, g_new = fun(x_new)
            evals += 1
            if not np.isfinite(f_new):
                raise NumericalError("attack objective became non-finite", state=x_new)
            if f_new <= f + 1e-4 * np.dot(g, d) or step < 1e-20:
                break
            step *= 0.5
        if f_new > f:  # backtracking bottomed out
            break
        s, y = x_new - x, g_new - g
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        sy = float(np.dot(s, y))
        step = float(np.dot(s, s)) / sy if sy > 0 else step * 2
        if _converged(trace, cfg.window, cfg.rel_tol) or not np.any(s):
            break
    return x, trace, evals
