"""Projected gradient ascent on the classification loss under lp budgets.

The engine runs on whole batches.  Each step takes a normalised ascent
direction, clips the candidate perturbation to the pixel box, projects it
onto the norm set and clips once more (a no-op for these sets, kept as a
guard).  The best iterate per example is tracked across steps and restarts.

Step directions per kind:

* ``linf``: ``sign(g)``
* ``l2``: ``g / ||g||_2``
* ``l1``: ``sign(g)`` on the ``L1_TOP_FRACTION`` largest-gradient
  coordinates that are not pinned against the box, scaled to unit l1 mass
* l0 kinds: ``g / ||g||_1``, dense, followed by the sparse projection

With adaptive halving enabled the step size halves at a checkpoint (at
fractions 0.22, 0.22 + 0.19, ... of the step budget) whenever the best loss
has not improved since the previous checkpoint, and the iterate returns to
the best point found so far.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .. import rng as rngmod
from ..classifiers import LOSSES, Model, loss_and_input_grad, predict
from ..data import HEIGHT, WIDTH
from . import projections as P

KINDS = ("linf", "l2", "l1", "l0", "l0_linf", "l0_sigma")
SPARSE_KINDS = ("l0", "l0_linf", "l0_sigma")
DIRECTIONS = ("over", "under", "both")
L1_TOP_FRACTION = 0.01
CHUNK = 64
FEAS_TOL = 1e-9


class AttackConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NormConstraint:
    """Perturbation set.  Only the fields relevant to ``kind`` are used."""

    kind: str
    epsilon: float = 0.0
    k: int | None = None
    kappa: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AttackConfigError(f"unknown norm kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("linf", "l2", "l1", "l0_linf"):
            if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
                raise AttackConfigError(f"{self.kind} needs a finite epsilon >= 0")
        if self.kind in SPARSE_KINDS:
            if self.k is None or int(self.k) != self.k or self.k < 1:
                raise AttackConfigError(f"{self.kind} needs an integer k >= 1")
            object.__setattr__(self, "k", int(self.k))
        if self.kind == "l0_sigma" and (self.kappa is None or not self.kappa >= 0):
            raise AttackConfigError("l0_sigma needs kappa >= 0")

    def relevant(self) -> dict:
        out = {}
        if self.kind in ("linf", "l2", "l1", "l0_linf"):
            out["epsilon"] = float(self.epsilon)
        if self.kind in SPARSE_KINDS:
            out["k"] = self.k
        if self.kind == "l0_sigma":
            out["kappa"] = float(self.kappa)
        return out

    def contains(self, other: "NormConstraint") -> bool:
        """True when every perturbation allowed by ``other`` is allowed here."""
        if other.kind != self.kind:
            return False
        mine, theirs = self.relevant(), other.relevant()
        return all(mine[f] >= theirs[f] for f in mine)

    def project(self, delta, x, sigma=None):
        """Box clip, norm projection, box clip; all rows of ``delta`` at once."""
        d = P.project_box(delta, x)
        if self.kind == "linf":
            d = P.project_linf(d, self.epsilon)
        elif self.kind == "l2":
            d = P.project_l2(d, self.epsilon)
        elif self.kind == "l1":
            d = P.project_l1(d, self.epsilon) if self.epsilon > 0 else np.zeros_like(d)
        elif self.kind == "l0":
            d = P.project_l0_topk(d, self.k)
        elif self.kind == "l0_linf":
            d = P.project_l0_linf(d, self.k, self.epsilon)
        else:
            sig = P.sigma_map(x) if sigma is None else sigma
            d = P.project_l0_sigma(d, x, self.k, self.kappa, sigma=sig)
        return P.project_box(d, x)

    def satisfied(self, delta, x, sigma=None, tol: float = FEAS_TOL) -> np.ndarray:
        """Per-row feasibility of ``delta`` for this set and the box around ``x``."""
        d = np.atleast_2d(delta)
        xx = np.atleast_2d(x)
        ok = np.all((xx + d >= -tol) & (xx + d <= 1 + tol), axis=1)
        nz = np.count_nonzero(d, axis=1)
        if self.kind in ("linf", "l0_linf"):
            ok &= np.max(np.abs(d), axis=1) <= self.epsilon + tol
        if self.kind == "l2":
            ok &= np.linalg.norm(d, axis=1) <= self.epsilon + tol
        if self.kind == "l1":
            ok &= np.abs(d).sum(axis=1) <= self.epsilon + tol
        if self.kind in SPARSE_KINDS:
            ok &= nz <= self.k
        if self.kind == "l0_sigma":
            sig = P.sigma_map(xx) if sigma is None else np.atleast_2d(sigma)
            ok &= np.all(np.abs(d) <= self.kappa * sig + tol, axis=1)
        return ok


@dataclass(frozen=True)
class AttackConfig:
    constraint: NormConstraint
    steps: int = 100
    step_size_init: float | None = None
    restarts: int = 1
    random_start: bool = False
    adaptive_halving: bool | None = None
    loss_kind: str = "dlr"
    direction: str = "both"
    seed: int = 0
    stop_on_success: bool = True

    def __post_init__(self):
        if isinstance(self.constraint, dict):
            object.__setattr__(self, "constraint", NormConstraint(**self.constraint))
        if int(self.steps) != self.steps or self.steps < 1:
            raise AttackConfigError("steps must be a positive integer")
        if int(self.restarts) != self.restarts or self.restarts < 1:
            raise AttackConfigError("restarts must be >= 1")
        if self.step_size_init is not None and not self.step_size_init > 0:
            raise AttackConfigError("step_size_init must be > 0")
        if self.loss_kind not in LOSSES:
            raise AttackConfigError(f"unknown loss {self.loss_kind!r}; expected one of {sorted(LOSSES)}")
        if self.direction not in DIRECTIONS:
            raise AttackConfigError(f"unknown direction {self.direction!r}; expected one of {DIRECTIONS}")

    @property
    def step_size(self) -> float:
        """Initial step, defaulting to ``2 eps`` for dense kinds and 15 for sparse ones."""
        if self.step_size_init is not None:
            return float(self.step_size_init)
        c = self.constraint
        return 15.0 if c.kind in SPARSE_KINDS else max(2.0 * c.epsilon, 1e-12)

    @property
    def halving(self) -> bool:
        if self.adaptive_halving is not None:
            return bool(self.adaptive_halving)
        return self.constraint.kind not in SPARSE_KINDS

    _FLAT = ("kind", "epsilon", "k", "kappa", "steps", "step_size_init", "restarts",
             "random_start", "adaptive_halving", "loss", "direction", "seed", "stop_on_success")

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        unknown = set(d) - set(cls._FLAT)
        if unknown:
            raise AttackConfigError(f"unknown attack fields: {sorted(unknown)}")
        if "kind" not in d:
            raise AttackConfigError("attack config needs a 'kind'")
        c = NormConstraint(d["kind"], float(d.get("epsilon", 0.0)), d.get("k"), d.get("kappa"))
        kw = {k: d[k] for k in ("steps", "step_size_init", "restarts", "random_start",
                                "adaptive_halving", "direction", "seed", "stop_on_success") if k in d}
        if "loss" in d:
            kw["loss_kind"] = d["loss"]
        return cls(constraint=c, **kw)

    def to_dict(self) -> dict:
        c = self.constraint
        return {"kind": c.kind, "epsilon": float(c.epsilon), "k": c.k, "kappa": c.kappa,
                "steps": self.steps, "step_size_init": self.step_size_init,
                "restarts": self.restarts, "random_start": self.random_start,
                "adaptive_halving": self.adaptive_halving, "loss": self.loss_kind,
                "direction": self.direction, "seed": self.seed,
                "stop_on_success": self.stop_on_success}


@dataclass
class AdvExample:
    x_adv: np.ndarray
    success: bool
    final_loss: float
    steps_used: int
    restart_index: int


@dataclass
class BatchResult:
    x_adv: np.ndarray
    success: np.ndarray
    loss: np.ndarray
    steps: np.ndarray
    restart: np.ndarray

    def __len__(self):
        return len(self.success)

    def __getitem__(self, i) -> AdvExample:
        return AdvExample(self.x_adv[i].reshape(HEIGHT, WIDTH) if self.x_adv.shape[1] == HEIGHT * WIDTH
                          else self.x_adv[i].copy(), bool(self.success[i]), float(self.loss[i]),
                          int(self.steps[i]), int(self.restart[i]))


def checkpoints(steps: int) -> list[int]:
    """Iterations at which the adaptive schedule may halve the step size."""
    p = [0.0, 0.22]
    while True:
        nxt = p[-1] + max(p[-1] - p[-2] - 0.03, 0.06)
        if nxt > 1:
            break
        p.append(round(nxt, 9))
    return sorted({math.ceil(q * steps) for q in p[1:] if 0 < math.ceil(q * steps) <= steps})


def _random_start(c: NormConstraint, x, keys, restart, sigma):
    n, d = x.shape
    out = np.zeros_like(x)
    for row, key in enumerate(keys):
        g = rngmod.substream(int(key[0]), rngmod.ATTACK_START, int(key[1]), restart)
        xi = x[row]
        if c.kind == "linf":
            out[row] = g.uniform(-c.epsilon, c.epsilon, d)
        elif c.kind == "l2":
            v = g.standard_normal(d)
            out[row] = v / max(np.linalg.norm(v), 1e-300) * c.epsilon * g.random() ** (1.0 / d)
        elif c.kind == "l1":
            v = g.laplace(size=d)
            out[row] = v / max(np.abs(v).sum(), 1e-300) * c.epsilon * g.random() ** (1.0 / d)
        else:
            lo, hi = -xi, 1.0 - xi
            if c.kind == "l0_linf":
                lo, hi = np.maximum(lo, -c.epsilon), np.minimum(hi, c.epsilon)
            elif c.kind == "l0_sigma":
                b = c.kappa * sigma[row]
                lo, hi = np.maximum(lo, -b), np.minimum(hi, b)
            idx = g.choice(d, size=min(c.k, d), replace=False)
            out[row, idx] = g.uniform(lo[idx], hi[idx])
    return out


def _direction(kind, grad, xa):
    if kind == "linf":
        return np.sign(grad)
    if kind == "l2":
        nrm = np.linalg.norm(grad, axis=1, keepdims=True)
        return grad / np.where(nrm > 0, nrm, 1.0)
    if kind == "l1":
        free = ~(((grad > 0) & (xa >= 1.0)) | ((grad < 0) & (xa <= 0.0)))
        mag = np.where(free, np.abs(grad), 0.0)
        q = max(1, math.ceil(L1_TOP_FRACTION * grad.shape[1]))
        keep = P.topk_mask(mag, q) & (mag > 0)
        cnt = np.maximum(keep.sum(axis=1, keepdims=True), 1)
        return np.where(keep, np.sign(grad), 0.0) / cnt
    s = np.abs(grad).sum(axis=1, keepdims=True)
    return grad / np.where(s > 0, s, 1.0)


def _loss_grad(model, xa, y, loss_kind):
    loss, g = loss_and_input_grad(model, xa, y, loss_kind)
    return loss, g, predict(model, xa) != y


def _single_start(model, x, y, cfg, keys, restart, sigma):
    c = cfg.constraint
    n = len(x)
    delta = np.zeros_like(x)
    if cfg.random_start:
        delta = _random_start(c, x, keys, restart, sigma)
    delta = c.project(delta, x, sigma)
    xa = x + delta
    loss, grad, succ = _loss_grad(model, xa, y, cfg.loss_kind)
    best_d, best_l, best_s = delta.copy(), loss.copy(), succ.copy()
    best_t = np.zeros(n, dtype=np.int64)
    eta = np.full(n, cfg.step_size)
    ck = set(checkpoints(cfg.steps)) if cfg.halving else set()
    ck_best = best_l.copy()
    running = ~succ if cfg.stop_on_success else np.ones(n, dtype=bool)
    for t in range(1, cfg.steps + 1):
        rows = np.flatnonzero(running)
        if rows.size == 0:
            break
        if rows.size == n:
            rows = slice(None)
        step = _direction(c.kind, grad[rows], xa[rows]) * eta[rows, None]
        sig = None if sigma is None else sigma[rows]
        delta[rows] = c.project(delta[rows] + step, x[rows], sig)
        xa[rows] = x[rows] + delta[rows]
        l_r, g_r, s_r = _loss_grad(model, xa[rows], y[rows], cfg.loss_kind)
        loss[rows], grad[rows], succ[rows] = l_r, g_r, s_r
        better = (s_r & ~best_s[rows]) | ((s_r == best_s[rows]) & (l_r > best_l[rows]))
        rows = np.arange(n)[rows]
        up = rows[better]
        best_d[up], best_l[up], best_s[up], best_t[up] = delta[up], loss[up], succ[up], t
        if cfg.stop_on_success:
            running[rows[s_r]] = False
        if t in ck:
            stale = rows[best_l[rows] <= ck_best[rows]]
            stale = stale[running[stale]]
            if stale.size:
                eta[stale] *= 0.5
                delta[stale] = best_d[stale]
                xa[stale] = x[stale] + delta[stale]
                l_b, g_b, s_b = _loss_grad(model, xa[stale], y[stale], cfg.loss_kind)
                loss[stale], grad[stale], succ[stale] = l_b, g_b, s_b
            ck_best[rows] = best_l[rows]
    return best_d, best_l, best_s, best_t


def _attack_chunk(model, x, y, cfg, keys):
    c = cfg.constraint
    sigma = P.sigma_map(x) if c.kind == "l0_sigma" else None
    n = len(x)
    loss0, _, succ0 = _loss_grad(model, x, y, cfg.loss_kind)
    best_d = np.zeros_like(x)
    best_l, best_s = loss0.copy(), succ0.copy()
    best_t = np.zeros(n, dtype=np.int64)
    best_r = np.zeros(n, dtype=np.int64)
    for r in range(cfg.restarts):
        rows = np.flatnonzero(~best_s) if cfg.stop_on_success else np.arange(n)
        if rows.size == 0:
            break
        sig = None if sigma is None else sigma[rows]
        d, l, s, t = _single_start(model, x[rows], y[rows], cfg, keys[rows], r, sig)
        better = (s & ~best_s[rows]) | ((s == best_s[rows]) & (l > best_l[rows]))
        up = rows[better]
        best_d[up], best_l[up], best_s[up] = d[better], l[better], s[better]
        best_t[up], best_r[up] = t[better], r
    # Final feasibility check; the projection is idempotent on feasible points.
    bad = ~c.satisfied(best_d, x, sigma)
    if bad.any():
        best_d[bad] = c.project(best_d[bad], x[bad], None if sigma is None else sigma[bad])
    x_adv = np.clip(x + best_d, 0.0, 1.0)
    return BatchResult(x_adv, best_s, best_l, best_t, best_r)


def attack_batch(model: Model, x, labels, config: AttackConfig, indices=None,
                 jobs: int = 1) -> BatchResult:
    """Attack every row of ``x``; results do not depend on ``jobs``.

    ``indices`` name the examples for random-start substreams (default
    ``0..n-1``), so an example's random starts do not depend on which other
    examples share its batch.
    """
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    y = np.broadcast_to(np.asarray(labels, dtype=np.int64), (len(x),)).copy()
    idx = np.arange(len(x)) if indices is None else np.asarray(indices, dtype=np.int64)
    keys = np.stack([np.full(len(x), config.seed, dtype=np.int64), idx], axis=1)
    spans = [(s, min(s + CHUNK, len(x))) for s in range(0, len(x), CHUNK)]

    def run(span):
        a, b = span
        return _attack_chunk(model, x[a:b], y[a:b], config, keys[a:b])

    if jobs > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(run, spans))
    else:
        parts = [run(s) for s in spans]
    if not parts:
        e = np.zeros(0)
        return BatchResult(np.zeros((0, x.shape[1])), e.astype(bool), e, e.astype(np.int64),
                           e.astype(np.int64))
    return BatchResult(*(np.concatenate([getattr(p, f.name) for p in parts])
                         for f in fields(BatchResult)))


def pgd_attack(model: Model, image, label: int, config: AttackConfig, index: int = 0) -> AdvExample:
    """Attack one image; see :func:`attack_batch`."""
    img = np.asarray(image, dtype=np.float64)
    res = attack_batch(model, img.reshape(1, -1), [label], config, indices=[index])
    ex = res[0]
    ex.x_adv = res.x_adv[0].reshape(img.shape)
    return ex
