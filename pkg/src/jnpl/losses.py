"""PL, NL, NL+ and PL+ losses with analytic logit gradients, PL+ selection,
and the joint NL+ / PL+ objective.

Every ``*_batch`` function takes logits of shape (B, c) and returns per-sample
values (B,) and gradients (B, c) with respect to the logits.  The weighting
factors of NL+ and PL+ are treated as constants (no gradient flows through
them), so their gradients are the NL / PL gradients scaled by the factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .probs import (EPS, argmax, check_label, check_logits, clamped_log, sample_complementary_batch,
                    softmax, softmax_excluding)


@dataclass
class LossEval:
    value: float
    grad: np.ndarray
    saturated: bool = False


@dataclass(frozen=True)
class JnplConfig:
    lam: float = 0.01
    n_exponent: int = 3

    def __post_init__(self):
        if self.lam < 0 or self.n_exponent < 0:
            raise ValueError("lam and n_exponent must be non-negative")


@dataclass(frozen=True)
class PlPlusCandidate:
    sample_id: int
    target: int
    acceptance_prob: float


def _rest_mass(p: np.ndarray, col: np.ndarray) -> np.ndarray:
    """Sum of probabilities outside column ``col[r]`` for each row (= 1 - p_col, without cancellation)."""
    q = p.copy()
    q[np.arange(p.shape[0]), col] = 0.0
    return q.sum(axis=1)


# ---------------------------------------------------------------------------
# batch forms
# ---------------------------------------------------------------------------

def pl_loss_batch(logits: np.ndarray, y: np.ndarray):
    """Cross-entropy against hard labels ``y``."""
    p = softmax(logits)
    rows = np.arange(p.shape[0])
    y = np.asarray(y, dtype=np.int64)
    values = -clamped_log(p[rows, y])
    grads = p.copy()
    grads[rows, y] = -_rest_mass(p, y)
    return values, grads


def soft_ce_batch(logits: np.ndarray, targets: np.ndarray):
    """Cross-entropy against probability-vector targets (rows sum to 1)."""
    p = softmax(logits)
    values = -(targets * clamped_log(p)).sum(axis=1)
    return values, p - targets


def nl_loss_batch(logits: np.ndarray, comp: np.ndarray, plus: bool = False):
    """NL (``plus=False``) or NL+ (``plus=True``) for complementary labels ``comp`` (B, k).

    With k > 1 the per-label values and gradients are averaged.  Also returns
    the boolean mask of samples whose complementary probability hit the clamp.
    """
    logits = check_logits(logits)
    p = softmax(logits)
    b, c = p.shape
    comp = np.asarray(comp, dtype=np.int64).reshape(b, -1)
    k = comp.shape[1]
    rows = np.arange(b)
    values = np.zeros(b)
    grads = np.zeros((b, c))
    saturated = np.zeros(b, dtype=bool)
    for j in range(k):
        yb = comp[:, j]
        p_yb = p[rows, yb]
        rest = _rest_mass(p, yb)
        saturated |= rest < EPS
        log_rest = clamped_log(rest)
        if plus:
            # d/dz_i of -log(1 - p_yb), scaled by the detached (1 - p_yb)
            values -= rest * log_rest
            g = -p_yb[:, None] * p
            g[rows, yb] = rest * p_yb
        else:
            values -= log_rest
            g = -p_yb[:, None] * softmax_excluding(logits, yb)
            g[rows, yb] = p_yb
        grads += g
    return values / k, grads / k, saturated


def plplus_weight(p_hat, n_exponent: int):
    """prod_{n=0}^{N} (1 + p^(2^n)); equals (1 - p^(2^(N+1))) / (1 - p) for p < 1."""
    q = np.asarray(p_hat, dtype=np.float64)
    w = np.ones_like(q)
    for _ in range(n_exponent + 1):
        w = w * (1.0 + q)
        q = q * q
    return w if w.ndim else float(w)


def plplus_loss_batch(logits: np.ndarray, target: np.ndarray, n_exponent: int = 3):
    p = softmax(logits)
    rows = np.arange(p.shape[0])
    target = np.asarray(target, dtype=np.int64)
    p_hat = p[rows, target]
    w = plplus_weight(p_hat, n_exponent)
    values = -w * clamped_log(p_hat)
    grads = w[:, None] * p
    grads[rows, target] = -w * _rest_mass(p, target)
    return values, grads


def select_plplus_batch(p: np.ndarray, rng: np.random.Generator):
    """PL+ candidate test and Bernoulli acceptance for each row of ``p``.

    A row is a candidate when every class other than its argmax has
    probability strictly below 1/c; a candidate is accepted with probability
    equal to its max probability.  One uniform is drawn per row, candidate or
    not, so the stream advances by exactly B draws.

    Returns (targets, candidate_mask, accepted_mask).
    """
    b, c = p.shape
    rows = np.arange(b)
    targets = argmax(p)
    others = p.copy()
    others[rows, targets] = -np.inf
    candidate = others.max(axis=1) < 1.0 / c
    u = rng.random(b)
    accepted = candidate & (u < p[rows, targets])
    return targets, candidate, accepted


# ---------------------------------------------------------------------------
# single-sample forms
# ---------------------------------------------------------------------------

def pl_loss(logits, y: int) -> LossEval:
    x = check_logits(logits).reshape(1, -1)
    y = check_label(y, x.shape[1])
    v, g = pl_loss_batch(x, [y])
    return LossEval(float(v[0]), g[0])


def _nl_single(logits, ybar, plus: bool) -> LossEval:
    x = check_logits(logits).reshape(1, -1)
    labels = sorted(int(v) for v in (ybar if np.ndim(ybar) else [ybar]))
    if not labels or len(set(labels)) != len(labels):
        raise ValueError("complementary labels must be a non-empty set")
    for v in labels:
        check_label(v, x.shape[1])
    v, g, sat = nl_loss_batch(x, np.array([labels]), plus=plus)
    return LossEval(float(v[0]), g[0], bool(sat[0]))


def nl_loss(logits, ybar) -> LossEval:
    return _nl_single(logits, ybar, plus=False)


def nlplus_loss(logits, ybar) -> LossEval:
    return _nl_single(logits, ybar, plus=True)


def plplus_loss(logits, target: int, cfg: JnplConfig = JnplConfig()) -> LossEval:
    x = check_logits(logits).reshape(1, -1)
    target = check_label(target, x.shape[1])
    v, g = plplus_loss_batch(x, [target], cfg.n_exponent)
    return LossEval(float(v[0]), g[0])


def select_plplus(probs, rng: np.random.Generator) -> list[PlPlusCandidate]:
    """Accepted PL+ candidates from ``(sample_id, prob_vector)`` pairs."""
    probs = list(probs)
    if not probs:
        return []
    ids = [sid for sid, _ in probs]
    p = np.asarray([pv for _, pv in probs], dtype=np.float64)
    targets, _, accepted = select_plplus_batch(p, rng)
    return [
        PlPlusCandidate(ids[i], int(targets[i]), float(p[i, targets[i]]))
        for i in np.flatnonzero(accepted)
    ]


# ---------------------------------------------------------------------------
# joint objective
# ---------------------------------------------------------------------------

@dataclass
class JnplStep:
    total: float
    grads: np.ndarray              # d total / d logits, shape (B, c)
    nl_value: float                # mean NL+ over the batch
    pl_value: float                # mean PL+ over accepted samples, 0 if none
    comp: np.ndarray               # complementary labels used, (B, k)
    targets: np.ndarray            # argmax class per sample
    candidates: np.ndarray         # bool (B,)
    accepted: np.ndarray           # bool (B,)
    saturated: np.ndarray = field(default=None)

    @property
    def n_accepted(self) -> int:
        return int(self.accepted.sum())


def jnpl_loss(batch_logits, given_labels, cfg: JnplConfig, rng: np.random.Generator,
              k: int = 1, select_rng: np.random.Generator | None = None) -> JnplStep:
    """NL+ averaged over the batch plus ``cfg.lam`` times PL+ averaged over the
    accepted subset.

    Complementary labels are drawn fresh from ``rng``; the PL+ Bernoulli draws
    come from ``select_rng`` (defaults to ``rng``).
    """
    x = check_logits(batch_logits)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    b, c = x.shape
    if b == 0:
        raise ValueError("empty batch")
    given = np.asarray(given_labels, dtype=np.int64)
    comp = sample_complementary_batch(given, c, k, rng)
    nl_v, nl_g, sat = nl_loss_batch(x, comp, plus=True)
    nl_mean = float(nl_v.sum() / b)
    grads = nl_g / b

    p = softmax(x)
    targets, cand, acc = select_plplus_batch(p, rng if select_rng is None else select_rng)
    n_acc = int(acc.sum())
    pl_mean = 0.0
    if n_acc:
        pl_v, pl_g = plplus_loss_batch(x[acc], targets[acc], cfg.n_exponent)
        pl_mean = float(pl_v.sum() / n_acc)
        grads[acc] += (cfg.lam / n_acc) * pl_g
    return JnplStep(nl_mean + cfg.lam * pl_mean, grads, nl_mean, pl_mean, comp,
                    targets, cand, acc, sat)
