"""Feature-update trigger: convergence probe, LogME score, decision rule.

Per iteration the probe runs first. One-step convergence means the labeled
features already behave like a settled embedding, so no score is computed.
Otherwise the log marginal evidence of the labeled features is compared
against the previously recorded score; a difference below the threshold
means the frozen features have become the bottleneck, so the engine updates
them and switches the final training method.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

KEEP = "keep"
UPDATE_AND_SWITCH = "update_and_switch"


@dataclass
class AlignmentConfig:
    logme_threshold: float = 1.0
    ped_step: float = 0.1
    ped_repulse: float = 0.5
    ped_eps: float = 1e-3
    ped_max_iters: int = 200
    logme_tol: float = 1e-6
    logme_max_iters: int = 100
    allow_multiple_updates: bool = False
    forced_update_at: int | None = None

    def validate(self) -> None:
        if self.logme_threshold < 0:
            raise ValueError("logme_threshold must be >= 0")
        if self.ped_step <= 0 or self.ped_repulse <= 0:
            raise ValueError("ped_step and ped_repulse must be > 0")
        if self.ped_eps <= 0:
            raise ValueError("ped_eps must be > 0")
        if self.ped_max_iters < 1 or self.logme_max_iters < 1:
            raise ValueError("iteration caps must be >= 1")


@dataclass
class AlignmentSignal:
    iteration: int
    ped_iters: int
    logme: float | None
    decision: str


@dataclass
class AlignmentHistory:
    signals: list[AlignmentSignal] = field(default_factory=list)
    updated: bool = False

    def last_logme(self) -> float | None:
        for sig in reversed(self.signals):
            if sig.logme is not None:
                return sig.logme
        return None

    def append(self, signal: AlignmentSignal, allow_multiple: bool = False) -> None:
        if signal.decision == UPDATE_AND_SWITCH:
            if self.updated and not allow_multiple:
                raise ValueError("a second feature update is disallowed by policy")
            self.updated = True
        self.signals.append(signal)


class DegenerateFeaturesError(ValueError):
    """Feature matrix has rank zero; evidence is undefined."""


def logme_score(F: np.ndarray, y: np.ndarray, tol: float = 1e-6, max_iters: int = 100) -> float:
    """Mean per-class log marginal evidence per sample of a Bayesian ridge fit.

    For each class, a one-vs-rest 0/1 target is regressed on F under
    w ~ N(0, 1/alpha), noise ~ N(0, 1/beta); (alpha, beta) are optimized by
    the classic fixed point on the SVD of F, constrained to the standard
    [1e-4, 1e4]^2 box and stopping when the per-sample evidence moves less
    than tol. Scores average over classes.
    """
    F = np.asarray(F, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, D = F.shape
    if n < 2:
        raise ValueError("need at least 2 samples")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("need at least 2 classes present")
    U, s, _ = np.linalg.svd(F, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise DegenerateFeaturesError("feature matrix has rank 0")
    s2 = s**2
    kdim = s.size

    scores = []
    for cls in classes:
        t = (y == cls).astype(np.float64)
        z = U.T @ t
        z2 = z**2
        r0 = max(float(t @ t - z2.sum()), 0.0)

        alpha, beta = 1.0, 1.0
        prev = None
        converged = False
        for _ in range(max_iters):
            dvec = alpha + beta * s2
            m2 = float(np.sum((beta * s * z / dvec) ** 2))
            res = float(np.sum((alpha * z / dvec) ** 2) + r0)
            gamma = float(np.sum(beta * s2 / dvec))
            alpha = np.clip(gamma / max(m2, 1e-300), 1e-4, 1e4)
            beta = np.clip((n - gamma) / max(res, 1e-300), 1e-4, 1e4)

            dvec = alpha + beta * s2
            m2 = float(np.sum((beta * s * z / dvec) ** 2))
            res = float(np.sum((alpha * z / dvec) ** 2) + r0)
            logdet = float(np.sum(np.log(dvec))) + (D - kdim) * np.log(alpha)
            evidence = 0.5 * (D * np.log(alpha) + n * np.log(beta) - beta * res
                              - alpha * m2 - logdet - n * np.log(2 * np.pi))
            score = evidence / n
            if prev is not None and abs(score - prev) < tol:
                converged = True
                prev = score
                break
            prev = score
        if not converged:
            warnings.warn(f"evidence fixed point did not converge within {max_iters} iterations",
                          RuntimeWarning, stacklevel=2)
        scores.append(prev)
    return float(np.mean(scores))


def _ped_step(feats: np.ndarray, y: np.ndarray, classes: np.ndarray,
              eta: float, rho: float) -> tuple[np.ndarray, float]:
    """One probe iteration; returns (moved features, mean displacement).

    Repulsion only fires inside the 2*eta*rho margin: once every other-class
    centroid is farther than that, a feature sitting on its own centroid
    stays put.
    """
    margin = 2.0 * eta * rho
    centroids = np.stack([feats[y == cls].mean(axis=0) for cls in classes])
    moved = feats.copy()
    for ci in range(classes.size):
        rows = np.flatnonzero(y == classes[ci])
        others = np.delete(np.arange(classes.size), ci)
        delta = eta * (centroids[ci] - feats[rows])
        diff = feats[rows][:, None, :] - centroids[others][None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        nearest = np.argmin(dist, axis=1)
        near_dist = dist[np.arange(rows.size), nearest]
        near_cent = centroids[others][nearest]
        active = near_dist < margin
        delta[active] -= eta * rho * (near_cent[active] - feats[rows][active])
        cand = feats[rows] + delta
        norms = np.linalg.norm(cand, axis=1)
        safe = norms > 0.0
        cand[safe] /= norms[safe, None]
        moved[rows] = cand
    return moved, float(np.mean(np.linalg.norm(moved - feats, axis=1)))


def ped_converge_iters(F: np.ndarray, y: np.ndarray, cfg: AlignmentConfig | None = None) -> int:
    """First probe iteration whose mean displacement falls under ped_eps.

    Labeled features are pulled toward their class centroid and, within a
    2 * step * repulse margin, pushed off the nearest other-class centroid,
    then re-normalized. A single present class counts as already separated.
    The count caps at ped_max_iters.
    """
    cfg = cfg or AlignmentConfig()
    cfg.validate()
    y = np.asarray(y, dtype=np.int64)
    if len(y) < 2:
        raise ValueError("need at least 2 samples")
    classes = np.unique(y)
    if classes.size < 2:
        return 1
    feats = np.asarray(F, dtype=np.float64).copy()
    for it in range(1, cfg.ped_max_iters + 1):
        feats, disp = _ped_step(feats, y, classes, cfg.ped_step, cfg.ped_repulse)
        if disp < cfg.ped_eps:
            return it
    return cfg.ped_max_iters


def decide_update(ped_iters: int, F: np.ndarray, y: np.ndarray,
                  history: AlignmentHistory, cfg: AlignmentConfig,
                  labeled_count: int | None = None) -> AlignmentSignal:
    """Apply the update rule for one iteration and record it in the history.

    One-step probe convergence keeps the features without scoring. Otherwise
    the evidence score is computed; an absolute difference under the
    threshold against the last recorded score fires the single update. With
    forced_update_at set (position sweeps), the decision is overridden to
    fire exactly when the labeled count matches.
    """
    cfg.validate()
    iteration = len(history.signals) + 1
    logme: float | None = None
    decision = KEEP
    if ped_iters > 1:
        logme = logme_score(F, y, tol=cfg.logme_tol, max_iters=cfg.logme_max_iters)
        previous = history.last_logme()
        can_fire = cfg.allow_multiple_updates or not history.updated
        if previous is not None and can_fire and abs(logme - previous) < cfg.logme_threshold:
            decision = UPDATE_AND_SWITCH
    if history.updated and not cfg.allow_multiple_updates:
        decision = KEEP
    if cfg.forced_update_at is not None:
        fire = (labeled_count == cfg.forced_update_at
                and (cfg.allow_multiple_updates or not history.updated))
        decision = UPDATE_AND_SWITCH if fire else KEEP
    signal = AlignmentSignal(iteration=iteration, ped_iters=ped_iters,
                             logme=logme, decision=decision)
    history.append(signal, allow_multiple=cfg.allow_multiple_updates)
    return signal
