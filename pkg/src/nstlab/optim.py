"""Pixel- and parameter-space first-order optimizers.

Adam follows the standard bias-corrected update. L-BFGS uses the two-loop
recursion over a bounded history of (s, y) pairs with a backtracking Armijo
line search; an accepted step strictly decreases the loss, otherwise the
iteration reports no progress. Internal dot products run in float64 for
stable curvature estimates while parameters stay float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ContractError, NumericError, ShapeError
from .tensor import Tensor, backprop

Objective = Callable[[Tensor], tuple[Tensor, dict[str, float]]]


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "lbfgs"
    learning_rate: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    history: int = 10
    max_line_search: int = 20
    armijo_c: float = 1e-4
    max_iterations: int = 100
    tolerance: float = 0.0  # relative loss-change stop; 0 disables
    grad_tolerance: float = 1e-10

    def __post_init__(self):
        if self.kind not in ("adam", "lbfgs"):
            raise ContractError(f"optimizer kind must be 'adam' or 'lbfgs', got {self.kind!r}")
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ContractError("adam betas must lie in [0, 1)")
        if self.history < 1:
            raise ContractError("lbfgs history must be >= 1")
        if self.max_iterations < 0:
            raise ContractError("max_iterations must be >= 0")
        if self.tolerance < 0:
            raise ContractError("tolerance must be >= 0")


ADAM_PIXEL_DEFAULTS = OptimizerConfig(kind="adam", learning_rate=0.02)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def init(cls, shape) -> "AdamState":
        return cls(m=np.zeros(shape, dtype=np.float32), v=np.zeros(shape, dtype=np.float32))


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray,
              config: OptimizerConfig) -> tuple[np.ndarray, AdamState]:
    if params.shape != grad.shape:
        raise ShapeError(f"adam_step: params {params.shape} vs grad {grad.shape}")
    if state.m.shape != params.shape:
        raise ShapeError(f"adam_step: state {state.m.shape} vs params {params.shape}")
    b1 = np.float32(config.beta1)
    b2 = np.float32(config.beta2)
    t = state.t + 1
    m = b1 * state.m + (np.float32(1.0) - b1) * grad
    v = b2 * state.v + (np.float32(1.0) - b2) * grad * grad
    mhat = m / np.float32(1.0 - config.beta1**t)
    vhat = v / np.float32(1.0 - config.beta2**t)
    step = np.float32(config.learning_rate) * mhat / (np.sqrt(vhat) + np.float32(config.adam_epsilon))
    out = (params - step).astype(np.float32)
    if not np.isfinite(out).all():
        raise NumericError("adam_step produced non-finite parameters")
    return out, AdamState(m=m.astype(np.float32), v=v.astype(np.float32), t=t)


# ---------------------------------------------------------------------------
# L-BFGS


def _dot(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(a * b, dtype=np.float64))


@dataclass
class LbfgsState:
    history: list[tuple[np.ndarray, np.ndarray, float]] = field(default_factory=list)
    f: float | None = None
    grad: np.ndarray | None = None
    parts: dict | None = None
    first_step_done: bool = False


@dataclass
class StepInfo:
    loss_before: float
    loss_after: float
    step_size: float
    evals: int
    accepted: bool
    converged: bool
    parts_before: dict | None = None


def _two_loop(g: np.ndarray, history) -> np.ndarray:
    q = g.astype(np.float64).ravel()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * float(np.sum(s * q, dtype=np.float64))
        q -= a * y
        alphas.append(a)
    if history:
        s, y, _ = history[-1]
        gamma = float(np.sum(s * y, dtype=np.float64)) / float(np.sum(y * y, dtype=np.float64))
        q *= gamma
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * float(np.sum(y * q, dtype=np.float64))
        q += (a - b) * s
    return -q


def lbfgs_step(state: LbfgsState, params: np.ndarray, oracle,
               config: OptimizerConfig) -> tuple[np.ndarray, LbfgsState, StepInfo]:
    """One quasi-Newton step.

    ``oracle(x, need_grad)`` returns ``(f, parts, grad_or_None)``. The state
    caches the loss/gradient at the current point so consecutive steps cost
    one gradient evaluation plus the line-search forwards.
    """
    x0 = params.astype(np.float32, copy=False)
    evals = 0
    if state.f is None or state.grad is None:
        f0, parts0, g0 = oracle(x0, True)
        evals += 1
        state = replace(state, f=f0, grad=g0, parts=parts0)
    f0 = state.f
    g0 = state.grad
    parts0 = dict(state.parts) if state.parts else {"total": f0}
    if not math.isfinite(f0):
        raise NumericError(f"loss is not finite ({f0})")

    gflat = g0.astype(np.float64).ravel()
    gnorm = float(np.max(np.abs(gflat))) if gflat.size else 0.0
    if gnorm <= config.grad_tolerance:
        return x0, state, StepInfo(f0, f0, 0.0, evals, False, True, parts0)

    def scaled_first_step() -> float:
        # scale the very first trial so the largest coordinate moves by the
        # learning rate exactly; the trial budget then covers objectives of
        # any scale, and the resulting curvature pair is noise-free
        return config.learning_rate / gnorm

    def line_search(d, t0):
        nonlocal evals
        gd = float(np.sum(gflat * d, dtype=np.float64))
        if gd >= 0:
            return None, gd
        dshaped = d.reshape(x0.shape)
        t = t0
        first_trial = True
        for _ in range(config.max_line_search):
            x1 = (x0.astype(np.float64) + t * dshaped).astype(np.float32)
            try:
                if first_trial:
                    f1, parts1, g1 = oracle(x1, True)
                else:
                    f1, parts1, g1 = oracle(x1, False)
            except NumericError:
                # float32 overflow at a wild trial point: reject, backtrack
                f1, parts1, g1 = math.inf, None, None
            evals += 1
            first_trial = False
            if math.isnan(f1):
                raise NumericError("line search produced NaN loss")
            if f1 <= f0 + config.armijo_c * t * gd and f1 < f0:
                return (x1, f1, parts1, g1, t), gd
            t *= 0.5
            g1 = None
        return None, gd

    fresh = not state.history
    d = _two_loop(g0, state.history)
    t0 = scaled_first_step() if not state.first_step_done else config.learning_rate
    accepted, _ = line_search(d, t0)
    if accepted is None and not fresh:
        # stale or poorly scaled curvature history: restart from a scaled
        # steepest-descent step before reporting no progress
        state = replace(state, history=[])
        accepted, _ = line_search(-gflat, scaled_first_step())
    if accepted is None:
        return x0, state, StepInfo(f0, f0, 0.0, evals, False, False, parts0)

    x1, f1, parts1, g1, t = accepted
    if g1 is None:
        f1b, parts1, g1 = oracle(x1, True)
        evals += 1
        f1 = f1b
    s = (x1.astype(np.float64) - x0.astype(np.float64)).ravel()
    y = (g1.astype(np.float64) - g0.astype(np.float64)).ravel()
    sy = float(np.sum(s * y, dtype=np.float64))
    snorm = float(np.sqrt(np.sum(s * s, dtype=np.float64)))
    ynorm = float(np.sqrt(np.sum(y * y, dtype=np.float64)))
    history = list(state.history)
    # keep only well-conditioned pairs; near-noise pairs poison the scaling
    if sy > 1e-10 and sy > 1e-8 * snorm * ynorm:
        history.append((s, y, 1.0 / sy))
        if len(history) > config.history:
            history.pop(0)
    new_state = LbfgsState(history=history, f=f1, grad=g1, parts=parts1,
                           first_step_done=True)
    return x1, new_state, StepInfo(f0, f1, t, evals, True, False, parts0)


# ---------------------------------------------------------------------------
# pixel optimization driver


@dataclass
class OptimizeResult:
    final: np.ndarray
    trace: list[dict]  # loss parts at the start of each executed iteration
    final_parts: dict
    stop_reason: str
    iterations: int
    evals: int


def _wrap_objective(objective: Objective):
    def oracle(x: np.ndarray, need_grad: bool):
        img = Tensor(x, requires_grad=need_grad)
        total, parts = objective(img)
        f = total.item()
        parts = dict(parts)
        parts["total"] = f
        if not need_grad:
            return f, parts, None
        g = backprop(total, [img])[img].data
        return f, parts, g

    return oracle


def optimize_pixels(initial, objective: Objective,
                    config: OptimizerConfig) -> OptimizeResult:
    """Minimize a differentiable image objective from ``initial``.

    The trace records loss parts evaluated at the start of every executed
    iteration; ``final_parts`` is evaluated at the returned image. Zero
    iterations yield an empty trace and the initial image unchanged.
    """
    x = (initial.data if isinstance(initial, Tensor) else np.asarray(initial))
    x = np.array(x, dtype=np.float32)
    oracle = _wrap_objective(objective)
    trace: list[dict] = []
    evals = 0
    stop = "max_iterations"

    if config.kind == "adam":
        state_a = AdamState.init(x.shape)
        prev_f = None
        for i in range(config.max_iterations):
            try:
                f, parts, g = oracle(x, True)
            except NumericError as exc:
                raise NumericError(f"iteration {i}: {exc}") from exc
            evals += 1
            trace.append(parts)
            x, state_a = adam_step(state_a, x, g, config)
            if prev_f is not None and config.tolerance > 0:
                if abs(prev_f - f) <= config.tolerance * max(1.0, abs(prev_f)):
                    stop = "tolerance"
                    prev_f = f
                    break
            prev_f = f
    else:
        state_l = LbfgsState()
        for i in range(config.max_iterations):
            try:
                x, state_l, info = lbfgs_step(state_l, x, oracle, config)
            except NumericError as exc:
                raise NumericError(f"iteration {i}: {exc}") from exc
            evals += info.evals
            trace.append(info.parts_before or {"total": info.loss_before})
            if info.converged:
                stop = "converged"
                break
            if not info.accepted:
                stop = "no_progress"
                break
            if config.tolerance > 0:
                rel = abs(info.loss_before - info.loss_after) / max(1.0, abs(info.loss_before))
                if rel <= config.tolerance:
                    stop = "tolerance"
                    break

    try:
        f, final_parts, _ = oracle(x, False)
    except NumericError as exc:
        raise NumericError(f"final evaluation: {exc}") from exc
    evals += 1
    return OptimizeResult(final=x, trace=trace, final_parts=final_parts,
                          stop_reason=stop, iterations=len(trace), evals=evals)
