"""Schedule solver for the geometric no-impact price with percentage impact.

The observed price is P_t = P~_t(1 + theta*S_t + gamma*X_t) around a
log-normal no-impact price P~_t = P~_{t-1}e^{B_t}, so each stage premium is
a conditional expectation of e^X*Y + k (normal log-normal mixture) rather
than a plain truncated normal.  Value functions are linear in P~, which lets
the recursion work per unit of no-impact price with the price ratio
r_t = P_{t-1}/P~_{t-1} frozen along the certainty-equivalent trajectory.

The auxiliary state X survives into the continuation, so E[V_{t+1}] is
approximated by least-squares polynomial fits in X on stratified samples of
the X-marginal (the usual regression treatment of a conditioning variable in
simulation-based recursions), with the fitted basis integrated against the
AR(1) innovation in closed form.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import ndtri

from execsched.dp import (
    ClosedLinearPolicy,
    Horizon,
    NumericalPolicy,
    PolicyTable,
    RecursionConfig,
    Schedule,
    _build_mesh,
    _vec_golden,
)
from execsched.kernels import (
    MixtureRegimeError,
    _lognormal_shift_conditional,
    _mixture_expectation_gh,
)
from execsched.models import LinearPercentage, MarketState

__all__ = ["solve_gbm_simple"]

# Grid refinement is capped for this model: every objective evaluation costs
# a Gauss-Hermite pass over the mixture, and the spline payoff from refine=8
# is far below the regression error in X.
_GBM_MAX_REFINE = 2


def _stage_premium(params: LinearPercentage, s, x, ratio: float, order: int):
    """Per-share, per-unit-P~ premium E[D | D > 0] for a stage trade s at state x.

    D/P~ = e^B * Y - ratio with Y ~ N(1 + theta*s + gamma*rho*x, (gamma*sigma_eta)^2).
    """
    mu_y = 1.0 + params.theta * np.asarray(s, dtype=float) + params.gamma * params.rho * np.asarray(
        x, dtype=float
    )
    if params.gamma == 0.0:
        return _lognormal_shift_conditional(params.mu_B, params.sigma_B, mu_y, -ratio)
    return _mixture_expectation_gh(
        params.mu_B,
        params.sigma_B,
        mu_y,
        params.gamma * params.sigma_eta,
        -ratio,
        order=order,
    )


def _x_samples(params: LinearPercentage, x0: float, t: int, m: int) -> np.ndarray:
    """Stratified quantile samples of the X_{t-1} marginal (atom x0 at t=1)."""
    if t == 1 or params.gamma == 0.0:
        return np.array([x0 if t == 1 else params.rho ** (t - 1) * x0])
    mean = params.rho ** (t - 1) * x0
    var = params.sigma_eta**2 * sum(params.rho ** (2 * j) for j in range(t - 1))
    z = ndtri((np.arange(m) + 0.5) / m)
    return mean + math.sqrt(var) * z


def _eta_moments(m, sigma: float, degree: int) -> list:
    """Raw moments E[(m + eta)^d] for eta ~ N(0, sigma^2), d = 0..degree."""
    m = np.asarray(m, dtype=float)
    v = sigma * sigma
    out = [np.ones_like(m), m, m * m + v]
    if degree >= 3:
        out.append(m**3 + 3.0 * m * v)
    if degree >= 4:
        out.append(m**4 + 6.0 * m * m * v + 3.0 * v * v)
    return out[: degree + 1]


def _fit_continuation(
    params: LinearPercentage,
    nodes: np.ndarray,
    v_grid: np.ndarray,
    x_next: np.ndarray,
    x_now: np.ndarray,
    degree: int,
) -> list[PchipInterpolator]:
    """Splines of w -> E_eta[v_{t+1}(w, rho*x + eta)] for each current sample x.

    ``v_grid`` holds v_{t+1} at (node, x_next-sample); the X dependence is
    fitted per node with a least-squares polynomial and the AR(1) innovation
    integrated against the basis in closed form.
    """
    if x_next.size == 1:
        g = np.tile(v_grid[:, 0][:, None], (1, x_now.size))
    else:
        deg = min(degree, x_next.size - 1)
        # polynomial.polyfit returns coefficients per column, low order first
        coeffs = np.polynomial.polynomial.polyfit(x_next, v_grid.T, deg)
        moments = _eta_moments(params.rho * x_now, params.sigma_eta, deg)
        g = np.zeros((nodes.size, x_now.size))
        for d in range(deg + 1):
            g += coeffs[d][:, None] * moments[d][None, :]
    g = np.maximum(g, 0.0)
    g[0, :] = 0.0  # v(0, x) = 0 exactly
    return [PchipInterpolator(nodes, g[:, j], extrapolate=False) for j in range(x_now.size)]


def _minimize_stage(
    params: LinearPercentage,
    w: np.ndarray,
    x: np.ndarray,
    ratio: float,
    cont_splines: list[PchipInterpolator] | None,
    e_fac: float,
    cfg: RecursionConfig,
):
    """Golden-section minimization of s*premium + E[e^B]*cont over s in [0, w].

    ``w`` and ``x`` are broadcast to pairs; returns (s*, value) per pair.
    """
    W, X = np.meshgrid(w, x, indexing="ij")
    w_flat, x_flat = W.ravel(), X.ravel()
    if cont_splines is None:
        s_flat = w_flat.copy()
        v_flat = s_flat * _stage_premium(params, s_flat, x_flat, ratio, cfg.quad_order)
        return s_flat.reshape(W.shape), v_flat.reshape(W.shape)

    idx = np.repeat(np.arange(x.size)[None, :], w.size, axis=0).ravel()

    def cont_at(r):
        r = np.clip(r, 0.0, None)
        out = np.empty_like(r)
        for j, spline in enumerate(cont_splines):
            mask = idx == j
            out[mask] = spline(np.minimum(r[mask], spline.x[-1]))
        return out

    def objective(s):
        prem = _stage_premium(params, s, x_flat, ratio, cfg.quad_order)
        return s * prem + e_fac * cont_at(w_flat - s)

    lo = np.zeros_like(w_flat)
    s_flat = _vec_golden(objective, lo, w_flat, cfg.golden_iters)
    candidates = np.stack([s_flat, lo, w_flat])
    values = np.stack([objective(c) for c in candidates])
    pick = np.argmin(values, axis=0)
    s_flat = candidates[pick, np.arange(s_flat.size)]
    v_flat = values[pick, np.arange(s_flat.size)]
    return s_flat.reshape(W.shape), v_flat.reshape(W.shape)


def solve_gbm_simple(
    params: LinearPercentage,
    horizon: Horizon,
    state: MarketState,
    config: RecursionConfig | None = None,
) -> tuple[Schedule, PolicyTable]:
    """Trade-weighted cost under the linear-percentage law of motion.

    The terminal stage prices the forced trade with the normal log-normal
    mixture kernel; earlier stages run the regression recursion described in
    the module docstring.  Published policies and value samples are taken on
    the certainty-equivalent trajectory (B at its mean, X propagated by rho);
    value samples are in currency (per-unit values scaled by the CE no-impact
    price entering each stage).
    """
    cfg = config or RecursionConfig()
    if state.no_impact_price is None:
        raise ValueError("solve_gbm_simple needs state.no_impact_price (the P~ level)")
    T, total = horizon.T, horizon.total_shares
    x0 = state.aux
    e_fac = math.exp(params.mu_B + 0.5 * params.sigma_B**2)

    # CE price ratios r_t = P_{t-1}/P~_{t-1}: observed at t=1, then frozen
    # along a provisional equal split.
    ratios = [state.price / state.no_impact_price]
    for t in range(2, T + 1):
        ratios.append(
            1.0 + params.theta * (total / T) + params.gamma * params.rho ** (t - 1) * x0
        )
    for t, r in enumerate(ratios, start=1):
        if r <= 0.0:
            raise MixtureRegimeError(
                f"stage {t}: certainty-equivalent price ratio {r} is not positive; "
                "the conditional premium kernel needs k = -ratio < 0"
            )

    if cfg.refine > _GBM_MAX_REFINE:
        cfg = dataclasses.replace(cfg, refine=_GBM_MAX_REFINE)
    scale = math.hypot(params.sigma_B, params.gamma * params.sigma_eta) / params.theta
    mesh = _build_mesh(total, scale, cfg)
    fine, nodes, oi = mesh.fine, mesh.nodes, mesh.official_idx

    metadata = {
        "model": "linear_percentage",
        "formulation": "simple",
        "method": "regression-recursion",
        "grid_nodes": cfg.grid_nodes,
        "x0": x0,
        "price_ratio": ratios[0],
    }

    if T == 1:
        s_grid, v_grid = _minimize_stage(
            params, mesh.official, np.array([x0]), ratios[0], None, e_fac, cfg
        )
        samples = (np.column_stack([mesh.official, state.no_impact_price * v_grid[:, 0]]),)
        table = PolicyTable(
            stages=(ClosedLinearPolicy(1.0),), value_samples=samples, metadata=metadata
        )
        return Schedule.from_trades([total], total), table

    m = cfg.regression_samples if cfg.regression_samples % 2 == 1 else cfg.regression_samples + 1
    stage_x = {t: _x_samples(params, x0, t, m) for t in range(1, T + 1)}
    ce_idx = {t: stage_x[t].size // 2 for t in range(1, T + 1)}

    # Terminal stage on the fine grid, then fit and walk backward.
    policies: dict[int, np.ndarray] = {}
    values: dict[int, np.ndarray] = {}
    stage_conts: dict[int, PchipInterpolator] = {}

    _, v_fine = _minimize_stage(params, fine, stage_x[T], ratios[T - 1], None, e_fac, cfg)
    values[T] = v_fine[oi, ce_idx[T]]

    v_with_zero = np.vstack([np.zeros((1, stage_x[T].size)), v_fine])
    for t in range(T - 1, 0, -1):
        splines = _fit_continuation(
            params, nodes, v_with_zero, stage_x[t + 1], stage_x[t], cfg.regression_degree
        )
        stage_conts[t] = splines[ce_idx[t]]
        s_fine, v_fine = _minimize_stage(
            params, fine, stage_x[t], ratios[t - 1], splines, e_fac, cfg
        )
        policies[t] = s_fine[oi, ce_idx[t]]
        values[t] = v_fine[oi, ce_idx[t]]
        v_with_zero = np.vstack([np.zeros((1, stage_x[t].size)), v_fine])

    # Forward certainty-equivalent pass at the exact residuals.
    trades: list[float] = []
    w = total
    for t in range(1, T):
        x_ce = float(stage_x[t][ce_idx[t]])
        spline = stage_conts[t]

        def objective(s, _x=x_ce, _w=w, _spl=spline, _r=ratios[t - 1]):
            prem = _stage_premium(params, s, _x, _r, cfg.quad_order)
            r = np.clip(_w - s, 0.0, _spl.x[-1])
            return s * prem + e_fac * _spl(r)

        s = float(_vec_golden(objective, np.array([0.0]), np.array([w]), cfg.golden_iters)[0])
        best = min((float(objective(np.array([c]))[0]), c) for c in (s, 0.0, w))
        trades.append(best[1])
        w -= best[1]
    trades.append(w)

    official = mesh.official
    stages: list = []
    samples: list[np.ndarray] = []
    for t in range(1, T):
        p_tilde_ce = state.no_impact_price * math.exp((t - 1) * params.mu_B)
        stages.append(NumericalPolicy(grid=official, trades=policies[t]))
        samples.append(np.column_stack([official, p_tilde_ce * values[t]]))
    stages.append(ClosedLinearPolicy(1.0))
    p_tilde_ce = state.no_impact_price * math.exp((T - 1) * params.mu_B)
    samples.append(np.column_stack([official, p_tilde_ce * values[T]]))
    table = PolicyTable(stages=tuple(stages), value_samples=tuple(samples), metadata=metadata)
    return Schedule.from_trades(trades, total), table
