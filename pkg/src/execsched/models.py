"""Parameter sets and one-step transitions for the five laws of price motion.

Transitions are pure: noise enters as externally supplied standard-normal
draws, so the simulator is the single owner of randomness and identical
inputs always produce bit-identical successor states.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

__all__ = [
    "Benchmark",
    "Ar1Extra",
    "LinearPercentage",
    "Liquidity",
    "Spread",
    "ModelParams",
    "MarketState",
    "LiquidityViolationError",
    "DegeneratePathWarning",
    "step",
    "convexity_check",
    "ar1_volume_update",
]


class LiquidityViolationError(ValueError):
    """A trade larger than the volume available in the interval was requested."""


class DegeneratePathWarning(UserWarning):
    """A liquidity-law price path was driven to a nonpositive price."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def _require_finite(**named: float) -> None:
    for name, value in named.items():
        _require(math.isfinite(value), f"{name} must be finite, got {value}")


@dataclass(frozen=True)
class Benchmark:
    """Arithmetic walk with additive linear impact: P' = P + theta*S + eps."""

    theta: float
    sigma_eps: float

    def __post_init__(self) -> None:
        _require_finite(theta=self.theta, sigma_eps=self.sigma_eps)
        _require(self.theta > 0.0, f"theta must be > 0, got {self.theta}")
        # sigma_eps = 0 is a legal (deterministic) law for simulation; the
        # solvers reject it themselves since their premium kernel needs a
        # positive noise scale.
        _require(self.sigma_eps >= 0.0, f"sigma_eps must be >= 0, got {self.sigma_eps}")


@dataclass(frozen=True)
class Ar1Extra:
    """Benchmark walk plus a gamma-weighted AR(1) information state X.

    X' = rho*X + eta,  P' = P + theta*S + gamma*X' + eps.
    """

    theta: float
    gamma: float
    rho: float
    sigma_eps: float
    sigma_eta: float

    def __post_init__(self) -> None:
        _require_finite(
            theta=self.theta,
            gamma=self.gamma,
            rho=self.rho,
            sigma_eps=self.sigma_eps,
            sigma_eta=self.sigma_eta,
        )
        _require(self.theta > 0.0, f"theta must be > 0, got {self.theta}")
        _require(abs(self.rho) < 1.0, f"rho must satisfy |rho| < 1, got {self.rho}")
        _require(self.sigma_eps > 0.0, f"sigma_eps must be > 0, got {self.sigma_eps}")
        _require(self.sigma_eta > 0.0, f"sigma_eta must be > 0, got {self.sigma_eta}")


@dataclass(frozen=True)
class LinearPercentage:
    """Geometric no-impact price with a percentage impact overlay.

    P~' = P~ * e^B with B ~ N(mu_B, sigma_B^2), X' = rho*X + eta, and the
    observed price carries the fractional premium: P' = P~' * (1 + theta*S
    + gamma*X').
    """

    mu_B: float
    sigma_B: float
    theta: float
    gamma: float
    rho: float
    sigma_eta: float

    def __post_init__(self) -> None:
        _require_finite(
            mu_B=self.mu_B,
            sigma_B=self.sigma_B,
            theta=self.theta,
            gamma=self.gamma,
            rho=self.rho,
            sigma_eta=self.sigma_eta,
        )
        _require(self.theta > 0.0, f"theta must be > 0, got {self.theta}")
        _require(abs(self.rho) < 1.0, f"rho must satisfy |rho| < 1, got {self.rho}")
        _require(self.sigma_B > 0.0, f"sigma_B must be > 0, got {self.sigma_B}")
        _require(self.sigma_eta > 0.0, f"sigma_eta must be > 0, got {self.sigma_eta}")


@dataclass(frozen=True)
class Liquidity:
    """Multiplicative walk where untraded volume depresses the price.

    O' = max(rho*O + eta, 0),
    P' = (alpha + 1)*P + theta*S*P - gamma*(O' - S)*P + eps,
    subject to the interval volume constraint S <= O'.  ``beta`` is the
    derived coefficient theta + gamma that multiplies own trading once the
    law is rearranged around total volume.
    """

    alpha: float
    theta: float
    gamma: float
    rho: float
    sigma_eps: float
    sigma_eta: float
    beta: float = field(init=False)

    def __post_init__(self) -> None:
        _require_finite(
            alpha=self.alpha,
            theta=self.theta,
            gamma=self.gamma,
            rho=self.rho,
            sigma_eps=self.sigma_eps,
            sigma_eta=self.sigma_eta,
        )
        _require(self.theta > 0.0, f"theta must be > 0, got {self.theta}")
        _require(self.gamma > 0.0, f"gamma must be > 0, got {self.gamma}")
        _require(abs(self.rho) < 1.0, f"rho must satisfy |rho| < 1, got {self.rho}")
        _require(self.sigma_eps > 0.0, f"sigma_eps must be > 0, got {self.sigma_eps}")
        _require(self.sigma_eta > 0.0, f"sigma_eta must be > 0, got {self.sigma_eta}")
        object.__setattr__(self, "beta", self.theta + self.gamma)


@dataclass(frozen=True)
class Spread(Ar1Extra):
    """Spread-state variant: identical law with aux read as the quoted spread Q."""


ModelParams = Benchmark | Ar1Extra | LinearPercentage | Liquidity


@dataclass(frozen=True)
class MarketState:
    """Point-in-time market state.

    ``aux`` is the variant's second coordinate: the information state X, the
    interval volume O, or the spread Q.  ``no_impact_price`` is only
    meaningful under LinearPercentage.
    """

    price: float
    aux: float = 0.0
    no_impact_price: float | None = None
    time_index: int = 0

    def __post_init__(self) -> None:
        _require_finite(price=self.price, aux=self.aux)
        if self.no_impact_price is not None:
            _require(
                math.isfinite(self.no_impact_price) and self.no_impact_price > 0.0,
                f"no_impact_price must be > 0, got {self.no_impact_price}",
            )
        _require(
            isinstance(self.time_index, int) and self.time_index >= 0,
            f"time_index must be a nonnegative integer, got {self.time_index!r}",
        )


def ar1_volume_update(params: Liquidity, volume: float, z: float) -> tuple[float, bool]:
    """One AR(1) volume update, clamped at zero.

    Returns the new volume and whether the clamp fired; callers that track
    path diagnostics count the flags, everything else discards them.
    """
    raw = params.rho * volume + params.sigma_eta * z
    if raw < 0.0:
        return 0.0, True
    return raw, False


def step(
    params: ModelParams,
    state: MarketState,
    trade: float,
    noise: tuple[float, float],
) -> MarketState:
    """Advance the market one stage under the variant's law of motion.

    Parameters
    ----------
    params : ModelParams
        Variant parameters.
    state : MarketState
        State entering the stage.
    trade : float
        Shares executed this stage; must be >= 0.
    noise : (float, float)
        Standard-normal draws.  The first drives the price shock (eps, or
        the log-return B under LinearPercentage), the second the auxiliary
        state shock eta; each is scaled by its sigma here.

    Raises
    ------
    LiquidityViolationError
        Under Liquidity, when the trade exceeds the interval volume after
        its AR(1) update.
    """
    if not math.isfinite(trade) or trade < 0.0:
        raise ValueError(f"trade must be finite and >= 0, got {trade}")
    z_price, z_aux = float(noise[0]), float(noise[1])

    if isinstance(params, Benchmark):
        price = state.price + params.theta * trade + params.sigma_eps * z_price
        return MarketState(price=price, aux=state.aux, time_index=state.time_index + 1)

    if isinstance(params, Ar1Extra):  # includes Spread
        x_new = params.rho * state.aux + params.sigma_eta * z_aux
        price = (
            state.price
            + params.theta * trade
            + params.gamma * x_new
            + params.sigma_eps * z_price
        )
        return MarketState(price=price, aux=x_new, time_index=state.time_index + 1)

    if isinstance(params, LinearPercentage):
        if state.no_impact_price is None:
            raise ValueError("LinearPercentage requires state.no_impact_price")
        b = params.mu_B + params.sigma_B * z_price
        p_tilde = state.no_impact_price * math.exp(b)
        x_new = params.rho * state.aux + params.sigma_eta * z_aux
        price = p_tilde * (1.0 + params.theta * trade + params.gamma * x_new)
        return MarketState(
            price=price,
            aux=x_new,
            no_impact_price=p_tilde,
            time_index=state.time_index + 1,
        )

    if isinstance(params, Liquidity):
        volume, _ = ar1_volume_update(params, state.aux, z_aux)
        if trade > volume:
            raise LiquidityViolationError(
                f"trade {trade} exceeds interval volume {volume} at t={state.time_index + 1}"
            )
        price = (
            state.price
            * (params.alpha + 1.0 + params.theta * trade - params.gamma * (volume - trade))
            + params.sigma_eps * z_price
        )
        if price <= 0.0:
            warnings.warn(
                f"liquidity price path reached nonpositive price {price} at "
                f"t={state.time_index + 1}",
                DegeneratePathWarning,
                stacklevel=2,
            )
        return MarketState(price=price, aux=volume, time_index=state.time_index + 1)

    raise TypeError(f"unsupported model parameters: {type(params).__name__}")


def convexity_check(params: ModelParams) -> bool:
    """Whether the one-stage expected cost is convex: theta > (3/4)*sigma_eps.

    Defined for the Benchmark variant only; solvers warn (and proceed) when
    this returns False, since optima found by local methods are then not
    guaranteed global.
    """
    if not isinstance(params, Benchmark):
        raise ValueError(
            f"convexity_check is defined for Benchmark only, got {type(params).__name__}"
        )
    return params.theta > 0.75 * params.sigma_eps
