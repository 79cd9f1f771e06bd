"""Trend-label gate: technical rules layered over model probabilities.

Rule order: an overheated-RSI / far-from-breakout hard intercept forces
sideways; otherwise a sufficiently confident up forecast passes when a
bullish pattern supports it; otherwise a confident down forecast passes;
everything else defaults to sideways.
"""

from __future__ import annotations

from dataclasses import dataclass

from .marketdata import IndicatorSnapshot

LABELS = ("up", "down", "sideways")

PATH_HARD_INTERCEPT = "hard_intercept"
PATH_SOFT_UP = "soft_pass_up"
PATH_SOFT_DOWN = "soft_pass_down"
PATH_DEFAULT = "default_sideways"

_PROB_SUM_TOL = 1e-6


@dataclass(frozen=True)
class TrendProbabilities:
    """Probability triple over the three trend labels; must sum to ~1."""

    up: float
    down: float
    sideways: float

    def __post_init__(self) -> None:
        for name, p in (("up", self.up), ("down", self.down), ("sideways", self.sideways)):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {name}={p} outside [0, 1]")
        total = self.up + self.down + self.sideways
        if abs(total - 1.0) > _PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {total}, expected 1")

    def prob_of(self, label: str) -> float:
        if label not in LABELS:
            raise ValueError(f"unknown label {label!r}")
        return {"up": self.up, "down": self.down, "sideways": self.sideways}[label]


@dataclass(frozen=True)
class TrendLabel:
    """Final gated label plus the rule path that produced it."""

    label: str
    path: str
    reason: str

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        if self.path == PATH_HARD_INTERCEPT and self.label != "sideways":
            raise ValueError("hard intercept must yield sideways")


@dataclass(frozen=True)
class GateConfig:
    rsi_overheat: float = 70.0
    up_prob_threshold: float = 0.55
    down_prob_threshold: float = 0.55
    atr_breakout_coeff: float = 0.5
    breakout_floor_pct: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.rsi_overheat < 100.0:
            raise ValueError("rsi_overheat must be in (0, 100)")
        for name, p in (
            ("up_prob_threshold", self.up_prob_threshold),
            ("down_prob_threshold", self.down_prob_threshold),
        ):
            if not 0.0 < p < 1.0:
                raise ValueError(f"{name} must be in (0, 1)")
        if self.atr_breakout_coeff < 0 or self.breakout_floor_pct < 0:
            raise ValueError("breakout parameters must be non-negative")


def breakout_threshold(atr20s_pct: float, cfg: GateConfig = GateConfig()) -> float:
    """Percent move that separates an approach to a high from a breakout."""
    if atr20s_pct < 0:
        raise ValueError(f"atr20s_pct must be non-negative, got {atr20s_pct}")
    return max(cfg.breakout_floor_pct, cfg.atr_breakout_coeff * atr20s_pct)


def classify_trend(
    probs: TrendProbabilities,
    snap: IndicatorSnapshot,
    cfg: GateConfig = GateConfig(),
) -> TrendLabel:
    """Apply the gate rules to a probability triple and technical snapshot."""
    threshold = breakout_threshold(snap.atr20s_pct, cfg)

    if snap.rsi14 > cfg.rsi_overheat and abs(snap.dist_high20_pct) > threshold:
        return TrendLabel(
            "sideways",
            PATH_HARD_INTERCEPT,
            f"rsi {snap.rsi14:.2f} overheated while {abs(snap.dist_high20_pct):.2f}% "
            f"from the 20-day high exceeds the {threshold:.2f}% breakout threshold",
        )

    near_breakout = snap.new_high20 or abs(snap.dist_high20_pct) <= threshold
    healthy_pullback = -3.0 <= snap.dist_sma20_pct <= 0.0 and snap.rsi14 < 40.0
    if probs.up > cfg.up_prob_threshold and (near_breakout or healthy_pullback):
        pattern = "breakout proximity" if near_breakout else "healthy pullback"
        return TrendLabel(
            "up",
            PATH_SOFT_UP,
            f"p_up {probs.up:.3f} above {cfg.up_prob_threshold} with {pattern}",
        )

    if probs.down > cfg.down_prob_threshold:
        return TrendLabel(
            "down",
            PATH_SOFT_DOWN,
            f"p_down {probs.down:.3f} above {cfg.down_prob_threshold}",
        )

    return TrendLabel("sideways", PATH_DEFAULT, "no rule admitted a directional label")
