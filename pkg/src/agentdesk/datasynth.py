"""Label every forecast and decision against realized prices and export
fine-tuning-ready trajectory records.

Forecast labels use a volatility-scaled sideways band: a move counts as
directional only beyond epsilon. Decision labels simulate all three
actions from the same pre-action account (executed at the day's close,
marked at the next close) and score each against a buy-and-hold benchmark
net of commission drag.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from datetime import date as Date
from pathlib import Path
from typing import Sequence

from .errors import DataError
from .gate import TrendLabel
from .marketdata import PriceSeries, trailing_log_returns
from .portfolio import ACTION_KINDS, AccountState, TradeAction, apply_action
from .risk import TradingStyle

BAND_WINDOW = 20


@dataclass(frozen=True)
class BandConfig:
    alpha: float = 1.0
    epsilon_min: float = 0.005

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.epsilon_min <= 0:
            raise ValueError("epsilon_min must be positive")


@dataclass(frozen=True)
class RewardConfig:
    beta: float = 0.2
    gamma: float = 1.0

    def __post_init__(self) -> None:
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("penalty coefficients must be non-negative")


@dataclass(frozen=True)
class ForecastLabel:
    epsilon: float
    pct: float
    sign_ok: int
    p_true: float
    w_hit: float


@dataclass(frozen=True)
class DecisionLabel:
    r_eq: dict[str, float]
    r_bm: float
    c: dict[str, float]
    reward: dict[str, float]
    taken: str
    taken_reward: float


@dataclass(frozen=True)
class AccountSnapshot:
    cash: float
    shares: float
    equity: float
    style: str


@dataclass(frozen=True)
class TrajectoryRecord:
    """One agent-day unit of logged work, labeled once the next close is
    known. Field order is the stable on-disk contract."""

    date: Date
    symbol: str
    agent_name: str
    prompt_digest: str
    input_text: str
    output_text: str
    reasoning_trace: str
    account_snapshot: AccountSnapshot
    forecast_label: ForecastLabel | None = None
    decision_label: DecisionLabel | None = None


@dataclass(frozen=True)
class SftSample:
    instruction: str
    response: str
    score: float
    source: str  # forecast | decision


# ---------------------------------------------------------------------------
# Forecast labeling
# ---------------------------------------------------------------------------

def epsilon_band(series: PriceSeries, at: Date, cfg: BandConfig = BandConfig()) -> float:
    """Sideways band: scaled mean absolute log return over 20 days, floored."""
    returns = trailing_log_returns(series, at, BAND_WINDOW)
    mean_abs = math.fsum(abs(r) for r in returns) / BAND_WINDOW
    return max(cfg.alpha * mean_abs, cfg.epsilon_min)


def realized_pct(p0: float, p1: float) -> float:
    """Fractional move from the prediction-day close to the next close."""
    if p0 <= 0:
        raise ValueError(f"p0 must be positive, got {p0}")
    return p1 / p0 - 1.0


def label_direction(predicted: TrendLabel | str, pct: float, epsilon: float) -> int:
    """1 iff the predicted direction matches the realized move.

    Up needs pct > epsilon, down needs pct < -epsilon, and sideways needs
    |pct| <= epsilon.
    """
    label = predicted.label if isinstance(predicted, TrendLabel) else predicted
    if label == "up":
        return int(pct > epsilon)
    if label == "down":
        return int(pct < -epsilon)
    if label == "sideways":
        return int(abs(pct) <= epsilon)
    raise ValueError(f"unknown label {label!r}")


def weighted_hit(sign_ok: int, pct: float, epsilon: float, p_true: float) -> float:
    """Hit bonus: correctness times band-scaled move size times confidence."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not 0.0 <= p_true <= 1.0:
        raise ValueError(f"p_true={p_true} outside [0, 1]")
    if sign_ok not in (0, 1):
        raise ValueError(f"sign_ok must be 0 or 1, got {sign_ok}")
    return sign_ok * math.tanh(abs(pct) / epsilon) * p_true


def realized_label(pct: float, epsilon: float) -> str:
    if pct > epsilon:
        return "up"
    if pct < -epsilon:
        return "down"
    return "sideways"


# ---------------------------------------------------------------------------
# Decision labeling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CounterfactualOutcome:
    equity: dict[str, float]
    commission: dict[str, float]


def counterfactual_equities(
    account: AccountState,
    style: TradingStyle,
    price_exec: float,
    price_next: float,
    commission_rate: float,
    at: Date,
) -> CounterfactualOutcome:
    """Next-close equity of each of buy/hold/sell applied to a clone of the
    account at the execution price. The live account is untouched."""
    if price_exec <= 0 or price_next <= 0:
        raise ValueError("prices must be positive")
    equity: dict[str, float] = {}
    commission: dict[str, float] = {}
    for kind in ACTION_KINDS:
        clone, record = apply_action(
            account, TradeAction(kind, style), price_exec, commission_rate, at
        )
        equity[kind] = clone.cash + clone.shares * price_next
        commission[kind] = record.commission
    return CounterfactualOutcome(equity, commission)


def action_reward(
    e_prev: float,
    e_a: float,
    r_bm: float,
    commission_a: float,
    cfg: RewardConfig = RewardConfig(),
) -> float:
    """Simulated action return minus benchmark and commission penalties."""
    if e_prev <= 0:
        raise ValueError(f"e_prev must be positive, got {e_prev}")
    r_eq = (e_a - e_prev) / e_prev
    c_a = commission_a / e_prev
    return r_eq - cfg.beta * r_bm - cfg.gamma * c_a


def make_forecast_label(
    series: PriceSeries,
    at: Date,
    next_at: Date,
    gated: TrendLabel,
    prob_of,
    band_cfg: BandConfig = BandConfig(),
) -> ForecastLabel:
    """Label one day's forecast once the next close is known.

    `prob_of` maps a trend label to the probability the forecast assigned
    it; p_true reads the probability of the realized label.
    """
    epsilon = epsilon_band(series, at, band_cfg)
    pct = realized_pct(series.close_at(at), series.close_at(next_at))
    sign_ok = label_direction(gated, pct, epsilon)
    p_true = prob_of(realized_label(pct, epsilon))
    return ForecastLabel(
        epsilon=epsilon,
        pct=pct,
        sign_ok=sign_ok,
        p_true=p_true,
        w_hit=weighted_hit(sign_ok, pct, epsilon, p_true),
    )


def make_decision_label(
    series: PriceSeries,
    at: Date,
    next_at: Date,
    account_before: AccountState,
    style: TradingStyle,
    taken: str,
    commission_rate: float,
    reward_cfg: RewardConfig = RewardConfig(),
) -> DecisionLabel:
    """Label one day's decision against its two counterfactual siblings.

    `taken` is the action the decision agent chose; a risk override may
    have executed something else, but the label scores the agent.
    """
    price_exec = series.close_at(at)
    price_next = series.close_at(next_at)
    e_prev = account_before.cash + account_before.shares * price_exec
    r_bm = realized_pct(price_exec, price_next)
    outcome = counterfactual_equities(
        account_before, style, price_exec, price_next, commission_rate, at
    )
    r_eq = {k: (outcome.equity[k] - e_prev) / e_prev for k in ACTION_KINDS}
    c = {k: outcome.commission[k] / e_prev for k in ACTION_KINDS}
    reward = {
        k: action_reward(e_prev, outcome.equity[k], r_bm, outcome.commission[k], reward_cfg)
        for k in ACTION_KINDS
    }
    return DecisionLabel(
        r_eq=r_eq, r_bm=r_bm, c=c, reward=reward,
        taken=taken, taken_reward=reward[taken],
    )


# ---------------------------------------------------------------------------
# Day-level composition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DayState:
    """Everything needed to label one backtest day after the fact."""

    date: Date
    records: tuple[TrajectoryRecord, ...]
    gated: TrendLabel
    prob_of: object  # label -> probability
    taken: str
    account_before: AccountState
    style: TradingStyle


def label_day(
    state: DayState,
    series: PriceSeries,
    next_at: Date,
    commission_rate: float,
    band_cfg: BandConfig = BandConfig(),
    reward_cfg: RewardConfig = RewardConfig(),
) -> tuple[tuple[TrajectoryRecord, ...], ForecastLabel, DecisionLabel]:
    """Attach forecast/decision labels to a day's records."""
    forecast_label = make_forecast_label(
        series, state.date, next_at, state.gated, state.prob_of, band_cfg
    )
    decision_label = make_decision_label(
        series, state.date, next_at, state.account_before, state.style,
        state.taken, commission_rate, reward_cfg,
    )
    labeled = []
    for record in state.records:
        if record.agent_name == "forecast":
            labeled.append(replace(record, forecast_label=forecast_label))
        elif record.agent_name == "decision":
            labeled.append(replace(record, decision_label=decision_label))
        else:
            labeled.append(record)
    return tuple(labeled), forecast_label, decision_label


# ---------------------------------------------------------------------------
# Serialization and SFT export
# ---------------------------------------------------------------------------

def prompt_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def record_to_dict(record: TrajectoryRecord) -> dict:
    return {
        "date": str(record.date),
        "symbol": record.symbol,
        "agent_name": record.agent_name,
        "prompt_digest": record.prompt_digest,
        "input_text": record.input_text,
        "output_text": record.output_text,
        "reasoning_trace": record.reasoning_trace,
        "account_snapshot": {
            "cash": record.account_snapshot.cash,
            "shares": record.account_snapshot.shares,
            "equity": record.account_snapshot.equity,
            "style": record.account_snapshot.style,
        },
        "forecast_label": None if record.forecast_label is None else {
            "epsilon": record.forecast_label.epsilon,
            "pct": record.forecast_label.pct,
            "sign_ok": record.forecast_label.sign_ok,
            "p_true": record.forecast_label.p_true,
            "w_hit": record.forecast_label.w_hit,
        },
        "decision_label": None if record.decision_label is None else {
            "r_eq": record.decision_label.r_eq,
            "r_bm": record.decision_label.r_bm,
            "c": record.decision_label.c,
            "reward": record.decision_label.reward,
            "taken": record.decision_label.taken,
            "taken_reward": record.decision_label.taken_reward,
        },
    }


def record_from_dict(obj: dict) -> TrajectoryRecord:
    snap = obj["account_snapshot"]
    fl = obj.get("forecast_label")
    dl = obj.get("decision_label")
    return TrajectoryRecord(
        date=Date.fromisoformat(obj["date"]),
        symbol=obj["symbol"],
        agent_name=obj["agent_name"],
        prompt_digest=obj["prompt_digest"],
        input_text=obj["input_text"],
        output_text=obj["output_text"],
        reasoning_trace=obj["reasoning_trace"],
        account_snapshot=AccountSnapshot(
            cash=snap["cash"], shares=snap["shares"],
            equity=snap["equity"], style=snap["style"],
        ),
        forecast_label=None if fl is None else ForecastLabel(
            epsilon=fl["epsilon"], pct=fl["pct"], sign_ok=fl["sign_ok"],
            p_true=fl["p_true"], w_hit=fl["w_hit"],
        ),
        decision_label=None if dl is None else DecisionLabel(
            r_eq=dict(dl["r_eq"]), r_bm=dl["r_bm"], c=dict(dl["c"]),
            reward=dict(dl["reward"]), taken=dl["taken"],
            taken_reward=dl["taken_reward"],
        ),
    )


def emit_trajectories(records: Sequence[TrajectoryRecord], path: str | Path) -> Path:
    """Write records as JSONL with a stable field order; appends within a run."""
    p = Path(path)
    with p.open("a", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_dict(record)) + "\n")
    return p


def load_trajectories(path: str | Path) -> list[TrajectoryRecord]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"trajectory file not found: {p}")
    records = []
    for lineno, line in enumerate(p.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(record_from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise DataError(f"bad trajectory record at line {lineno}: {exc}") from exc
    return records


DEFAULT_WHIT_MIN = 0.3


def filter_sft(
    records: Sequence[TrajectoryRecord],
    whit_min: float = DEFAULT_WHIT_MIN,
    reward_min: float = 0.0,
) -> list[SftSample]:
    """Keep decision samples with taken_reward > reward_min and forecast
    samples with w_hit >= whit_min; unlabeled records never export."""
    samples: list[SftSample] = []
    for record in records:
        if record.agent_name == "decision" and record.decision_label is not None:
            if record.decision_label.taken_reward > reward_min:
                samples.append(SftSample(
                    instruction=record.input_text,
                    response=_response_text(record),
                    score=record.decision_label.taken_reward,
                    source="decision",
                ))
        elif record.agent_name == "forecast" and record.forecast_label is not None:
            if record.forecast_label.w_hit >= whit_min:
                samples.append(SftSample(
                    instruction=record.input_text,
                    response=_response_text(record),
                    score=record.forecast_label.w_hit,
                    source="forecast",
                ))
    return samples


def _response_text(record: TrajectoryRecord) -> str:
    if record.reasoning_trace:
        return f"{record.reasoning_trace}\n{record.output_text}"
    return record.output_text


def emit_sft(samples: Sequence[SftSample], path: str | Path) -> Path:
    p = Path(path)
    with p.open("w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps({
                "instruction": s.instruction,
                "response": s.response,
                "score": s.score,
                "source": s.source,
            }) + "\n")
    return p
