"""Run configuration: one YAML file with gate/risk/retrieval/band/reward
sections, provider selection, and the four ablation flags."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date as Date, datetime
from pathlib import Path
from typing import Any, Mapping

import yaml

from .datasynth import BandConfig, RewardConfig
from .errors import DataError
from .gate import GateConfig
from .retrieval import RetrievalConfig
from .risk import DEFAULT_MULTIPLIERS, RiskConfig, StyleMultipliers, TradingStyle


@dataclass(frozen=True)
class FeatureFlags:
    """Ablation switches; each toggles exactly one documented behavior."""

    risk_management: bool = True
    self_reflection: bool = True
    rerank_embedding: bool = True
    style_and_state: bool = True


@dataclass(frozen=True)
class BacktestConfig:
    symbol: str
    start: Date | None = None
    end: Date | None = None
    initial_cash: float = 100_000.0
    commission_rate: float = 0.001
    seed: int = 0
    provider: str = "stub:sideways"
    embedding_provider: str = "stub"
    reranker_provider: str = "stub"
    provider_endpoint: str | None = None
    provider_model: str | None = None
    credentials_env: str | None = None
    keywords_path: str | None = None
    flags: FeatureFlags = field(default_factory=FeatureFlags)
    gate: GateConfig = field(default_factory=GateConfig)
    risk: RiskConfig = field(default_factory=RiskConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    band: BandConfig = field(default_factory=BandConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self) -> None:
        if not self.symbol:
            raise DataError("config requires a symbol")
        if self.initial_cash <= 0:
            raise DataError("initial_cash must be positive")
        if self.commission_rate < 0:
            raise DataError("commission_rate must be non-negative")
        if self.start is not None and self.end is not None and self.start > self.end:
            raise DataError("start date is after end date")


def _as_date(value: Any, key: str) -> Date | None:
    if value is None:
        return None
    if isinstance(value, datetime):
        return value.date()
    if isinstance(value, Date):
        return value
    try:
        return Date.fromisoformat(str(value))
    except ValueError as exc:
        raise DataError(f"bad date for {key!r}: {value!r}") from exc


def _section(raw: Mapping, key: str) -> dict:
    value = raw.get(key) or {}
    if not isinstance(value, Mapping):
        raise DataError(f"config section {key!r} must be a mapping")
    return dict(value)


def _build(cls, raw: dict, section: str):
    try:
        return cls(**raw)
    except TypeError as exc:
        raise DataError(f"bad config in section {section!r}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"bad config value in section {section!r}: {exc}") from exc


def _risk_config(raw: dict) -> RiskConfig:
    table = raw.pop("multipliers", None)
    if table is None:
        multipliers = DEFAULT_MULTIPLIERS
    else:
        if not isinstance(table, Mapping):
            raise DataError("risk.multipliers must map styles to {sl, tp}")
        multipliers = {}
        for style_name, pair in table.items():
            try:
                style = TradingStyle(str(style_name))
            except ValueError as exc:
                raise DataError(f"unknown style {style_name!r} in risk.multipliers") from exc
            if isinstance(pair, Mapping):
                m = StyleMultipliers(float(pair["sl"]), float(pair["tp"]))
            else:
                sl, tp = pair
                m = StyleMultipliers(float(sl), float(tp))
            multipliers[style] = m
        for style in TradingStyle:
            multipliers.setdefault(style, DEFAULT_MULTIPLIERS[style])
    return _build(RiskConfig, {"multipliers": multipliers, **raw}, "risk")


_TOP_LEVEL_KEYS = {
    "symbol", "start", "end", "initial_cash", "commission_rate", "seed",
    "provider", "embedding_provider", "reranker_provider",
    "provider_endpoint", "provider_model", "credentials_env", "keywords_path",
    "flags", "gate", "risk", "retrieval", "band", "reward",
}


def config_from_dict(raw: Mapping) -> BacktestConfig:
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise DataError(f"unknown config keys: {sorted(unknown)}")
    return BacktestConfig(
        symbol=str(raw.get("symbol", "")),
        start=_as_date(raw.get("start"), "start"),
        end=_as_date(raw.get("end"), "end"),
        initial_cash=float(raw.get("initial_cash", 100_000.0)),
        commission_rate=float(raw.get("commission_rate", 0.001)),
        seed=int(raw.get("seed", 0)),
        provider=str(raw.get("provider", "stub:sideways")),
        embedding_provider=str(raw.get("embedding_provider", "stub")),
        reranker_provider=str(raw.get("reranker_provider", "stub")),
        provider_endpoint=raw.get("provider_endpoint"),
        provider_model=raw.get("provider_model"),
        credentials_env=raw.get("credentials_env"),
        keywords_path=raw.get("keywords_path"),
        flags=_build(FeatureFlags, _section(raw, "flags"), "flags"),
        gate=_build(GateConfig, _section(raw, "gate"), "gate"),
        risk=_risk_config(_section(raw, "risk")),
        retrieval=_build(RetrievalConfig, _section(raw, "retrieval"), "retrieval"),
        band=_build(BandConfig, _section(raw, "band"), "band"),
        reward=_build(RewardConfig, _section(raw, "reward"), "reward"),
    )


def load_config(path: str | Path) -> BacktestConfig:
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text("utf-8"))
    except yaml.YAMLError as exc:
        raise DataError(f"bad YAML in {p.name}: {exc}") from exc
    if not isinstance(raw, Mapping):
        raise DataError("config file must contain a mapping")
    return config_from_dict(raw)


def config_to_dict(cfg: BacktestConfig) -> dict:
    """Canonical nested-dict form, stable across runs for artifact copies."""
    return {
        "symbol": cfg.symbol,
        "start": None if cfg.start is None else str(cfg.start),
        "end": None if cfg.end is None else str(cfg.end),
        "initial_cash": cfg.initial_cash,
        "commission_rate": cfg.commission_rate,
        "seed": cfg.seed,
        "provider": cfg.provider,
        "embedding_provider": cfg.embedding_provider,
        "reranker_provider": cfg.reranker_provider,
        "provider_endpoint": cfg.provider_endpoint,
        "provider_model": cfg.provider_model,
        "credentials_env": cfg.credentials_env,
        "keywords_path": cfg.keywords_path,
        "flags": {
            "risk_management": cfg.flags.risk_management,
            "self_reflection": cfg.flags.self_reflection,
            "rerank_embedding": cfg.flags.rerank_embedding,
            "style_and_state": cfg.flags.style_and_state,
        },
        "gate": {
            "rsi_overheat": cfg.gate.rsi_overheat,
            "up_prob_threshold": cfg.gate.up_prob_threshold,
            "down_prob_threshold": cfg.gate.down_prob_threshold,
            "atr_breakout_coeff": cfg.gate.atr_breakout_coeff,
            "breakout_floor_pct": cfg.gate.breakout_floor_pct,
        },
        "risk": {
            "multipliers": {
                style.value: {"sl": m.m_sl, "tp": m.m_tp}
                for style, m in sorted(cfg.risk.multipliers.items(), key=lambda kv: kv[0].value)
            },
            "floor": cfg.risk.floor,
        },
        "retrieval": {
            "w_dense": cfg.retrieval.w_dense,
            "w_sparse": cfg.retrieval.w_sparse,
            "hybrid_top_k": cfg.retrieval.hybrid_top_k,
            "rerank_top_k": cfg.retrieval.rerank_top_k,
            "dedup_cosine": cfg.retrieval.dedup_cosine,
            "window_sentences": cfg.retrieval.window_sentences,
            "stride_sentences": cfg.retrieval.stride_sentences,
            "news_top_k": cfg.retrieval.news_top_k,
        },
        "band": {"alpha": cfg.band.alpha, "epsilon_min": cfg.band.epsilon_min},
        "reward": {"beta": cfg.reward.beta, "gamma": cfg.reward.gamma},
    }
