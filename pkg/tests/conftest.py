"""Shared fixtures: deterministic price paths and backtest run environments."""

from __future__ import annotations

import json
import math
from datetime import date, timedelta
from pathlib import Path
from typing import Sequence

import pytest
import yaml

from agentdesk.marketdata import PriceBar, PriceSeries


def business_days(n: int, start: date = date(2022, 1, 3)) -> list[date]:
    days: list[date] = []
    d = start
    while len(days) < n:
        if d.weekday() < 5:
            days.append(d)
        d += timedelta(days=1)
    return days


def make_series(closes: Sequence[float], start: date = date(2022, 1, 3)) -> PriceSeries:
    days = business_days(len(closes), start)
    return PriceSeries(tuple(PriceBar(d, float(c)) for d, c in zip(days, closes)))


def random_walk_closes(rng, n: int, vol: float = 0.02, drift: float = 0.0,
                       start: float = 100.0) -> list[float]:
    closes = [start]
    for _ in range(n - 1):
        closes.append(closes[-1] * math.exp(rng.normal(drift, vol)))
    return closes


def rising_closes(n: int) -> list[float]:
    """Strictly increasing path with mild wiggle; every day a new high."""
    return [100.0 * math.exp(0.004 * i + 0.001 * math.sin(i)) for i in range(n)]


def crash_closes(n: int, crash_at: int = 30, crash_size: float = 0.12) -> list[float]:
    """Rising path with one sharp drop at index `crash_at`."""
    closes = rising_closes(n)
    factor = 1.0 - crash_size
    return closes[:crash_at] + [c * factor for c in closes[crash_at:]]


def write_prices_csv(path: Path, closes: Sequence[float],
                     start: date = date(2022, 1, 3)) -> list[date]:
    days = business_days(len(closes), start)
    lines = ["date,close"] + [f"{d.isoformat()},{c!r}" for d, c in zip(days, closes)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return days


DEFAULT_CONFIG = {
    "symbol": "TEST",
    "initial_cash": 100000.0,
    "commission_rate": 0.0,
    "seed": 7,
    "provider": "stub:always-up,echo-forecast",
}

REPORT_TEXT = (
    "Revenue grew 12 percent year over year. Gross margin expanded slightly. "
    "The company issued upbeat full-year guidance. Legal risks remain modest. "
    "Operating cash flow stayed strong through the quarter. "
    "Capital expenditure will rise next year. Dividends were left unchanged. "
    "Buyback activity continues at the prior pace. The demand outlook is stable."
)


class RunEnv:
    """One disposable backtest environment on disk."""

    def __init__(self, root: Path):
        self.root = root
        self.prices = root / "prices.csv"
        self.news = None
        self.reports = None
        self.config_path = root / "config.yaml"
        self.days: list[date] = []

    def out(self, name: str = "run") -> Path:
        return self.root / name


def build_env(
    root: Path,
    closes: Sequence[float],
    config: dict | None = None,
    news: Sequence[dict] | None = None,
    with_reports: bool = False,
    script: dict | None = None,
) -> RunEnv:
    root.mkdir(parents=True, exist_ok=True)
    env = RunEnv(root)
    env.days = write_prices_csv(env.prices, closes)

    cfg = dict(DEFAULT_CONFIG)
    cfg.update(config or {})
    if script is not None:
        (root / "script.yaml").write_text(yaml.safe_dump(script), encoding="utf-8")
        cfg["provider"] = cfg["provider"] + ",scripted:script.yaml"
    env.config_path.write_text(yaml.safe_dump(cfg), encoding="utf-8")

    if news is not None:
        env.news = root / "news.jsonl"
        env.news.write_text(
            "\n".join(json.dumps(n) for n in news) + "\n", encoding="utf-8"
        )
    if with_reports:
        env.reports = root / "reports"
        env.reports.mkdir()
        (env.reports / "fy.txt").write_text(REPORT_TEXT, encoding="utf-8")
        (env.reports / "manifest.json").write_text(json.dumps([
            {"symbol": cfg["symbol"], "period": env.days[5].isoformat(), "path": "fy.txt"}
        ]), encoding="utf-8")
    return env


@pytest.fixture
def rng():
    import numpy as np
    return np.random.default_rng(20220103)
