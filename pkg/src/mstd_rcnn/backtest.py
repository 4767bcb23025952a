"""Simulated one-unit trading on predicted trends, plus Buy & Hold."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .data import Trend

__all__ = [
    "MODES",
    "BacktestLedger",
    "positions",
    "trading_deltas",
    "simulate",
    "buy_and_hold",
]

MODES = ("position", "indicator")

_POSITION = np.array([0, -1, 1])  # indexed by Trend value: still, down, up


@dataclass(frozen=True)
class BacktestLedger:
    preds: np.ndarray
    truths: np.ndarray
    deltas: np.ndarray
    positions: np.ndarray
    profits: np.ndarray
    mode: str

    @property
    def cumulative(self):
        return np.cumsum(self.profits)

    @property
    def total(self):
        return float(self.profits.sum())

    def __len__(self):
        return len(self.profits)

    def to_csv(self):
        buf = io.StringIO()
        buf.write("step,pred,truth,delta,position,profit,cum_profit\n")
        cum = self.cumulative
        for i in range(len(self)):
            buf.write(
                f"{i},{int(self.preds[i])},{int(self.truths[i])},{float(self.deltas[i])!r},"
                f"{int(self.positions[i])},{float(self.profits[i])!r},{float(cum[i])!r}\n"
            )
        return buf.getvalue()


def positions(preds):
    """+1 for predicted up, -1 for predicted down, 0 for still."""
    preds = np.asarray(preds, dtype=np.int64)
    if preds.size and (preds.min() < 0 or preds.max() > 2):
        raise ValueError("predictions must be class indices 0, 1 or 2")
    return _POSITION[preds]


def trading_deltas(deltas, truths):
    """Changes as used for trading: zero wherever the true class is still."""
    d = np.array(deltas, dtype=np.float64)
    d[np.asarray(truths) == Trend.STILL] = 0.0
    return d


def simulate(preds, truths, deltas, mode="position"):
    """Trade one unit per signal with no costs and no carry-over.

    ``mode="position"`` earns ``position * delta``: a correct directional
    call gains ``|delta|`` and a wrong one loses it. ``mode="indicator"``
    earns ``delta`` only when the predicted class equals the true class.
    ``deltas`` must already be zero for still samples (see
    :func:`trading_deltas`).
    """
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    truths = np.asarray(truths, dtype=np.int64).reshape(-1)
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1)
    if not (len(preds) == len(truths) == len(deltas)):
        raise ValueError("preds, truths and deltas must have equal length")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if np.any(deltas[truths == Trend.STILL] != 0):
        raise ValueError("deltas must be zero where the true class is still")
    if truths.size and (truths.min() < 0 or truths.max() > 2):
        raise ValueError("truths must be class indices 0, 1 or 2")
    pos = positions(preds)
    if mode == "position":
        profit = pos * deltas
    else:
        profit = np.where(preds == truths, deltas, 0.0)
    return BacktestLedger(preds, truths, deltas, pos, profit, mode)


def buy_and_hold(prices):
    prices = np.asarray(prices, dtype=np.float64)
    if prices.ndim != 1 or len(prices) < 2:
        raise ValueError("buy and hold needs at least two prices")
    return float(prices[-1] - prices[0])
