"""
Synthetic Data Bundle Generator

Writes a coherent toy world for the backtest: returns driven by observable
factors, characteristics that weakly predict next-month returns, news
sentiment and analyst recommendations that lead next-month returns, yearly
screening rules and a ready-to-run backtest configuration.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List

import numpy as np
import pandas as pd

from .data import format_month, to_month
from .rng import stream
from .settings import SyntheticSpec

logger = logging.getLogger(__name__)

FEATURES = ("bm", "gp", "mom12m", "mve")
PERSISTENCE = 0.9
BASE_RETURN = 0.008
SIGNAL_SCALE = 0.01
NEWS_SCALE = 0.01
FLOAT_FORMAT = "%.10g"


@dataclass(frozen=True)
class World:
    """Generated panels, before they are written out."""

    months: pd.DatetimeIndex
    assets: List[str]
    returns: pd.DataFrame
    characteristics: pd.DataFrame
    factors: pd.DataFrame
    sentiment: pd.DataFrame
    analyst: pd.DataFrame
    benchmark: pd.DataFrame
    rules: List[Dict[str, str]]


def _latent_characteristics(spec: SyntheticSpec, T: int, p: int) -> np.ndarray:
    rng = stream(spec.seed, "synthetic", "characteristics")
    latent = np.empty((T, p, len(FEATURES)))
    latent[0] = rng.standard_normal((p, len(FEATURES)))
    innovation = math.sqrt(1.0 - PERSISTENCE ** 2)
    for t in range(1, T):
        latent[t] = PERSISTENCE * latent[t - 1] + innovation * rng.standard_normal((p, len(FEATURES)))
    return latent


def _raw_values(latent: np.ndarray) -> np.ndarray:
    bm, gp, mom, mve = (latent[..., i] for i in range(len(FEATURES)))
    return np.stack([np.exp(0.5 * bm - 0.5), 0.3 + 0.1 * gp, 0.1 + 0.3 * mom, 7.0 + 1.5 * mve], axis=-1)


def _events(spec: SyntheticSpec, months: pd.DatetimeIndex, assets: List[str], rate: float,
            values: np.ndarray, name: str, column: str) -> pd.DataFrame:
    """Poisson-many dated events per (month, asset) carrying the given values."""
    rng = stream(spec.seed, "synthetic", name, "timing")
    counts = rng.poisson(rate, size=values.shape)
    t_idx, j_idx = np.nonzero(counts)
    repeats = counts[t_idx, j_idx]
    t_idx, j_idx = np.repeat(t_idx, repeats), np.repeat(j_idx, repeats)
    days_in_month = months.days_in_month.to_numpy()[t_idx]
    days = rng.integers(0, days_in_month)
    stamps = months[t_idx] + pd.to_timedelta(days, unit="D")
    noise = rng.standard_normal(t_idx.size)
    frame = pd.DataFrame({
        "date": stamps.strftime("%Y-%m-%d"),
        "asset": np.asarray(assets)[j_idx],
        column: values[t_idx, j_idx] + noise,
    })
    return frame.sort_values(["date", "asset"], kind="mergesort").reset_index(drop=True)


def _rules(spec: SyntheticSpec, months: pd.DatetimeIndex) -> List[Dict[str, str]]:
    rng = stream(spec.seed, "synthetic", "rules")
    records = []
    for year in range(months[0].year, months[-1].year + 1):
        a, b = np.round(rng.uniform(0.2, 0.6, size=2), 2)
        c = round(float(rng.uniform(1.0, 1.5)), 2)
        records.append({
            "effective_from": f"{year}-01",
            "effective_to": f"{year}-12",
            "buy": f"(bm > {a:g} AND gp > {b:g}) OR mom12m > {c:g}",
            "sell": f"(bm < -{a:g} AND gp < -{b:g}) OR mom12m < -{c:g}",
        })
    return records


def generate_world(spec: SyntheticSpec) -> World:
    """
    Generate every panel of a synthetic bundle from the spec's seed.

    Next-month returns load on a characteristic signal scaled by
    ``predictive_strength`` and on a news shock that sentiment scores and
    analyst revisions anticipate with ``sentiment_strength`` and
    ``analyst_strength``.
    """
    T, p, K = spec.n_months, spec.n_assets, spec.n_factors
    months = pd.date_range(to_month(spec.start), periods=T, freq="MS")
    assets = [f"A{j:04d}" for j in range(p)]

    latent = _latent_characteristics(spec, T, p)
    signal = (latent[..., 0] + latent[..., 1] + latent[..., 2] - latent[..., 3]) / 2.0

    rng = stream(spec.seed, "synthetic", "returns")
    factor_sd = np.resize([0.045, 0.03, 0.03], K)
    factors = rng.standard_normal((T, K)) * factor_sd
    loadings = np.column_stack([rng.normal(1.0, 0.3, p)] + [rng.normal(0.0, 0.5, p) for _ in range(K - 1)])
    error_sd = rng.uniform(0.04, 0.08, p)
    news = rng.standard_normal((T + 1, p))
    expected = np.full((T, p), BASE_RETURN)
    expected[1:] += spec.predictive_strength * SIGNAL_SCALE * signal[:-1]
    returns = expected + NEWS_SCALE * news[:T] + factors @ loadings.T + error_sd * rng.standard_normal((T, p))
    returns = np.maximum(returns, -0.95)

    month_labels = [format_month(m) for m in months]
    returns_frame = pd.DataFrame({
        "date": np.repeat(month_labels, p),
        "asset": np.tile(assets, T),
        "ret": returns.reshape(-1),
    })

    raw = _raw_values(latent)
    missing = stream(spec.seed, "synthetic", "missing").random(raw.shape) < spec.missing_rate
    values = np.where(missing, np.nan, raw)
    characteristics = pd.DataFrame({
        "date": np.repeat(month_labels, p * len(FEATURES)),
        "asset": np.tile(np.repeat(assets, len(FEATURES)), T),
        "feature": np.tile(FEATURES, T * p),
        "value": values.reshape(-1),
    })

    factor_frame = pd.DataFrame(factors, columns=[f"f{i + 1}" for i in range(K)])
    factor_frame.insert(0, "date", month_labels)

    # month t events anticipate the month t+1 news shock
    lead = news[1:T + 1]
    sentiment = _events(spec, months, assets, spec.articles_per_month,
                        np.tanh(spec.sentiment_strength * lead), "sentiment", "score")
    sentiment["score"] = np.tanh(sentiment["score"])
    analyst = _events(spec, months, assets, spec.analyst_updates_per_month,
                      3.0 - 1.5 * spec.analyst_strength * lead, "analyst", "recommendation")
    analyst["recommendation"] = analyst["recommendation"].clip(1.0, 5.0)

    benchmark = pd.DataFrame({"date": month_labels, "ret": returns.mean(axis=1)})
    return World(months, assets, returns_frame, characteristics, factor_frame, sentiment, analyst,
                 benchmark, _rules(spec, months))


def backtest_config(spec: SyntheticSpec) -> Dict:
    """Backtest configuration for a generated bundle, with paths relative to it."""
    train_window = max(24, min(180, spec.n_months - 60))
    return {
        "returns_path": "returns.csv",
        "characteristics_path": "characteristics.csv",
        "factors_path": "factors.csv",
        "sentiment_path": "sentiment.csv",
        "analyst_path": "analyst.csv",
        "rules_path": "rules.json",
        "benchmark_path": "benchmark.csv",
        "output_dir": "output",
        "train_window": train_window,
        "agents": ["rules", "sentiment"],
        "seed": spec.seed,
    }


def write_world(world: World, output_dir, spec: SyntheticSpec) -> Dict[str, Path]:
    """Write a generated world as the bundle's files."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    tables = {
        "returns": (world.returns, "returns.csv"),
        "characteristics": (world.characteristics, "characteristics.csv"),
        "factors": (world.factors, "factors.csv"),
        "sentiment": (world.sentiment, "sentiment.csv"),
        "analyst": (world.analyst, "analyst.csv"),
        "benchmark": (world.benchmark, "benchmark.csv"),
    }
    paths: Dict[str, Path] = {}
    for role, (frame, name) in tables.items():
        path = output_dir / name
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        paths[role] = path
    for role, name, payload in (("rules", "rules.json", world.rules),
                                ("config", "backtest.json", backtest_config(spec))):
        path = output_dir / name
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        paths[role] = path
    logger.info("Wrote synthetic bundle of %d assets x %d months to %s",
                len(world.assets), len(world.months), output_dir)
    return paths


def generate_synthetic(spec: SyntheticSpec, output_dir=None) -> Dict[str, Path]:
    """Generate and write a synthetic bundle; returns paths by role."""
    return write_world(generate_world(spec), output_dir or spec.output_dir, spec)
