"""Metrics reports with byte-reproducible serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field


def wilson_interval(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson 95% score interval for a binomial proportion."""
    if trials == 0:
        return (0.0, 1.0)
    p = successes / trials
    denom = 1 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials ** 2)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


@dataclass
class MetricsReport:
    """One experiment outcome; `runtime_seconds` is console-only and never
    serialized, keeping report files byte-reproducible from (config, seed)."""

    command: str
    seed: int
    config_hash: str
    code_version: str
    trials: int = 0
    successes: int = 0
    metrics: dict = field(default_factory=dict)
    runtime_seconds: float | None = None

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0

    def to_dict(self) -> dict:
        d = {
            "command": self.command,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "metrics": self.metrics,
        }
        if self.trials:
            lo, hi = wilson_interval(self.successes, self.trials)
            d["trials"] = self.trials
            d["successes"] = self.successes
            d["success_rate"] = self.success_rate
            d["wilson_95"] = [lo, hi]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def write(self, path: str):
        with open(path, "w") as f:
            f.write(self.to_json())

    def summary(self) -> str:
        parts = [f"[{self.command}]"]
        if self.trials:
            lo, hi = wilson_interval(self.successes, self.trials)
            parts.append(f"success {self.successes}/{self.trials} = "
                         f"{self.success_rate:.3f} (95% CI {lo:.3f}..{hi:.3f})")
        for k, v in self.metrics.items():
            if isinstance(v, float):
                parts.append(f"{k}={v:.4f}")
            elif not isinstance(v, (dict, list)):
                parts.append(f"{k}={v}")
        if self.runtime_seconds is not None:
            parts.append(f"({self.runtime_seconds:.1f}s)")
        return " ".join(parts)
