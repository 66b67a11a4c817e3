"""Prior specifications for model parameters.

Defaults follow the analysis setup: Beta(1,1) on the probability-scale
parameters (positive-on-admission p, test sensitivity z, the geometric
diversity parameters, and the group-clustering probability c) and
Exponential(1e-6) on the transmission rate and the chain diversity
factor. The chain diversity factor may optionally be truncated to [0,1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class BetaPrior:
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self) -> None:
        if self.a <= 0 or self.b <= 0:
            raise ValueError(f"Beta prior requires a,b > 0, got ({self.a},{self.b})")

    def log_density(self, x: float) -> float:
        if not (0.0 < x < 1.0):
            return -math.inf
        return (
            (self.a - 1.0) * math.log(x)
            + (self.b - 1.0) * math.log1p(-x)
            + math.lgamma(self.a + self.b)
            - math.lgamma(self.a)
            - math.lgamma(self.b)
        )

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)


@dataclass(frozen=True)
class ExponentialPrior:
    rate: float = 1e-6

    def __post_init__(self) -> None:
        if self.rate <= 0:
            raise ValueError(f"Exponential prior requires rate > 0, got {self.rate}")

    def log_density(self, x: float) -> float:
        if x < 0:
            return -math.inf
        return math.log(self.rate) - self.rate * x


@dataclass(frozen=True)
class PriorSpec:
    """Per-parameter priors, plus the optional [0,1] truncation of k."""

    p: BetaPrior = field(default_factory=BetaPrior)
    z: BetaPrior = field(default_factory=BetaPrior)
    beta: ExponentialPrior = field(default_factory=ExponentialPrior)
    gamma: BetaPrior = field(default_factory=BetaPrior)
    gamma_g: BetaPrior = field(default_factory=BetaPrior)
    k: ExponentialPrior = field(default_factory=ExponentialPrior)
    c: BetaPrior = field(default_factory=BetaPrior)
    constrain_k: bool = False

    def log_density(self, params, model: str) -> float:
        """Joint log prior density of the parameters used by ``model``."""
        total = (
            self.p.log_density(params.p)
            + self.z.log_density(params.z)
            + self.beta.log_density(params.beta)
            + self.gamma.log_density(params.gamma)
            + self.gamma_g.log_density(params.gamma_g)
        )
        if model == "transmission_diversity":
            if params.k is None:
                return -math.inf
            if self.constrain_k and params.k > 1.0:
                return -math.inf
            total += self.k.log_density(params.k)
        else:
            if params.c is None:
                return -math.inf
            total += self.c.log_density(params.c)
        return total

    @classmethod
    def from_dict(cls, spec: dict) -> "PriorSpec":
        """Build from a JSON-style dict, e.g. {"p": {"a":1,"b":1}, "beta": {"rate":1e-6}}."""
        kwargs: dict = {}
        for name in ("p", "z", "gamma", "gamma_g", "c"):
            if name in spec:
                kwargs[name] = BetaPrior(**spec[name])
        for name in ("beta", "k"):
            if name in spec:
                kwargs[name] = ExponentialPrior(**spec[name])
        if "constrain_k" in spec:
            kwargs["constrain_k"] = bool(spec["constrain_k"])
        return cls(**kwargs)
