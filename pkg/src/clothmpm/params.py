"""Physical parameter tuple shared by the simulator and the fitter."""

from dataclasses import dataclass, replace

from .constitutive import ElasticParams


@dataclass(frozen=True)
class PhysParams:
    E: float = 100.0
    nu: float = 0.3
    gamma: float = 500.0
    kappa: float = 500.0
    rho: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        self.elastic  # validates E, nu, gamma, kappa
        if not self.rho > 0:
            raise ValueError(f"density must be positive, got {self.rho}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    @property
    def elastic(self) -> ElasticParams:
        return ElasticParams(self.E, self.nu, self.gamma, self.kappa)

    def replace(self, **kw) -> "PhysParams":
        return replace(self, **kw)

    def as_dict(self):
        return {k: float(getattr(self, k)) for k in ("E", "nu", "gamma", "kappa", "rho", "alpha")}
