"""Benchmark problems on the 2L x L rectangle."""
from __future__ import annotations

from dataclasses import dataclass

from .analysis import BoundaryConditions, EdgeTraction, OutputDof, PointLoad, Spring, Support
from .errors import ConfigurationError

KINDS = ("cantilever_point", "cantilever_distributed", "force_inverter")


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = "cantilever_point"
    V0: float = 0.45
    L: float = 1.0
    F: float = 1.0  # point load magnitude
    traction: float = 0.5  # distributed load, force per length
    f_in: float = 1.0
    k_in: float = 1.0
    k_out: float = 0.001
    pad: float = 0.01  # inverter support pad size, fraction of L

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown problem kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 < self.V0 < 1.0:
            raise ConfigurationError(f"V0={self.V0} outside (0, 1)")
        if self.L <= 0:
            raise ConfigurationError("L must be positive")

    @property
    def width(self) -> float:
        return 2.0 * self.L

    @property
    def height(self) -> float:
        return self.L

    @property
    def minimize_output(self) -> bool:
        return self.kind == "force_inverter"

    def boundary_conditions(self) -> BoundaryConditions:
        L = self.L
        tol = 1e-9 * L
        if self.kind == "cantilever_point":
            return BoundaryConditions(
                supports=[Support(lambda c: c[:, 0] < tol)],
                point_loads=[PointLoad(2 * L, 0.5 * L, 0.0, -self.F)],
            )
        if self.kind == "cantilever_distributed":
            return BoundaryConditions(
                supports=[Support(lambda c: c[:, 0] < tol)],
                tractions=[EdgeTraction("top", 0.0, -self.traction / L)],
            )
        pad = self.pad * L

        def pads(c):
            return (c[:, 0] < tol) & ((c[:, 1] <= pad + tol) | (c[:, 1] >= L - pad - tol))

        return BoundaryConditions(
            supports=[Support(pads)],
            point_loads=[PointLoad(0.0, 0.5 * L, self.f_in, 0.0)],
            springs=[Spring(0.0, 0.5 * L, 0, self.k_in), Spring(2 * L, 0.5 * L, 0, self.k_out)],
            output=OutputDof(2 * L, 0.5 * L, 0),
        )
