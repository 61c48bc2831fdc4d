"""Power-law superconductor in sheet (surface) quantities."""
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

#: Reference REBCO values: E_c [V/m], J_c [A/m^2], tape thickness [m], n.
E_C = 1e-4
J_C = 236e6
THICKNESS = 100e-6
N_EXP = 25.0


@dataclass(frozen=True)
class MaterialParams:
    E_c: float = E_C
    K_c: float = J_C * THICKNESS
    n_exp: float = N_EXP
    eta_floor: float = 1e-15

    def validate(self):
        if not self.E_c > 0:
            raise DomainError(f"E_c must be > 0, got {self.E_c}")
        if not self.K_c > 0:
            raise DomainError(f"K_c must be > 0, got {self.K_c}")
        if not self.n_exp >= 1:
            raise DomainError(f"n_exp must be >= 1, got {self.n_exp}")
        if not self.eta_floor >= 0:
            raise DomainError(f"eta_floor must be >= 0, got {self.eta_floor}")

    @classmethod
    def from_volume(cls, E_c=E_C, J_c=J_C, thickness=THICKNESS, n_exp=N_EXP, eta_floor=1e-15):
        return cls(E_c=E_c, K_c=J_c * thickness, n_exp=n_exp, eta_floor=eta_floor)

    @property
    def eta_c(self):
        """Sheet resistivity at the critical current, E_c/K_c [ohm]."""
        return self.E_c / self.K_c


def _check(k_norm):
    k = np.asarray(k_norm, dtype=float)
    if np.any(k < 0):
        raise DomainError("sheet current magnitude must be >= 0")
    return k


def sheet_resistivity(params: MaterialParams, k_norm):
    """eta(|K|) = (E_c/K_c) (|K|/K_c)^(n-1) + eta_floor  [ohm]."""
    k = _check(k_norm)
    return params.eta_c * (k / params.K_c) ** (params.n_exp - 1.0) + params.eta_floor


def sheet_resistivity_derivative(params: MaterialParams, k_norm):
    """d eta / d|K| = (n-1) (E_c/K_c^2) (|K|/K_c)^(n-2)  [ohm m / A]."""
    k = _check(k_norm)
    n = params.n_exp
    if n == 1:
        return np.zeros_like(k)
    return (n - 1.0) * params.eta_c / params.K_c * (k / params.K_c) ** (n - 2.0)
