"""SMC^2 with adaptive N_x: particle filters per theta-particle, journal-based
history replay, particle MCMC moves and automatic N_x calibration."""

__version__ = "0.1.0"

from .core import Smc2Config, Smc2State, Variant, run  # noqa: E402
from .models import LinearGaussian, StochasticVolatility, kalman_loglik, simulate  # noqa: E402

__all__ = ["Smc2Config", "Smc2State", "Variant", "run", "LinearGaussian",
           "StochasticVolatility", "kalman_loglik", "simulate", "__version__"]
