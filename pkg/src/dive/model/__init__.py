"""Model components."""
from .dive import DIVE, DiveOutput
from .missingness import NumericalError, gaussian_kl
