"""Universal randomized guessing under a distortion constraint."""
from .core import Alphabet, CapExceeded, DistortionSpec
from .exponents import ExponentResult, NoisySetup

__all__ = ["Alphabet", "CapExceeded", "DistortionSpec", "ExponentResult", "NoisySetup"]
