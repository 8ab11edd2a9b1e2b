"""Privacy-preserving epsilon-greedy contextual bandits over additive secret sharing."""

from .ring import DEFAULT_CONFIG, FixedPointConfig, decode, encode
from .sharing import ArithmeticShare, BinaryShare, reconstruct, share_arithmetic
from .transport import PartyId, Role, RoundLedger, run_session
from .dealer import Dealer

__version__ = "0.1.0"

__all__ = [
    "ArithmeticShare", "BinaryShare", "DEFAULT_CONFIG", "Dealer", "FixedPointConfig", "PartyId", "Role",
    "RoundLedger", "decode", "encode", "reconstruct", "run_session", "share_arithmetic",
]
