"""Classical post-processing: estimation, reconciliation, privacy amplification."""

from .keys import (
    DEFAULT_EPSILON_MARGIN,
    KeyBuffer,
    LeakageLedger,
    Stage,
    bits_to_hex,
    final_key_length,
    hex_to_bits,
    parameter_estimation,
)
from .ldpc import DecodeResult, ParityCheckMatrix, decode_syndrome, gallager_code, reconcile
from .toeplitz import ToeplitzSeed, toeplitz_hash

__all__ = [
    "DEFAULT_EPSILON_MARGIN",
    "DecodeResult",
    "KeyBuffer",
    "LeakageLedger",
    "ParityCheckMatrix",
    "Stage",
    "ToeplitzSeed",
    "bits_to_hex",
    "decode_syndrome",
    "final_key_length",
    "gallager_code",
    "hex_to_bits",
    "parameter_estimation",
    "reconcile",
    "toeplitz_hash",
]
