from .bfv import (
    DEFAULT_MODULI, SIXTY_BIT_Q, HEError, HEParams, KeyPair, NoiseBudgetExceeded, NoiseOverflowError,
    OpLog, PackedCiphertext, PackedPlaintext, ParamsMismatch, PlainOperand, PublicKey, SecretKey,
    ciphertext_size, decode_slots, decrypt, decrypt_with_noise, encode_slots, encrypt, keygen,
    rerandomize, simd_add_ct, simd_add_pt, simd_mul_pt,
)

__all__ = [name for name in dir() if not name.startswith("_")]
