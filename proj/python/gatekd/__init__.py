"""Python bindings for the gatekd C++ core."""

from ._gatekd import (
    InvalidInput,
    NonFiniteLoss,
    config_keys,
    confidence_exp,
    confidence_normalized,
    gen_last_letter,
    gen_shuffled_objects,
    last_letter,
    make_gates,
    parse_config,
    run_cli,
    shannon_entropy,
    verify,
)

__all__ = [
    "InvalidInput",
    "NonFiniteLoss",
    "config_keys",
    "confidence_exp",
    "confidence_normalized",
    "gen_last_letter",
    "gen_shuffled_objects",
    "last_letter",
    "make_gates",
    "parse_config",
    "run_cli",
    "shannon_entropy",
    "verify",
]
