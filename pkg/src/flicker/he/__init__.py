"""Homomorphic encryption layer: depth-1 CKKS plus a cleartext mock with the same interface."""

from .backend import OP_KINDS, HeBackend, KeyMaterial, OpCounter, blinding_vector, counter_delta
from .ckks import Ciphertext, CkksBackend, Plaintext
from .mock import CleartextMockBackend
from .params import HeParams, default_params, gen_params, toy_params

BACKENDS = {"ckks": CkksBackend, "mock": CleartextMockBackend}


def make_backend(kind: str, params: HeParams | None = None, seed: int = 0) -> HeBackend:
    try:
        cls = BACKENDS[kind]
    except KeyError:
        raise ValueError(f"unknown backend {kind!r}; choose from {sorted(BACKENDS)}") from None
    return cls(params if params is not None else default_params(), seed=seed)


__all__ = [
    "OP_KINDS",
    "BACKENDS",
    "Ciphertext",
    "CkksBackend",
    "CleartextMockBackend",
    "HeBackend",
    "HeParams",
    "KeyMaterial",
    "OpCounter",
    "Plaintext",
    "blinding_vector",
    "counter_delta",
    "default_params",
    "gen_params",
    "make_backend",
    "toy_params",
]
