"""Self-describing binary format for CKKS ciphertexts and key material.

Layout: ``b"FLK1"`` | version (u8) | object kind (u8) | params digest (32 B) |
kind-specific header | little-endian arrays. The format is only stable within
this package.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from ..errors import SerializationError
from .backend import KeyMaterial
from .ckks import Ciphertext, GaloisKey, Plaintext, PublicKey, SecretKey
from .params import HeParams
from .rns import RnsBasis

MAGIC = b"FLK1"
VERSION = 1
KIND_CIPHERTEXT = 1
KIND_KEYS = 2
KIND_PLAINTEXT = 3


def _header(kind: int, params: HeParams) -> bytes:
    return MAGIC + struct.pack("<BB", VERSION, kind) + params.digest()


def _check_header(buf: io.BytesIO, kind: int, params: HeParams) -> None:
    head = buf.read(4 + 2 + 32)
    if len(head) < 38 or head[:4] != MAGIC:
        raise SerializationError("not a FLK1 object")
    version, got_kind = struct.unpack("<BB", head[4:6])
    if version != VERSION:
        raise SerializationError(f"unsupported format version {version}")
    if got_kind != kind:
        raise SerializationError(f"expected object kind {kind}, found {got_kind}")
    if head[6:] != params.digest():
        raise SerializationError("object was produced under different parameters")


def _put(out: io.BytesIO, arr: np.ndarray, dtype: str = "<u8") -> None:
    a = np.ascontiguousarray(arr).astype(dtype)
    out.write(struct.pack("<B", a.ndim))
    out.write(struct.pack(f"<{a.ndim}I", *a.shape))
    out.write(a.tobytes())


def _get(buf: io.BytesIO, dtype: str = "<u8") -> np.ndarray:
    try:
        (ndim,) = struct.unpack("<B", buf.read(1))
        shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        raw = buf.read(count * np.dtype(dtype).itemsize)
        if len(raw) != count * np.dtype(dtype).itemsize:
            raise SerializationError("truncated array")
        return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype[1:]).copy()
    except struct.error as exc:
        raise SerializationError("truncated object") from exc


def dump_ciphertext(ct: Ciphertext, params: HeParams) -> bytes:
    out = io.BytesIO()
    out.write(_header(KIND_CIPHERTEXT, params))
    out.write(struct.pack("<Bd", ct.level, ct.scale))
    _put(out, ct.c0)
    _put(out, ct.c1)
    return out.getvalue()


def load_ciphertext(data: bytes, params: HeParams) -> Ciphertext:
    buf = io.BytesIO(data)
    _check_header(buf, KIND_CIPHERTEXT, params)
    level, scale = struct.unpack("<Bd", buf.read(9))
    return Ciphertext(_get(buf), _get(buf), scale, level)


def dump_plaintext(pt: Plaintext, params: HeParams) -> bytes:
    out = io.BytesIO()
    out.write(_header(KIND_PLAINTEXT, params))
    out.write(struct.pack("<Bd", pt.level, pt.scale))
    _put(out, pt.coeffs)
    return out.getvalue()


def load_plaintext(data: bytes, params: HeParams) -> Plaintext:
    buf = io.BytesIO(data)
    _check_header(buf, KIND_PLAINTEXT, params)
    level, scale = struct.unpack("<Bd", buf.read(9))
    return Plaintext(_get(buf), scale, level)


def dump_keys(keys: KeyMaterial, params: HeParams, include_secret: bool = True) -> bytes:
    out = io.BytesIO()
    out.write(_header(KIND_KEYS, params))
    has_secret = include_secret and keys.secret_key is not None
    out.write(struct.pack("<BI", int(has_secret), len(keys.galois_keys)))
    if has_secret:
        _put(out, keys.secret_key.coeffs, "<i1")
    _put(out, keys.public_key.b)
    _put(out, keys.public_key.a)
    for step in sorted(keys.galois_keys):
        gk = keys.galois_keys[step]
        out.write(struct.pack("<IQ", gk.step, gk.galois_elt))
        _put(out, gk.b)
        _put(out, gk.a)
    return out.getvalue()


def load_keys(data: bytes, params: HeParams) -> KeyMaterial:
    buf = io.BytesIO(data)
    _check_header(buf, KIND_KEYS, params)
    has_secret, n_gk = struct.unpack("<BI", buf.read(5))
    sk = None
    if has_secret:
        coeffs = _get(buf, "<i1")
        basis = RnsBasis(params.all_primes, params.ring_degree)
        view = basis.rows(range(len(params.all_primes)))
        sk = SecretKey(coeffs, view.ntt(view.from_signed(coeffs.astype(np.int64))))
    pk = PublicKey(_get(buf), _get(buf))
    gks = {}
    for _ in range(n_gk):
        step, elt = struct.unpack("<IQ", buf.read(12))
        gks[step] = GaloisKey(step, elt, _get(buf), _get(buf))
    return KeyMaterial(params.digest(), sk, pk, gks)
