"""Textbook CKKS over ``Z_Q[X]/(X^N + 1)`` with arbitrary-precision coefficients.

Enough of the scheme for encrypted weighted averaging: public-key encryption,
ciphertext addition, plaintext multiplication and rescaling. No relinearization,
rotations or bootstrapping.

The modulus chain ``[b_0, b_1, ..., b_{k-2}, b_special]`` is realized as
NTT-friendly primes of the requested bit sizes. The last prime is reserved
(as a key-switching prime would be) and never enters a ciphertext modulus, so
a fresh ciphertext sits at level ``k - 1``; each rescale drops the most recent
prime.

The desk-scale defaults (N=4096) are NOT cryptographically secure, and the
sampling below uses a seedable PRNG for reproducibility rather than a CSPRNG.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import gmpy2
import numpy as np

from .errors import ConfigurationError, InputError, ProtocolError

MAGIC = b"CKCT"
VERSION = 1
ERROR_SIGMA = 3.2


@dataclass(frozen=True)
class HeParams:
    ring_degree: int = 4096
    moduli_bits: tuple[int, ...] = (50, 40, 40, 50)
    scale: float = 2.0**40

    def __post_init__(self):
        N = self.ring_degree
        if N < 4 or N & (N - 1):
            raise ConfigurationError(f"ring_degree must be a power of two >= 4, got {N}")
        if len(self.moduli_bits) < 2:
            raise ConfigurationError("coefficient modulus chain needs at least two primes")
        if any(b < 20 or b > 120 for b in self.moduli_bits):
            raise ConfigurationError(f"modulus bit sizes must lie in [20, 120]: {self.moduli_bits}")
        if not self.scale > 1:
            raise ConfigurationError("scale must exceed 1")
        log_scale = math.log2(self.scale)
        if abs(log_scale - round(log_scale)) > 1e-12:
            raise ConfigurationError(f"scale must be a power of two, got {self.scale}")
        if log_scale > min(self.moduli_bits):
            raise ConfigurationError(
                f"scale 2^{log_scale:g} is wider than the smallest modulus ({min(self.moduli_bits)} bits)"
            )

    @classmethod
    def desk(cls) -> "HeParams":
        return cls(4096, (50, 40, 40, 50), 2.0**40)

    @classmethod
    def large(cls) -> "HeParams":
        return cls(8192, (60, 40, 40, 60), 2.0**40)

    @property
    def slot_count(self) -> int:
        return self.ring_degree // 2

    @property
    def max_level(self) -> int:
        return len(self.moduli_bits) - 1


@lru_cache(maxsize=None)
def chain_primes(params: HeParams) -> tuple[int, ...]:
    """Distinct primes ``p = 1 mod 2N`` with ``2^(b-1) < p < 2^b`` for each requested size."""
    step = 2 * params.ring_degree
    used: set[int] = set()
    out = []
    for bits in params.moduli_bits:
        k = ((1 << bits) - 2) // step
        while True:
            p = k * step + 1
            if p <= 1 << (bits - 1):
                raise ConfigurationError(f"no {bits}-bit prime = 1 mod {step}")
            if p not in used and gmpy2.is_prime(p, 40):
                break
            k -= 1
        used.add(p)
        out.append(p)
    return tuple(out)


def modulus_at(params: HeParams, level: int) -> int:
    if not 1 <= level <= params.max_level:
        raise ProtocolError(f"level {level} outside [1, {params.max_level}]")
    return math.prod(chain_primes(params)[:level])


# ------------------------------------------------------------------ polynomials

def _poly_mul(a: list[int], b: list[int], q: int) -> list[int]:
    """Negacyclic product mod ``q`` of two coefficient lists in ``[0, q)``.

    Kronecker substitution: pack each polynomial into one big integer, let GMP
    multiply, then unpack and fold ``X^N = -1``.
    """
    n = len(a)
    width = (2 * q.bit_length() + n.bit_length() + 8) // 8
    pa = gmpy2.mpz(int.from_bytes(b"".join(x.to_bytes(width, "little") for x in a), "little"))
    pb = gmpy2.mpz(int.from_bytes(b"".join(x.to_bytes(width, "little") for x in b), "little"))
    raw = int(pa * pb).to_bytes(2 * n * width, "little")
    c = [int.from_bytes(raw[i * width : (i + 1) * width], "little") for i in range(2 * n)]
    return [(c[i] - c[i + n]) % q for i in range(n)]


def _poly_add(a: list[int], b: list[int], q: int) -> list[int]:
    return [(x + y) % q for x, y in zip(a, b)]


def _centered(c: list[int], q: int) -> list[int]:
    half = q >> 1
    return [x - q if x > half else x for x in c]


def _reduce(c, q: int) -> list[int]:
    return [int(x) % q for x in c]


# ------------------------------------------------------------------ encoding

@dataclass
class Plaintext:
    coeffs: list[int]
    scale: float
    level: int
    params: HeParams

    @property
    def slot_count(self) -> int:
        return self.params.slot_count


@lru_cache(maxsize=None)
def _slot_index(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Positions of the slot roots ``zeta^(5^j)`` and their conjugates among ``zeta^(2k+1)``."""
    M = 2 * N
    pows = np.array([pow(5, j, M) for j in range(N // 2)])
    return (pows - 1) // 2, (M - pows - 1) // 2


def _twist(N: int) -> np.ndarray:
    return np.exp(1j * np.pi * np.arange(N) / N)


def encode(v, scale: float, params: HeParams, level: int | None = None) -> Plaintext:
    """Canonical-embedding encode of up to ``N/2`` real values at ``scale``."""
    N = params.ring_degree
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size > params.slot_count:
        raise InputError(f"{v.size} values exceed the {params.slot_count} available slots")
    level = params.max_level if level is None else level
    z = np.zeros(params.slot_count, dtype=np.complex128)
    z[: v.size] = v
    idx, conj_idx = _slot_index(N)
    E = np.zeros(N, dtype=np.complex128)
    E[idx] = z
    E[conj_idx] = np.conj(z)
    m = (np.fft.fft(E) / N) / _twist(N)
    q = modulus_at(params, level)
    coeffs = [int(c) % q for c in np.rint(m.real * scale)]
    return Plaintext(coeffs, float(scale), level, params)


def encode_scalar(w: float, scale: float, params: HeParams, level: int | None = None) -> Plaintext:
    """Encode ``w`` in every slot; the polynomial is the constant ``round(w * scale)``."""
    level = params.max_level if level is None else level
    q = modulus_at(params, level)
    coeffs = [0] * params.ring_degree
    coeffs[0] = int(round(w * scale)) % q
    return Plaintext(coeffs, float(scale), level, params)


def decode(pt: Plaintext, length: int | None = None) -> np.ndarray:
    N = pt.params.ring_degree
    q = modulus_at(pt.params, pt.level)
    m = np.array([float(c) for c in _centered(pt.coeffs, q)]) / pt.scale
    E = N * np.fft.ifft(m * _twist(N))
    idx, _ = _slot_index(N)
    out = E[idx].real
    return out if length is None else out[:length]


# ------------------------------------------------------------------ keys

@dataclass
class PublicKey:
    b: list[int]
    a: list[int]
    params: HeParams


@dataclass
class SecretKey:
    s: list[int]  # centered ternary coefficients
    params: HeParams

    def __repr__(self) -> str:
        return f"SecretKey(N={self.params.ring_degree}, <redacted>)"


@dataclass
class KeyPair:
    public: PublicKey
    secret: SecretKey


def _uniform_mod(q: int, n: int, rng: np.random.Generator) -> list[int]:
    nbytes = (q.bit_length() + 64 + 7) // 8  # 64 spare bits keep the modular bias negligible
    raw = rng.bytes(nbytes * n)
    return [int.from_bytes(raw[i * nbytes : (i + 1) * nbytes], "little") % q for i in range(n)]


def _gaussian(n: int, rng: np.random.Generator) -> list[int]:
    return [int(x) for x in np.rint(rng.normal(0.0, ERROR_SIGMA, n))]


def _ternary_hw(n: int, h: int, rng: np.random.Generator) -> list[int]:
    s = np.zeros(n, dtype=np.int64)
    pos = rng.choice(n, size=h, replace=False)
    s[pos] = rng.choice([-1, 1], size=h)
    return [int(x) for x in s]


def _zero_one(n: int, rng: np.random.Generator) -> list[int]:
    # P(+1) = P(-1) = 1/4, P(0) = 1/2
    return [int(x) for x in rng.choice([-1, 0, 0, 1], size=n)]


def keygen(params: HeParams, rng: np.random.Generator) -> KeyPair:
    N = params.ring_degree
    q = modulus_at(params, params.max_level)
    s = _ternary_hw(N, N // 2, rng)
    a = _uniform_mod(q, N, rng)
    e = _gaussian(N, rng)
    a_s = _poly_mul(a, _reduce(s, q), q)
    b = [(ei - x) % q for ei, x in zip(e, a_s)]
    return KeyPair(PublicKey(b, a, params), SecretKey(s, params))


# ------------------------------------------------------------------ ciphertexts

@dataclass
class Ciphertext:
    c0: list[int]
    c1: list[int]
    scale: float
    level: int
    params: HeParams

    @property
    def modulus(self) -> int:
        return modulus_at(self.params, self.level)


def encrypt(pt: Plaintext, pk: PublicKey, rng: np.random.Generator) -> Ciphertext:
    params = pk.params
    if pt.params != params:
        raise ProtocolError("plaintext and key use different HE parameters")
    top = params.max_level
    q = modulus_at(params, top)
    if pt.level != top:
        raise ProtocolError(f"encrypt expects a plaintext at the top level {top}, got {pt.level}")
    N = params.ring_degree
    u = _reduce(_zero_one(N, rng), q)
    e0, e1 = _gaussian(N, rng), _gaussian(N, rng)
    bu = _poly_mul(pk.b, u, q)
    au = _poly_mul(pk.a, u, q)
    c0 = [(x + e + m) % q for x, e, m in zip(bu, e0, pt.coeffs)]
    c1 = [(x + e) % q for x, e in zip(au, e1)]
    return Ciphertext(c0, c1, pt.scale, top, params)


def decrypt(ct: Ciphertext, sk: SecretKey) -> Plaintext:
    q = ct.modulus
    c1s = _poly_mul(ct.c1, _reduce(sk.s, q), q)
    return Plaintext(_poly_add(ct.c0, c1s, q), ct.scale, ct.level, ct.params)


def encrypt_vector(v, pk: PublicKey, rng: np.random.Generator) -> Ciphertext:
    return encrypt(encode(v, pk.params.scale, pk.params), pk, rng)


def decrypt_vector(ct: Ciphertext, sk: SecretKey, length: int | None = None) -> np.ndarray:
    return decode(decrypt(ct, sk), length)


def _check_compatible(a: Ciphertext, b: Ciphertext) -> None:
    if a.params != b.params:
        raise ProtocolError("ciphertexts use different HE parameters")
    if a.level != b.level:
        raise ProtocolError(f"level mismatch: {a.level} vs {b.level}")
    if not math.isclose(a.scale, b.scale, rel_tol=1e-12):
        raise ProtocolError(f"scale mismatch: {a.scale} vs {b.scale}")


def ct_add(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    _check_compatible(a, b)
    q = a.modulus
    return Ciphertext(_poly_add(a.c0, b.c0, q), _poly_add(a.c1, b.c1, q), a.scale, a.level, a.params)


def ct_mul_plain(ct: Ciphertext, pt: Plaintext) -> Ciphertext:
    """Multiply by a plaintext without rescaling; the result scale is the product."""
    if pt.level != ct.level:
        raise ProtocolError(f"plaintext level {pt.level} != ciphertext level {ct.level}")
    if ct.level < 2:
        raise ProtocolError("level exhausted: no modulus left to rescale after multiplication")
    q = ct.modulus
    if not any(pt.coeffs[1:]):
        k = pt.coeffs[0]
        c0 = [(x * k) % q for x in ct.c0]
        c1 = [(x * k) % q for x in ct.c1]
    else:
        c0 = _poly_mul(ct.c0, pt.coeffs, q)
        c1 = _poly_mul(ct.c1, pt.coeffs, q)
    return Ciphertext(c0, c1, ct.scale * pt.scale, ct.level, ct.params)


def rescale(ct: Ciphertext) -> Ciphertext:
    """Divide by the level's last prime (rounding) and drop one level."""
    if ct.level < 2:
        raise ProtocolError("level exhausted: cannot rescale a level-1 ciphertext")
    p = chain_primes(ct.params)[ct.level - 1]
    q, q_new = ct.modulus, modulus_at(ct.params, ct.level - 1)
    half = p >> 1

    def div(c):
        return [((x + half) // p) % q_new for x in _centered(c, q)]

    return Ciphertext(div(ct.c0), div(ct.c1), ct.scale / p, ct.level - 1, ct.params)


def secure_weighted_sum(cts: list[Ciphertext], weights) -> Ciphertext:
    """Encrypted ``sum_i w_i * ct_i``; consumes exactly one level."""
    weights = [float(w) for w in weights]
    if not cts or len(cts) != len(weights):
        raise InputError(f"{len(cts)} ciphertexts but {len(weights)} weights")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise InputError(f"weights must sum to 1, got {sum(weights)}")
    for ct in cts[1:]:
        _check_compatible(cts[0], ct)
    ref = cts[0]
    acc = None
    for ct, w in zip(cts, weights):
        term = ct_mul_plain(ct, encode_scalar(w, ref.params.scale, ref.params, ref.level))
        acc = term if acc is None else ct_add(acc, term)
    return rescale(acc)


# ------------------------------------------------------------------ wire format

_HEADER = struct.Struct("<4sHIHdd")
_POLY_HEADER = struct.Struct("<II")


def _pack_poly(c: list[int], width: int) -> bytes:
    body = b"".join(x.to_bytes(width, "little") for x in c)
    return _POLY_HEADER.pack(width, len(c)) + body


def serialize_ciphertext(ct: Ciphertext) -> bytes:
    """``magic | version | N | level | log2(scale) | scale`` then two length-prefixed
    little-endian coefficient arrays."""
    width = (ct.modulus.bit_length() + 7) // 8
    head = _HEADER.pack(MAGIC, VERSION, ct.params.ring_degree, ct.level, math.log2(ct.scale), ct.scale)
    return head + _pack_poly(ct.c0, width) + _pack_poly(ct.c1, width)


def deserialize_ciphertext(data: bytes, params: HeParams) -> Ciphertext:
    magic, version, N, level, _, scale = _HEADER.unpack_from(data, 0)
    if magic != MAGIC or version != VERSION:
        raise ProtocolError(f"not a version-{VERSION} ciphertext blob")
    if N != params.ring_degree:
        raise ProtocolError(f"ciphertext ring degree {N} != configured {params.ring_degree}")
    pos = _HEADER.size
    polys = []
    for _ in range(2):
        width, count = _POLY_HEADER.unpack_from(data, pos)
        pos += _POLY_HEADER.size
        if count != N:
            raise ProtocolError(f"polynomial has {count} coefficients, expected {N}")
        blob = data[pos : pos + width * count]
        polys.append([int.from_bytes(blob[i * width : (i + 1) * width], "little") for i in range(count)])
        pos += width * count
    q = modulus_at(params, level)
    if any(c >= q for p in polys for c in p):
        raise ProtocolError("coefficient exceeds the level modulus")
    return Ciphertext(polys[0], polys[1], scale, level, params)
