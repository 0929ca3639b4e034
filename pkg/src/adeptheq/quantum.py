"""State-vector simulation of the amplitude-embedded strongly entangling circuit.

Qubit 0 is the most significant bit of the basis-state index. States are
complex arrays of shape ``(..., 2**n)``; every gate broadcasts over leading
axes, and rotation angles may carry their own leading axes so that many
parameter settings are simulated in a single pass.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, InputError

MAX_QUBITS = 8
NORM_TOL = 1e-9

CnotSchedule = list[list[tuple[int, int]]]


def n_qubits_of(state: np.ndarray) -> int:
    dim = state.shape[-1]
    n = dim.bit_length() - 1
    if dim < 2 or 1 << n != dim:
        raise ConfigurationError(f"state length {dim} is not a power of two")
    if n > MAX_QUBITS:
        raise ConfigurationError(f"{n} qubits exceeds the supported maximum of {MAX_QUBITS}")
    return n


def amplitude_embed(x) -> np.ndarray:
    """Load a unit-norm real vector (or a batch of them) as state amplitudes."""
    x = np.asarray(x, dtype=np.float64)
    n_qubits_of(x)
    norms = np.linalg.norm(x, axis=-1)
    if np.any(np.abs(norms - 1.0) > NORM_TOL):
        raise InputError(f"amplitude embedding needs unit-norm input, got norm {norms}")
    return x.astype(np.complex128)


def zero_state(n_qubits: int) -> np.ndarray:
    s = np.zeros(1 << n_qubits, dtype=np.complex128)
    s[0] = 1.0
    return s


def _check_qubit(q: int, n: int) -> None:
    if not 0 <= q < n:
        raise InputError(f"qubit index {q} out of range for {n} qubits")


def apply_rotation(state, qubit: int, axis: str, angle) -> np.ndarray:
    """Apply ``R_y(angle)`` or ``R_z(angle)`` to ``qubit``.

    ``angle`` is a scalar or an array broadcastable against ``state.shape[:-1]``.
    """
    state = np.asarray(state, dtype=np.complex128)
    n = n_qubits_of(state)
    _check_qubit(qubit, n)
    lead = state.shape[:-1]
    view = state.reshape(lead + (1 << qubit, 2, 1 << (n - qubit - 1)))
    a0 = view[..., 0, :]
    a1 = view[..., 1, :]
    half = np.asarray(angle, dtype=np.float64)[..., None, None] / 2.0
    axis = axis.upper()
    if axis == "Y":
        c, s = np.cos(half), np.sin(half)
        new0 = c * a0 - s * a1
        new1 = s * a0 + c * a1
    elif axis == "Z":
        phase = np.exp(-1j * half)
        new0 = phase * a0
        new1 = np.conj(phase) * a1
    else:
        raise InputError(f"unsupported rotation axis {axis!r}")
    out = np.stack([new0, new1], axis=-2)
    return out.reshape(out.shape[:-3] + (1 << n,))


@lru_cache(maxsize=None)
def _cnot_perm(n: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(1 << n)
    cbit = 1 << (n - 1 - control)
    tbit = 1 << (n - 1 - target)
    return np.where(idx & cbit, idx ^ tbit, idx)


def apply_cnot(state, control: int, target: int) -> np.ndarray:
    state = np.asarray(state, dtype=np.complex128)
    n = n_qubits_of(state)
    _check_qubit(control, n)
    _check_qubit(target, n)
    if control == target:
        raise InputError(f"CNOT control and target are both qubit {control}")
    return state[..., _cnot_perm(n, control, target)]


def ring_schedule(n_qubits: int, n_layers: int) -> CnotSchedule:
    """CNOT ring whose range grows with depth: layer ``l`` (1-based) pairs
    ``(i, (i + r) mod n)`` with ``r = ((l - 1) mod (n - 1)) + 1``."""
    if n_qubits < 2:
        return [[] for _ in range(n_layers)]
    sched = []
    for l in range(1, n_layers + 1):
        r = ((l - 1) % (n_qubits - 1)) + 1
        sched.append([(i, (i + r) % n_qubits) for i in range(n_qubits)])
    return sched


def validate_schedule(schedule: CnotSchedule, n_qubits: int) -> None:
    for layer in schedule:
        for c, t in layer:
            if c == t or not (0 <= c < n_qubits and 0 <= t < n_qubits):
                raise ConfigurationError(f"invalid CNOT pair ({c}, {t}) for {n_qubits} qubits")


def strongly_entangling_layers(state, params, schedule: CnotSchedule) -> np.ndarray:
    """Per layer: ``R_z -> R_y -> R_z`` on every qubit, then the layer's CNOTs.

    ``params`` has shape ``(..., n_layers, n_qubits, 3)``; extra leading axes
    broadcast against the state's leading axes.
    """
    params = np.asarray(params, dtype=np.float64)
    state = np.asarray(state, dtype=np.complex128)
    n = n_qubits_of(state)
    n_layers = params.shape[-3]
    if params.shape[-2:] != (n, 3) or len(schedule) != n_layers:
        raise ConfigurationError(
            f"entangling params shape {params.shape} incompatible with {n} qubits "
            f"and {len(schedule)} scheduled layers"
        )
    for l in range(n_layers):
        for q in range(n):
            state = apply_rotation(state, q, "Z", params[..., l, q, 0])
            state = apply_rotation(state, q, "Y", params[..., l, q, 1])
            state = apply_rotation(state, q, "Z", params[..., l, q, 2])
        for c, t in schedule[l]:
            state = apply_cnot(state, c, t)
    return state


def inverse_entangling_layers(state, params, schedule: CnotSchedule) -> np.ndarray:
    """Apply ``U(params)^dagger``."""
    params = np.asarray(params, dtype=np.float64)
    state = np.asarray(state, dtype=np.complex128)
    n = n_qubits_of(state)
    for l in reversed(range(params.shape[-3])):
        for c, t in reversed(schedule[l]):
            state = apply_cnot(state, c, t)
        for q in range(n):
            state = apply_rotation(state, q, "Z", -params[..., l, q, 2])
            state = apply_rotation(state, q, "Y", -params[..., l, q, 1])
            state = apply_rotation(state, q, "Z", -params[..., l, q, 0])
    return state


@lru_cache(maxsize=None)
def z_signs(n: int) -> np.ndarray:
    """``signs[i, j]`` is the Z_i eigenvalue (+1/-1) of basis state ``j``."""
    j = np.arange(1 << n)
    bits = (j[None, :] >> (n - 1 - np.arange(n))[:, None]) & 1
    return 1.0 - 2.0 * bits


def pauli_z_expectations(state) -> np.ndarray:
    state = np.asarray(state)
    n = n_qubits_of(state)
    probs = np.abs(state) ** 2
    return probs @ z_signs(n).T


def circuit_expectations(x, params, schedule: CnotSchedule) -> np.ndarray:
    """``<Z_i>`` after embedding ``x`` and running the entangling layers."""
    return pauli_z_expectations(strongly_entangling_layers(amplitude_embed(x), params, schedule))


def parameter_shift_grad(x, params, schedule: CnotSchedule) -> np.ndarray:
    """Jacobian ``d<Z_i>/d theta`` via the two-term shift rule.

    Returns shape ``(n_layers, n_qubits, 3, n_qubits)``, or with a leading batch
    axis when ``x`` is a batch. All shifted circuits run in one broadcast pass.
    """
    params = np.asarray(params, dtype=np.float64)
    psi = amplitude_embed(x)
    n_params = params.size
    shifts = np.zeros((2, n_params) + params.shape)
    flat = shifts.reshape(2, n_params, n_params)
    flat[0, np.arange(n_params), np.arange(n_params)] = np.pi / 2
    flat[1, np.arange(n_params), np.arange(n_params)] = -np.pi / 2
    shifted = params + shifts  # (2, P, L, n, 3)
    if psi.ndim == 2:
        shifted = shifted[:, :, None]  # broadcast over the sample axis
    out = pauli_z_expectations(strongly_entangling_layers(psi, shifted, schedule))
    jac = (out[0] - out[1]) / 2.0  # (P, [B,] n)
    if psi.ndim == 2:
        jac = np.moveaxis(jac, 1, 0)
        return jac.reshape((psi.shape[0],) + params.shape + (jac.shape[-1],))
    return jac.reshape(params.shape + (jac.shape[-1],))


def input_adjoint_grad(x, params, schedule: CnotSchedule) -> np.ndarray:
    """``d<Z_i>/dx`` for real amplitudes ``x``: row ``i`` is ``2 Re[U^dag Z_i U x]``.

    Shape ``(n_qubits, 2**n)`` or ``(B, n_qubits, 2**n)``. The gradient is taken
    with respect to the raw amplitudes; projection onto the unit sphere is the
    caller's job.
    """
    x = np.asarray(x, dtype=np.float64)
    n = n_qubits_of(x)
    psi = strongly_entangling_layers(x.astype(np.complex128), params, schedule)
    z_psi = psi[..., None, :] * z_signs(n)  # (..., n, 2^n)
    back = inverse_entangling_layers(z_psi, params, schedule)
    return 2.0 * back.real
