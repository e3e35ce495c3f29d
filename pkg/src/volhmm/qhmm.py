"""Unitary quantum HMM simulated exactly as a Kraus-operator channel.

A parameterized unitary U acts on a latent register tensored with an observed
register; after each step the observed register is measured in the
computational basis and reset to |0>. Conditioning on outcome i gives the
Kraus operator

    K_i = (I_latent (x) <i|_observed) U (I_latent (x) |0>_observed),

one per symbol, with sum_i K_i^dagger K_i = I whenever U is unitary. The
latent belief state is a density matrix rho; observing symbol i yields
probability tr(K_i rho K_i^dagger) and posterior K_i rho K_i^dagger / prob.
Sequence log-probabilities accumulate the per-step normalizers, which equals
the log of the single end-to-end trace but stays finite at long horizons.

Index conventions (fixed; Kraus extraction is sensitive to them): the joint
basis index is latent_index * n_obs + observed_index, i.e. the latent register
occupies the leading tensor factor. Circuit qubits are numbered with the
latent register first; each register is little-endian (its qubit 0 is the
least significant bit of its index). Rotation layers apply Ry then Rz on every
qubit; "full" entanglement applies CNOTs on all ordered pairs (a, b), a < b,
ascending, and "linear" chains a -> a+1.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError, ZeroLikelihoodError

_HERMITIAN_TOL = 1e-10
_TRACE_TOL = 1e-10
_PSD_TOL = 1e-10
_COMPLETENESS_TOL = 1e-10
_MIN_STEP_PROB = 1e-300


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, PSD, unit-trace matrix representing a latent statistical ensemble."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError(f"density matrix must be square, got shape {m.shape}")
        if np.max(np.abs(m - m.conj().T)) > _HERMITIAN_TOL:
            raise ValidationError("density matrix must be Hermitian")
        if abs(np.trace(m).real - 1.0) > _TRACE_TOL or abs(np.trace(m).imag) > _TRACE_TOL:
            raise ValidationError(f"density matrix must have unit trace, got {np.trace(m)}")
        if np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min() < -_PSD_TOL:
            raise ValidationError("density matrix must be positive semidefinite")
        object.__setattr__(self, "matrix", _freeze(m))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class AnsatzSpec:
    """Shape of the parameterized circuit: register sizes, repetitions, entanglement."""

    latent_qubits: int
    observed_qubits: int
    reps: int = 3
    entanglement: str = "full"

    def __post_init__(self):
        if self.latent_qubits < 1 or self.observed_qubits < 1:
            raise ValidationError("both registers need at least one qubit")
        if self.reps < 0:
            raise ValidationError(f"reps must be >= 0, got {self.reps}")
        if self.entanglement not in ("full", "linear"):
            raise ValidationError(f"entanglement must be 'full' or 'linear', got {self.entanglement!r}")
        if self.observed_qubits > 2 * self.latent_qubits:
            raise ValidationError(
                "n_obs must not exceed n_latent^2 "
                f"(2^{self.observed_qubits} > (2^{self.latent_qubits})^2)"
            )

    @property
    def n_qubits(self) -> int:
        return self.latent_qubits + self.observed_qubits

    @property
    def dim_latent(self) -> int:
        return 2**self.latent_qubits

    @property
    def dim_observed(self) -> int:
        return 2**self.observed_qubits

    @property
    def n_params(self) -> int:
        return 2 * self.n_qubits * (self.reps + 1)


@dataclass(frozen=True)
class QhmmModel:
    """Per-symbol Kraus operators plus the initial latent density matrix."""

    kraus: np.ndarray  # (n_obs, dim_latent, dim_latent)
    rho0: DensityMatrix
    spec: AnsatzSpec
    theta: np.ndarray
    theta_init: np.ndarray

    def __post_init__(self):
        kraus = np.asarray(self.kraus, dtype=complex)
        d = self.spec.dim_latent
        if kraus.shape != (self.spec.dim_observed, d, d):
            raise ValidationError(f"expected kraus shape {(self.spec.dim_observed, d, d)}, got {kraus.shape}")
        completeness = np.einsum("iba,ibc->ac", kraus.conj(), kraus)
        if np.max(np.abs(completeness - np.eye(d))) > _COMPLETENESS_TOL:
            raise ValidationError("Kraus operators do not satisfy sum K^dagger K = I")
        if self.rho0.dim != d:
            raise ValidationError("rho0 dimension does not match the latent register")
        object.__setattr__(self, "kraus", _freeze(kraus))
        object.__setattr__(self, "theta", _freeze(np.asarray(self.theta, dtype=float)))
        object.__setattr__(self, "theta_init", _freeze(np.asarray(self.theta_init, dtype=float)))

    @property
    def n_obs(self) -> int:
        return self.kraus.shape[0]


def _ry(angle: float) -> np.ndarray:
    c, s = math.cos(angle / 2.0), math.sin(angle / 2.0)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _rz(angle: float) -> np.ndarray:
    return np.array(
        [[np.exp(-0.5j * angle), 0.0], [0.0, np.exp(0.5j * angle)]], dtype=complex
    )


def _bit_position(spec: AnsatzSpec, qubit: int) -> int:
    # Joint index = latent * dim_observed + observed, both registers little-endian.
    if qubit < spec.latent_qubits:
        return spec.observed_qubits + qubit
    return qubit - spec.latent_qubits


def _entanglement_pairs(n_qubits: int, kind: str):
    if kind == "full":
        return list(itertools.combinations(range(n_qubits), 2))
    return [(q, q + 1) for q in range(n_qubits - 1)]


def _cnot_permutation(n_qubits: int, pairs, bit_of) -> np.ndarray:
    """Basis permutation of the composed CNOT block: index -> image index."""
    dim = 2**n_qubits
    perm = np.arange(dim)
    for control, target in pairs:
        cbit, tbit = 1 << bit_of(control), 1 << bit_of(target)
        flip = (perm & cbit).astype(bool)
        perm = np.where(flip, perm ^ tbit, perm)
    return perm


def _rotation_layer(spec: AnsatzSpec, ry_angles, rz_angles) -> np.ndarray:
    """One rotation layer as a kron over qubits of Rz(b) Ry(a)."""
    # kron builds most-significant-bit first: latent qubits high to low, then
    # observed qubits high to low.
    order = list(range(spec.latent_qubits - 1, -1, -1)) + [
        spec.latent_qubits + q for q in range(spec.observed_qubits - 1, -1, -1)
    ]
    layer = np.array([[1.0]], dtype=complex)
    for q in order:
        layer = np.kron(layer, _rz(rz_angles[q]) @ _ry(ry_angles[q]))
    return layer


def build_ansatz_unitary(spec: AnsatzSpec, theta) -> np.ndarray:
    """Dense unitary of the rotation/entanglement ansatz on the joint register."""
    theta = np.asarray(theta, dtype=float)
    n = spec.n_qubits
    if theta.shape != (spec.n_params,):
        raise ValidationError(f"expected {spec.n_params} parameters, got shape {theta.shape}")
    pairs = _entanglement_pairs(n, spec.entanglement)
    perm = _cnot_permutation(n, pairs, lambda q: _bit_position(spec, q))
    inv_perm = np.argsort(perm)
    layers = theta.reshape(spec.reps + 1, 2, n)
    u = _rotation_layer(spec, layers[0, 0], layers[0, 1])
    for r in range(1, spec.reps + 1):
        u = u[inv_perm, :]  # entanglement block (a permutation) applied in place
        u = _rotation_layer(spec, layers[r, 0], layers[r, 1]) @ u
    return u


def initial_latent_state(spec: AnsatzSpec, theta_init) -> DensityMatrix:
    """Pure initial state: per-qubit Ry rotations followed by a linear CNOT chain."""
    theta_init = np.asarray(theta_init, dtype=float)
    if theta_init.shape != (spec.latent_qubits,):
        raise ValidationError(
            f"expected {spec.latent_qubits} initial-state angles, got shape {theta_init.shape}"
        )
    psi = np.array([1.0], dtype=complex)
    for q in range(spec.latent_qubits - 1, -1, -1):
        psi = np.kron(psi, _ry(theta_init[q])[:, 0])
    pairs = [(q, q + 1) for q in range(spec.latent_qubits - 1)]
    perm = _cnot_permutation(spec.latent_qubits, pairs, lambda q: q)
    out = np.zeros_like(psi)
    out[perm] = psi
    return DensityMatrix(matrix=np.outer(out, out.conj()))


def kraus_from_unitary(u: np.ndarray, spec: AnsatzSpec) -> np.ndarray:
    """Extract the per-symbol Kraus operators K_i[a, b] = U[(a, i), (b, 0)]."""
    u = np.asarray(u, dtype=complex)
    d_l, d_o = spec.dim_latent, spec.dim_observed
    if u.shape != (d_l * d_o, d_l * d_o):
        raise ValidationError(f"expected unitary of dim {d_l * d_o}, got shape {u.shape}")
    blocks = u.reshape(d_l, d_o, d_l, d_o)
    return np.ascontiguousarray(blocks[:, :, :, 0].transpose(1, 0, 2))


def build_qhmm(spec: AnsatzSpec, theta, theta_init) -> QhmmModel:
    """Model from circuit parameters: ansatz unitary -> Kraus set, plus the initial state."""
    u = build_ansatz_unitary(spec, theta)
    kraus = kraus_from_unitary(u, spec)
    rho0 = initial_latent_state(spec, theta_init)
    return QhmmModel(
        kraus=kraus,
        rho0=rho0,
        spec=spec,
        theta=np.asarray(theta, dtype=float),
        theta_init=np.asarray(theta_init, dtype=float),
    )


def partial_trace(matrix: np.ndarray, keep: str, dims) -> DensityMatrix:
    """Reduce a composite-state density matrix to one subsystem.

    keep is "latent" (leading factor) or "observed" (trailing factor); dims is
    (dim_latent, dim_observed).
    """
    d_l, d_o = dims
    m = np.asarray(matrix, dtype=complex)
    if m.shape != (d_l * d_o, d_l * d_o):
        raise ValidationError(f"expected dim {d_l * d_o} composite state, got shape {m.shape}")
    blocks = m.reshape(d_l, d_o, d_l, d_o)
    if keep == "latent":
        reduced = np.einsum("aibi->ab", blocks)
    elif keep == "observed":
        reduced = np.einsum("aiaj->ij", blocks)
    else:
        raise ValidationError(f"keep must be 'latent' or 'observed', got {keep!r}")
    return DensityMatrix(matrix=reduced)


def _step_raw(rho: np.ndarray, kraus_i: np.ndarray):
    sigma = kraus_i @ rho @ kraus_i.conj().T
    prob = float(np.trace(sigma).real)
    return sigma, prob


def qhmm_step(rho: DensityMatrix, model: QhmmModel, symbol: int):
    """Condition the latent state on one observed symbol; returns (rho_next, prob)."""
    if not (0 <= symbol < model.n_obs):
        raise ValidationError(f"symbol {symbol} out of range for {model.n_obs} outcomes")
    sigma, prob = _step_raw(rho.matrix, model.kraus[symbol])
    if prob < _MIN_STEP_PROB:
        raise ZeroLikelihoodError(f"symbol {symbol} has probability {prob}")
    sigma = sigma / prob
    return DensityMatrix(matrix=0.5 * (sigma + sigma.conj().T)), prob


def qhmm_sequence_logprob(model: QhmmModel, obs) -> float:
    """Log-probability of a symbol sequence, accumulated from per-step normalizers."""
    rho = model.rho0.matrix
    total = 0.0
    for t, symbol in enumerate(obs):
        s = int(symbol)
        if not (0 <= s < model.n_obs):
            raise ValidationError(f"symbol {s} out of range for {model.n_obs} outcomes")
        sigma, prob = _step_raw(rho, model.kraus[s])
        if prob < _MIN_STEP_PROB:
            raise ZeroLikelihoodError(f"zero probability at step {t} (symbol {s})", step=t)
        rho = sigma / prob
        total += math.log(prob)
    return total


def qhmm_sequence_probability(model: QhmmModel, obs) -> float:
    """Exact sequence probability via the unnormalized operator product (0 allowed)."""
    sigma = model.rho0.matrix
    for symbol in obs:
        s = int(symbol)
        if not (0 <= s < model.n_obs):
            raise ValidationError(f"symbol {s} out of range for {model.n_obs} outcomes")
        sigma = model.kraus[s] @ sigma @ model.kraus[s].conj().T
    return max(0.0, float(np.trace(sigma).real))


def qhmm_simulate(model: QhmmModel, n_steps: int, seed, return_states: bool = False):
    """Sample a symbol sequence (optionally with the latent trajectory)."""
    if n_steps < 1:
        raise ValidationError(f"n_steps must be >= 1, got {n_steps}")
    rng = np.random.default_rng(seed)
    uniforms = rng.random(n_steps)
    rho = model.rho0.matrix
    symbols = np.empty(n_steps, dtype=np.int64)
    states = [] if return_states else None
    for t in range(n_steps):
        sigmas = [model.kraus[i] @ rho @ model.kraus[i].conj().T for i in range(model.n_obs)]
        probs = np.array([max(0.0, float(np.trace(s).real)) for s in sigmas])
        cum = np.cumsum(probs / probs.sum())
        s = min(int(np.searchsorted(cum, uniforms[t], side="right")), model.n_obs - 1)
        symbols[t] = s
        rho = sigmas[s] / probs[s]
        rho = 0.5 * (rho + rho.conj().T)
        if return_states:
            states.append(rho.copy())
    if return_states:
        return symbols, states
    return symbols


@dataclass
class CausalBreakReport:
    """Continuation statistics of two runs after resetting the second to the first's state."""

    sequences: list
    distribution_a: np.ndarray
    distribution_b: np.ndarray
    max_abs_diff: float
    markovian: bool


def _filter_prefix(model: QhmmModel, prefix) -> np.ndarray:
    rho = model.rho0.matrix
    for t, symbol in enumerate(prefix):
        sigma, prob = _step_raw(rho, model.kraus[int(symbol)])
        if prob < _MIN_STEP_PROB:
            raise ZeroLikelihoodError(f"prefix has zero probability at step {t}", step=t)
        rho = sigma / prob
        rho = 0.5 * (rho + rho.conj().T)
    return rho


def _continuations_direct(model: QhmmModel, rho: np.ndarray, horizon: int) -> np.ndarray:
    """Continuation law by unnormalized enumeration of the operator products."""
    probs = []

    def descend(sigma, depth):
        if depth == horizon:
            probs.append(max(0.0, float(np.trace(sigma).real)))
            return
        for i in range(model.n_obs):
            descend(model.kraus[i] @ sigma @ model.kraus[i].conj().T, depth + 1)

    descend(rho, 0)
    return np.array(probs)


def _continuations_filtered(model: QhmmModel, rho: np.ndarray, horizon: int) -> np.ndarray:
    """Continuation law by stepwise renormalized filtering (multiplying normalizers back)."""
    probs = []

    def descend(state, acc, depth):
        if depth == horizon:
            probs.append(acc)
            return
        for i in range(model.n_obs):
            sigma, prob = _step_raw(state, model.kraus[i])
            if prob <= 0.0:
                probs.extend([0.0] * (model.n_obs ** (horizon - depth - 1)))
                continue
            descend(sigma / prob, acc * prob, depth + 1)

    descend(rho, 1.0, 0)
    return np.array(probs)


def causal_break_test(
    model: QhmmModel, prefix_a, prefix_b, horizon: int, tol: float = 1e-10
) -> CausalBreakReport:
    """Reset-and-continue check of Markovianity.

    Run A filters prefix_a to latent state rho_A and enumerates the law of the
    next ``horizon`` symbols. Run B filters prefix_b, then undergoes a causal
    break: its latent state is replaced by rho_A and the same continuation law
    is tabulated (through a numerically distinct stepwise route). A Markovian
    channel makes the two laws agree; dependence on run B's earlier emissions
    would show up as a discrepancy.
    """
    if horizon < 1:
        raise ValidationError(f"horizon must be >= 1, got {horizon}")
    rho_a = _filter_prefix(model, prefix_a)
    dist_a = _continuations_direct(model, rho_a, horizon)
    _filter_prefix(model, prefix_b)  # must itself be a positive-probability history
    rho_after_reset = rho_a.copy()
    dist_b = _continuations_filtered(model, rho_after_reset, horizon)
    sequences = list(itertools.product(range(model.n_obs), repeat=horizon))
    max_abs_diff = float(np.max(np.abs(dist_a - dist_b)))
    return CausalBreakReport(
        sequences=sequences,
        distribution_a=dist_a,
        distribution_b=dist_b,
        max_abs_diff=max_abs_diff,
        markovian=bool(max_abs_diff < tol),
    )


def random_qhmm(spec: AnsatzSpec, seed) -> QhmmModel:
    """Model with uniformly random angles in [0, 2pi); useful for property checks."""
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=spec.n_params)
    theta_init = rng.uniform(0.0, 2.0 * math.pi, size=spec.latent_qubits)
    return build_qhmm(spec, theta, theta_init)
