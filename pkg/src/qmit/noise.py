"""Pauli-Lindblad noise channels and their quasi-probability inverses.

A noise model is a set of Pauli-string generators with nonnegative rates
``lambda``.  Two equivalent encodings are implemented: the first-order
linear map ``rho + sum lambda (P rho P - rho)`` and the product channel
whose per-generator factor mixes ``rho`` with ``P rho P`` at weight
``w = (1 + exp(-2 lambda)) / 2``.  The product channel has an exact linear
inverse with per-factor normalization ``(2w - 1)^{-1}``; the inverse is
trace preserving but not completely positive, so its outputs may be
quasi-states with small negative eigenvalues.

Conjugation by a Pauli string is a signed permutation of matrix entries,
which is used as a fast path and validated against direct matrix products
in the test suite.  Pauli conjugation superoperators commute with one
another (anticommutation signs cancel under conjugation), so the generator
application order is fixed purely for reproducible rate indexing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ValidationError
from .qsim import PAULIS, DensityMatrix, embed_one_qubit, hermitize, _check_qubit_count

PAULI_LETTERS = "IXYZ"


@lru_cache(maxsize=4096)
def _pauli_matrix(letters: str) -> np.ndarray:
    mat = np.array([[1.0]], dtype=np.complex128)
    for ch in letters:
        mat = np.kron(mat, PAULIS[ch])
    mat.setflags(write=False)
    return mat


@lru_cache(maxsize=4096)
def _pauli_perm_phase(letters: str) -> tuple[np.ndarray, np.ndarray]:
    """Decompose ``P|b> = phase_b |perm(b)>`` for a Pauli string.

    X and Y flip the qubit's bit; Y and Z contribute bit-dependent phases.
    """
    n = len(letters)
    dim = 1 << n
    flip_mask = 0
    for q, ch in enumerate(letters):
        if ch in ("X", "Y"):
            flip_mask |= 1 << (n - 1 - q)
    indices = np.arange(dim)
    perm = indices ^ flip_mask
    phases = np.ones(dim, dtype=np.complex128)
    for q, ch in enumerate(letters):
        bits = (indices >> (n - 1 - q)) & 1
        if ch == "Y":
            phases = phases * np.where(bits == 0, 1j, -1j)
        elif ch == "Z":
            phases = phases * np.where(bits == 0, 1.0, -1.0)
    perm.setflags(write=False)
    phases.setflags(write=False)
    return perm, phases


@lru_cache(maxsize=4096)
def _pauli_conj_tables(letters: str) -> tuple[np.ndarray, np.ndarray]:
    """Permutation and entrywise phase matrix for ``rho -> P rho P``."""
    perm, phases = _pauli_perm_phase(letters)
    pp = phases[perm]
    phase_matrix = np.outer(pp, pp.conj())
    phase_matrix.setflags(write=False)
    return perm, phase_matrix


def pauli_conjugate(data: np.ndarray, letters: str) -> np.ndarray:
    """``P rho P`` via the signed-permutation fast path (supports batches)."""
    perm, phase_matrix = _pauli_conj_tables(letters)
    return data[..., perm[:, None], perm[None, :]] * phase_matrix


@dataclass(frozen=True)
class PauliString:
    """Tensor product of single-qubit I/X/Y/Z operators."""

    n: int
    letters: str

    def __post_init__(self):
        _check_qubit_count(self.n)
        if len(self.letters) != self.n:
            raise ValidationError(
                f"pauli string {self.letters!r} has length {len(self.letters)}, expected {self.n}"
            )
        bad = set(self.letters) - set(PAULI_LETTERS)
        if bad:
            raise ValidationError(f"invalid pauli letters {sorted(bad)} in {self.letters!r}")

    @property
    def is_identity(self) -> bool:
        return set(self.letters) == {"I"}

    def matrix(self) -> np.ndarray:
        return _pauli_matrix(self.letters)

    def conjugate_state(self, data: np.ndarray) -> np.ndarray:
        return pauli_conjugate(data, self.letters)


def rate_to_weight(rate):
    """``w = (1 + exp(-2 lambda)) / 2``; 1 at zero rate, -> 1/2 as rate grows."""
    return 0.5 * (1.0 + np.exp(-2.0 * np.asarray(rate, dtype=float)))


@dataclass(frozen=True)
class NoiseModel:
    """Pauli generators with nonnegative rates on an ``n``-qubit register."""

    n: int
    generators: tuple[PauliString, ...]
    rates: np.ndarray

    def __post_init__(self):
        _check_qubit_count(self.n)
        gens = tuple(self.generators)
        object.__setattr__(self, "generators", gens)
        rates = np.array(self.rates, dtype=float, copy=True).ravel()
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)
        if len(gens) != rates.size:
            raise ValidationError(
                f"{len(gens)} generators but {rates.size} rates"
            )
        for gen in gens:
            if not isinstance(gen, PauliString):
                raise ValidationError(f"generator {gen!r} is not a PauliString")
            if gen.n != self.n:
                raise ValidationError(
                    f"generator {gen.letters!r} acts on {gen.n} qubits, model has {self.n}"
                )
            if gen.is_identity:
                raise ValidationError("channel generators must have a non-identity letter")
        if not np.all(np.isfinite(rates)):
            raise ValidationError("noise rates must be finite")
        if np.any(rates < 0.0):
            raise ValidationError(f"noise rates must be nonnegative, got min {rates.min():.3e}")

    @property
    def weights(self) -> np.ndarray:
        return rate_to_weight(self.rates)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "generators": [
                {"pauli": gen.letters, "lambda": float(rate)}
                for gen, rate in zip(self.generators, self.rates)
            ],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "NoiseModel":
        try:
            n = int(payload["n"])
            entries = payload["generators"]
            gens = tuple(PauliString(n, str(e["pauli"])) for e in entries)
            rates = np.array([float(e["lambda"]) for e in entries])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed noise model JSON: {exc}") from exc
        return cls(n, gens, rates)


def default_generators(n: int) -> tuple[PauliString, ...]:
    """Single-qubit X, Y, Z on every qubit, ordered by qubit then X<Y<Z."""
    _check_qubit_count(n)
    gens = []
    for q in range(n):
        for letter in "XYZ":
            letters = "I" * q + letter + "I" * (n - q - 1)
            gens.append(PauliString(n, letters))
    return tuple(gens)


def depolarizing_model(n: int, rate: float) -> NoiseModel:
    """Uniform rate on every single-qubit X, Y and Z generator."""
    if rate < 0.0:
        raise ValidationError(f"depolarizing rate must be nonnegative, got {rate}")
    gens = default_generators(n)
    return NoiseModel(n, gens, np.full(len(gens), float(rate)))


def single_qubit_model(n: int, qubit: int, rates_xyz) -> NoiseModel:
    """X, Y, Z generators on one qubit only."""
    if not 0 <= qubit < n:
        raise ValidationError(f"qubit {qubit} out of range for {n} qubits")
    gens = tuple(
        PauliString(n, "I" * qubit + letter + "I" * (n - qubit - 1)) for letter in "XYZ"
    )
    return NoiseModel(n, gens, np.asarray(rates_xyz, dtype=float))


def draw_noise_models(
    n: int,
    layers: int,
    seed,
    low: float = 0.002,
    high: float = 0.02,
    generators: tuple[PauliString, ...] | None = None,
) -> list[NoiseModel]:
    """Seeded per-layer, per-generator rates from ``uniform[low, high]``.

    This is the reproducible stand-in for a device calibration; the same
    seed always yields the same rate table.
    """
    if not 0.0 <= low <= high:
        raise ValidationError(f"invalid rate range [{low}, {high}]")
    gens = default_generators(n) if generators is None else generators
    rng = np.random.default_rng(seed)
    table = rng.uniform(low, high, size=(layers, len(gens)))
    return [NoiseModel(n, gens, table[i]) for i in range(layers)]


@dataclass
class MitigationModel:
    """Per-layer learnable rate vectors over a shared generator set.

    Rates are projected back to ``>= 0`` after every optimizer step; the
    array may transiently hold arbitrary finite values inside gradient
    computations.
    """

    n: int
    generators: tuple[PauliString, ...]
    rates: np.ndarray  # shape (layers, len(generators))

    def __post_init__(self):
        _check_qubit_count(self.n)
        self.generators = tuple(self.generators)
        self.rates = np.array(self.rates, dtype=float, copy=True)
        if self.rates.ndim != 2 or self.rates.shape[1] != len(self.generators):
            raise ValidationError(
                f"rate table shape {self.rates.shape} does not match "
                f"{len(self.generators)} generators"
            )
        if not np.all(np.isfinite(self.rates)):
            raise ValidationError("mitigation rates must be finite")

    @property
    def layers(self) -> int:
        return self.rates.shape[0]

    @classmethod
    def zeros(
        cls, n: int, layers: int, generators: tuple[PauliString, ...] | None = None
    ) -> "MitigationModel":
        gens = default_generators(n) if generators is None else tuple(generators)
        return cls(n, gens, np.zeros((layers, len(gens))))

    @classmethod
    def from_noise_models(cls, models: list[NoiseModel]) -> "MitigationModel":
        if not models:
            raise ValidationError("need at least one per-layer noise model")
        first = models[0]
        for m in models:
            if m.generators != first.generators or m.n != first.n:
                raise ValidationError("per-layer models must share one generator set")
        return cls(first.n, first.generators, np.stack([m.rates for m in models]))

    def layer_model(self, layer: int) -> NoiseModel:
        return NoiseModel(self.n, self.generators, np.maximum(self.rates[layer], 0.0))

    def project_nonnegative(self) -> None:
        np.maximum(self.rates, 0.0, out=self.rates)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "layers": [
                NoiseModel(self.n, self.generators, np.maximum(row, 0.0)).to_json()
                for row in self.rates
            ],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "MitigationModel":
        try:
            models = [NoiseModel.from_json(item) for item in payload["layers"]]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed mitigation model JSON: {exc}") from exc
        return cls.from_noise_models(models)


def save_noise_layers(models: list[NoiseModel], path) -> None:
    payload = {"n": models[0].n, "layers": [m.to_json() for m in models]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def load_noise_layers(path) -> list[NoiseModel]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        return [NoiseModel.from_json(item) for item in payload["layers"]]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed noise file {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Channel application (array cores + DensityMatrix wrappers)
# ---------------------------------------------------------------------------


def apply_linear_channel_data(data: np.ndarray, model: NoiseModel) -> np.ndarray:
    out = data * (1.0 - float(np.sum(model.rates)))
    for gen, rate in zip(model.generators, model.rates):
        if rate != 0.0:
            out = out + rate * gen.conjugate_state(data)
    return out


def apply_channel_data(data: np.ndarray, model: NoiseModel) -> np.ndarray:
    out = data
    for gen, w in zip(model.generators, model.weights):
        if w != 1.0:
            out = w * out + (1.0 - w) * gen.conjugate_state(out)
    return out


def apply_inverse_channel_data(data: np.ndarray, model: NoiseModel) -> np.ndarray:
    out = data
    for gen, rate in zip(model.generators, model.rates):
        if rate != 0.0:
            out = apply_inverse_factor_data(out, gen, rate)
    return out


def apply_inverse_factor_data(data: np.ndarray, gen: PauliString, rate: float) -> np.ndarray:
    """One inverse factor ``(2w-1)^{-1} (w rho - (1-w) P rho P)``.

    Valid for any finite rate (negative rates act as a forward factor),
    which gradient checks rely on.
    """
    w = float(rate_to_weight(rate))
    gamma = np.exp(2.0 * float(rate))  # (2w - 1)^{-1}
    return gamma * (w * data - (1.0 - w) * gen.conjugate_state(data))


def _require_dims(rho: DensityMatrix, model: NoiseModel) -> None:
    if rho.n != model.n:
        raise ValidationError(
            f"dimension mismatch: state on {rho.n} qubits, noise model on {model.n}"
        )


def apply_linear_channel(rho: DensityMatrix, model: NoiseModel) -> DensityMatrix:
    """First-order map ``rho + sum lambda (P rho P - rho)``; trace preserving.

    Positivity of the output is the caller's concern for large total rates
    (the map is a convex combination only while ``sum lambda <= 1``).
    """
    _require_dims(rho, model)
    data = hermitize(apply_linear_channel_data(rho.data, model))
    quasi = rho.quasi or float(np.sum(model.rates)) > 1.0
    return DensityMatrix(rho.n, data, quasi=quasi)


def apply_channel(rho: DensityMatrix, model: NoiseModel) -> DensityMatrix:
    """Product channel: each factor mixes ``rho`` with ``P rho P`` at weight w."""
    _require_dims(rho, model)
    data = hermitize(apply_channel_data(rho.data, model))
    return DensityMatrix(rho.n, data, quasi=rho.quasi)


def apply_inverse_channel(rho: DensityMatrix, model: NoiseModel) -> DensityMatrix:
    """Exact linear inverse of :func:`apply_channel`; output may be a quasi-state."""
    _require_dims(rho, model)
    data = hermitize(apply_inverse_channel_data(rho.data, model))
    return DensityMatrix(rho.n, data, quasi=True)


def sampling_overhead(model: NoiseModel, method: str = "exp") -> float:
    """Normalization ``gamma`` of the inverse channel.

    Both closed forms are provided so they can be cross-checked:
    ``exp`` computes ``exp(2 sum lambda)``; ``product`` computes
    ``prod (2 w - 1)^{-1}``.
    """
    if method == "exp":
        return float(np.exp(2.0 * np.sum(model.rates)))
    if method == "product":
        return float(np.prod(1.0 / (2.0 * model.weights - 1.0)))
    raise ValidationError(f"unknown sampling overhead method {method!r}")


def amplitude_damping(rho: DensityMatrix, gamma_ad: float, target: int) -> DensityMatrix:
    """Single-qubit amplitude damping (Kraus pair) on ``target``."""
    if not 0.0 <= gamma_ad <= 1.0:
        raise ValidationError(f"damping probability must be in [0, 1], got {gamma_ad}")
    if not 0 <= target < rho.n:
        raise ValidationError(f"target qubit {target} out of range for {rho.n} qubits")
    k0 = np.array([[1.0, 0.0], [0.0, np.sqrt(1.0 - gamma_ad)]], dtype=np.complex128)
    k1 = np.array([[0.0, np.sqrt(gamma_ad)], [0.0, 0.0]], dtype=np.complex128)
    a0 = embed_one_qubit(k0, target, rho.n)
    a1 = embed_one_qubit(k1, target, rho.n)
    data = a0 @ rho.data @ a0.conj().T + a1 @ rho.data @ a1.conj().T
    return DensityMatrix(rho.n, hermitize(data), quasi=rho.quasi)
