"""Measurement-based synthesis of single-qubit Clifford gates.

A short sequence of one- and two-qubit parity measurements between an
auxiliary qubit (initialized and reset in the X basis) and a computational
qubit enacts a Clifford unitary on the computational qubit, up to a Pauli
correction determined by the random measurement outcomes.  Since any
Clifford is reachable from a Pauli-frame update, only the six Pauli
equivalence classes matter: identity, H, S, HSH, SH, and HS.

Sequences here are stored **left to right in application order**.  The
conventional operator notation reads right to left, so the phase-gate
sequence written conventionally as XI.YI.ZZ.XI appears here as
("XI", "ZZ", "YI", "XI").  In each two-letter token the first letter acts on
the auxiliary qubit, the second on the computational qubit.

Every sequence/correction pair is machine-checked by a dense projector
oracle (:func:`verify_sequence_identity`): for each outcome vector the
product of ideal projectors equals, up to a branch-dependent constant,
(|X_out><X_in| on the auxiliary) tensor (correction times class unitary).
The constant is generally complex; its phase cancels in rho -> M rho M+,
leaving a nonnegative density-level scalar |c|^2, which the report carries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .channels import NoiseParams
from .pauli import (
    PauliString,
    Superoperator,
    average_gate_fidelity,
    embed_letters,
    pauli_matrix,
    unitary_superop,
)
from .simulator import CircuitBuilder, Circuit, TrajectoryEnsemble, run_circuit

CLIFFORD_CLASSES = ("identity", "H", "S", "HSH", "SH", "HS")

_TWO_QUBIT_BASES = frozenset({"ZZ", "YY", "YZ", "ZY"})

_H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2.0)
_S = np.diag([1.0, 1.0j])


def ideal_unitary(name: str) -> np.ndarray:
    """The class representative unitary (2x2 matrix)."""
    _check_class(name)
    mats = {
        "identity": np.eye(2, dtype=complex),
        "H": _H,
        "S": _S,
        "HSH": _H @ _S @ _H,
        "SH": _S @ _H,
        "HS": _H @ _S,
    }
    return mats[name]


def ideal_superop(name: str) -> Superoperator:
    return unitary_superop(ideal_unitary(name))


def _check_class(name: str) -> None:
    if name not in CLIFFORD_CLASSES:
        raise ValueError(f"unknown Clifford class {name!r}; choose from {CLIFFORD_CLASSES}")


# ---------------------------------------------------------------------------
# Sequences and outcome-dependent corrections
# ---------------------------------------------------------------------------

_SEQUENCES = {
    "identity": (),
    "H": ("XI", "ZY", "YI", "XI"),
    "S": ("XI", "ZZ", "YI", "XI"),
    "HSH": ("XI", "ZZ", "ZY", "XI"),
    "SH": ("XI", "ZZ", "ZY", "YI", "XI"),
    "HS": ("XI", "ZY", "ZZ", "YI", "XI"),
}

# Correction exponents: each entry is (letter, parity function of outcomes).
# The correction operator is the left-to-right product letter^exponent, and
# the achieved computational-qubit action is correction . class-unitary.
_EXPONENTS = {
    "identity": (),
    "H": (("Y", lambda s: s[0] * s[1] * s[2] > 0), ("X", lambda s: True)),
    "S": (("Z", lambda s: s[0] * s[1] * s[2] > 0),),
    "HSH": (("Y", lambda s: s[0] * s[3] < 0), ("X", lambda s: s[1] * s[2] > 0)),
    "SH": (("Y", lambda s: s[0] * s[2] * s[3] < 0), ("Z", lambda s: s[1] * s[2] < 0)),
    "HS": (("X", lambda s: s[1] * s[2] > 0), ("Z", lambda s: s[0] * s[1] * s[3] > 0)),
}


@dataclass(frozen=True)
class ClassSequence:
    """A measurement sequence together with its correction rule."""

    name: str
    measurements: tuple

    def __post_init__(self):
        _check_class(self.name)
        object.__setattr__(self, "measurements", tuple(self.measurements))
        if not self.measurements:
            return
        if self.measurements[0] != "XI" or self.measurements[-1] != "XI":
            raise ValueError("sequences must start and end with the auxiliary X reset")
        for m in self.measurements:
            if len(m) != 2 or any(c not in "IXYZ" for c in m):
                raise ValueError(f"bad measurement token {m!r}")
            if "I" not in m and m not in _TWO_QUBIT_BASES:
                raise ValueError(
                    f"two-qubit basis {m} not device-supported (only {sorted(_TWO_QUBIT_BASES)})"
                )

    @property
    def num_outcomes(self) -> int:
        return len(self.measurements)

    def correction(self, outcomes) -> PauliString:
        return pauli_correction(self.name, outcomes)


def sequence_for(name: str) -> ClassSequence:
    """The device-ready measurement sequence for a Clifford class."""
    _check_class(name)
    return ClassSequence(name, _SEQUENCES[name])


def pauli_correction(name: str, outcomes) -> PauliString:
    """Outcome-dependent Pauli frame correction on the computational qubit.

    The returned operator is signless (sign +1 by convention): only the
    conjugation action matters, and overall signs cancel in rho -> P rho P.
    """
    _check_class(name)
    outcomes = tuple(outcomes)
    expected = len(_SEQUENCES[name])
    if len(outcomes) != expected:
        raise ValueError(f"{name} needs {expected} outcomes, got {len(outcomes)}")
    if any(s not in (1, -1) for s in outcomes):
        raise ValueError("outcomes must be +1 or -1")
    letters = [
        letter for letter, active in _EXPONENTS[name] if active(outcomes)
    ]
    result = PauliString("I")
    for letter in letters:
        result, _phase = result.mul_with_phase(PauliString(letter))
    return PauliString(result.letters)


# ---------------------------------------------------------------------------
# Dense projector oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SequenceReport:
    """Exhaustive proportionality check over all outcome vectors.

    ``max_deviation`` is the largest Frobenius residual after fitting the
    branch constant; ``min_weight`` the smallest density-level scalar |c|^2
    over branches (a zero flags an impossible outcome chain, collected in
    ``zero_branches``).
    """

    name: str
    num_branches: int
    max_deviation: float
    min_weight: float
    zero_branches: tuple
    passed: bool


def _projector(token: str, outcome: int) -> np.ndarray:
    op = np.kron(pauli_matrix(token[0]), pauli_matrix(token[1]))
    return (np.eye(4, dtype=complex) + outcome * op) / 2.0


def _correction_matrix(name: str, outcomes) -> np.ndarray:
    m = np.eye(2, dtype=complex)
    for letter, active in _EXPONENTS[name]:
        if active(outcomes):
            m = m @ pauli_matrix(letter)
    return m


def verify_sequence_identity(
    name: str, *, correction_matrix=None, tol: float = 1e-12
) -> SequenceReport:
    """Check the sequence against its correction rule for every outcome.

    For each outcome vector s the product of ideal projectors (applied
    first measurement rightmost) must be proportional to
    |X_{s_last}><X_{s_first}| tensor (correction(s) . U_class).
    ``correction_matrix(name, s)`` can be overridden to probe wrong rules.
    """
    _check_class(name)
    seq = _SEQUENCES[name]
    if not seq:  # the empty identity sequence is vacuously correct
        return SequenceReport(name, 0, 0.0, 1.0, (), True)
    if correction_matrix is None:
        correction_matrix = _correction_matrix
    unitary = ideal_unitary(name)
    x_ket = {
        1: np.array([1.0, 1.0], dtype=complex) / math.sqrt(2.0),
        -1: np.array([1.0, -1.0], dtype=complex) / math.sqrt(2.0),
    }

    worst = 0.0
    min_weight = math.inf
    zero_branches = []
    passed = True
    count = 0
    for s in product((1, -1), repeat=len(seq)):
        count += 1
        m = np.eye(4, dtype=complex)
        for token, outcome in zip(seq, s):
            m = _projector(token, outcome) @ m
        target = np.kron(
            np.outer(x_ket[s[-1]], x_ket[s[0]].conj()),
            correction_matrix(name, s) @ unitary,
        )
        norm_m = float(np.linalg.norm(m))
        if norm_m < tol:
            zero_branches.append(s)
            continue
        constant = np.vdot(target, m) / np.vdot(target, target)
        deviation = float(np.linalg.norm(m - constant * target))
        weight = float(abs(constant)) ** 2
        worst = max(worst, deviation)
        min_weight = min(min_weight, weight)
        if deviation > tol or weight <= tol:
            passed = False
    return SequenceReport(
        name=name,
        num_branches=count,
        max_deviation=worst,
        min_weight=min_weight,
        zero_branches=tuple(zero_branches),
        passed=passed and not zero_branches,
    )


# ---------------------------------------------------------------------------
# Noisy simulation and tomography
# ---------------------------------------------------------------------------

AUX, COMP = 0, 1


def _measurement_steps(builder: CircuitBuilder, tokens) -> list:
    """Append one step per measurement token; returns the outcome slots."""
    slots = []
    for token in tokens:
        if token[1] == "I":
            slots.append(builder.meas1(AUX, token[0]))
        elif token[0] == "I":
            slots.append(builder.meas1(COMP, token[1]))
        else:
            slots.append(builder.meas2(AUX, COMP, token))
        builder.end_step()
    return slots


def class_circuit(name: str) -> Circuit:
    """The bare two-qubit measurement circuit for a class sequence
    (auxiliary = qubit 0, computational = qubit 1), one measurement per
    step so the idle channel acts on the untouched qubit each step."""
    builder = CircuitBuilder(2)
    _measurement_steps(builder, sequence_for(name).measurements)
    return builder.build()


_TOMO_INPUTS = ("0", "1", "+", "+i")


def simulate_class(name: str, noise: NoiseParams = NoiseParams()) -> Superoperator:
    """Exact transfer matrix of the noisy, outcome-corrected class map.

    Runs the instrument sequence on |+> (auxiliary) tensor each of four
    informationally complete computational states, applies the Pauli frame
    correction branch by branch, traces out the auxiliary, and assembles the
    one-qubit transfer matrix.  No post-selection: every branch is kept, so
    the result is trace preserving up to numerical error.
    """
    circuit = class_circuit(name)
    slots = circuit.slots
    outputs = {}
    for label in _TOMO_INPUTS:
        init = TrajectoryEnsemble.from_product_state(["+", label])
        ens = run_circuit(circuit, noise, init, keep_slots="all").ensemble
        for row, records in enumerate(ens.records):
            corr = pauli_correction(name, [records[s] for s in slots])
            if corr.letters != "I":
                ens.apply_pauli(embed_letters(2, corr.letters, (COMP,)), rows=[row])
        reduced = ens.trace_out([AUX])
        outputs[label] = reduced.sum_pauli_vec()

    v_id = outputs["0"] + outputs["1"]
    columns = [
        v_id,
        2.0 * outputs["+"] - v_id,
        2.0 * outputs["+i"] - v_id,
        outputs["0"] - outputs["1"],
    ]
    return Superoperator(0.5 * np.column_stack(columns))


def average_class_fidelity(name: str, noise: NoiseParams = NoiseParams()) -> float:
    """Average gate fidelity of the noisy class map against the ideal
    unitary, uniformly over pure input states."""
    return average_gate_fidelity(simulate_class(name, noise), ideal_unitary(name))


# ---------------------------------------------------------------------------
# Fidelity scans
# ---------------------------------------------------------------------------


@dataclass
class FidelityScan:
    """Average-fidelity grid over single-qubit error rate (rows) and
    assignment error rate (columns) at fixed two-qubit error rate."""

    name: str
    p1_grid: np.ndarray
    pa_grid: np.ndarray
    p2: float
    theta: float
    fidelity: np.ndarray


def fidelity_scan(
    name: str,
    p1_grid=None,
    pa_grid=None,
    p2: float = 0.1,
    *,
    theta: float = 0.0,
    progress=None,
) -> FidelityScan:
    """Fidelity map of a class sequence; defaults to a 21 x 21 linear grid
    with p1, p_a in [0, 0.2] at p2 = 0.1."""
    _check_class(name)
    p1_grid = np.linspace(0.0, 0.2, 21) if p1_grid is None else np.asarray(p1_grid, float)
    pa_grid = np.linspace(0.0, 0.2, 21) if pa_grid is None else np.asarray(pa_grid, float)
    if p1_grid.size == 0 or pa_grid.size == 0:
        raise ValueError("scan grids must be nonempty")
    out = np.full((p1_grid.size, pa_grid.size), math.nan)
    for i, p1 in enumerate(p1_grid):
        for j, pa in enumerate(pa_grid):
            noise = NoiseParams(p_a=float(pa), p1=float(p1), p2=p2, theta=theta)
            out[i, j] = average_class_fidelity(name, noise)
            if progress is not None:
                progress(i * pa_grid.size + j + 1, p1_grid.size * pa_grid.size)
    return FidelityScan(name, p1_grid, pa_grid, p2, theta, out)


def scan_to_csv(scan: FidelityScan) -> str:
    lines = ["p1,pa,p2,class,fidelity"]
    for i, p1 in enumerate(scan.p1_grid):
        for j, pa in enumerate(scan.pa_grid):
            lines.append(
                f"{p1:.12g},{pa:.12g},{scan.p2:.12g},{scan.name},"
                f"{scan.fidelity[i, j]:.12g}"
            )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Tomography experiment suite (self-calibrating, reference-corrected)
# ---------------------------------------------------------------------------

_PREP_BASES = ("X", "Y", "Z")


def gateset_experiment_suite(name: str, *, reset_order: str = "XZ") -> list:
    """The 9 + 9 tomography circuits for one class.

    Each circuit: a two-measurement non-selective reset of the computational
    qubit (order ``reset_order``), a post-selected preparation measurement,
    then (for the first nine) the class sequence, and a final measurement.
    The last nine omit the class sequence and calibrate preparation and
    readout.  Prep and measure bases each range over X, Y, Z.
    """
    _check_class(name)
    if reset_order not in ("XZ", "ZX"):
        raise ValueError(f"reset_order must be 'XZ' or 'ZX', got {reset_order!r}")
    circuits = []
    for with_class in (True, False):
        for meas_basis in _PREP_BASES:
            for prep_basis in _PREP_BASES:
                builder = CircuitBuilder(2)
                for letter in reset_order:
                    builder.meas1(COMP, letter)
                    builder.end_step()
                prep_slot = builder.meas1(COMP, prep_basis)
                builder.end_step()
                if with_class:
                    _measurement_steps(builder, sequence_for(name).measurements)
                builder.meas1(COMP, meas_basis)
                builder.end_step()
                builder.detector((prep_slot,), 1)
                circuits.append(builder.build())
    return circuits


@dataclass(frozen=True)
class GatesetResult:
    """Conditional final-outcome expectations: rows = measurement basis,
    columns = preparation basis (X, Y, Z order), with and without the class
    sequence, plus the solved transfer matrix."""

    name: str
    with_class: np.ndarray
    reference: np.ndarray
    transfer: Superoperator


def _run_tomography_circuit(name: str, circuit: Circuit, noise, with_class: bool) -> float:
    slots = circuit.slots
    final_slot = slots[-1]
    class_slots = slots[3:-1] if with_class else ()
    meas_letter = circuit.steps[-1].ops[0].letter
    keep = tuple(class_slots) + (final_slot,)
    ens = run_circuit(circuit, noise, TrajectoryEnsemble.from_product_state(["+", "+"]),
                      keep_slots=keep).ensemble
    total = 0.0
    weighted = 0.0
    traces = ens.branch_traces
    for row, records in enumerate(ens.records):
        s = records[final_slot]
        if with_class:
            frame = pauli_correction(name, [records[c] for c in class_slots])
            if not frame.commutes(PauliString(meas_letter)):
                s = -s
        weighted += s * traces[row]
        total += traces[row]
    if total <= 0.0:
        raise ValueError("preparation post-selection left no acceptance")
    return weighted / total


def run_gateset_suite(
    name: str,
    noise: NoiseParams = NoiseParams(),
    *,
    average_reset_orders: bool = True,
) -> GatesetResult:
    """Run the 18-circuit suite exactly and solve for the class map.

    The randomized reset is realized by averaging the two measurement
    orders (disable with ``average_reset_orders=False`` to run only XZ).
    The solve is linear-inversion self-calibration: the raw 3x3 expectation
    table of the class circuits times the inverse of the reference table.
    """
    orders = ("XZ", "ZX") if average_reset_orders else ("XZ",)
    tables = {True: np.zeros((3, 3)), False: np.zeros((3, 3))}
    for order in orders:
        circuits = gateset_experiment_suite(name, reset_order=order)
        for idx, circuit in enumerate(circuits):
            with_class = idx < 9
            i, j = divmod(idx % 9, 3)
            tables[with_class][i, j] += _run_tomography_circuit(
                name, circuit, noise, with_class
            ) / len(orders)
    transfer = solve_gateset(tables[True], tables[False])
    return GatesetResult(name, tables[True], tables[False], transfer)


def solve_gateset(with_class: np.ndarray, reference: np.ndarray) -> Superoperator:
    """Reference-corrected linear inversion.

    Both tables have entry (i, j) = expectation of measuring basis i after
    preparing basis j; the reference table absorbs preparation and readout
    imperfections, so ``with_class @ inv(reference)`` estimates the class
    map's Bloch block up to the usual self-calibration basis freedom.  The
    result is embedded as a unital trace-preserving transfer matrix.
    """
    reference = np.asarray(reference, float)
    with_class = np.asarray(with_class, float)
    if reference.shape != (3, 3) or with_class.shape != (3, 3):
        raise ValueError("expect 3x3 expectation tables")
    if np.linalg.cond(reference) > 1e8:
        raise ValueError("reference experiments are degenerate; cannot calibrate")
    block = with_class @ np.linalg.inv(reference)
    full = np.eye(4)
    full[1:, 1:] = block
    return Superoperator(full)
