"""Step-clocked measurement circuits and an exact branching density-matrix
simulator.

A circuit is a sequence of steps; each step holds measurements and rotations
acting on disjoint qubits, and every qubit not touched by an operation idles
for that step (accruing the idle channel).  Measurements record a sign into a
numbered slot.  Detectors declare that the product of a set of recorded signs
has a known value; runs in which a detector fires are discarded
(post-selection), which is how error detection enters.

The simulator is exact: it propagates the conditional (subnormalized) density
matrix of every surviving record branch.  Two representation choices keep
this tractable:

* States live in the Pauli-coefficient picture (rho = sum_P v_P P / 2^n) and
  only the *support* -- the set of Pauli strings with nonzero coefficient --
  is stored.  Parity measurements and depolarizing never enlarge the support
  beyond the group generated by the initial state and the measured operators,
  so an eight-qubit code patch needs a few hundred coefficients, not 4^8.
  The support evolves identically in every branch, so branches share one
  support array next to a (branches x support) coefficient block.
* Branches are merged whenever their future-relevant record information
  agrees.  The eager runner keys branches on the partial parities of
  detectors still in flight (plus any caller-requested slots) instead of full
  record histories, which keeps the branch count bounded by the detector
  window of the circuit rather than growing with circuit depth.

Dense cross-checks of every kernel against the channel constructors in
:mod:`tetronsim.channels` live in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .channels import NoiseParams
from .pauli import (
    LETTERS,
    PHASE_EXP,
    PauliString,
    DenseOperator,
    dense_to_pauli_vec,
    pauli_vec_to_dense,
)

# ---------------------------------------------------------------------------
# Circuit data model
# ---------------------------------------------------------------------------

_MEAS_LETTERS = "XYZ"


@dataclass(frozen=True)
class Meas1:
    """Single-qubit parity measurement of one Pauli letter."""

    qubit: int
    letter: str
    slot: int

    def __post_init__(self):
        if self.letter not in _MEAS_LETTERS:
            raise ValueError(f"measurement letter must be X, Y or Z, got {self.letter!r}")

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.qubit,)


@dataclass(frozen=True)
class Meas2:
    """Two-qubit parity measurement; ``letters[0]`` acts on ``qubit_a``."""

    qubit_a: int
    qubit_b: int
    letters: str
    slot: int

    def __post_init__(self):
        if len(self.letters) != 2 or any(c not in _MEAS_LETTERS for c in self.letters):
            raise ValueError(
                f"two-qubit measurement needs two letters from XYZ, got {self.letters!r}"
            )
        if self.qubit_a == self.qubit_b:
            raise ValueError("two-qubit measurement must touch two distinct qubits")

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.qubit_a, self.qubit_b)


@dataclass(frozen=True)
class Rotate:
    """Coherent rotation exp(+i * angle * P) on one qubit about axis P."""

    qubit: int
    axis: str
    angle: float

    def __post_init__(self):
        if self.axis not in _MEAS_LETTERS:
            raise ValueError(f"rotation axis must be X, Y or Z, got {self.axis!r}")
        if not math.isfinite(self.angle):
            raise ValueError(f"rotation angle must be finite, got {self.angle!r}")

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.qubit,)


@dataclass(frozen=True)
class Idle:
    """Explicit idle marker.  Qubits not measured in a step accrue the idle
    channel whether or not they are marked, so this op only documents intent
    and reserves the qubit against other operations in the same step."""

    qubit: int

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.qubit,)


Operation = "Meas1 | Meas2 | Rotate | Idle"


@dataclass(frozen=True)
class Step:
    ops: tuple

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))


@dataclass(frozen=True)
class Detector:
    """Constraint: the product of the recorded signs in ``slots`` equals
    ``parity`` (+1 or -1), or equals the observed parity of the previous
    detector when ``parity`` is the string ``"prev"``."""

    slots: tuple
    parity: "int | str" = 1

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(self.slots))
        if not self.slots:
            raise ValueError("detector needs at least one slot")
        if self.parity not in (1, -1, "prev"):
            raise ValueError(f"detector parity must be +1, -1 or 'prev', got {self.parity!r}")


@dataclass(frozen=True)
class Circuit:
    num_qubits: int
    steps: tuple
    detectors: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "detectors", tuple(self.detectors))
        seen_slots: set[int] = set()
        for step in self.steps:
            if not isinstance(step, Step):
                raise TypeError(f"circuit steps must be Step instances, got {step!r}")
            used: set[int] = set()
            for op in step.ops:
                if not isinstance(op, (Meas1, Meas2, Rotate, Idle)):
                    raise TypeError(f"unknown operation {op!r}")
                for q in op.qubits:
                    if not (0 <= q < self.num_qubits):
                        raise ValueError(f"qubit q{q} outside 0..{self.num_qubits - 1}")
                    if q in used:
                        raise ValueError(f"qubit q{q} touched twice in one step")
                    used.add(q)
                if isinstance(op, (Meas1, Meas2)):
                    if op.slot in seen_slots:
                        raise ValueError(f"slot s{op.slot} recorded twice")
                    seen_slots.add(op.slot)
        if self.detectors and self.detectors[0].parity == "prev":
            raise ValueError("first detector cannot reference a previous one")
        for det in self.detectors:
            for s in det.slots:
                if s not in seen_slots:
                    raise ValueError(f"detector references unrecorded slot s{s}")

    @property
    def slots(self) -> tuple:
        """Slots in recording order."""
        out = []
        for step in self.steps:
            for op in step.ops:
                if isinstance(op, (Meas1, Meas2)):
                    out.append(op.slot)
        return tuple(out)

    def normalized_detectors(self) -> list[Detector]:
        """Resolve ``prev`` chaining into plain product-equals-parity form.

        Requiring detector k to repeat detector k-1's observed parity is the
        same as requiring the product over the symmetric difference of their
        slot sets to be +1 (shared slots square away).
        """
        out: list[Detector] = []
        prev_raw: tuple = ()
        for det in self.detectors:
            if det.parity == "prev":
                sym = set(det.slots) ^ set(prev_raw)
                if not sym:
                    prev_raw = det.slots
                    continue
                out.append(Detector(tuple(sorted(sym)), 1))
            else:
                eff = _xor_slots(det.slots)
                if not eff:
                    if det.parity == -1:
                        raise ValueError(f"detector {det} is unsatisfiable")
                    prev_raw = det.slots
                    continue
                out.append(Detector(tuple(sorted(eff)), det.parity))
            prev_raw = det.slots
        return out

    # -- text form ---------------------------------------------------------

    def to_text(self) -> str:
        lines: list[str] = []
        for step in self.steps:
            lines.append("step")
            for op in step.ops:
                if isinstance(op, Meas1):
                    lines.append(f"M1 {op.letter} q{op.qubit} -> s{op.slot}")
                elif isinstance(op, Meas2):
                    lines.append(
                        f"M2 {op.letters} q{op.qubit_a} q{op.qubit_b} -> s{op.slot}"
                    )
                elif isinstance(op, Rotate):
                    lines.append(f"ROT {op.axis} q{op.qubit} {op.angle!r}")
                elif isinstance(op, Idle):
                    lines.append(f"IDLE q{op.qubit}")
                else:  # pragma: no cover - constructor forbids this
                    raise TypeError(f"unknown op {op!r}")
        for det in self.detectors:
            parity = det.parity if det.parity == "prev" else f"{det.parity:+d}"
            slots = " ".join(f"s{s}" for s in det.slots)
            lines.append(f"DET {slots} = {parity}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Circuit":
        steps: list[Step] = []
        detectors: list[Detector] = []
        ops: list = []
        in_circuit = False
        max_q = -1

        def close_step():
            if in_circuit:
                steps.append(Step(tuple(ops)))
                ops.clear()

        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            head = parts[0]
            if head == "step":
                close_step()
                in_circuit = True
            elif head == "M1":
                if len(parts) != 5 or parts[3] != "->":
                    raise ValueError(f"malformed M1 line: {raw!r}")
                q = _parse_ref(parts[2], "q")
                max_q = max(max_q, q)
                ops.append(Meas1(q, parts[1], _parse_ref(parts[4], "s")))
            elif head == "M2":
                if len(parts) != 6 or parts[4] != "->":
                    raise ValueError(f"malformed M2 line: {raw!r}")
                qa = _parse_ref(parts[2], "q")
                qb = _parse_ref(parts[3], "q")
                max_q = max(max_q, qa, qb)
                ops.append(Meas2(qa, qb, parts[1], _parse_ref(parts[5], "s")))
            elif head == "ROT":
                if len(parts) != 4:
                    raise ValueError(f"malformed ROT line: {raw!r}")
                q = _parse_ref(parts[2], "q")
                max_q = max(max_q, q)
                ops.append(Rotate(q, parts[1], float(parts[3])))
            elif head == "IDLE":
                if len(parts) != 2:
                    raise ValueError(f"malformed IDLE line: {raw!r}")
                q = _parse_ref(parts[1], "q")
                max_q = max(max_q, q)
                ops.append(Idle(q))
            elif head == "DET":
                if len(parts) < 4 or parts[-2] != "=":
                    raise ValueError(f"malformed DET line: {raw!r}")
                slots = tuple(_parse_ref(p, "s") for p in parts[1:-2])
                tok = parts[-1]
                parity: "int | str"
                if tok == "prev":
                    parity = "prev"
                elif tok in ("+1", "1"):
                    parity = 1
                elif tok == "-1":
                    parity = -1
                else:
                    raise ValueError(f"bad detector parity {tok!r}")
                detectors.append(Detector(slots, parity))
            else:
                raise ValueError(f"unrecognized line: {raw!r}")
        close_step()
        if max_q < 0:
            raise ValueError("circuit has no operations")
        return cls(max_q + 1, tuple(steps), tuple(detectors))


def _xor_slots(slots: Iterable[int]) -> set[int]:
    out: set[int] = set()
    for s in slots:
        out ^= {s}
    return out


def _parse_ref(token: str, prefix: str) -> int:
    if not token.startswith(prefix):
        raise ValueError(f"expected {prefix}<int>, got {token!r}")
    return int(token[len(prefix):])


class CircuitBuilder:
    """Convenience builder: slots are numbered in recording order."""

    def __init__(self, num_qubits: int):
        self.num_qubits = num_qubits
        self._steps: list[Step] = []
        self._ops: list = []
        self._detectors: list[Detector] = []
        self._next_slot = 0

    def meas1(self, qubit: int, letter: str) -> int:
        slot = self._next_slot
        self._next_slot += 1
        self._ops.append(Meas1(qubit, letter, slot))
        return slot

    def meas2(self, qubit_a: int, qubit_b: int, letters: str) -> int:
        slot = self._next_slot
        self._next_slot += 1
        self._ops.append(Meas2(qubit_a, qubit_b, letters, slot))
        return slot

    def rot(self, qubit: int, axis: str, angle: float) -> None:
        self._ops.append(Rotate(qubit, axis, angle))

    def end_step(self) -> None:
        self._steps.append(Step(tuple(self._ops)))
        self._ops = []

    def detector(self, slots: Iterable[int], parity: "int | str" = 1) -> None:
        self._detectors.append(Detector(tuple(slots), parity))

    def build(self) -> Circuit:
        if self._ops:
            self.end_step()
        return Circuit(self.num_qubits, tuple(self._steps), tuple(self._detectors))


# ---------------------------------------------------------------------------
# Sparse Pauli-support engine
# ---------------------------------------------------------------------------


def pauli_index(num_qubits: int, pauli: "PauliString | str") -> int:
    """Base-4 index of an unsigned Pauli on the full register."""
    if isinstance(pauli, str):
        pauli = PauliString.from_text(pauli)
    if pauli.num_qubits != num_qubits:
        raise ValueError(
            f"operator on {pauli.num_qubits} qubits does not fit register of {num_qubits}"
        )
    return pauli.index


def op_pauli_index(op, num_qubits: int) -> int:
    if isinstance(op, Meas1):
        return LETTERS.index(op.letter) << (2 * (num_qubits - 1 - op.qubit))
    if isinstance(op, Meas2):
        return (LETTERS.index(op.letters[0]) << (2 * (num_qubits - 1 - op.qubit_a))) | (
            LETTERS.index(op.letters[1]) << (2 * (num_qubits - 1 - op.qubit_b))
        )
    if isinstance(op, Rotate):
        return LETTERS.index(op.axis) << (2 * (num_qubits - 1 - op.qubit))
    raise TypeError(f"not an operation: {op!r}")


def _digit_column(indices: np.ndarray, num_qubits: int, qubit: int) -> np.ndarray:
    return (indices >> (2 * (num_qubits - 1 - qubit))) & 3


def _phase_exponents(p_index: int, indices: np.ndarray, num_qubits: int) -> np.ndarray:
    """Exponent k (mod 4) in P * Q = i^k * unsigned(P xor Q) for each Q."""
    k = np.zeros(indices.shape, dtype=np.int64)
    for q in range(num_qubits):
        pd = (p_index >> (2 * (num_qubits - 1 - q))) & 3
        if pd:
            k += PHASE_EXP[pd][_digit_column(indices, num_qubits, q)]
    return k & 3


def _positions(sorted_support: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Index of each query in the sorted support, or -1 if absent."""
    if sorted_support.size == 0:
        return np.full(queries.shape, -1, dtype=np.int64)
    idx = np.searchsorted(sorted_support, queries)
    idx = np.minimum(idx, sorted_support.size - 1)
    found = sorted_support[idx] == queries
    return np.where(found, idx, -1)


def _dep1_factor(indices: np.ndarray, num_qubits: int, qubit: int, p: float) -> np.ndarray:
    if p == 0.0:
        return np.ones(indices.shape)
    lam = 1.0 - 4.0 * p / 3.0
    return np.where(_digit_column(indices, num_qubits, qubit) == 0, 1.0, lam)


def _dep2_factor(
    indices: np.ndarray, num_qubits: int, qubit_a: int, qubit_b: int, p: float
) -> np.ndarray:
    if p == 0.0:
        return np.ones(indices.shape)
    da = _digit_column(indices, num_qubits, qubit_a) != 0
    db = _digit_column(indices, num_qubits, qubit_b) != 0
    weight = da.astype(np.int64) + db.astype(np.int64)
    return np.choose(weight, [1.0, 1.0 - 4.0 * p / 3.0, 1.0 - 8.0 * p / 9.0])


_STATE_LABELS = {
    "0": (0.0, 0.0, 1.0),
    "1": (0.0, 0.0, -1.0),
    "+": (1.0, 0.0, 0.0),
    "-": (-1.0, 0.0, 0.0),
    "+i": (0.0, 1.0, 0.0),
    "i": (0.0, 1.0, 0.0),
    "-i": (0.0, -1.0, 0.0),
    "mixed": (0.0, 0.0, 0.0),
}


class TrajectoryEnsemble:
    """All surviving record branches of a run, sharing one Pauli support.

    ``support`` is a sorted int64 array of base-4 Pauli indices; ``coeffs``
    has one row per branch with v_P = tr(P rho_branch).  Each branch's rho is
    subnormalized: its trace is the probability of that branch's records.
    ``tags`` carries per-branch bookkeeping (recorded slots as ("s", slot)
    keys; the runner adds pending-detector parities under ("p", id) keys).
    """

    def __init__(self, num_qubits: int, support: np.ndarray, coeffs: np.ndarray, tags: list):
        self.num_qubits = num_qubits
        self.support = support
        self.coeffs = coeffs
        self.tags = tags

    # -- constructors --------------------------------------------------

    @classmethod
    def from_product_state(cls, labels: Sequence) -> "TrajectoryEnsemble":
        """Build from per-qubit labels ("0", "1", "+", "-", "+i", "-i",
        "mixed") or explicit (x, y, z) Bloch tuples."""
        support = np.array([0], dtype=np.int64)
        values = np.array([1.0])
        n = len(labels)
        for q, label in enumerate(labels):
            bloch = _STATE_LABELS[label] if isinstance(label, str) else tuple(label)
            if len(bloch) != 3 or any(not math.isfinite(c) for c in bloch):
                raise ValueError(f"bad state spec for qubit {q}: {label!r}")
            comps = [(0, 1.0)] + [
                (d, c) for d, c in zip((1, 2, 3), bloch) if c != 0.0
            ]
            shift = 2 * (n - 1 - q)
            support = np.concatenate([support + (d << shift) for d, _ in comps])
            values = np.concatenate([values * c for _, c in comps])
        order = np.argsort(support)
        return cls(n, support[order], values[order][None, :].copy(), [{}])

    @classmethod
    def maximally_mixed(cls, num_qubits: int) -> "TrajectoryEnsemble":
        return cls.from_product_state(["mixed"] * num_qubits)

    @classmethod
    def from_density_matrix(cls, rho: np.ndarray) -> "TrajectoryEnsemble":
        vec = dense_to_pauli_vec(np.asarray(rho, dtype=complex))
        n = max(1, (vec.size.bit_length() - 1) // 2)
        support = np.flatnonzero(vec).astype(np.int64)
        if 0 not in support:
            support = np.concatenate([[0], support])
            support.sort()
        return cls(n, support, vec[support][None, :].copy(), [{}])

    def copy(self) -> "TrajectoryEnsemble":
        return TrajectoryEnsemble(
            self.num_qubits,
            self.support.copy(),
            self.coeffs.copy(),
            [dict(t) for t in self.tags],
        )

    # -- inspection ------------------------------------------------------

    @property
    def num_branches(self) -> int:
        return self.coeffs.shape[0]

    @property
    def branch_traces(self) -> np.ndarray:
        pos = _positions(self.support, np.array([0]))[0]
        if pos < 0:
            return np.zeros(self.num_branches)
        return self.coeffs[:, pos].copy()

    @property
    def total_trace(self) -> float:
        return float(np.sum(self.branch_traces))

    @property
    def records(self) -> list:
        return [
            {key[1]: v for key, v in tag.items() if key[0] == "s"} for tag in self.tags
        ]

    def expectation(self, pauli: "PauliString | str") -> float:
        """tr(O rho) / tr(rho) over the whole surviving ensemble."""
        if isinstance(pauli, str):
            pauli = PauliString.from_text(pauli)
        idx = pauli_index(self.num_qubits, PauliString(pauli.letters))
        pos = _positions(self.support, np.array([idx]))[0]
        num = 0.0 if pos < 0 else float(np.sum(self.coeffs[:, pos])) * pauli.sign
        den = self.total_trace
        if den == 0.0:
            raise ValueError("no accepted weight left; expectation undefined")
        return num / den

    def branch_states(self) -> list:
        """Materialize (records, subnormalized DenseOperator) per branch."""
        out = []
        size = 4**self.num_qubits
        for row, rec in zip(self.coeffs, self.records):
            vec = np.zeros(size)
            vec[self.support] = row
            out.append((rec, DenseOperator(pauli_vec_to_dense(vec), hermitian=True)))
        return out

    def sum_pauli_vec(self) -> np.ndarray:
        """Record-summed state as a full-length Pauli vector."""
        vec = np.zeros(4**self.num_qubits)
        vec[self.support] = self.coeffs.sum(axis=0)
        return vec

    # -- state evolution ------------------------------------------------

    def apply_measurement(
        self,
        op: "Meas1 | Meas2",
        noise: NoiseParams,
        signs,
        *,
        store_record: bool = True,
    ) -> None:
        """Apply one measurement with the given recorded sign(s).

        ``signs`` is +1, -1, or an array with one sign per branch (used when
        a detector forces the record).  The branch count is unchanged; use
        :meth:`split_measurement` to realize both records.
        """
        plus, minus = self._measurement_outputs(op, noise)
        svec = np.asarray(signs, dtype=np.int64)
        if svec.ndim == 0:
            svec = np.full(self.num_branches, int(svec))
        self.coeffs = np.where((svec == 1)[:, None], plus, minus)
        self.support = self._pending_support
        if store_record:
            for tag, s in zip(self.tags, svec):
                tag[("s", op.slot)] = int(s)

    def split_measurement(
        self, op: "Meas1 | Meas2", noise: NoiseParams, *, store_record: bool = True
    ) -> None:
        """Realize both records of a measurement, doubling the branches.

        Branch order: all +1 children first, then all -1 children.
        """
        plus, minus = self._measurement_outputs(op, noise)
        self.coeffs = np.concatenate([plus, minus], axis=0)
        self.support = self._pending_support
        new_tags = []
        for s in (1, -1):
            for tag in self.tags:
                t = dict(tag)
                if store_record:
                    t[("s", op.slot)] = s
                new_tags.append(t)
        self.tags = new_tags

    def _measurement_outputs(self, op, noise: NoiseParams):
        """Coefficient blocks for the +1 and -1 records (shared support)."""
        n = self.num_qubits
        p_index = op_pauli_index(op, n)
        if isinstance(op, Meas2) and noise.theta != 0.0:
            self._rotate_by_index(
                op_pauli_index(Rotate(op.qubit_a, "Z", 0.0), n), noise.theta / 2.0
            )
            self._rotate_by_index(
                op_pauli_index(Rotate(op.qubit_b, "Z", 0.0), n), noise.theta / 2.0
            )

        # Diagonal depolarizing factor for one sandwich half, as a function
        # of the Pauli index.
        if isinstance(op, Meas1):
            def dfac(idx):
                return _dep1_factor(idx, n, op.qubit, noise.p1 / 2.0)
        else:
            def dfac(idx):
                return (
                    _dep1_factor(idx, n, op.qubit_a, noise.p1 / 2.0)
                    * _dep1_factor(idx, n, op.qubit_b, noise.p1 / 2.0)
                    * _dep2_factor(idx, n, op.qubit_a, op.qubit_b, noise.p2 / 2.0)
                )

        k = _phase_exponents(p_index, self.support, n)
        commute = (k & 1) == 0
        kept = self.support[commute]
        new_support = np.unique(np.concatenate([kept, kept ^ p_index]))
        pos_self = _positions(self.support, new_support)
        pos_partner = _positions(self.support, new_support ^ p_index)
        k_new = _phase_exponents(p_index, new_support, n)
        phi = np.where(k_new == 0, 1.0, -1.0)
        d_new = dfac(new_support)
        d_partner = dfac(new_support ^ p_index)
        a_col = 0.5 * d_new * d_new
        b_col = 0.5 * d_new * d_partner * phi

        pad = np.zeros((self.coeffs.shape[0], 1))
        cpad = np.concatenate([self.coeffs, pad], axis=1)
        c_self = cpad[:, pos_self]
        c_partner = cpad[:, pos_partner]
        base = a_col * c_self
        cross = ((1.0 - 2.0 * noise.p_a) * b_col) * c_partner
        plus = base + cross
        minus = base - cross

        if isinstance(op, Meas2) and noise.theta != 0.0:
            # Outer halves of the rotation sandwich, applied to both records.
            self.support = new_support
            self.coeffs = np.concatenate([plus, minus], axis=0)
            self._rotate_by_index(
                op_pauli_index(Rotate(op.qubit_a, "Z", 0.0), n), noise.theta / 2.0
            )
            self._rotate_by_index(
                op_pauli_index(Rotate(op.qubit_b, "Z", 0.0), n), noise.theta / 2.0
            )
            half = self.coeffs.shape[0] // 2
            plus, minus = self.coeffs[:half], self.coeffs[half:]
            new_support = self.support

        self._pending_support = new_support
        return plus, minus

    def _rotate_by_index(self, p_index: int, phi: float) -> None:
        if phi == 0.0:
            return
        n = self.num_qubits
        k = _phase_exponents(p_index, self.support, n)
        anti = (k & 1) == 1
        grown = self.support[anti] ^ p_index
        new_support = np.unique(np.concatenate([self.support, grown]))
        pos_self = _positions(self.support, new_support)
        pos_partner = _positions(self.support, new_support ^ p_index)
        k_new = _phase_exponents(p_index, new_support, n)
        anti_new = (k_new & 1) == 1
        diag = np.where(anti_new, math.cos(2.0 * phi), 1.0)
        off = np.where(anti_new, np.where(k_new == 1, 1.0, -1.0) * math.sin(2.0 * phi), 0.0)
        pad = np.zeros((self.coeffs.shape[0], 1))
        cpad = np.concatenate([self.coeffs, pad], axis=1)
        self.coeffs = diag * cpad[:, pos_self] + off * cpad[:, pos_partner]
        self.support = new_support

    def apply_rotation(self, op: Rotate) -> None:
        self._rotate_by_index(op_pauli_index(op, self.num_qubits), op.angle)

    def apply_idle(self, qubits: Iterable[int], noise: NoiseParams) -> None:
        """One idle step on the listed qubits: rotate by theta about Z, then
        depolarize by p1."""
        qubits = list(qubits)
        if not qubits:
            return
        n = self.num_qubits
        if noise.theta != 0.0:
            for q in qubits:
                self._rotate_by_index(3 << (2 * (n - 1 - q)), noise.theta)
        if noise.p1 != 0.0:
            factor = np.ones(self.support.shape)
            for q in qubits:
                factor = factor * _dep1_factor(self.support, n, q, noise.p1)
            self.coeffs = self.coeffs * factor

    def apply_pauli(self, pauli: "PauliString | str", rows=None) -> None:
        """Conjugate by a Pauli (frame correction): flips the sign of every
        support element that anticommutes with it."""
        if isinstance(pauli, str):
            pauli = PauliString.from_text(pauli)
        idx = pauli_index(self.num_qubits, PauliString(pauli.letters))
        k = _phase_exponents(idx, self.support, self.num_qubits)
        signs = np.where((k & 1) == 0, 1.0, -1.0)
        if rows is None:
            self.coeffs = self.coeffs * signs
        else:
            self.coeffs[rows] = self.coeffs[rows] * signs

    # -- branch bookkeeping ----------------------------------------------

    def prune(self, keep: np.ndarray) -> None:
        keep = np.asarray(keep, dtype=bool)
        self.coeffs = self.coeffs[keep]
        self.tags = [t for t, k in zip(self.tags, keep) if k]

    def merge(self) -> None:
        """Sum branches whose tags agree; canonical (sorted) branch order."""
        keys = [tuple(sorted(t.items())) for t in self.tags]
        order = sorted(range(len(keys)), key=lambda i: keys[i])
        if not order:
            return
        groups: list[list[int]] = []
        group_keys: list = []
        for i in order:
            if group_keys and keys[i] == group_keys[-1]:
                groups[-1].append(i)
            else:
                groups.append([i])
                group_keys.append(keys[i])
        coeffs = np.empty((len(groups), self.coeffs.shape[1]))
        tags = []
        for g, rows in enumerate(groups):
            coeffs[g] = self.coeffs[rows].sum(axis=0)
            tags.append(dict(self.tags[rows[0]]))
        self.coeffs = coeffs
        self.tags = tags

    def drop_tags(self, keys: Iterable) -> None:
        for tag in self.tags:
            for key in keys:
                tag.pop(key, None)

    def trace_out(self, qubits: Iterable[int]) -> "TrajectoryEnsemble":
        """Partial trace over the listed qubits."""
        drop = sorted(set(qubits))
        n = self.num_qubits
        keep_qubits = [q for q in range(n) if q not in drop]
        mask = np.ones(self.support.shape, dtype=bool)
        for q in drop:
            mask &= _digit_column(self.support, n, q) == 0
        sel = self.support[mask]
        new_idx = np.zeros(sel.shape, dtype=np.int64)
        m = len(keep_qubits)
        for j, q in enumerate(keep_qubits):
            new_idx |= _digit_column(sel, n, q) << (2 * (m - 1 - j))
        order = np.argsort(new_idx)
        return TrajectoryEnsemble(
            m,
            new_idx[order],
            np.ascontiguousarray(self.coeffs[:, mask][:, order]),
            [dict(t) for t in self.tags],
        )


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _CompiledDetector:
    ident: int
    slots: frozenset
    parity: int
    last_slot: int


def _compile_detectors(circuit: Circuit):
    seq = {slot: i for i, slot in enumerate(circuit.slots)}
    compiled = []
    for ident, det in enumerate(circuit.normalized_detectors()):
        last = max(det.slots, key=seq.__getitem__)
        compiled.append(_CompiledDetector(ident, frozenset(det.slots), det.parity, last))
    by_slot: dict[int, list[_CompiledDetector]] = {}
    for det in compiled:
        for s in det.slots:
            by_slot.setdefault(s, []).append(det)
    return compiled, by_slot


@dataclass
class RunResult:
    """Outcome of an exact run.

    ``acceptance`` is the probability that no detector fired.  ``probes``
    maps step index -> {pauli text -> conditional expectation at that step};
    ``probe_acceptance`` gives the acceptance up to the same step.
    """

    ensemble: TrajectoryEnsemble
    acceptance: float
    probes: dict = field(default_factory=dict)
    probe_acceptance: dict = field(default_factory=dict)
    peak_branches: int = 0


def _normalize_probes(probes) -> dict:
    out: dict[int, list[PauliString]] = {}
    if probes:
        for step_i, paulis in probes.items():
            out[int(step_i)] = [
                PauliString.from_text(p) if isinstance(p, str) else p for p in paulis
            ]
    return out


def run_circuit(
    circuit: Circuit,
    noise: NoiseParams,
    initial: TrajectoryEnsemble,
    *,
    mode: str = "eager",
    keep_slots: "Iterable[int] | str" = (),
    probes: "Mapping[int, Iterable] | None" = None,
) -> RunResult:
    """Exact run: propagate every record branch, discard detected branches.

    ``mode="eager"`` evaluates detectors as soon as their last slot is
    recorded, forces the records of detector-determined measurements, and
    merges branches that agree on all future-relevant information.
    ``mode="lazy"`` materializes every record combination and applies the
    detectors only at the end; it is exponential in the number of
    measurements and exists as an independent cross-check.

    ``keep_slots`` lists record slots (or ``"all"``) that must remain
    distinguishable in the final ensemble, e.g. to drive outcome-dependent
    corrections afterwards.
    """
    if mode not in ("eager", "lazy"):
        raise ValueError(f"mode must be 'eager' or 'lazy', got {mode!r}")
    eager = mode == "eager"
    keep_all = keep_slots == "all"
    kept = set() if keep_all else set(keep_slots)
    probe_map = _normalize_probes(probes)
    if probe_map and not eager:
        raise ValueError("probes are not supported in lazy mode")
    for step_i in probe_map:
        if not (0 <= step_i < len(circuit.steps)):
            raise ValueError(f"probe step {step_i} out of range")

    detectors, dets_by_slot = _compile_detectors(circuit)
    ens = initial.copy()
    if ens.num_qubits != circuit.num_qubits:
        raise ValueError("initial state size does not match circuit")
    result = RunResult(ens, 0.0)
    peak = ens.num_branches

    for step_i, step in enumerate(circuit.steps):
        measured: set[int] = set()
        for op in step.ops:
            if isinstance(op, Idle):
                continue
            if isinstance(op, Rotate):
                ens.apply_rotation(op)
                continue
            measured.update(op.qubits)
            slot = op.slot
            store = keep_all or slot in kept or not eager
            if not eager:
                ens.split_measurement(op, noise, store_record=store)
                peak = max(peak, ens.num_branches)
                continue
            here = dets_by_slot.get(slot, ())
            completing = [d for d in here if d.last_slot == slot]
            if completing:
                # The record is pinned by the first completing detector:
                # its final parity must come out equal to d0.parity.
                d0 = completing[0]
                svec = np.array(
                    [d0.parity * tag.get(("p", d0.ident), 1) for tag in ens.tags],
                    dtype=np.int64,
                )
                ens.apply_measurement(op, noise, svec, store_record=store)
                rec = svec
            else:
                ens.split_measurement(op, noise, store_record=store)
                rec = np.array(
                    [1] * (ens.num_branches // 2) + [-1] * (ens.num_branches // 2),
                    dtype=np.int64,
                )
            # Fold the record into every pending detector touching this slot,
            # then settle the detectors that just completed.
            for d in here:
                key = ("p", d.ident)
                for tag, s in zip(ens.tags, rec):
                    tag[key] = tag.get(key, 1) * int(s)
            for d in completing:
                key = ("p", d.ident)
                ok = np.array(
                    [tag.get(key, 1) == d.parity for tag in ens.tags], dtype=bool
                )
                ens.drop_tags([key])
                if not ok.all():
                    ens.prune(ok)
            peak = max(peak, ens.num_branches)
        idle = [q for q in range(circuit.num_qubits) if q not in measured]
        ens.apply_idle(idle, noise)
        if eager:
            ens.merge()
        if step_i in probe_map:
            tr = ens.total_trace
            result.probe_acceptance[step_i] = tr
            result.probes[step_i] = {
                str(p): (ens.expectation(p) if tr > 0.0 else math.nan)
                for p in probe_map[step_i]
            }

    if not eager:
        _apply_detectors_lazily(ens, detectors)
    result.acceptance = ens.total_trace
    result.peak_branches = max(peak, ens.num_branches)
    return result


def _apply_detectors_lazily(ens: TrajectoryEnsemble, detectors) -> None:
    if not detectors:
        return
    keep = np.ones(ens.num_branches, dtype=bool)
    for b, tag in enumerate(ens.tags):
        for det in detectors:
            prod = 1
            for s in det.slots:
                prod *= tag[("s", s)]
            if prod != det.parity:
                keep[b] = False
                break
    ens.prune(keep)


@dataclass
class SampleResult:
    """Monte-Carlo estimate from sampled runs.

    Detector-rejected shots count toward ``shots`` but not ``accepted``.
    Expectations are averages of the per-shot conditional expectation values
    over accepted shots, with standard errors.
    """

    shots: int
    accepted: int
    probes: dict = field(default_factory=dict)
    probe_stderr: dict = field(default_factory=dict)
    final: dict = field(default_factory=dict)
    final_stderr: dict = field(default_factory=dict)

    @property
    def acceptance(self) -> float:
        return self.accepted / self.shots if self.shots else math.nan


def sample_circuit(
    circuit: Circuit,
    noise: NoiseParams,
    initial: TrajectoryEnsemble,
    shots: int,
    seed: int,
    *,
    probes: "Mapping[int, Iterable] | None" = None,
    final_observables: Iterable = (),
    batch_size: int = 4096,
) -> SampleResult:
    """Sample records shot by shot instead of enumerating branches.

    Shots are vectorized in batches; every batch carries one state row per
    shot, records are drawn from the exact per-shot distribution, and shots
    whose detectors fire are dropped.  Observable estimates use the per-shot
    conditional expectation (not a sampled sign), which is unbiased with
    reduced variance.
    """
    if initial.num_branches != 1:
        raise ValueError("sampling starts from a single-branch state")
    probe_map = _normalize_probes(probes)
    finals = [
        PauliString.from_text(p) if isinstance(p, str) else p for p in final_observables
    ]
    detectors, dets_by_slot = _compile_detectors(circuit)
    slot_column = {slot: i for i, slot in enumerate(circuit.slots)}
    rng = np.random.default_rng(seed)

    sums: dict = {}
    sq_sums: dict = {}
    counts: dict = {}
    final_sums = {str(p): 0.0 for p in finals}
    final_sq = {str(p): 0.0 for p in finals}
    accepted = 0

    done = 0
    while done < shots:
        b = min(batch_size, shots - done)
        done += b
        ens = TrajectoryEnsemble(
            initial.num_qubits,
            initial.support.copy(),
            np.repeat(initial.coeffs, b, axis=0),
            [{} for _ in range(b)],
        )
        recs = np.zeros((b, len(slot_column)), dtype=np.int8)
        alive = np.ones(b, dtype=bool)
        for step_i, step in enumerate(circuit.steps):
            measured: set[int] = set()
            for op in step.ops:
                if isinstance(op, Idle):
                    continue
                if isinstance(op, Rotate):
                    ens.apply_rotation(op)
                    continue
                measured.update(op.qubits)
                plus, minus = ens._measurement_outputs(op, noise)
                pos0 = _positions(ens._pending_support, np.array([0]))[0]
                t_plus = plus[:, pos0]
                t_minus = minus[:, pos0]
                total = t_plus + t_minus
                with np.errstate(invalid="ignore", divide="ignore"):
                    p_plus = np.where(total > 0, t_plus / np.where(total > 0, total, 1.0), 0.5)
                draw = rng.random(b)
                svec = np.where(draw < p_plus, 1, -1).astype(np.int8)
                sel = (svec == 1)
                ens.coeffs = np.where(sel[:, None], plus, minus)
                ens.support = ens._pending_support
                # Renormalize each shot to its conditional state.
                tr = ens.coeffs[:, pos0]
                safe = np.where(np.abs(tr) > 0, tr, 1.0)
                ens.coeffs = ens.coeffs / safe[:, None]
                recs[:, slot_column[op.slot]] = svec
                for det in dets_by_slot.get(op.slot, ()):
                    if det.last_slot != op.slot:
                        continue
                    par = np.ones(b, dtype=np.int64)
                    for s in det.slots:
                        par *= recs[:, slot_column[s]]
                    alive &= par == det.parity
            idle = [q for q in range(circuit.num_qubits) if q not in measured]
            ens.apply_idle(idle, noise)
            if step_i in probe_map:
                pos0 = _positions(ens.support, np.array([0]))[0]
                tr = ens.coeffs[:, pos0]
                for p in probe_map[step_i]:
                    idx = pauli_index(ens.num_qubits, PauliString(p.letters))
                    pos = _positions(ens.support, np.array([idx]))[0]
                    if pos < 0:
                        vals = np.zeros(b)
                    else:
                        vals = p.sign * ens.coeffs[:, pos] / tr
                    key = (step_i, str(p))
                    good = alive
                    sums[key] = sums.get(key, 0.0) + float(vals[good].sum())
                    sq_sums[key] = sq_sums.get(key, 0.0) + float((vals[good] ** 2).sum())
                    counts[key] = counts.get(key, 0) + int(good.sum())
        accepted += int(alive.sum())
        if finals:
            pos0 = _positions(ens.support, np.array([0]))[0]
            tr = ens.coeffs[:, pos0]
            for p in finals:
                idx = pauli_index(ens.num_qubits, PauliString(p.letters))
                pos = _positions(ens.support, np.array([idx]))[0]
                vals = (
                    np.zeros(b) if pos < 0 else p.sign * ens.coeffs[:, pos] / tr
                )
                final_sums[str(p)] += float(vals[alive].sum())
                final_sq[str(p)] += float((vals[alive] ** 2).sum())

    result = SampleResult(shots=shots, accepted=accepted)
    for (step_i, name), total in sums.items():
        m = counts[(step_i, name)]
        if m == 0:
            continue
        mean = total / m
        var = max(sq_sums[(step_i, name)] / m - mean**2, 0.0)
        result.probes.setdefault(step_i, {})[name] = mean
        result.probe_stderr.setdefault(step_i, {})[name] = math.sqrt(var / m)
    for name, total in final_sums.items():
        if accepted == 0:
            continue
        mean = total / accepted
        var = max(final_sq[name] / accepted - mean**2, 0.0)
        result.final[name] = mean
        result.final_stderr[name] = math.sqrt(var / accepted)
    return result


# ---------------------------------------------------------------------------
# Functional step-at-a-time interface
# ---------------------------------------------------------------------------
#
# run_circuit is the workhorse, but each of its moves is also available as a
# standalone value-in/value-out operation for callers that drive the
# evolution themselves (and for cross-checking the runner in tests).


def init_ensemble(num_qubits: int, initial_state) -> TrajectoryEnsemble:
    """Single-branch ensemble from a normalized density matrix.

    ``initial_state`` may be a DenseOperator or a raw matrix.  It must have
    unit trace (1e-9) and be positive semidefinite (min eigenvalue >= -1e-10).
    """
    mat = initial_state.matrix if isinstance(initial_state, DenseOperator) else initial_state
    mat = np.asarray(mat, dtype=complex)
    if mat.shape != (2**num_qubits, 2**num_qubits):
        raise ValueError(
            f"state has shape {mat.shape}, expected {(2**num_qubits, 2**num_qubits)}"
        )
    tr = complex(np.trace(mat))
    if abs(tr - 1.0) > 1e-9:
        raise ValueError(f"initial state trace {tr} is not 1")
    if float(np.linalg.eigvalsh((mat + mat.conj().T) / 2).min()) < -1e-10:
        raise ValueError("initial state is not positive semidefinite")
    return TrajectoryEnsemble.from_density_matrix(mat)


def apply_step(
    ensemble: TrajectoryEnsemble, step: Step, noise: NoiseParams
) -> TrajectoryEnsemble:
    """Apply one step, doubling each branch per measurement (both records).

    Qubits not measured in the step accrue the idle channel.  Returns a new
    ensemble; the input is untouched.
    """
    Circuit(ensemble.num_qubits, (step,))  # reuse the structural validation
    recorded = {key[1] for tag in ensemble.tags for key in tag if key[0] == "s"}
    out = ensemble.copy()
    measured: set[int] = set()
    for op in step.ops:
        if isinstance(op, Idle):
            continue
        if isinstance(op, Rotate):
            out.apply_rotation(op)
            continue
        if op.slot in recorded:
            raise ValueError(f"slot s{op.slot} already recorded")
        measured.update(op.qubits)
        out.split_measurement(op, noise)
    out.apply_idle([q for q in range(out.num_qubits) if q not in measured], noise)
    return out


def prune_detected(ensemble: TrajectoryEnsemble, detectors) -> TrajectoryEnsemble:
    """Drop branches whose records violate any detector parity.

    Detector parities must be explicit (+1/-1); resolve ``"prev"`` chains
    first via :meth:`Circuit.normalized_detectors`.  Surviving branches keep
    their traces unchanged.
    """
    out = ensemble.copy()
    keep = np.ones(out.num_branches, dtype=bool)
    for det in detectors:
        if det.parity == "prev":
            raise ValueError("resolve 'prev' detectors via Circuit.normalized_detectors")
        for b, tag in enumerate(out.tags):
            prod = 1
            for s in det.slots:
                if ("s", s) not in tag:
                    raise ValueError(f"detector references unrecorded slot s{s}")
                prod *= tag[("s", s)]
            if prod != det.parity:
                keep[b] = False
    out.prune(keep)
    return out


def marginalize_outcomes(ensemble: TrajectoryEnsemble, slots) -> TrajectoryEnsemble:
    """Forget the listed record slots and merge branches that now agree.

    Total trace is preserved exactly (branch matrices are summed).  The
    caller must not marginalize slots still needed by an unapplied detector.
    """
    out = ensemble.copy()
    out.drop_tags([("s", s) for s in slots])
    out.merge()
    return out


def total_state(ensemble: TrajectoryEnsemble) -> DenseOperator:
    """Record-summed (unnormalized) density matrix of the ensemble."""
    return DenseOperator(pauli_vec_to_dense(ensemble.sum_pauli_vec()), hermitian=True)


def acceptance_rate(ensemble: TrajectoryEnsemble) -> float:
    """Total surviving probability: trace of the record-summed state."""
    return ensemble.total_trace
