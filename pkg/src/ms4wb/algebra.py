"""Dual algebras of finite frames and their subalgebra machinery.

The dual algebra of a frame has all point sets as carrier, with the
possibility operators induced by the relations: ``dia`` is the R-preimage
and ``ex`` the E-saturation.  Subalgebras correspond to correct
partitions: the carrier of a generated subalgebra is exactly the family
of sets saturated by the coarsest correct partition refining the
generators' coloring.  Both routes are implemented; the worklist closure
is used whenever the carrier is small enough to materialize, and the two
are cross-checked.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .errors import (
    CapError,
    EvalError,
    InternalInvariantError,
    PreconditionError,
)
from .formulas import Formula, evaluate, relational_validity, subformulas
from .frames import (
    Frame,
    Partition,
    Relation,
    classify,
    coarsest_correct_refinement,
    iter_partitions,
    r_clusters,
)
from .sets import PointSet, bits

POWERSET_CAP = 20
MATERIALIZE_CAP = 4096
CONGRUENCE_POINT_CAP = 16
FILTER_ENUM_BUDGET = 1 << 20
METHOD_B_CAP = 8


class FiniteAlgebra:
    """Explicit finite modal algebra over a frame's points.

    ``elements`` is the sorted carrier of bitmasks, or None for a lazy
    full powerset view.  ``ops`` maps operator names to unary functions
    on masks, total on the carrier.
    """

    def __init__(self, point_names, elements, ops, signature):
        self.point_names = tuple(point_names)
        self.elements = tuple(sorted(elements)) if elements is not None else None
        self.ops: dict[str, Callable[[int], int]] = dict(ops)
        self.signature = signature

    @property
    def width(self) -> int:
        return len(self.point_names)

    @property
    def full(self) -> int:
        return (1 << self.width) - 1

    def __len__(self):
        if self.elements is None:
            return 1 << self.width
        return len(self.elements)

    def carrier(self) -> tuple[int, ...]:
        if self.elements is None:
            return tuple(range(1 << self.width))
        return self.elements

    def __contains__(self, mask: int) -> bool:
        if self.elements is None:
            return 0 <= mask <= self.full
        return mask in set(self.elements)

    def op(self, name: str, mask: int) -> int:
        return self.ops[name](mask)

    def point_sets(self) -> tuple[PointSet, ...]:
        return tuple(PointSet(m, self.width) for m in self.carrier())

    def validate_closure(self) -> None:
        """Check the carrier is Boolean-closed and closed under every op."""
        carrier = set(self.carrier())
        if 0 not in carrier or self.full not in carrier:
            raise InternalInvariantError("carrier misses bottom or top")
        for a in carrier:
            if a ^ self.full not in carrier:
                raise InternalInvariantError("carrier not closed under complement")
            for name, fn in self.ops.items():
                if fn(a) not in carrier:
                    raise InternalInvariantError(
                        f"carrier not closed under {name}"
                    )
        for a, b in itertools.combinations(carrier, 2):
            if a & b not in carrier:
                raise InternalInvariantError("carrier not closed under meet")

    def to_json(self) -> dict:
        doc = {
            "points": list(self.point_names),
            "signature": self.signature,
            "size": len(self),
            "ops": sorted(self.ops),
        }
        if self.elements is not None and len(self.elements) <= 1 << 12:
            doc["carrier"] = [
                list(PointSet(m, self.width).names(self.point_names))
                for m in self.elements
            ]
        return doc


def powerset_algebra(frame: Frame, cap: int = POWERSET_CAP, lazy: bool = False) -> FiniteAlgebra:
    """Full dual algebra of a frame: every point set, dia = R-preimage,
    ex = E-saturation.  Beyond ``cap`` points only the lazy view is
    available."""
    if frame.n > cap and not lazy:
        raise CapError(
            f"powerset of {frame.n} points exceeds cap {cap}; pass lazy=True"
        )
    elements = None if lazy else range(1 << frame.n)
    return FiniteAlgebra(
        frame.points,
        elements,
        {"dia": frame.dia, "ex": frame.ex},
        "ms4",
    )


# ---------------------------------------------------------------------------
# Fixpoint algebras


@dataclass(frozen=True)
class FixpointAlgebra:
    kind: str
    elements: tuple[PointSet, ...]
    implication: dict[tuple[int, int], int] | None


def _upsets_of_quasi_order(rel: Relation, cap_count: int = 1 << 22) -> list[int]:
    """All up-closed sets of a quasi-order, via cluster condensation."""
    clusters = r_clusters(rel)
    masks = clusters.masks()
    k = len(masks)
    index = clusters.block_index()
    succ = [0] * k
    for b, block in enumerate(clusters.blocks):
        for j in bits(rel.rows[block[0]]):
            if index[j] != b:
                succ[b] |= 1 << index[j]
    out = []

    def rec(b, chosen):
        if b == k:
            mask = 0
            for c in bits(chosen):
                mask |= masks[c]
            out.append(mask)
            if len(out) > cap_count:
                raise CapError("upset enumeration budget exceeded")
            return
        # include cluster b only when all its successors are included
        rec(b + 1, chosen)
        if succ[b] & ~chosen == 0:
            rec(b + 1, chosen | (1 << b))
        return

    # process clusters with successors first (ascending condensation height)
    order = sorted(range(k), key=lambda b: _height(succ, b))
    remap_succ = [0] * k
    pos = {c: i for i, c in enumerate(order)}
    for b in range(k):
        for s in bits(succ[b]):
            remap_succ[pos[b]] |= 1 << pos[s]
    masks = [masks[c] for c in order]
    succ = remap_succ

    rec(0, 0)
    return sorted(out)


def _height(succ, b, memo=None):
    if memo is None:
        memo = {}
    if b in memo:
        return memo[b]
    memo[b] = 1 + max((_height(succ, s, memo) for s in bits(succ[b])), default=0)
    return memo[b]


def fixpoint_algebra(frame: Frame, which: str, cap: int = CONGRUENCE_POINT_CAP) -> FixpointAlgebra:
    """Fixpoint families of the three necessity-style operators.

    ``exists``: E-saturated sets; ``box``: R-upsets with Heyting
    implication a -> b = box(-a | b); ``blackbox``: Q-upsets with
    implication through the composite necessity.
    """
    if which == "exists":
        block_masks = frame.e.masks()
        if len(block_masks) > 20:
            raise CapError("saturated-set enumeration capped at 2^20 sets")
        elements = []
        for combo in range(1 << len(block_masks)):
            m = 0
            for i in bits(combo):
                m |= block_masks[i]
            elements.append(m)
        return FixpointAlgebra(
            which, tuple(PointSet(m, frame.n) for m in sorted(elements)), None
        )
    if which == "box":
        rel, necessity = frame.r, frame.box
    elif which == "blackbox":
        rel, necessity = frame.q(), frame.black_box
    else:
        raise EvalError(f"unknown fixpoint family {which!r}")
    if frame.n > cap:
        raise CapError(f"fixpoint enumeration capped at {cap} points")
    elements = _upsets_of_quasi_order(rel)
    full = frame.full_mask
    implication = {
        (a, b): necessity((a ^ full) | b)
        for a in elements
        for b in elements
    }
    return FixpointAlgebra(
        which, tuple(PointSet(m, frame.n) for m in elements), implication
    )


# ---------------------------------------------------------------------------
# Generated subalgebras


@dataclass(frozen=True)
class SubalgebraReport:
    generators: tuple[PointSet, ...]
    elements: tuple[PointSet, ...] | None
    size: int
    kernel: Partition
    closure_steps: int
    method: str
    stable_wrt: tuple[str, ...]

    def to_json(self) -> dict:
        doc = {
            "size": self.size,
            "kernel": [list(b) for b in self.kernel.blocks],
            "closure_steps": self.closure_steps,
            "method": self.method,
            "stable_wrt": list(self.stable_wrt),
        }
        if self.elements is not None and len(self.elements) <= 1 << 12:
            doc["carrier"] = [sorted(ps.indices()) for ps in self.elements]
        return doc


def _signature_ops(frame, signature: Sequence[str]):
    ops = {}
    rows = {}
    for name in signature:
        ops[name] = frame.op(name)
        rows[name] = frame.op_rows(name)
    return ops, rows


def _membership_kernel(n: int, elements: Iterable[int]) -> Partition:
    """Points identified by every carrier element."""
    profile: dict[tuple, list[int]] = {}
    elements = list(elements)
    for i in range(n):
        key = tuple(bool(m >> i & 1) for m in elements)
        profile.setdefault(key, []).append(i)
    return Partition.from_blocks(n, profile.values())


def generated_subalgebra(
    frame,
    gens: Sequence[PointSet],
    signature: Sequence[str],
    materialize_cap: int = MATERIALIZE_CAP,
) -> SubalgebraReport:
    """Least carrier containing the generators, bottom and top, closed
    under complement, meet, and the signature's operators.

    Runs a deterministic worklist closure; if the carrier would exceed
    ``materialize_cap`` elements it falls back to the partition-refinement
    dual (the carrier is then the saturated sets of the kernel, reported
    by size only, materialized when still reasonably small).
    """
    n = frame.n
    signature = tuple(signature)
    ops, rows = _signature_ops(frame, signature)
    full = frame.full_mask
    for g in gens:
        if g.width != n:
            raise EvalError("generator width does not match frame")

    seed = [0, full] + [g.mask for g in gens]
    seen = set()
    ordered = []
    for m in seed:
        if m not in seen:
            seen.add(m)
            ordered.append(m)
    steps = 0
    i = 0
    overflow = False
    while i < len(ordered):
        a = ordered[i]
        i += 1
        steps += 1
        new = [a ^ full]
        for fn in ops.values():
            new.append(fn(a))
        for b in ordered:
            new.append(a & b)
        for m in new:
            if m not in seen:
                seen.add(m)
                ordered.append(m)
        if len(ordered) > materialize_cap:
            overflow = True
            break

    if not overflow:
        elements = tuple(sorted(seen))
        kernel = _membership_kernel(n, elements)
        expected = 1 << len(kernel.blocks)
        if expected != len(elements):
            raise InternalInvariantError(
                f"carrier size {len(elements)} != 2^{len(kernel.blocks)} "
                "(duality mismatch)"
            )
        return SubalgebraReport(
            generators=tuple(gens),
            elements=tuple(PointSet(m, n) for m in elements),
            size=len(elements),
            kernel=kernel,
            closure_steps=steps,
            method="worklist",
            stable_wrt=signature,
        )

    start = _membership_kernel(n, [g.mask for g in gens])
    kernel = coarsest_correct_refinement(list(rows.values()), start)
    size = 1 << len(kernel.blocks)
    elements = None
    if size <= materialize_cap * 16:
        block_masks = kernel.masks()
        elements = []
        for combo in range(size):
            m = 0
            for b in bits(combo):
                m |= block_masks[b]
            elements.append(m)
        elements = tuple(PointSet(m, n) for m in sorted(elements))
    return SubalgebraReport(
        generators=tuple(gens),
        elements=elements,
        size=size,
        kernel=kernel,
        closure_steps=steps,
        method="refinement",
        stable_wrt=signature,
    )


def subalgebra_kernel(frame, gens: Sequence[PointSet], signature: Sequence[str]) -> Partition:
    """Kernel partition of the generated subalgebra, by refinement only."""
    _, rows = _signature_ops(frame, signature)
    start = _membership_kernel(frame.n, [g.mask for g in gens])
    return coarsest_correct_refinement(list(rows.values()), start)


# ---------------------------------------------------------------------------
# Coloring-theorem generation test


@dataclass(frozen=True)
class GeneratingReport:
    generating: bool
    max_monochromatic: Partition
    method_b: str
    methods_agree: bool | None

    def __bool__(self):
        return self.generating


def _partitions_below(cells: Sequence[tuple[int, ...]], n: int):
    """All partitions of range(n) refining the given cell decomposition."""
    per_cell = []
    for cell in cells:
        subparts = []
        for part in iter_partitions(len(cell)):
            subparts.append([tuple(cell[i] for i in block) for block in part.blocks])
        per_cell.append(subparts)
    for combo in itertools.product(*per_cell):
        yield Partition.from_blocks(n, itertools.chain.from_iterable(combo))


def is_generating(
    frame: Frame, gens: Sequence[PointSet], method_b_cap: int = METHOD_B_CAP
) -> GeneratingReport:
    """Do the generators generate the full dual algebra?

    Method A takes the kernel of the generated subalgebra (the maximal
    correct partition below the generators' coloring).  Method B searches
    directly for a nontrivial correct partition whose blocks are
    monochromatic, exhaustively up to ``method_b_cap`` points and by
    refinement beyond (flagged, since that is no longer an independent
    route).  The verdict is "generating" exactly when only the identity
    partition qualifies.
    """
    from .frames import is_correct_partition

    report = generated_subalgebra(frame, gens, ("dia", "ex"))
    kernel = report.kernel
    generating = kernel.is_identity()

    if frame.n <= method_b_cap:
        cells = _membership_kernel(frame.n, [g.mask for g in gens]).blocks
        best = Partition.identity(frame.n)
        found_nontrivial = False
        for cand in _partitions_below(cells, frame.n):
            if cand.is_identity():
                continue
            if is_correct_partition(frame, cand):
                found_nontrivial = True
                best = best.join(cand)
        agree = (not found_nontrivial) == generating and best == kernel
        return GeneratingReport(
            generating=generating,
            max_monochromatic=kernel,
            method_b="exhaustive",
            methods_agree=agree,
        )
    refined = subalgebra_kernel(frame, gens, ("dia", "ex"))
    return GeneratingReport(
        generating=generating,
        max_monochromatic=kernel,
        method_b="refinement (cap exceeded; not an independent route)",
        methods_agree=refined == kernel,
    )


# ---------------------------------------------------------------------------
# Congruence lattice


@dataclass(frozen=True)
class CongruenceReport:
    q_upsets: tuple[PointSet, ...]
    esat_r_upsets: tuple[PointSet, ...]
    h_black_filter_count: int

    def __len__(self):
        return len(self.q_upsets)

    def has_largest_proper(self) -> bool:
        """A largest proper Q-upset exists (the s.i. criterion)."""
        full = (1 << self.q_upsets[0].width) - 1 if self.q_upsets else 0
        union = 0
        for ps in self.q_upsets:
            if ps.mask != full:
                union |= ps.mask
        return union != full

    def to_json(self) -> dict:
        return {
            "count": len(self.q_upsets),
            "q_upsets": [sorted(ps.indices()) for ps in self.q_upsets],
            "esat_r_upsets": [sorted(ps.indices()) for ps in self.esat_r_upsets],
            "h_black_filter_count": self.h_black_filter_count,
        }


def _lattice_filters(elements: Sequence[int], budget: int) -> int:
    """Count nonempty up-closed meet-closed subsets of a lattice of sets.

    Enumerates up-closed subsets by antichain backtracking and checks
    meet-closure; honest but exponential, hence the budget.
    """
    elems = sorted(elements)
    k = len(elems)
    leq = [[(elems[i] & ~elems[j]) == 0 for j in range(k)] for i in range(k)]
    ups = [0] * k
    downs = [0] * k
    for i in range(k):
        for j in range(k):
            if leq[i][j]:
                ups[i] |= 1 << j
            if leq[j][i]:
                downs[i] |= 1 << j
    index = {m: i for i, m in enumerate(elems)}

    upsets = []
    nodes = 0

    def rec(i, chosen, forbidden):
        nonlocal nodes
        nodes += 1
        if nodes > budget:
            raise CapError("filter enumeration budget exceeded")
        if i == k:
            upsets.append(chosen)
            return
        rec(i + 1, chosen, forbidden)
        if not (1 << i) & forbidden:
            # take i as a minimal generator: pull in its up-set and forbid
            # everything comparable so each antichain is built exactly once
            rec(i + 1, chosen | ups[i], forbidden | ups[i] | downs[i])

    rec(0, 0, 0)
    count = 0
    for subset in upsets:
        if subset == 0:
            continue
        members = list(bits(subset))
        closed = True
        for a, b in itertools.combinations(members, 2):
            meet = elems[a] & elems[b]
            if meet not in index or not subset >> index[meet] & 1:
                closed = False
                break
        count += closed
    return count


def congruences(
    frame: Frame,
    cap: int = CONGRUENCE_POINT_CAP,
    filter_budget: int = FILTER_ENUM_BUDGET,
) -> CongruenceReport:
    """The congruence lattice of the dual algebra, computed three ways.

    Q-upsets and E-saturated R-upsets are enumerated independently and
    must coincide; the filters of the lattice of composite-necessity
    fixpoints are counted by direct enumeration and must match in number.
    """
    if frame.n > cap:
        raise CapError(f"congruence enumeration capped at {cap} points")
    q_upsets = _upsets_of_quasi_order(frame.q())
    r_upsets = _upsets_of_quasi_order(frame.r)
    esat = sorted(m for m in r_upsets if frame.ex(m) == m)
    if q_upsets != esat:
        raise InternalInvariantError(
            "Q-upsets and E-saturated R-upsets disagree"
        )
    filters = _lattice_filters(q_upsets, filter_budget)
    if filters != len(q_upsets):
        raise InternalInvariantError(
            f"filter count {filters} != congruence count {len(q_upsets)}"
        )
    return CongruenceReport(
        q_upsets=tuple(PointSet(m, frame.n) for m in q_upsets),
        esat_r_upsets=tuple(PointSet(m, frame.n) for m in esat),
        h_black_filter_count=filters,
    )


# ---------------------------------------------------------------------------
# Atom frames (finite duality, algebra -> frame)


def atom_frame(algebra: FiniteAlgebra) -> Frame:
    """Frame of atoms of a finite algebra of sets.

    Atom x sees atom y under R when x <= dia(y) (primed dia when the
    algebra carries one), and under E when x <= ex(y).  The double dual
    of a full powerset algebra is isomorphic to the original frame.
    """
    carrier = algebra.carrier()
    nonzero = [m for m in carrier if m]
    atoms = []
    for m in nonzero:
        if not any(other & ~m == 0 and other != m for other in nonzero):
            atoms.append(m)
    atoms.sort()
    cover = 0
    for a in atoms:
        cover |= a
    if cover != algebra.full or any(
        a & b for a, b in itertools.combinations(atoms, 2)
    ):
        raise InternalInvariantError("carrier is not atomic over disjoint atoms")
    dia_name = "dia_prime" if "dia_prime" in algebra.ops else "dia"
    names = tuple(
        PointSet(a, algebra.width).names(algebra.point_names)[0] for a in atoms
    )
    k = len(atoms)
    r_rows = []
    e_groups = []
    for i, a in enumerate(atoms):
        row = 0
        e_row = []
        for j, b in enumerate(atoms):
            if a & ~algebra.op(dia_name, b) == 0:
                row |= 1 << j
            if a & ~algebra.op("ex", b) == 0:
                e_row.append(j)
        r_rows.append(row)
        e_groups.append([i] + e_row)
    result = Frame(
        names,
        Relation(tuple(r_rows)),
        Partition.finest_containing(k, e_groups),
    )
    result.validate()
    return result


# ---------------------------------------------------------------------------
# The fmp construction


def frame_validates_ms4s(frame: Frame) -> bool:
    return bool(relational_validity(frame, "ms4s"))


def fmp_restrict(frame: Frame, generators: Sequence[PointSet]) -> FiniteAlgebra:
    """Build the finite algebra with recomputed closure operator.

    The carrier is the closure of the generators under Boolean operations,
    the composite possibility and the saturation; the primed closure of a
    carrier element is the meet of the carrier's R-downsets above it.
    Only frames whose composite relation is symmetric are accepted, and
    the construction verifies all its advertised identities on the way
    out.
    """
    if not frame_validates_ms4s(frame):
        raise PreconditionError("frame does not validate the ms4s axiom")
    report = generated_subalgebra(frame, generators, ("black_dia", "ex"))
    if report.elements is None:
        raise CapError("fmp carrier too large to materialize")
    carrier = [ps.mask for ps in report.elements]
    full = frame.full_mask
    fix_dia = [m for m in carrier if frame.dia(m) == m]
    prime = {}
    for a in carrier:
        meet = full
        for x in fix_dia:
            if a & ~x == 0:
                meet &= x
        prime[a] = meet

    ex_table = {a: frame.ex(a) for a in carrier}
    algebra = FiniteAlgebra(
        frame.points,
        carrier,
        {"dia_prime": prime.__getitem__, "ex": ex_table.__getitem__},
        "ms4_with_primed_dia",
    )

    def necessity(fn, a):
        return fn(a ^ full) ^ full

    for a in carrier:
        pa = prime[a]
        if pa not in prime:
            raise InternalInvariantError("primed dia leaves the carrier")
        if a & ~pa != 0:
            raise InternalInvariantError("a <= dia' a fails")
        if prime[pa] != pa:
            raise InternalInvariantError("dia' dia' a = dia' a fails")
        ea = ex_table[a]
        if ex_table[prime[ea]] != prime[ea]:
            raise InternalInvariantError("ex dia' ex = dia' ex fails")
        black_box_a = necessity(lambda m: prime[ex_table[m]], a)
        if prime[ex_table[black_box_a]] & ~black_box_a != 0:
            raise InternalInvariantError("primed ms4s inequality fails")
        if frame.dia(a) in prime and prime[a] != frame.dia(a):
            # agreement clause: when the real closure lands in the carrier
            # the primed closure must coincide with it
            raise InternalInvariantError("dia' disagrees with dia on the carrier")
    if prime[0] != 0:
        raise InternalInvariantError("dia' 0 = 0 fails")
    for a, b in itertools.combinations(carrier, 2):
        if prime[a | b] != prime[a] | prime[b]:
            raise InternalInvariantError("dia' additivity fails")
    return algebra


@dataclass(frozen=True)
class FalsificationReport:
    algebra_size: int
    subterm_count: int
    values_agree: bool
    still_falsified: bool

    def to_json(self) -> dict:
        return {
            "algebra_size": self.algebra_size,
            "subterm_count": self.subterm_count,
            "values_agree": self.values_agree,
            "still_falsified": self.still_falsified,
        }


def falsification_transfer(frame: Frame, phi: Formula, valuation) -> FalsificationReport:
    """Rebuild a falsifying computation inside the restricted algebra.

    The generators are the value sets of all subterms; the computation of
    the formula with the primed closure must match subterm by subterm and
    stay falsified.
    """
    value = evaluate(frame, phi, valuation)
    if value.mask == frame.full_mask:
        raise PreconditionError("formula is not falsified under this valuation")
    subterm_values = {}
    for sub in subformulas(phi):
        subterm_values[sub] = evaluate(frame, sub, valuation).mask
    gens = sorted(set(subterm_values.values()))
    algebra = fmp_restrict(frame, [PointSet(m, frame.n) for m in gens])
    full = frame.full_mask

    from .formulas import And as FAnd, Bot as FBot, Box as FBox, Dia as FDia
    from .formulas import Ex as FEx, All as FAll, Implies as FImplies
    from .formulas import Not as FNot, Or as FOr, Top as FTop, Var as FVar

    def ev(node) -> int:
        t = type(node)
        if t is FVar:
            return valuation[node.name].mask
        if t is FBot:
            return 0
        if t is FTop:
            return full
        if t is FNot:
            return ev(node.sub) ^ full
        if t is FAnd:
            return ev(node.left) & ev(node.right)
        if t is FOr:
            return ev(node.left) | ev(node.right)
        if t is FImplies:
            return (ev(node.left) ^ full) | ev(node.right)
        if t is FDia:
            return algebra.op("dia_prime", ev(node.sub))
        if t is FBox:
            return algebra.op("dia_prime", ev(node.sub) ^ full) ^ full
        if t is FEx:
            return algebra.op("ex", ev(node.sub))
        if t is FAll:
            return algebra.op("ex", ev(node.sub) ^ full) ^ full
        raise EvalError(f"formula not in the ms4 language: {node!r}")

    agree = True
    for sub, original in subterm_values.items():
        if ev(sub) != original:
            agree = False
            break
    primed_value = ev(phi)
    report = FalsificationReport(
        algebra_size=len(algebra),
        subterm_count=len(subterm_values),
        values_agree=agree,
        still_falsified=primed_value != full,
    )
    if not (agree and report.still_falsified):
        raise InternalInvariantError(
            "falsification transfer failed: computation changed in the "
            "restricted algebra"
        )
    return report
