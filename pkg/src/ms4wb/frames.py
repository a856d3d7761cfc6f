"""Finite monadic-S4 frames: construction, validation, structural analysis.

A frame is a finite point set carrying a quasi-order R (reflexive and
transitive) and an equivalence E, subject to the commutation condition
RE <= ER.  Composition is read left to right on the *output* side:

    (ER)(x) = E(R(x)),

so RE <= ER unfolds to: whenever x E y and y R y', there is x' with
x R x' and x' E y'.  The derived relation Q = ER (first R, then E) is a
quasi-order; a point is a Q-root when its Q-image is the whole frame.

Everything here is an immutable value; every operation is a pure function
of its inputs and safe to call concurrently.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import CapError, FrameError, PartitionError
from .sets import PointSet, bits


# ---------------------------------------------------------------------------
# Relations


@dataclass(frozen=True)
class Relation:
    """Square boolean relation; ``rows[i]`` is the successor bitmask of i."""

    rows: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.rows)

    @classmethod
    def identity(cls, n: int) -> "Relation":
        return cls(tuple(1 << i for i in range(n)))

    @classmethod
    def total(cls, n: int) -> "Relation":
        full = (1 << n) - 1
        return cls((full,) * n)

    @classmethod
    def from_pairs(cls, n: int, pairs: Iterable[tuple[int, int]]) -> "Relation":
        rows = [0] * n
        for i, j in pairs:
            rows[i] |= 1 << j
        return cls(tuple(rows))

    def has(self, i: int, j: int) -> bool:
        return bool(self.rows[i] >> j & 1)

    def pairs(self) -> Iterator[tuple[int, int]]:
        for i, row in enumerate(self.rows):
            for j in bits(row):
                yield i, j

    def image(self, mask: int) -> int:
        out = 0
        for i in bits(mask):
            out |= self.rows[i]
        return out

    def preimage(self, mask: int) -> int:
        out = 0
        for i, row in enumerate(self.rows):
            if row & mask:
                out |= 1 << i
        return out

    def transpose(self) -> "Relation":
        cols = [0] * self.n
        for i, row in enumerate(self.rows):
            for j in bits(row):
                cols[j] |= 1 << i
        return Relation(tuple(cols))

    def then(self, other: "Relation") -> "Relation":
        """Compose: apply self first, then other ((other∘self)(x) = other(self(x)))."""
        return Relation(tuple(other.image(row) for row in self.rows))

    def union(self, other: "Relation") -> "Relation":
        return Relation(tuple(a | b for a, b in zip(self.rows, other.rows)))

    def reflexive_transitive_closure(self) -> "Relation":
        rows = [row | (1 << i) for i, row in enumerate(self.rows)]
        changed = True
        while changed:
            changed = False
            for i in range(self.n):
                new = rows[i]
                for j in bits(rows[i]):
                    new |= rows[j]
                if new != rows[i]:
                    rows[i] = new
                    changed = True
        return Relation(tuple(rows))

    def is_reflexive(self) -> bool:
        return all(row >> i & 1 for i, row in enumerate(self.rows))

    def is_transitive(self) -> bool:
        return self._transitivity_witness() is None

    def _transitivity_witness(self):
        for i, row in enumerate(self.rows):
            for j in bits(row):
                if self.rows[j] & ~row:
                    k = next(bits(self.rows[j] & ~row))
                    return i, j, k
        return None

    def is_symmetric(self) -> bool:
        return self.rows == self.transpose().rows

    def equals_total(self) -> bool:
        full = (1 << self.n) - 1
        return all(row == full for row in self.rows)


# ---------------------------------------------------------------------------
# Partitions


@dataclass(frozen=True)
class Partition:
    """Set partition of ``range(n)`` in canonical form.

    Blocks are sorted internally and ordered by least member, so equal
    partitions compare equal structurally.
    """

    n: int
    blocks: tuple[tuple[int, ...], ...]

    @classmethod
    def from_blocks(cls, n: int, blocks: Iterable[Iterable[int]]) -> "Partition":
        seen = [False] * n
        canon = []
        for block in blocks:
            block = sorted(set(block))
            if not block:
                continue
            for i in block:
                if not 0 <= i < n:
                    raise PartitionError(f"point index {i} out of range 0..{n - 1}")
                if seen[i]:
                    raise PartitionError(f"point index {i} appears in two blocks")
                seen[i] = True
            canon.append(tuple(block))
        if not all(seen):
            missing = [i for i in range(n) if not seen[i]]
            raise PartitionError(f"blocks do not cover points {missing}")
        canon.sort(key=lambda b: b[0])
        return cls(n, tuple(canon))

    @classmethod
    def identity(cls, n: int) -> "Partition":
        return cls(n, tuple((i,) for i in range(n)))

    @classmethod
    def single(cls, n: int) -> "Partition":
        return cls(n, (tuple(range(n)),))

    @classmethod
    def finest_containing(cls, n: int, groups: Iterable[Iterable[int]]) -> "Partition":
        """Finest equivalence whose classes contain each given group."""
        parent = list(range(n))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for group in groups:
            group = list(group)
            for i in group:
                if not 0 <= i < n:
                    raise PartitionError(f"point index {i} out of range 0..{n - 1}")
            for a, b in zip(group, group[1:]):
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[ra] = rb
        buckets: dict[int, list[int]] = {}
        for i in range(n):
            buckets.setdefault(find(i), []).append(i)
        return cls.from_blocks(n, buckets.values())

    @classmethod
    def from_masks(cls, n: int, masks: Iterable[int]) -> "Partition":
        return cls.from_blocks(n, (tuple(bits(m)) for m in masks))

    def masks(self) -> tuple[int, ...]:
        out = []
        for block in self.blocks:
            m = 0
            for i in block:
                m |= 1 << i
            out.append(m)
        return tuple(out)

    def block_index(self) -> tuple[int, ...]:
        idx = [0] * self.n
        for b, block in enumerate(self.blocks):
            for i in block:
                idx[i] = b
        return tuple(idx)

    def mask_of(self, i: int) -> int:
        return self.masks()[self.block_index()[i]]

    def as_relation(self) -> Relation:
        masks = self.masks()
        index = self.block_index()
        return Relation(tuple(masks[index[i]] for i in range(self.n)))

    def relates(self, i: int, j: int) -> bool:
        idx = self.block_index()
        return idx[i] == idx[j]

    def is_identity(self) -> bool:
        return len(self.blocks) == self.n

    def is_single_block(self) -> bool:
        return len(self.blocks) == 1

    def refines(self, other: "Partition") -> bool:
        """True when every block of self lies inside a block of other."""
        if self.n != other.n:
            raise PartitionError("partitions over different point counts")
        other_masks = other.masks()
        for mask in self.masks():
            if not any(mask & ~om == 0 for om in other_masks):
                return False
        return True

    def join(self, other: "Partition") -> "Partition":
        if self.n != other.n:
            raise PartitionError("partitions over different point counts")
        return Partition.finest_containing(
            self.n, itertools.chain(self.blocks, other.blocks)
        )

    def block_names(self, points: Sequence[str]) -> tuple[tuple[str, ...], ...]:
        return tuple(tuple(points[i] for i in block) for block in self.blocks)


def iter_partitions(n: int) -> Iterator[Partition]:
    """All set partitions of ``range(n)`` via restricted growth strings."""
    if n == 0:
        yield Partition(0, ())
        return

    def rec(i, rgs, mx):
        if i == n:
            blocks: dict[int, list[int]] = {}
            for point, label in enumerate(rgs):
                blocks.setdefault(label, []).append(point)
            yield Partition.from_blocks(n, blocks.values())
            return
        for label in range(mx + 2):
            rgs.append(label)
            yield from rec(i + 1, rgs, max(mx, label))
            rgs.pop()

    yield from rec(1, [0], 0)


# ---------------------------------------------------------------------------
# Frames


@dataclass(frozen=True)
class Frame:
    """Finite frame: points, quasi-order R, equivalence partition E.

    ``layers`` optionally tags each point with a layer index (1 = top);
    the translation module populates it.
    """

    points: tuple[str, ...]
    r: Relation
    e: Partition
    layers: tuple[int, ...] | None = None

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def full_mask(self) -> int:
        return (1 << self.n) - 1

    def index(self, name: str) -> int:
        try:
            return self.points.index(name)
        except ValueError:
            raise FrameError(f"unknown point name {name!r}") from None

    def name_mask(self, names: Iterable[str]) -> int:
        mask = 0
        for name in names:
            mask |= 1 << self.index(name)
        return mask

    def point_set(self, names: Iterable[str]) -> PointSet:
        return PointSet(self.name_mask(names), self.n)

    def e_relation(self) -> Relation:
        return self.e.as_relation()

    # Dual operators of R and E on bitmasks.

    def dia(self, mask: int) -> int:
        """Points with an R-successor in ``mask``."""
        out = 0
        for i, row in enumerate(self.r.rows):
            if row & mask:
                out |= 1 << i
        return out

    def box(self, mask: int) -> int:
        return self.dia(mask ^ self.full_mask) ^ self.full_mask

    def ex(self, mask: int) -> int:
        """E-saturation: union of E-blocks meeting ``mask``."""
        out = 0
        for bm in self.e.masks():
            if bm & mask:
                out |= bm
        return out

    def all_(self, mask: int) -> int:
        return self.ex(mask ^ self.full_mask) ^ self.full_mask

    def black_dia(self, mask: int) -> int:
        return self.dia(self.ex(mask))

    def black_box(self, mask: int) -> int:
        return self.black_dia(mask ^ self.full_mask) ^ self.full_mask

    def op(self, name: str):
        """Unary dual operator by name ('dia', 'ex', 'black_dia', ...)."""
        table = {
            "dia": self.dia,
            "box": self.box,
            "ex": self.ex,
            "all": self.all_,
            "black_dia": self.black_dia,
            "black_box": self.black_box,
        }
        if name not in table:
            raise FrameError(f"frame has no operator {name!r}")
        return table[name]

    def op_rows(self, name: str) -> tuple[int, ...]:
        """Successor rows of the relation whose possibility operator is ``name``."""
        if name == "dia":
            return self.r.rows
        if name == "ex":
            return self.e.as_relation().rows
        if name == "black_dia":
            return self.q().rows
        raise FrameError(f"frame has no additive operator {name!r}")

    def q(self) -> Relation:
        """Q = ER: x Q y iff x R z and z E y for some z."""
        return self.r.then(self.e.as_relation())

    def validate(self) -> None:
        """Check all frame invariants; raise FrameError with a witness."""
        n = self.n
        if n < 1:
            raise FrameError("frame needs at least one point")
        if len(set(self.points)) != n:
            raise FrameError("duplicate point names")
        if self.r.n != n or self.e.n != n:
            raise FrameError("relation or partition dimension mismatch")
        if not self.r.is_reflexive():
            i = next(i for i, row in enumerate(self.r.rows) if not row >> i & 1)
            raise FrameError(f"R is not reflexive at {self.points[i]!r}")
        witness = self.r._transitivity_witness()
        if witness is not None:
            i, j, k = witness
            raise FrameError(
                "R is not transitive: "
                f"{self.points[i]!r} R {self.points[j]!r} R {self.points[k]!r} "
                f"but not {self.points[i]!r} R {self.points[k]!r}"
            )
        bad = self.commutation_witness()
        if bad is not None:
            x, y, yp = bad
            raise FrameError(
                "RE <= ER fails: "
                f"{self.points[x]!r} E {self.points[y]!r} R {self.points[yp]!r} "
                f"but no x' with {self.points[x]!r} R x' E {self.points[yp]!r}"
            )
        if self.layers is not None and len(self.layers) != n:
            raise FrameError("layer tag length mismatch")

    def commutation_witness(self):
        """A triple (x, y, y') violating RE <= ER, or None."""
        e_rows = self.e.as_relation().rows
        for x in range(self.n):
            reach_of_x = self.ex(self.r.rows[x])
            for y in bits(e_rows[x]):
                bad = self.r.rows[y] & ~reach_of_x
                if bad:
                    return x, y, next(bits(bad))
        return None

    def layer_mask(self, layer: int) -> int:
        if self.layers is None:
            raise FrameError("frame has no layer tags")
        mask = 0
        for i, tag in enumerate(self.layers):
            if tag == layer:
                mask |= 1 << i
        return mask


def build_frame(
    points: Sequence[str],
    r_edges: Iterable[tuple[str, str]],
    e_blocks: Iterable[Iterable[str]],
    closure_mode: str = "close",
) -> Frame:
    """Build a frame from named edges and blocks.

    ``close`` replaces R by its reflexive-transitive closure and E by the
    finest equivalence containing the given blocks; ``validate`` requires
    the inputs to satisfy all invariants as given.  RE <= ER is checked in
    both modes.
    """
    if closure_mode not in ("close", "validate"):
        raise FrameError(f"unknown closure mode {closure_mode!r}")
    points = tuple(points)
    if len(set(points)) != len(points):
        raise FrameError("duplicate point names")
    if not points:
        raise FrameError("frame needs at least one point")
    index = {name: i for i, name in enumerate(points)}

    def resolve(name):
        if name not in index:
            raise FrameError(f"unknown point name {name!r}")
        return index[name]

    pairs = [(resolve(a), resolve(b)) for a, b in r_edges]
    blocks = [[resolve(x) for x in block] for block in e_blocks]
    n = len(points)
    r = Relation.from_pairs(n, pairs)
    if closure_mode == "close":
        r = r.reflexive_transitive_closure()
        e = Partition.finest_containing(n, blocks)
    else:
        e = Partition.from_blocks(n, blocks)
    frame = Frame(points, r, e)
    frame.validate()
    return frame


# ---------------------------------------------------------------------------
# Clusters, condensation, classification


def r_clusters(rel: Relation) -> Partition:
    """Equivalence classes of rel ∩ rel⁻¹ (the relation's clusters)."""
    groups = []
    for i in range(rel.n):
        cluster = [j for j in bits(rel.rows[i]) if rel.has(j, i)]
        if i == min(cluster):
            groups.append(cluster)
    return Partition.from_blocks(rel.n, groups)


def _cluster_successors(rel: Relation, clusters: Partition) -> list[set[int]]:
    """Proper successor cluster indices per cluster in the condensation."""
    index = clusters.block_index()
    succ: list[set[int]] = [set() for _ in clusters.blocks]
    for b, block in enumerate(clusters.blocks):
        rep = block[0]
        for j in bits(rel.rows[rep]):
            if index[j] != b:
                succ[b].add(index[j])
    return succ


def _cluster_layers(rel: Relation) -> tuple[Partition, list[int]]:
    """Clusters plus the layer index of each cluster (1 = quasi-maximal)."""
    clusters = r_clusters(rel)
    succ = _cluster_successors(rel, clusters)
    layer = [0] * len(clusters.blocks)

    def height(b):
        if layer[b]:
            return layer[b]
        layer[b] = 1 + max((height(s) for s in succ[b]), default=0)
        return layer[b]

    for b in range(len(clusters.blocks)):
        height(b)
    return clusters, layer


@dataclass(frozen=True)
class FrameClassification:
    depth: int
    layers: tuple[PointSet, ...]
    q_roots: PointSet
    is_si: bool
    is_simple: bool
    note: str

    def layer_of(self, i: int) -> int:
        for k, layer in enumerate(self.layers, start=1):
            if i in layer:
                return k
        raise FrameError(f"point index {i} not in any layer")


def classify(frame: Frame) -> FrameClassification:
    """Depth, layers, Q-roots, and the s.i./simple verdicts of a frame.

    Depth is the longest proper R-chain, computed on the cluster
    condensation; layer k collects the points whose longest proper chain
    upward has exactly k points.  On finite frames the open-set condition
    on Q-roots is vacuous, so s.i. just means some Q-root exists.
    """
    clusters, cluster_layer = _cluster_layers(frame.r)
    depth = max(cluster_layer)
    masks = clusters.masks()
    layer_masks = [0] * depth
    for b, lay in enumerate(cluster_layer):
        layer_masks[lay - 1] |= masks[b]
    q = frame.q()
    roots = 0
    for i, row in enumerate(q.rows):
        if row == frame.full_mask:
            roots |= 1 << i
    return FrameClassification(
        depth=depth,
        layers=tuple(PointSet(m, frame.n) for m in layer_masks),
        q_roots=PointSet(roots, frame.n),
        is_si=roots != 0,
        is_simple=roots == frame.full_mask,
        note="finite frame: every set is open, so strongly Q-rooted = Q-rooted",
    )


def q_relation(frame: Frame) -> Relation:
    """The quasi-order Q = ER of a frame."""
    return frame.q()


def skeleton(frame: Frame) -> Frame:
    """Quotient by E: points are E-blocks (named by least member), E = identity."""
    masks = frame.e.masks()
    names = tuple(frame.points[block[0]] for block in frame.e.blocks)
    k = len(masks)
    rows = []
    for bm in masks:
        image = frame.r.image(bm)
        row = 0
        for j, other in enumerate(masks):
            if image & other:
                row |= 1 << j
        rows.append(row)
    result = Frame(names, Relation(tuple(rows)), Partition.identity(k))
    result.validate()
    return result


# ---------------------------------------------------------------------------
# Correct partitions and quotients


@dataclass(frozen=True)
class CorrectnessVerdict:
    ok: bool
    clause: str | None = None
    witness: tuple[str, str, str] | None = None
    note: str = "finite frame: the separation clause is vacuous"

    def __bool__(self):
        return self.ok


def stability_witness(rows: Sequence[int], part: Partition):
    """Violation of (rel)K <= K(rel): a triple (x, y, y') with x K y, y' in
    rel(y), and no x' in rel(x) with x' K y'.  None when stable."""
    block_masks = part.masks()
    index = part.block_index()
    for block in part.blocks:
        reach = [frozenset(index[j] for j in bits(rows[i])) for i in block]
        for a, b in itertools.combinations(range(len(block)), 2):
            if reach[a] != reach[b]:
                # orient so x misses a block that y reaches
                if reach[b] - reach[a]:
                    x, y = block[a], block[b]
                    missing = next(iter(reach[b] - reach[a]))
                else:
                    x, y = block[b], block[a]
                    missing = next(iter(reach[a] - reach[b]))
                yp = next(bits(rows[y] & block_masks[missing]))
                return x, y, yp
    return None


def is_correct_partition(frame: Frame, part: Partition) -> CorrectnessVerdict:
    """Check RK <= KR and EK <= KE for a candidate partition K."""
    if part.n != frame.n:
        raise PartitionError("partition size does not match frame")
    w = stability_witness(frame.r.rows, part)
    if w is not None:
        x, y, yp = w
        return CorrectnessVerdict(
            False, "R", (frame.points[x], frame.points[y], frame.points[yp])
        )
    w = stability_witness(frame.e.as_relation().rows, part)
    if w is not None:
        x, y, yp = w
        return CorrectnessVerdict(
            False, "E", (frame.points[x], frame.points[y], frame.points[yp])
        )
    return CorrectnessVerdict(True)


def quotient(frame: Frame, part: Partition) -> Frame:
    """Quotient frame by a correct partition; refuses incorrect partitions."""
    verdict = is_correct_partition(frame, part)
    if not verdict:
        raise PartitionError(
            f"partition is not correct (clause {verdict.clause}, "
            f"witness {verdict.witness})"
        )
    masks = part.masks()
    names = tuple(frame.points[block[0]] for block in part.blocks)
    k = len(masks)
    r_rows = []
    e_groups = []
    e_rel = frame.e.as_relation()
    for bi, bm in enumerate(masks):
        r_image = frame.r.image(bm)
        row = 0
        for bj, other in enumerate(masks):
            if r_image & other:
                row |= 1 << bj
        r_rows.append(row)
        e_image = e_rel.image(bm)
        e_groups.append([bj for bj, other in enumerate(masks) if e_image & other])
    result = Frame(
        names,
        Relation(tuple(r_rows)),
        Partition.finest_containing(k, e_groups),
    )
    result.validate()
    return result


def coarsest_correct_refinement(
    relations: Sequence[Sequence[int]], start: Partition
) -> Partition:
    """Coarsest partition below ``start`` stable under all given relations.

    Repeatedly splits blocks whose members disagree on which blocks they
    reach; this is the partition-refinement dual of closing a generator
    set under the relations' possibility operators.
    """
    blocks = list(start.masks())
    changed = True
    while changed:
        changed = False
        for rows in relations:
            splitters = list(blocks)
            for splitter in splitters:
                new_blocks = []
                for block in blocks:
                    ins = outs = 0
                    m = block
                    while m:
                        low = m & -m
                        i = low.bit_length() - 1
                        m ^= low
                        if rows[i] & splitter:
                            ins |= low
                        else:
                            outs |= low
                    if ins and outs:
                        new_blocks.append(ins)
                        new_blocks.append(outs)
                        changed = True
                    else:
                        new_blocks.append(block)
                blocks = new_blocks
    return Partition.from_masks(start.n, blocks)


# ---------------------------------------------------------------------------
# p-morphisms and isomorphisms


@dataclass(frozen=True)
class PMorphismVerdict:
    ok: bool
    condition: str | None = None
    witness: tuple | None = None

    def __bool__(self):
        return self.ok


def _p_morphism_witness(f: Sequence[int], src: Sequence[int], dst: Sequence[int]):
    """Check the forth and back conditions for one relation pair."""
    n = len(f)
    image_mask = [0] * len(dst)
    for i in range(n):
        image_mask[f[i]] |= 1 << i
    for x in range(n):
        for y in bits(src[x]):
            if not dst[f[x]] >> f[y] & 1:
                return "forth", (x, y)
        for yp in bits(dst[f[x]]):
            # need some y with x src y and f(y) = yp
            if not src[x] & image_mask[yp]:
                return "back", (x, yp)
    return None


def is_p_morphism(
    mapping: Mapping[str, str], source: Frame, target: Frame
) -> PMorphismVerdict:
    """Verify that a point map is a p-morphism for both (R, R') and (E, E')."""
    f = [0] * source.n
    for name in source.points:
        if name not in mapping:
            raise FrameError(f"map is not total: missing {name!r}")
        f[source.index(name)] = target.index(mapping[name])
    for label, src_rows, dst_rows in (
        ("R", source.r.rows, target.r.rows),
        ("E", source.e.as_relation().rows, target.e.as_relation().rows),
    ):
        bad = _p_morphism_witness(f, src_rows, dst_rows)
        if bad is not None:
            cond, (x, y) = bad
            return PMorphismVerdict(
                False,
                f"{label}-{cond}",
                (source.points[x], target.points[y] if cond == "back" else source.points[y]),
            )
    return PMorphismVerdict(True)


def _point_signature(frame: Frame, classification: FrameClassification):
    e_rel = frame.e.as_relation()
    r_t = frame.r.transpose()
    sig = []
    for i in range(frame.n):
        sig.append(
            (
                frame.r.rows[i].bit_count(),
                r_t.rows[i].bit_count(),
                e_rel.rows[i].bit_count(),
                classification.layer_of(i),
            )
        )
    return sig


def find_isomorphism(
    left: Frame, right: Frame, cap: int = 24
) -> dict[str, str] | None:
    """First frame isomorphism found in canonical search order, or None.

    Backtracking over point assignments, pruned by per-point invariants
    (degrees per relation, E-block size, layer index).  Deterministic for
    a given input ordering.
    """
    if left.n > cap or right.n > cap:
        raise CapError(f"isomorphism search capped at {cap} points")
    if left.n != right.n:
        return None
    sig_l = _point_signature(left, classify(left))
    sig_r = _point_signature(right, classify(right))
    if sorted(sig_l) != sorted(sig_r):
        return None
    n = left.n
    lr = left.r.rows
    rr = right.r.rows
    le = left.e.as_relation().rows
    re = right.e.as_relation().rows
    assign = [-1] * n
    used = [False] * n

    def consistent(i, j):
        for k in range(i):
            m = assign[k]
            if (lr[i] >> k & 1) != (rr[j] >> m & 1):
                return False
            if (lr[k] >> i & 1) != (rr[m] >> j & 1):
                return False
            if (le[i] >> k & 1) != (re[j] >> m & 1):
                return False
        return True

    def search(i):
        if i == n:
            return True
        for j in range(n):
            if used[j] or sig_l[i] != sig_r[j]:
                continue
            if consistent(i, j):
                assign[i] = j
                used[j] = True
                if search(i + 1):
                    return True
                used[j] = False
                assign[i] = -1
        return False

    if not search(0):
        return None
    return {left.points[i]: right.points[assign[i]] for i in range(n)}
