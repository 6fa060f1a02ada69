"""Set partitions of coordinate indices and the meet operation on them.

Indices are 0-based internally. The JSON form uses 1-based indices,
e.g. ``[[1, 2], [3]]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

MAX_ENUM_DIM = 12


class PartitionError(ValueError):
    pass


@dataclass(frozen=True, order=False)
class Partition:
    """A set partition of ``{0, ..., dim-1}`` in canonical form.

    Blocks are sorted internally and ordered by their smallest element.
    """

    blocks: tuple[tuple[int, ...], ...]
    dim: int

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise PartitionError(f"dimension must be positive, got {self.dim}")
        seen: set[int] = set()
        for block in self.blocks:
            if not block:
                raise PartitionError("empty block")
            for j in block:
                if not 0 <= j < self.dim:
                    raise PartitionError(f"block {_fmt_block(block)} has index outside 1..{self.dim}")
                if j in seen:
                    raise PartitionError(f"block {_fmt_block(block)} overlaps another block")
                seen.add(j)
        if len(seen) != self.dim:
            missing = sorted(set(range(self.dim)) - seen)
            raise PartitionError(f"indices {[j + 1 for j in missing]} are not covered")
        canon = _canonical(self.blocks)
        if canon != self.blocks:
            object.__setattr__(self, "blocks", canon)

    @classmethod
    def from_blocks(cls, blocks: Iterable[Iterable[int]], dim: int | None = None) -> "Partition":
        bl = tuple(tuple(int(j) for j in b) for b in blocks)
        if dim is None:
            dim = sum(len(b) for b in bl)
        return cls(bl, dim)

    @classmethod
    def trivial(cls, dim: int) -> "Partition":
        """The single-block partition ``{{1..d}}`` (no independence structure)."""
        return cls((tuple(range(dim)),), dim)

    @classmethod
    def singletons(cls, dim: int) -> "Partition":
        return cls(tuple((j,) for j in range(dim)), dim)

    @classmethod
    def from_rgs(cls, rgs: Sequence[int]) -> "Partition":
        groups: dict[int, list[int]] = {}
        for j, label in enumerate(rgs):
            groups.setdefault(label, []).append(j)
        return cls(tuple(tuple(g) for g in groups.values()), len(rgs))

    @classmethod
    def from_json(cls, obj: str | list, dim: int | None = None) -> "Partition":
        """Parse the 1-based JSON form."""
        if isinstance(obj, str):
            obj = json.loads(obj)
        if not isinstance(obj, list) or not all(isinstance(b, list) for b in obj):
            raise PartitionError(f"expected a list of index lists, got {obj!r}")
        blocks = []
        for b in obj:
            if not all(isinstance(j, int) and not isinstance(j, bool) for j in b):
                raise PartitionError(f"block {b!r} contains a non-integer index")
            blocks.append(tuple(j - 1 for j in b))
        return cls.from_blocks(blocks, dim)

    def to_json(self) -> list[list[int]]:
        return [[j + 1 for j in b] for b in self.blocks]

    @property
    def rgs(self) -> tuple[int, ...]:
        """Restricted-growth string; its lexicographic order is the family order."""
        labels = [0] * self.dim
        for k, block in enumerate(self.blocks):
            for j in block:
                labels[j] = k
        return tuple(labels)

    @property
    def max_block_size(self) -> int:
        return max(len(b) for b in self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self) -> Iterator[tuple[int, ...]]:
        return iter(self.blocks)

    def __str__(self) -> str:
        return "".join(_fmt_block(b) for b in self.blocks)


def _fmt_block(block: Sequence[int]) -> str:
    return "{" + ",".join(str(j + 1) for j in block) + "}"


def _canonical(blocks: Iterable[Iterable[int]]) -> tuple[tuple[int, ...], ...]:
    return tuple(sorted((tuple(sorted(b)) for b in blocks), key=lambda b: b[0]))


@dataclass(frozen=True)
class PartitionFamily:
    """A finite family of partitions over which selection runs.

    Members are deduplicated and kept in restricted-growth-string order. The
    trivial partition is always a member and comes first. ``max_block_size``
    records the cap used to build the family; the trivial partition and any
    explicitly added extras are exempt from it.
    """

    members: tuple[Partition, ...]
    max_block_size: int | None = None

    def __post_init__(self) -> None:
        if not self.members:
            raise PartitionError("partition family is empty")
        dims = {p.dim for p in self.members}
        if len(dims) != 1:
            raise PartitionError(f"family mixes dimensions {sorted(dims)}")
        d = dims.pop()
        members = set(self.members)
        members.add(Partition.trivial(d))
        uniq = tuple(sorted(members, key=lambda p: p.rgs))
        object.__setattr__(self, "members", uniq)

    @property
    def dim(self) -> int:
        return self.members[0].dim

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self) -> Iterator[Partition]:
        return iter(self.members)

    def __contains__(self, p: object) -> bool:
        return p in self.members

    def to_json(self) -> list[list[list[int]]]:
        return [p.to_json() for p in self.members]


def _rgs_iter(d: int, cap: int | None = None) -> Iterator[tuple[int, ...]]:
    # a[0] = 0, a[i] <= 1 + max(a[:i]); block sizes tracked for the cap
    a = [0] * d
    sizes = [0] * (d + 1)

    def rec(i: int, m: int) -> Iterator[tuple[int, ...]]:
        if i == d:
            yield tuple(a)
            return
        for label in range(m + 2):
            if cap is not None and sizes[label] >= cap:
                continue
            a[i] = label
            sizes[label] += 1
            yield from rec(i + 1, max(m, label))
            sizes[label] -= 1

    if cap is not None and cap < 1:
        return
    a[0] = 0
    sizes[0] = 1
    yield from rec(1, 0)


def bell_number(d: int) -> int:
    """Bell number via the recurrence B(n+1) = sum_k C(n,k) B(k)."""
    from math import comb

    bell = [1]
    for m in range(d):
        bell.append(sum(comb(m, k) * bell[k] for k in range(m + 1)))
    return bell[d]


def _check_enum_dim(d: int) -> None:
    if not 1 <= d <= MAX_ENUM_DIM:
        raise PartitionError(
            f"dimension {d} outside 1..{MAX_ENUM_DIM}: the number of partitions is the Bell "
            f"number, which grows like (d/ln d)^d (Bell({MAX_ENUM_DIM}) = {bell_number(MAX_ENUM_DIM)}); "
            "use a restricted family instead"
        )


def enumerate_all(d: int) -> PartitionFamily:
    """All set partitions of ``{1..d}``; the count is the d-th Bell number."""
    _check_enum_dim(d)
    return PartitionFamily(tuple(Partition.from_rgs(r) for r in _rgs_iter(d)))


def restricted_family(d: int, max_block: int, extra: Sequence[Partition] = ()) -> PartitionFamily:
    """Partitions whose blocks have at most ``max_block`` elements.

    The trivial partition and the ``extra`` partitions are always added, so
    the resulting family may exceed the cap through those members only.
    """
    if d < 1:
        raise PartitionError(f"dimension must be positive, got {d}")
    if not 1 <= max_block <= d:
        raise PartitionError(f"max_block must lie in 1..{d}, got {max_block}")
    for p in extra:
        if p.dim != d:
            raise PartitionError(f"extra partition {p} has dimension {p.dim}, expected {d}")
    if max_block == 1:
        capped = [Partition.singletons(d)]
    else:
        _check_enum_dim(d)
        capped = [Partition.from_rgs(r) for r in _rgs_iter(d, cap=max_block)]
    return PartitionFamily(tuple(capped) + tuple(extra), max_block_size=max_block)


def parse_extra(obj: list, d: int) -> list[Partition]:
    """Parse a JSON list of partitions, naming the offending block on failure."""
    out = []
    for item in obj:
        try:
            out.append(Partition.from_json(item, d))
        except PartitionError as exc:
            raise PartitionError(f"invalid partition {item!r}: {exc}") from None
    return out


def default_family(d: int) -> PartitionFamily:
    """Every partition for d <= 4, otherwise only {singletons, trivial}."""
    if d <= 4:
        return enumerate_all(d)
    return PartitionFamily((Partition.trivial(d), Partition.singletons(d)))


def _check_dims(p: Partition, q: Partition) -> None:
    if p.dim != q.dim:
        raise PartitionError(f"dimension mismatch: {p.dim} vs {q.dim}")


def diamond(p: Partition, q: Partition) -> Partition:
    """Meet of two partitions: all nonempty pairwise block intersections."""
    _check_dims(p, q)
    blocks = []
    for b in p.blocks:
        sb = set(b)
        for c in q.blocks:
            inter = sb.intersection(c)
            if inter:
                blocks.append(tuple(inter))
    return Partition.from_blocks(blocks, p.dim)


def refines(p: Partition, q: Partition) -> bool:
    """True iff every block of ``p`` lies inside some block of ``q``."""
    _check_dims(p, q)
    owner = {}
    for k, c in enumerate(q.blocks):
        for j in c:
            owner[j] = k
    return all(len({owner[j] for j in b}) == 1 for b in p.blocks)


def resolve_family(spec: str, d: int) -> PartitionFamily:
    """Family from a CLI-style spec: ``auto``, ``all``, ``capped:D0``,
    ``independent``, ``trivial`` or a path to a JSON list of partitions."""
    if spec == "auto":
        return default_family(d)
    if spec == "all":
        return enumerate_all(d)
    if spec == "trivial":
        return PartitionFamily((Partition.trivial(d),))
    if spec == "independent":
        return PartitionFamily((Partition.trivial(d), Partition.singletons(d)))
    if spec.startswith("capped:"):
        try:
            cap = int(spec.split(":", 1)[1])
        except ValueError:
            raise PartitionError(f"bad family spec {spec!r}") from None
        return restricted_family(d, cap)
    with open(spec) as fh:
        obj = json.load(fh)
    if isinstance(obj, dict):
        obj = obj.get("partitions", obj.get("members"))
    members = parse_extra(obj, d)
    return PartitionFamily(tuple(members))
