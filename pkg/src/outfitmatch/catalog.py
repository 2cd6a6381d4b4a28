"""Item catalog, positive pairs, dataset splits, and triplet sampling.

File formats:
    items.jsonl - one JSON object per line:
        {"id": str, "side": "top"|"bottom", "visual": [float]*D_v,
         "contextual": [float]*D_c, "tokens": [str]}
    pairs.csv   - header ``top_id,bottom_id``, one positive pair per row.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ParseError, SamplingError, SchemaError

TOP = "top"
BOTTOM = "bottom"


@dataclass(frozen=True)
class Item:
    """One fashion item with precomputed feature vectors and metadata tokens."""

    id: str
    side: str
    visual: np.ndarray
    contextual: np.ndarray
    tokens: frozenset[str]


@dataclass
class Catalog:
    """Tops and bottoms in ingestion order, with shared feature dimensions."""

    tops: list[Item]
    bottoms: list[Item]
    d_v: int
    d_c: int
    _top_inputs: np.ndarray | None = field(default=None, repr=False)
    _bottom_inputs: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_tops(self) -> int:
        return len(self.tops)

    @property
    def n_bottoms(self) -> int:
        return len(self.bottoms)

    def top_input_matrix(self) -> np.ndarray:
        """(N_t, D_v + D_c) stacked [visual; contextual] rows, cached."""
        if self._top_inputs is None:
            self._top_inputs = _stack_inputs(self.tops, self.d_v + self.d_c)
        return self._top_inputs

    def bottom_input_matrix(self) -> np.ndarray:
        if self._bottom_inputs is None:
            self._bottom_inputs = _stack_inputs(self.bottoms, self.d_v + self.d_c)
        return self._bottom_inputs


def _stack_inputs(items: list[Item], width: int) -> np.ndarray:
    out = np.empty((len(items), width), dtype=np.float64)
    for r, item in enumerate(items):
        out[r, : item.visual.size] = item.visual
        out[r, item.visual.size :] = item.contextual
    return out


@dataclass(frozen=True)
class PairSet:
    """Positive (top_index, bottom_index) pairs, deduplicated, order kept."""

    pairs: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def as_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(self.pairs)


@dataclass(frozen=True)
class Triplet:
    """Bottom `j` is more compatible with top `i` than bottom `k`."""

    i: int
    j: int
    k: int


def _normalize_tokens(raw, item_id: str) -> frozenset[str]:
    if not isinstance(raw, list):
        raise SchemaError(f"item {item_id!r}: tokens must be a list of strings")
    tokens = set()
    for t in raw:
        if not isinstance(t, str):
            raise SchemaError(f"item {item_id!r}: token {t!r} is not a string")
        t = t.strip().lower()
        if t:
            tokens.add(t)
    return frozenset(tokens)


def load_catalog(items_path) -> Catalog:
    """Read items.jsonl; items keep file order within their side."""
    tops: list[Item] = []
    bottoms: list[Item] = []
    seen_ids: set[str] = set()
    d_v = d_c = -1
    with open(items_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{items_path}:{lineno}: invalid JSON ({exc})") from exc
            try:
                item_id = rec["id"]
                side = rec["side"]
                visual = np.asarray(rec["visual"], dtype=np.float64)
                contextual = np.asarray(rec["contextual"], dtype=np.float64)
                tokens = _normalize_tokens(rec["tokens"], rec["id"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{items_path}:{lineno}: bad record ({exc})") from exc
            if side not in (TOP, BOTTOM):
                raise SchemaError(f"item {item_id!r}: side must be 'top' or 'bottom'")
            if item_id in seen_ids:
                raise SchemaError(f"duplicate item id {item_id!r}")
            seen_ids.add(item_id)
            if not (np.all(np.isfinite(visual)) and np.all(np.isfinite(contextual))):
                raise SchemaError(f"item {item_id!r}: non-finite feature values")
            if d_v < 0:
                d_v, d_c = visual.size, contextual.size
            if visual.size != d_v or contextual.size != d_c:
                raise SchemaError(
                    f"item {item_id!r}: feature lengths ({visual.size}, "
                    f"{contextual.size}) do not match catalog dims ({d_v}, {d_c})"
                )
            item = Item(item_id, side, visual, contextual, tokens)
            (tops if side == TOP else bottoms).append(item)
    if d_v < 0:
        d_v = d_c = 0
    return Catalog(tops=tops, bottoms=bottoms, d_v=d_v, d_c=d_c)


def load_pairs(pairs_path, catalog: Catalog) -> PairSet:
    """Read pairs.csv and resolve item ids to catalog indices.

    Exact duplicate rows are dropped (first occurrence wins).
    """
    top_index = {item.id: idx for idx, item in enumerate(catalog.tops)}
    bottom_index = {item.id: idx for idx, item in enumerate(catalog.bottoms)}
    pairs: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    with open(pairs_path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header.replace(" ", "") != "top_id,bottom_id":
            raise ParseError(f"{pairs_path}:1: expected header 'top_id,bottom_id'")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError(f"{pairs_path}:{lineno}: expected 2 columns")
            top_id, bottom_id = parts[0].strip(), parts[1].strip()
            if top_id not in top_index:
                raise SchemaError(f"{pairs_path}:{lineno}: unknown top id {top_id!r}")
            if bottom_id not in bottom_index:
                raise SchemaError(
                    f"{pairs_path}:{lineno}: unknown bottom id {bottom_id!r}"
                )
            pair = (top_index[top_id], bottom_index[bottom_id])
            if pair not in seen:
                seen.add(pair)
                pairs.append(pair)
    return PairSet(tuple(pairs))


def positive_bottoms(pairs: PairSet, i: int) -> set[int]:
    """Bottoms paired with top `i`; empty if the top never appears."""
    if i < 0:
        raise InputError(f"top index {i} out of range")
    return {j for (t, j) in pairs if t == i}


def _positives_by_top(pairs: PairSet) -> dict[int, set[int]]:
    by_top: dict[int, set[int]] = {}
    for i, j in pairs:
        by_top.setdefault(i, set()).add(j)
    return by_top


def sample_triplets(
    catalog: Catalog,
    pairs: PairSet,
    m: int,
    seed: int,
    exclude: PairSet | None = None,
) -> list[Triplet]:
    """Draw `m` negatives per positive pair, without replacement, seeded.

    Negatives for top i avoid every bottom positive for i in `exclude`
    (defaults to `pairs` itself, the training-time convention).
    """
    if m < 1:
        raise InputError(f"m must be >= 1, got {m}")
    rng = np.random.default_rng(seed)
    excluded = _positives_by_top(exclude if exclude is not None else pairs)
    n_b = catalog.n_bottoms
    candidates_cache: dict[int, np.ndarray] = {}
    triplets: list[Triplet] = []
    for i, j in pairs:
        if i not in candidates_cache:
            pos = excluded.get(i, set())
            candidates_cache[i] = np.array(
                [b for b in range(n_b) if b not in pos], dtype=np.int64
            )
        candidates = candidates_cache[i]
        if candidates.size < m:
            top_id = catalog.tops[i].id if i < catalog.n_tops else str(i)
            raise SamplingError(
                f"top {top_id!r} has only {candidates.size} negative bottoms, "
                f"need {m}"
            )
        negatives = rng.choice(candidates, size=m, replace=False)
        for k in negatives:
            triplets.append(Triplet(i, j, int(k)))
    return triplets


def split_pairs(
    pairs: PairSet,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[PairSet, PairSet, PairSet]:
    """Shuffle and partition pairs into (train, valid, test), sizes +/-1."""
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise InputError(f"fractions must be 3 non-negative values, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise InputError(f"fractions must sum to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    n = len(pairs)
    cut1 = round(n * fractions[0])
    cut2 = round(n * (fractions[0] + fractions[1]))
    shuffled = [pairs.pairs[idx] for idx in order]
    return (
        PairSet(tuple(shuffled[:cut1])),
        PairSet(tuple(shuffled[cut1:cut2])),
        PairSet(tuple(shuffled[cut2:])),
    )
