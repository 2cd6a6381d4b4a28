"""Shared test utilities: tiny catalogs and parameter flattening."""

from __future__ import annotations

import numpy as np

from outfitmatch.catalog import Catalog, Item, PairSet


def params_to_vec(*objs) -> np.ndarray:
    """Flatten every leaf tensor of the given parameter objects."""
    return np.concatenate(
        [arr.ravel().copy() for obj in objs for _, arr, _ in obj.leaves()]
    )


def set_from_vec(vec: np.ndarray, *objs) -> None:
    """Write a flat vector back into the parameter objects, in place."""
    pos = 0
    for obj in objs:
        for _, arr, _ in obj.leaves():
            arr[...] = vec[pos : pos + arr.size].reshape(arr.shape)
            pos += arr.size
    assert pos == vec.size


def leaf_bytes(obj) -> bytes:
    return b"".join(arr.tobytes() for _, arr, _ in obj.leaves())


def make_catalog(
    n_tops=4,
    n_bottoms=5,
    d_v=3,
    d_c=2,
    seed=0,
    top_tokens=None,
    bottom_tokens=None,
) -> Catalog:
    """Random-feature catalog; token lists default to empty sets."""
    rng = np.random.default_rng(seed)
    tops = [
        Item(
            id=f"t{i:03d}",
            side="top",
            visual=rng.standard_normal(d_v),
            contextual=rng.standard_normal(d_c),
            tokens=frozenset(top_tokens[i] if top_tokens else ()),
        )
        for i in range(n_tops)
    ]
    bottoms = [
        Item(
            id=f"b{j:03d}",
            side="bottom",
            visual=rng.standard_normal(d_v),
            contextual=rng.standard_normal(d_c),
            tokens=frozenset(bottom_tokens[j] if bottom_tokens else ()),
        )
        for j in range(n_bottoms)
    ]
    return Catalog(tops=tops, bottoms=bottoms, d_v=d_v, d_c=d_c)


def all_pairs(n_tops, per_top) -> PairSet:
    return PairSet(tuple((i, j) for i in range(n_tops) for j in per_top(i)))
