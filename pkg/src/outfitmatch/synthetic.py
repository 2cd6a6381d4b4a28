"""Desk-scale dataset generator with planted ground-truth rules.

Items get a latent style vector and one token per attribute. Positive
pairs mix two channels: a style channel (softmax over style affinity)
and a rule channel that only draws bottoms forming a planted
positive-rule match with the chosen top. Bottoms triggering a planted
negative rule are down-weighted everywhere. Visual features are a noisy
linear image of style alone; contextual features additionally carry a
projected token one-hot, so token-driven structure is only partially
recoverable from the features the encoders see.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GenerationError, InputError
from .rules import NEGATIVE, POSITIVE, Rule, RuleSet, write_rules

COLORS = ("black", "white", "red", "blue", "green", "grey")
MATERIALS = ("silk", "knit", "cotton", "leather", "denim", "wool")
PATTERNS = ("stripe", "floral", "dot", "pure")
TOP_CATEGORIES = ("tee", "blouse", "coat", "sweater", "tank")
BOTTOM_CATEGORIES = ("jeans", "skirt", "dress", "shorts", "leggings")

DEFAULT_PLANTED = (
    ("color", "black", "black", POSITIVE),
    ("pattern", "stripe", "stripe", POSITIVE),
    ("category", "coat", "dress", POSITIVE),
    ("material", "silk", "knit", NEGATIVE),
    ("category", "blouse", "dress", NEGATIVE),
    ("category", "coat", "shorts", NEGATIVE),
)

_STYLE_DIM = 6


@dataclass
class SyntheticDataset:
    items_path: Path
    pairs_path: Path
    rules_path: Path
    lexicon_path: Path
    n_tops: int
    n_bottoms: int
    n_pairs: int


def _assign_tokens(rng: np.random.Generator, n: int, categories) -> list[tuple[str, ...]]:
    colors = rng.integers(len(COLORS), size=n)
    materials = rng.integers(len(MATERIALS), size=n)
    patterns = rng.integers(len(PATTERNS), size=n)
    cats = rng.integers(len(categories), size=n)
    return [
        (COLORS[colors[x]], MATERIALS[materials[x]], PATTERNS[patterns[x]], categories[cats[x]])
        for x in range(n)
    ]


def gen_synthetic(
    out_dir,
    n_tops: int = 500,
    n_bottoms: int = 500,
    n_pairs: int = 2000,
    d_v: int = 12,
    d_c: int = 16,
    planted=DEFAULT_PLANTED,
    noise: float = 0.2,
    rule_boost: float = 0.85,
    negative_keep: float = 0.1,
    temperature: float = 2.0,
    seed: int = 0,
) -> SyntheticDataset:
    """Write items.jsonl, pairs.csv, rules.txt (and lexicon.json).

    Same arguments and seed produce byte-identical files. `noise` is the
    standard deviation of the additive feature perturbation; `rule_boost`
    is the probability a pair is drawn from the rule channel, so 1.0
    forces every positive pair to satisfy some planted positive rule.
    """
    if min(n_tops, n_bottoms, n_pairs, d_v, d_c) < 1:
        raise InputError("all synthetic sizes must be >= 1")
    if not 0.0 <= rule_boost <= 1.0:
        raise InputError("rule_boost must lie in [0, 1]")
    if n_pairs > n_tops * n_bottoms:
        raise GenerationError(
            f"cannot place {n_pairs} distinct pairs with {n_tops}x{n_bottoms} items"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    top_tokens = _assign_tokens(rng, n_tops, TOP_CATEGORIES)
    bottom_tokens = _assign_tokens(rng, n_bottoms, BOTTOM_CATEGORIES)
    rules = RuleSet(
        tuple(Rule(rid, *fields) for rid, fields in enumerate(planted))
    )

    # Planted-rule match matrices over all item pairs.
    pos_match = np.zeros((n_tops, n_bottoms), dtype=bool)
    neg_match = np.zeros((n_tops, n_bottoms), dtype=bool)
    for rule in rules:
        t_mask = np.array([rule.top_value in toks for toks in top_tokens])
        b_mask = np.array([rule.bottom_value in toks for toks in bottom_tokens])
        target = pos_match if rule.polarity == POSITIVE else neg_match
        target |= np.outer(t_mask, b_mask)

    style_top = rng.standard_normal((n_tops, _STYLE_DIM))
    style_bottom = rng.standard_normal((n_bottoms, _STYLE_DIM))
    affinity = style_top @ style_bottom.T
    base_weight = np.exp((affinity - affinity.max(axis=1, keepdims=True)) / temperature)
    base_weight *= np.where(neg_match, negative_keep, 1.0)

    pairs: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    attempts = 0
    max_attempts = 200 * n_pairs
    while len(pairs) < n_pairs:
        attempts += 1
        if attempts > max_attempts:
            raise GenerationError(
                f"placed only {len(pairs)} of {n_pairs} pairs after "
                f"{max_attempts} attempts; the request is too constrained"
            )
        i = int(rng.integers(n_tops))
        weights = base_weight[i].copy()
        if rng.random() < rule_boost:
            weights = weights * pos_match[i]
        total = weights.sum()
        if total <= 0.0:
            if rule_boost >= 1.0 and not pos_match.any():
                raise GenerationError(
                    "no item pair satisfies any planted positive rule"
                )
            continue
        j = int(rng.choice(n_bottoms, p=weights / total))
        if (i, j) not in seen:
            seen.add((i, j))
            pairs.append((i, j))

    # Features: visual sees style only; contextual also sees the tokens.
    vocab = sorted(
        set(COLORS) | set(MATERIALS) | set(PATTERNS) | set(TOP_CATEGORIES) | set(BOTTOM_CATEGORIES)
    )
    vocab_index = {tok: x for x, tok in enumerate(vocab)}
    proj_visual = rng.standard_normal((d_v, _STYLE_DIM)) / np.sqrt(_STYLE_DIM)
    proj_ctx_style = rng.standard_normal((d_c, _STYLE_DIM)) / np.sqrt(_STYLE_DIM)
    proj_ctx_token = rng.standard_normal((d_c, len(vocab))) / 2.0

    def features(style, tokens):
        n = style.shape[0]
        onehot = np.zeros((n, len(vocab)))
        for row, toks in enumerate(tokens):
            for tok in toks:
                onehot[row, vocab_index[tok]] = 1.0
        visual = style @ proj_visual.T + noise * rng.standard_normal((n, d_v))
        ctx = (
            style @ proj_ctx_style.T
            + onehot @ proj_ctx_token.T
            + noise * rng.standard_normal((n, d_c))
        )
        return visual, ctx

    top_visual, top_ctx = features(style_top, top_tokens)
    bottom_visual, bottom_ctx = features(style_bottom, bottom_tokens)

    items_path = out_dir / "items.jsonl"
    with open(items_path, "w", encoding="utf-8") as fh:
        for idx in range(n_tops):
            fh.write(
                json.dumps(
                    {
                        "id": f"t{idx:04d}",
                        "side": "top",
                        "visual": top_visual[idx].tolist(),
                        "contextual": top_ctx[idx].tolist(),
                        "tokens": sorted(top_tokens[idx]),
                    }
                )
                + "\n"
            )
        for idx in range(n_bottoms):
            fh.write(
                json.dumps(
                    {
                        "id": f"b{idx:04d}",
                        "side": "bottom",
                        "visual": bottom_visual[idx].tolist(),
                        "contextual": bottom_ctx[idx].tolist(),
                        "tokens": sorted(bottom_tokens[idx]),
                    }
                )
                + "\n"
            )

    pairs_path = out_dir / "pairs.csv"
    with open(pairs_path, "w", encoding="utf-8") as fh:
        fh.write("top_id,bottom_id\n")
        for i, j in pairs:
            fh.write(f"t{i:04d},b{j:04d}\n")

    rules_path = out_dir / "rules.txt"
    write_rules(rules_path, rules)

    lexicon_path = out_dir / "lexicon.json"
    lexicon = {
        "color": list(COLORS),
        "material": list(MATERIALS),
        "pattern": list(PATTERNS),
        "category": list(TOP_CATEGORIES) + list(BOTTOM_CATEGORIES),
    }
    with open(lexicon_path, "w", encoding="utf-8") as fh:
        json.dump(lexicon, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return SyntheticDataset(
        items_path=items_path,
        pairs_path=pairs_path,
        rules_path=rules_path,
        lexicon_path=lexicon_path,
        n_tops=n_tops,
        n_bottoms=n_bottoms,
        n_pairs=len(pairs),
    )
