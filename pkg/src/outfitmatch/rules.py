"""Structured matching rules: activation, constraint indicators, mining.

A rule pairs a top attribute value with a bottom attribute value and a
polarity. ``color: black + black`` is positive ("these go together"),
``material: no silk + knit`` is negative ("these clash"). A rule fires
on an item pair when both values appear in the items' metadata tokens;
polarity only changes which side of a triplet the rule rewards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .catalog import Catalog, Item, PairSet, Triplet
from .errors import InputError, ParseError

ATTRIBUTES = ("color", "material", "pattern", "category", "brand")
POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass(frozen=True)
class Rule:
    id: int
    attribute: str
    top_value: str
    bottom_value: str
    polarity: str

    def __post_init__(self):
        if self.attribute not in ATTRIBUTES:
            raise InputError(f"unknown rule attribute {self.attribute!r}")
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise InputError(f"unknown rule polarity {self.polarity!r}")
        if not self.top_value or not self.bottom_value:
            raise InputError("rule values must be nonempty")


@dataclass(frozen=True)
class RuleSet:
    """Ordered rules; ids must be 0..L-1 so one-hot encodings line up."""

    rules: tuple[Rule, ...]

    def __post_init__(self):
        for pos, rule in enumerate(self.rules):
            if rule.id != pos:
                raise InputError(
                    f"rule ids must be 0..L-1 in order; rule at {pos} has id {rule.id}"
                )

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)


def activates(rule: Rule, top: Item, bottom: Item) -> bool:
    """True iff both rule values appear in the respective token sets.

    Polarity is irrelevant here; it matters only for reward direction.
    """
    return rule.top_value in top.tokens and rule.bottom_value in bottom.tokens


def constraint_vector(
    rules: RuleSet, catalog: Catalog, t: Triplet
) -> list[tuple[int, int, int]]:
    """Per-rule reward indicators (rule_id, f_ij, f_ik) for the triplet.

    f_ij = 1 when the rule discriminates in favor of the (i, j) pair:
    a positive rule firing on (i, j) but not (i, k), or a negative rule
    firing on (i, k) but not (i, j). f_ik is the mirror image. Only rules
    that fire on at least one of the two pairs are returned.
    """
    top = catalog.tops[t.i]
    bj = catalog.bottoms[t.j]
    bk = catalog.bottoms[t.k]
    out = []
    for rule in rules:
        d_ij = activates(rule, top, bj)
        d_ik = activates(rule, top, bk)
        if not (d_ij or d_ik):
            continue
        if rule.polarity == POSITIVE:
            f_ij = int(d_ij and not d_ik)
            f_ik = int(d_ik and not d_ij)
        else:
            f_ij = int(d_ik and not d_ij)
            f_ik = int(d_ij and not d_ik)
        out.append((rule.id, f_ij, f_ik))
    return out


class RuleMasks:
    """Precomputed per-rule activation masks for fast training/eval loops.

    Semantics match `constraint_vector` exactly; the tests cross-check.
    """

    def __init__(self, rules: RuleSet, catalog: Catalog):
        n_rules = len(rules)
        self.top_mask = np.zeros((n_rules, catalog.n_tops), dtype=bool)
        self.bottom_mask = np.zeros((n_rules, catalog.n_bottoms), dtype=bool)
        self.positive = np.zeros(n_rules, dtype=bool)
        for rule in rules:
            self.positive[rule.id] = rule.polarity == POSITIVE
            for idx, item in enumerate(catalog.tops):
                self.top_mask[rule.id, idx] = rule.top_value in item.tokens
            for idx, item in enumerate(catalog.bottoms):
                self.bottom_mask[rule.id, idx] = rule.bottom_value in item.tokens

    def __len__(self) -> int:
        return self.top_mask.shape[0]

    def batch_constraints(self, i, j, k):
        """Vectorized over a batch of triplet index arrays.

        Returns (activated, f_ij, f_ik), each (L, B); `activated` marks
        rules firing on either pair.
        """
        d_ij = self.top_mask[:, i] & self.bottom_mask[:, j]
        d_ik = self.top_mask[:, i] & self.bottom_mask[:, k]
        pos = self.positive[:, None]
        f_ij = (d_ij & ~d_ik & pos) | (~d_ij & d_ik & ~pos)
        f_ik = (d_ik & ~d_ij & pos) | (~d_ik & d_ij & ~pos)
        return d_ij | d_ik, f_ij, f_ik

    def constraints_for(self, i: int, j: int, k: int) -> list[tuple[int, int, int]]:
        """Single-triplet (rule_id, f_ij, f_ik) list, activated rules only."""
        idx = np.array([0])
        activated, f_ij, f_ik = self.batch_constraints(
            idx * 0 + i, idx * 0 + j, idx * 0 + k
        )
        return [
            (int(r), int(f_ij[r, 0]), int(f_ik[r, 0]))
            for r in np.nonzero(activated[:, 0])[0]
        ]


def mine_rules(
    catalog: Catalog,
    train_pairs: PairSet,
    attribute_lexicon: dict[str, set[str]],
    top_n: int = 10,
    bottom_n: int = 10,
) -> list[tuple[Rule, int]]:
    """Mine rule candidates from value-pair co-occurrence over positive pairs.

    For each attribute, counts how often (top value, bottom value) co-occur
    across training pairs. The `top_n` most frequent pairs become positive
    candidates; the `bottom_n` least frequent pairs over observed values
    (including never co-occurring combinations) become negative candidates.
    Value pairs where either value never occurs on its side are skipped so
    vocabulary gaps do not masquerade as negative rules. Returns
    (rule, count) tuples; ids are assigned in emission order.

    Candidates are raw material for human curation, not a final RuleSet.
    """
    if not attribute_lexicon:
        raise InputError("attribute lexicon is empty")
    unknown = set(attribute_lexicon) - set(ATTRIBUTES)
    if unknown:
        raise InputError(f"unknown lexicon attributes: {sorted(unknown)}")
    if top_n < 0 or bottom_n < 0:
        raise InputError("top_n and bottom_n must be >= 0")
    candidates: list[tuple[str, str, str, str, int]] = []
    for attribute in ATTRIBUTES:
        lexicon = {v.strip().lower() for v in attribute_lexicon.get(attribute, set())}
        if not lexicon:
            continue
        counts: dict[tuple[str, str], int] = {}
        observed_top: set[str] = set()
        observed_bottom: set[str] = set()
        for i, j in train_pairs:
            top_vals = lexicon & catalog.tops[i].tokens
            bottom_vals = lexicon & catalog.bottoms[j].tokens
            observed_top |= top_vals
            observed_bottom |= bottom_vals
            for tv in top_vals:
                for bv in bottom_vals:
                    counts[(tv, bv)] = counts.get((tv, bv), 0) + 1
        pool = sorted(
            (
                (tv, bv, counts.get((tv, bv), 0))
                for tv in observed_top
                for bv in observed_bottom
            ),
            key=lambda e: (e[0], e[1]),
        )
        by_count_desc = sorted(pool, key=lambda e: -e[2])
        by_count_asc = sorted(pool, key=lambda e: e[2])
        for tv, bv, count in by_count_desc[:top_n]:
            candidates.append((attribute, tv, bv, POSITIVE, count))
        for tv, bv, count in by_count_asc[:bottom_n]:
            candidates.append((attribute, tv, bv, NEGATIVE, count))
    return [
        (Rule(rid, attr, tv, bv, pol), count)
        for rid, (attr, tv, bv, pol, count) in enumerate(candidates)
    ]


def parse_rules(path) -> RuleSet:
    """Read a rules file: `attribute: [no ]value1 + value2` per line.

    `#` starts a comment; blank lines are skipped. Ids follow line order.
    """
    rules: list[Rule] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if ":" not in line:
                raise ParseError(f"{path}:{lineno}: missing 'attribute:' prefix")
            attr_part, rhs = line.split(":", 1)
            attribute = attr_part.strip().lower()
            if attribute not in ATTRIBUTES:
                raise ParseError(f"{path}:{lineno}: unknown attribute {attribute!r}")
            rhs = rhs.strip()
            polarity = POSITIVE
            if rhs.lower().startswith("no "):
                polarity = NEGATIVE
                rhs = rhs[3:].strip()
            if "+" not in rhs:
                raise ParseError(f"{path}:{lineno}: expected 'value1 + value2'")
            top_value, bottom_value = (part.strip().lower() for part in rhs.split("+", 1))
            if not top_value or not bottom_value:
                raise ParseError(f"{path}:{lineno}: empty rule value")
            rules.append(Rule(len(rules), attribute, top_value, bottom_value, polarity))
    return RuleSet(tuple(rules))


def format_rule(rule: Rule) -> str:
    no = "no " if rule.polarity == NEGATIVE else ""
    return f"{rule.attribute}: {no}{rule.top_value} + {rule.bottom_value}"


def write_rules(path, candidates: list[tuple[Rule, int]] | RuleSet) -> None:
    """Write rules; mined candidates carry their count as a comment."""
    with open(path, "w", encoding="utf-8") as fh:
        if isinstance(candidates, RuleSet):
            for rule in candidates:
                fh.write(format_rule(rule) + "\n")
        else:
            for rule, count in candidates:
                fh.write(f"{format_rule(rule)}  # count={count}\n")
