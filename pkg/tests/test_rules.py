import numpy as np
import pytest

from outfitmatch.catalog import Item, PairSet, Triplet
from outfitmatch.errors import InputError, ParseError
from outfitmatch.rules import (
    NEGATIVE,
    POSITIVE,
    Rule,
    RuleMasks,
    RuleSet,
    activates,
    constraint_vector,
    format_rule,
    mine_rules,
    parse_rules,
    write_rules,
)

from helpers import make_catalog


def item(side, tokens, item_id="x"):
    return Item(
        id=item_id,
        side=side,
        visual=np.zeros(1),
        contextual=np.zeros(1),
        tokens=frozenset(tokens),
    )


def triplet_catalog(top_tokens, j_tokens, k_tokens):
    cat = make_catalog(n_tops=1, n_bottoms=2, d_v=1, d_c=1)
    cat.tops[0] = item("top", top_tokens, "t0")
    cat.bottoms[0] = item("bottom", j_tokens, "b0")
    cat.bottoms[1] = item("bottom", k_tokens, "b1")
    return cat


class TestActivates:
    def test_both_values_present(self):
        rule = Rule(0, "color", "black", "black", POSITIVE)
        assert activates(rule, item("top", {"black", "tee"}), item("bottom", {"black", "jeans"}))

    def test_missing_bottom_value(self):
        rule = Rule(0, "material", "silk", "knit", NEGATIVE)
        assert not activates(rule, item("top", {"silk"}), item("bottom", {"cotton"}))

    def test_category_rule(self):
        rule = Rule(0, "category", "coat", "dress", POSITIVE)
        assert activates(rule, item("top", {"coat"}), item("bottom", {"dress", "floral"}))

    def test_polarity_does_not_affect_activation(self):
        top, bottom = item("top", {"silk"}), item("bottom", {"knit"})
        pos = Rule(0, "material", "silk", "knit", POSITIVE)
        neg = Rule(0, "material", "silk", "knit", NEGATIVE)
        assert activates(pos, top, bottom) == activates(neg, top, bottom)

    def test_monotone_in_tokens(self):
        rule = Rule(0, "color", "red", "blue", POSITIVE)
        top, bottom = item("top", {"red"}), item("bottom", {"blue"})
        assert activates(rule, top, bottom)
        bigger_top = item("top", {"red", "extra", "more"})
        assert activates(rule, bigger_top, bottom)


# (delta_ij, delta_ik, polarity) -> (f_ij, f_ik), the full truth table.
TRUTH_TABLE = {
    (1, 0, POSITIVE): (1, 0),
    (0, 1, POSITIVE): (0, 1),
    (1, 1, POSITIVE): (0, 0),
    (0, 0, POSITIVE): (0, 0),
    (1, 0, NEGATIVE): (0, 1),
    (0, 1, NEGATIVE): (1, 0),
    (1, 1, NEGATIVE): (0, 0),
    (0, 0, NEGATIVE): (0, 0),
}


def build_case(d_ij, d_ik, polarity):
    rule = Rule(0, "color", "black", "black", polarity)
    top_tokens = {"black"}
    j_tokens = {"black"} if d_ij else {"white"}
    k_tokens = {"black"} if d_ik else {"white"}
    return RuleSet((rule,)), triplet_catalog(top_tokens, j_tokens, k_tokens)


class TestConstraintVector:
    @pytest.mark.parametrize("case,expected", list(TRUTH_TABLE.items()))
    def test_truth_table(self, case, expected):
        d_ij, d_ik, polarity = case
        rules, cat = build_case(d_ij, d_ik, polarity)
        out = constraint_vector(rules, cat, Triplet(0, 0, 1))
        if d_ij == d_ik == 0:
            assert out == []  # not activated at all
        else:
            assert out == [(0, expected[0], expected[1])]

    def test_never_both_rewarded(self):
        for (d_ij, d_ik, polarity), (f_ij, f_ik) in TRUTH_TABLE.items():
            assert not (f_ij and f_ik)

    def test_swap_symmetry(self):
        for d_ij, d_ik, polarity in TRUTH_TABLE:
            rules, cat = build_case(d_ij, d_ik, polarity)
            fwd = constraint_vector(rules, cat, Triplet(0, 0, 1))
            rev = constraint_vector(rules, cat, Triplet(0, 1, 0))
            if fwd:
                assert rev == [(0, fwd[0][2], fwd[0][1])]
            else:
                assert rev == []

    def test_non_discriminating_rule_still_listed(self):
        rules, cat = build_case(1, 1, POSITIVE)
        out = constraint_vector(rules, cat, Triplet(0, 0, 1))
        assert out == [(0, 0, 0)]  # activated, zero reward both sides


class TestRuleMasks:
    def test_matches_constraint_vector(self):
        rng = np.random.default_rng(17)
        vocab = ["black", "white", "red", "silk", "knit", "coat", "dress"]
        top_tokens = [set(rng.choice(vocab, size=2, replace=False)) for _ in range(6)]
        bottom_tokens = [set(rng.choice(vocab, size=2, replace=False)) for _ in range(7)]
        cat = make_catalog(
            n_tops=6, n_bottoms=7, d_v=1, d_c=1, top_tokens=top_tokens,
            bottom_tokens=bottom_tokens,
        )
        rules = RuleSet(
            (
                Rule(0, "color", "black", "black", POSITIVE),
                Rule(1, "material", "silk", "knit", NEGATIVE),
                Rule(2, "category", "coat", "dress", POSITIVE),
                Rule(3, "color", "white", "red", NEGATIVE),
            )
        )
        masks = RuleMasks(rules, cat)
        for _ in range(50):
            i = int(rng.integers(6))
            j, k = (int(x) for x in rng.choice(7, size=2, replace=False))
            assert masks.constraints_for(i, j, k) == constraint_vector(
                rules, cat, Triplet(i, j, k)
            )


class TestParseRules:
    def test_positive_and_negative(self, tmp_path):
        path = tmp_path / "rules.txt"
        path.write_text(
            "# handcrafted\n"
            "color: black + black\n"
            "material: no silk + knit  # from the screening pass\n"
            "\n"
            "category: no tank + dress\n"
        )
        rules = parse_rules(path)
        assert len(rules) == 3
        assert rules.rules[0] == Rule(0, "color", "black", "black", POSITIVE)
        assert rules.rules[1] == Rule(1, "material", "silk", "knit", NEGATIVE)
        assert rules.rules[2].polarity == NEGATIVE

    def test_multiword_values(self, tmp_path):
        path = tmp_path / "rules.txt"
        path.write_text("category: sweatshirt + activewear pants\n")
        rules = parse_rules(path)
        assert rules.rules[0].bottom_value == "activewear pants"

    def test_empty_file(self, tmp_path):
        path = tmp_path / "rules.txt"
        path.write_text("")
        assert len(parse_rules(path)) == 0

    def test_malformed_line_reports_lineno(self, tmp_path):
        path = tmp_path / "rules.txt"
        path.write_text("color: black + black\ncolor black black\n")
        with pytest.raises(ParseError, match=":2"):
            parse_rules(path)

    def test_unknown_attribute(self, tmp_path):
        path = tmp_path / "rules.txt"
        path.write_text("aroma: rose + lily\n")
        with pytest.raises(ParseError, match="aroma"):
            parse_rules(path)

    def test_round_trip(self, tmp_path):
        original = RuleSet(
            (
                Rule(0, "color", "black", "black", POSITIVE),
                Rule(1, "material", "silk", "knit", NEGATIVE),
            )
        )
        path = tmp_path / "rules.txt"
        write_rules(path, original)
        assert parse_rules(path) == original

    def test_format_rule(self):
        assert format_rule(Rule(0, "color", "white", "black", POSITIVE)) == (
            "color: white + black"
        )
        assert format_rule(Rule(1, "material", "silk", "knit", NEGATIVE)) == (
            "material: no silk + knit"
        )


def corpus_catalog():
    # 6 pairs with hand-countable color co-occurrences.
    top_tokens = [
        {"black", "tee"},
        {"black", "coat"},
        {"white", "tee"},
        {"red", "coat"},
    ]
    bottom_tokens = [
        {"black", "jeans"},
        {"white", "skirt"},
        {"red", "dress"},
    ]
    cat = make_catalog(
        n_tops=4, n_bottoms=3, d_v=1, d_c=1, top_tokens=top_tokens,
        bottom_tokens=bottom_tokens,
    )
    pairs = PairSet(((0, 0), (1, 0), (0, 1), (2, 0), (3, 2), (3, 0)))
    return cat, pairs


class TestMineRules:
    LEXICON = {"color": {"black", "white", "red", "green"}}

    def test_dominant_cooccurrence_ranks_first(self):
        top_tokens = [{"black"}] * 5
        bottom_tokens = [{"black"}] * 5
        cat = make_catalog(
            n_tops=5, n_bottoms=5, d_v=1, d_c=1, top_tokens=top_tokens,
            bottom_tokens=bottom_tokens,
        )
        pairs = PairSet(tuple((i, i) for i in range(5)))
        mined = mine_rules(cat, pairs, self.LEXICON, top_n=1, bottom_n=0)
        (rule, count), = mined
        assert (rule.top_value, rule.bottom_value, rule.polarity) == (
            "black", "black", POSITIVE,
        )
        assert count == 5

    def test_zero_cooccurrence_lands_in_negatives(self):
        cat, pairs = corpus_catalog()
        mined = mine_rules(cat, pairs, self.LEXICON, top_n=0, bottom_n=10)
        negs = {(r.top_value, r.bottom_value) for r, c in mined if c == 0}
        # black tops never meet red bottoms in the corpus
        assert ("black", "red") in negs

    def test_matches_brute_force_enumeration(self):
        cat, pairs = corpus_catalog()
        lexicon = self.LEXICON["color"]
        # Brute-force oracle: recount every (top value, bottom value).
        expected: dict[tuple[str, str], int] = {}
        for i, j in pairs:
            for tv in sorted(lexicon & cat.tops[i].tokens):
                for bv in sorted(lexicon & cat.bottoms[j].tokens):
                    expected[(tv, bv)] = expected.get((tv, bv), 0) + 1
        mined = mine_rules(cat, pairs, self.LEXICON, top_n=3, bottom_n=0)
        got = [((r.top_value, r.bottom_value), c) for r, c in mined]
        ranked = sorted(expected.items(), key=lambda e: (-e[1], e[0]))
        # Compare count sequences; ties share a count so compare sets per rank.
        assert [c for _, c in got] == [c for _, c in ranked[:3]]
        assert got[0][0] == ("black", "black") and got[0][1] == 2

    def test_unobserved_values_excluded(self):
        cat, pairs = corpus_catalog()
        mined = mine_rules(cat, pairs, self.LEXICON, top_n=20, bottom_n=20)
        values = {r.top_value for r, _ in mined} | {r.bottom_value for r, _ in mined}
        assert "green" not in values  # never occurs on any item

    def test_deterministic_tie_break(self):
        cat, pairs = corpus_catalog()
        a = mine_rules(cat, pairs, self.LEXICON, top_n=5, bottom_n=5)
        b = mine_rules(cat, pairs, self.LEXICON, top_n=5, bottom_n=5)
        assert a == b

    def test_count_budget_invariant(self):
        cat, pairs = corpus_catalog()
        mined = mine_rules(cat, pairs, self.LEXICON, top_n=100, bottom_n=0)
        max_tokens = 2
        assert sum(c for _, c in mined) <= len(pairs) * max_tokens**2

    def test_empty_lexicon_rejected(self):
        cat, pairs = corpus_catalog()
        with pytest.raises(InputError):
            mine_rules(cat, pairs, {}, 1, 1)


class TestRuleSetValidation:
    def test_ids_must_be_ordered(self):
        with pytest.raises(InputError):
            RuleSet((Rule(1, "color", "a", "b", POSITIVE),))

    def test_bad_rule_fields(self):
        with pytest.raises(InputError):
            Rule(0, "color", "", "b", POSITIVE)
        with pytest.raises(InputError):
            Rule(0, "color", "a", "b", "maybe")
