import dataclasses

import numpy as np
import pytest

from outfitmatch.catalog import Catalog, Item, PairSet
from outfitmatch.errors import (
    CheckpointVersionError,
    ConsistencyError,
    InputError,
    ParseError,
)
from outfitmatch.rules import NEGATIVE, POSITIVE, Rule, RuleSet
from outfitmatch.student import DenseLayer, EncoderParams
from outfitmatch.training import (
    Checkpoint,
    TrainConfig,
    load_checkpoint,
    paper_preset,
    rho_at,
    save_checkpoint,
    sgd_step,
    train,
)

from helpers import leaf_bytes

COLORS = ("black", "white", "red")
MATERIALS = ("silk", "knit", "cotton")
TOP_CATS = ("tee", "coat")
BOTTOM_CATS = ("jeans", "dress")

TEST_RULES = RuleSet(
    (
        Rule(0, "color", "black", "black", POSITIVE),
        Rule(1, "material", "silk", "knit", NEGATIVE),
        Rule(2, "category", "coat", "dress", POSITIVE),
    )
)


def small_dataset(seed=0, n_tops=24, n_bottoms=24, n_pairs=60, d_v=5, d_c=3):
    rng = np.random.default_rng(seed)

    def build(side, n, cats):
        items = []
        for x in range(n):
            tokens = frozenset(
                {
                    COLORS[rng.integers(len(COLORS))],
                    MATERIALS[rng.integers(len(MATERIALS))],
                    cats[rng.integers(len(cats))],
                }
            )
            items.append(
                Item(
                    id=f"{side[0]}{x:03d}",
                    side=side,
                    visual=rng.standard_normal(d_v),
                    contextual=rng.standard_normal(d_c),
                    tokens=tokens,
                )
            )
        return items

    catalog = Catalog(
        tops=build("top", n_tops, TOP_CATS),
        bottoms=build("bottom", n_bottoms, BOTTOM_CATS),
        d_v=d_v,
        d_c=d_c,
    )
    pairs = set()
    while len(pairs) < n_pairs:
        pairs.add((int(rng.integers(n_tops)), int(rng.integers(n_bottoms))))
    pair_list = sorted(pairs)
    split = int(0.8 * n_pairs)
    return catalog, PairSet(tuple(pair_list[:split])), PairSet(tuple(pair_list[split:]))


SMALL_CFG = TrainConfig(
    epochs=3,
    batch_size=32,
    learning_rate=0.1,
    momentum=0.9,
    lambda_reg=1e-3,
    seed=7,
    m_negatives=2,
    hidden_sizes=(6,),
    attention_hidden=4,
)


class TestRhoSchedule:
    def test_starts_at_zero(self):
        assert rho_at(0, 1.0, 0.95) == 0.0

    def test_first_step(self):
        assert abs(rho_at(1, 1.0, 0.95) - 0.05) < 1e-12

    def test_limit(self):
        assert abs(rho_at(1000, 0.8, 0.95) - 0.8) < 1e-10

    def test_monotone(self):
        vals = [rho_at(t, 0.9, 0.9) for t in range(50)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))

    def test_negative_epoch_rejected(self):
        with pytest.raises(InputError):
            rho_at(-1, 1.0, 0.95)


def tiny_params(value=1.0):
    return EncoderParams(
        top=[DenseLayer(np.array([[value]]), np.array([value]))],
        bottom=[DenseLayer(np.array([[value]]), np.array([value]))],
    )


class TestSgdStep:
    def test_plain_gradient_descent(self):
        p = tiny_params(1.0)
        g = tiny_params(0.5)
        v = p.zeros_like()
        sgd_step(p, g, v, lr=0.1, momentum=0.0, lambda_reg=0.0)
        assert np.allclose(p.top[0].weight, 0.95)
        assert np.allclose(p.top[0].bias, 0.95)

    def test_zero_grads_are_noop(self):
        p = tiny_params(0.3)
        before = leaf_bytes(p)
        sgd_step(p, p.zeros_like(), p.zeros_like(), 0.5, 0.0, 0.0)
        assert leaf_bytes(p) == before

    def test_two_step_momentum_hand_unroll(self):
        # Quadratic f(w) = w^2/2, grad = w, lr 0.1, momentum 0.9:
        # v1=1, w1=0.9; v2=0.9+0.9=1.8, w2=0.9-0.18=0.72
        p = tiny_params(1.0)
        v = p.zeros_like()
        for _ in range(2):
            g = EncoderParams(
                top=[DenseLayer(p.top[0].weight.copy(), p.top[0].bias.copy())],
                bottom=[DenseLayer(p.bottom[0].weight.copy(), p.bottom[0].bias.copy())],
            )
            sgd_step(p, g, v, lr=0.1, momentum=0.9, lambda_reg=0.0)
        assert abs(p.top[0].weight[0, 0] - 0.72) < 1e-12

    def test_l2_skips_biases(self):
        p = tiny_params(1.0)
        v = p.zeros_like()
        sgd_step(p, p.zeros_like(), v, lr=0.1, momentum=0.0, lambda_reg=1.0)
        assert abs(p.top[0].weight[0, 0] - 0.9) < 1e-12  # decayed
        assert p.top[0].bias[0] == 1.0  # untouched

    def test_shape_mismatch(self):
        p = tiny_params()
        bad = EncoderParams(
            top=[DenseLayer(np.zeros((2, 2)), np.zeros(2))],
            bottom=[DenseLayer(np.zeros((1, 1)), np.zeros(1))],
        )
        with pytest.raises(ConsistencyError):
            sgd_step(p, bad, p.zeros_like(), 0.1, 0.0, 0.0)


class TestTrainLoop:
    def test_determinism_byte_identical_checkpoints(self, tmp_path):
        catalog, train_pairs, valid_pairs = small_dataset()
        a = train(catalog, train_pairs, valid_pairs, TEST_RULES, SMALL_CFG)
        b = train(catalog, train_pairs, valid_pairs, TEST_RULES, SMALL_CFG)
        pa, pb = tmp_path / "a.json", tmp_path / "b.json"
        save_checkpoint(a, pa)
        save_checkpoint(b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_first_epoch_loss_near_ln2(self):
        catalog, train_pairs, valid_pairs = small_dataset(seed=1)
        ckpt = train(catalog, train_pairs, valid_pairs, None, SMALL_CFG)
        assert abs(ckpt.history[0].loss - np.log(2)) < 0.2

    def test_rho_recorded_and_monotone(self):
        catalog, train_pairs, valid_pairs = small_dataset(seed=2)
        ckpt = train(catalog, train_pairs, valid_pairs, TEST_RULES, SMALL_CFG)
        rhos = [s.rho for s in ckpt.history]
        assert rhos[0] == 0.0
        assert all(a <= b for a, b in zip(rhos, rhos[1:]))

    def test_history_has_validation(self):
        catalog, train_pairs, valid_pairs = small_dataset(seed=3)
        ckpt = train(catalog, train_pairs, valid_pairs, TEST_RULES, SMALL_CFG)
        assert len(ckpt.history) == SMALL_CFG.epochs
        assert all(s.valid_auc is not None for s in ckpt.history)
        assert ckpt.best_epoch >= 1
        best_student, _ = ckpt.selected_params("best")
        assert best_student is not None

    def test_empty_training_pairs_rejected(self):
        catalog, _, valid_pairs = small_dataset()
        with pytest.raises(InputError):
            train(catalog, PairSet(()), valid_pairs, None, SMALL_CFG)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_loss_aborts_with_location(self):
        catalog, train_pairs, valid_pairs = small_dataset(seed=4)
        bad = catalog.tops[0]
        catalog.tops[0] = Item(
            bad.id, bad.side, bad.visual * np.nan, bad.contextual, bad.tokens
        )
        with pytest.raises(ConsistencyError, match="epoch 1"):
            train(catalog, train_pairs, valid_pairs, None, SMALL_CFG)

    def test_rho_zero_matches_plain_trajectory(self):
        catalog, train_pairs, valid_pairs = small_dataset(seed=5)
        cfg = dataclasses.replace(SMALL_CFG, rho_max=0.0)
        snaps_distilled, snaps_plain = [], []
        train(
            catalog, train_pairs, valid_pairs, TEST_RULES, cfg,
            on_epoch=lambda s, th, ph: snaps_distilled.append(leaf_bytes(th)),
        )
        train(
            catalog, train_pairs, valid_pairs, None, SMALL_CFG,
            on_epoch=lambda s, th, ph: snaps_plain.append(leaf_bytes(th)),
        )
        assert snaps_distilled == snaps_plain

    def test_empty_ruleset_matches_plain_trajectory(self):
        catalog, train_pairs, valid_pairs = small_dataset(seed=6)
        snaps_empty, snaps_plain = [], []
        train(
            catalog, train_pairs, valid_pairs, RuleSet(()), SMALL_CFG,
            on_epoch=lambda s, th, ph: snaps_empty.append(leaf_bytes(th)),
        )
        train(
            catalog, train_pairs, valid_pairs, None, SMALL_CFG,
            on_epoch=lambda s, th, ph: snaps_plain.append(leaf_bytes(th)),
        )
        assert snaps_empty == snaps_plain


class TestCheckpointIO:
    def test_round_trip_exact(self, tmp_path):
        catalog, train_pairs, valid_pairs = small_dataset(seed=8)
        ckpt = train(catalog, train_pairs, valid_pairs, TEST_RULES, SMALL_CFG)
        path = tmp_path / "ckpt.json"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        assert leaf_bytes(loaded.student) == leaf_bytes(ckpt.student)
        assert leaf_bytes(loaded.attention) == leaf_bytes(ckpt.attention)
        assert leaf_bytes(loaded.velocity_student) == leaf_bytes(ckpt.velocity_student)
        assert loaded.config == ckpt.config
        assert loaded.history == ckpt.history
        assert loaded.best_epoch == ckpt.best_epoch

    def test_round_trip_with_empty_ruleset(self, tmp_path):
        # Zero-rule attention tensors have a (h, 0) shape to preserve.
        catalog, train_pairs, valid_pairs = small_dataset(seed=8)
        ckpt = train(catalog, train_pairs, valid_pairs, RuleSet(()), SMALL_CFG)
        path = tmp_path / "ckpt.json"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        assert loaded.attention.rule_proj.shape == (SMALL_CFG.attention_hidden, 0)
        assert leaf_bytes(loaded.attention) == leaf_bytes(ckpt.attention)

    def test_version_mismatch(self, tmp_path):
        catalog, train_pairs, valid_pairs = small_dataset(seed=8)
        ckpt = train(catalog, train_pairs, valid_pairs, None, SMALL_CFG)
        path = tmp_path / "ckpt.json"
        save_checkpoint(ckpt, path)
        blob = path.read_text().replace('"version": 1', '"version": 99')
        path.write_text(blob)
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(path)

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "ckpt.json"
        path.write_text("{not json")
        with pytest.raises(ParseError):
            load_checkpoint(path)

    def test_resume_equivalence(self, tmp_path):
        catalog, train_pairs, valid_pairs = small_dataset(seed=9)
        full_cfg = dataclasses.replace(SMALL_CFG, epochs=3)
        full = train(catalog, train_pairs, valid_pairs, TEST_RULES, full_cfg)

        short_cfg = dataclasses.replace(SMALL_CFG, epochs=2)
        short = train(catalog, train_pairs, valid_pairs, TEST_RULES, short_cfg)
        path = tmp_path / "short.json"
        save_checkpoint(short, path)
        resumed = train(
            catalog,
            train_pairs,
            valid_pairs,
            TEST_RULES,
            full_cfg,
            resume_from=load_checkpoint(path),
        )
        assert leaf_bytes(resumed.student) == leaf_bytes(full.student)
        assert leaf_bytes(resumed.attention) == leaf_bytes(full.attention)
        assert resumed.history == full.history

    def test_resume_config_mismatch(self, tmp_path):
        catalog, train_pairs, valid_pairs = small_dataset(seed=9)
        ckpt = train(catalog, train_pairs, valid_pairs, None, SMALL_CFG)
        other = dataclasses.replace(SMALL_CFG, learning_rate=0.2, epochs=5)
        with pytest.raises(InputError):
            train(
                catalog, train_pairs, valid_pairs, None, other, resume_from=ckpt
            )


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(InputError):
            TrainConfig(momentum=1.0)
        with pytest.raises(InputError):
            TrainConfig(rho_alpha=0.0)
        with pytest.raises(InputError):
            TrainConfig(select="median")

    def test_paper_preset(self):
        cfg = paper_preset(seed=3)
        assert cfg.hidden_sizes == (1024,)
        assert cfg.momentum == 0.9
        assert cfg.seed == 3
