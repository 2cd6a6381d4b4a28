"""Joint training loop: seeded triplet resampling, blended loss, SGD.

Epoch e (1-based) resamples negatives with seed ``base_seed + e`` and
uses imitation weight rho(e-1), so the first epoch is pure ranking loss
while the teacher's influence ramps up geometrically toward rho_max.
Identical (config, seed, data) reproduce the run bit-for-bit, and a
checkpoint carries enough state (parameters, momentum buffers, best
snapshot) to resume mid-run without perturbing that stream.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .catalog import Catalog, PairSet, sample_triplets
from .distill import (
    AttentionParams,
    attention_backward,
    attention_forward,
    build_teacher,
    confidence_grad_seed,
    cross_entropy,
    init_attention,
)
from .errors import (
    CheckpointVersionError,
    ConsistencyError,
    InputError,
    ParseError,
)
from .linalg import sigmoid
from .rules import RuleMasks, RuleSet
from .student import EncoderParams, StudentConfig, batch_backward, batch_forward, init_student

CHECKPOINT_VERSION = 1
VALID_SAMPLE_SEED_OFFSET = 0  # valid triplets use the base seed itself


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 128
    learning_rate: float = 0.05
    momentum: float = 0.9
    lambda_reg: float = 1e-3
    c: float = 4.0
    rho_max: float = 1.0
    rho_alpha: float = 0.95
    seed: int = 0
    m_negatives: int = 3
    hidden_sizes: tuple[int, ...] = (24,)
    attention_hidden: int = 8
    select: str = "best"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.m_negatives < 1:
            raise InputError("epochs, batch_size and m_negatives must be >= 1")
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise InputError("momentum must lie in [0, 1)")
        if self.lambda_reg < 0:
            raise InputError("lambda_reg must be non-negative")
        if self.c <= 0:
            raise InputError("c must be positive")
        if not 0.0 <= self.rho_max <= 1.0:
            raise InputError("rho_max must lie in [0, 1]")
        if not 0.0 < self.rho_alpha < 1.0:
            raise InputError("rho_alpha must lie in (0, 1)")
        if self.seed < 0:
            raise InputError("seed must be non-negative")
        if self.select not in ("best", "last"):
            raise InputError("select must be 'best' or 'last'")
        StudentConfig(hidden_sizes=tuple(self.hidden_sizes), lambda_reg=self.lambda_reg)
        if self.attention_hidden < 1:
            raise InputError("attention_hidden must be >= 1")


def paper_preset(**overrides) -> TrainConfig:
    """Preset sized for full pretrained feature vectors (4096-D visual,
    400-D text): a single 1024-unit hidden layer and a wider attention net.
    """
    base = dict(hidden_sizes=(1024,), attention_hidden=128)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_auc: float
    valid_auc: float | None
    rho: float


@dataclass
class Checkpoint:
    """Final state plus the best-validation snapshot, both resumable."""

    student: EncoderParams
    attention: AttentionParams | None
    velocity_student: EncoderParams
    velocity_attention: AttentionParams | None
    epoch: int
    config: TrainConfig
    history: list[EpochStats] = field(default_factory=list)
    best_student: EncoderParams | None = None
    best_attention: AttentionParams | None = None
    best_epoch: int = 0
    best_valid_auc: float | None = None

    def selected_params(self, select: str | None = None):
        """(student, attention) under 'best' or 'last' model selection."""
        mode = select or self.config.select
        if mode == "best" and self.best_student is not None:
            return self.best_student, self.best_attention
        return self.student, self.attention


def rho_at(epoch: int, rho_max: float, rho_alpha: float) -> float:
    """Imitation weight rho_max * (1 - rho_alpha^epoch); 0 at epoch 0."""
    if epoch < 0:
        raise InputError("epoch must be >= 0")
    return rho_max * (1.0 - rho_alpha**epoch)


def sgd_step(params, grads, velocity, lr: float, momentum: float, lambda_reg: float):
    """Momentum SGD, in place: v <- mu*v + (g + lambda*w); w <- w - lr*v.

    L2 touches weight matrices only, never biases.
    """
    for (name, p, is_w), (_, g, _), (_, v, _) in zip(
        params.leaves(), grads.leaves(), velocity.leaves()
    ):
        if p.shape != g.shape or p.shape != v.shape:
            raise ConsistencyError(f"shape mismatch in sgd_step at {name}")
        step = g + lambda_reg * p if (is_w and lambda_reg != 0.0) else g
        v *= momentum
        v += step
        p -= lr * v
    return params, velocity


def _triplet_index_arrays(triplets, order):
    i = np.fromiter((triplets[x].i for x in order), dtype=np.int64, count=len(order))
    j = np.fromiter((triplets[x].j for x in order), dtype=np.int64, count=len(order))
    k = np.fromiter((triplets[x].k for x in order), dtype=np.int64, count=len(order))
    return i, j, k


def _scores_over(theta, catalog, triplets):
    if not triplets:
        return np.empty(0), np.empty(0)
    order = np.arange(len(triplets))
    i, j, k = _triplet_index_arrays(triplets, order)
    m_ij, m_ik, _ = batch_forward(
        theta,
        catalog.top_input_matrix()[i],
        catalog.bottom_input_matrix()[j],
        catalog.bottom_input_matrix()[k],
    )
    return m_ij, m_ik


def _rank_fraction(m_ij, m_ik) -> float:
    return float(np.mean((m_ij > m_ik) + 0.5 * (m_ij == m_ik)))


def train(
    catalog: Catalog,
    train_pairs: PairSet,
    valid_pairs: PairSet,
    rules: RuleSet | None,
    cfg: TrainConfig,
    resume_from: Checkpoint | None = None,
    on_epoch=None,
) -> Checkpoint:
    """Run the full loop and return the checkpoint (best + final states).

    `rules=None` trains the plain ranking baseline; an empty RuleSet
    follows the distillation path but degenerates to the same updates.
    `on_epoch(stats, student, attention)` fires after each epoch.
    """
    if len(train_pairs) == 0:
        raise InputError("training pair set is empty")
    if catalog.d_v + catalog.d_c == 0:
        raise InputError("catalog has no feature dimensions")

    distill_enabled = rules is not None
    masks = RuleMasks(rules, catalog) if distill_enabled else None

    if resume_from is not None:
        if dataclasses.asdict(resume_from.config) != {
            **dataclasses.asdict(cfg),
            "epochs": resume_from.config.epochs,
        }:
            raise InputError("resume config differs from checkpoint config")
        theta = resume_from.student.copy()
        phi = resume_from.attention.copy() if resume_from.attention else None
        vel_theta = resume_from.velocity_student.copy()
        vel_phi = (
            resume_from.velocity_attention.copy()
            if resume_from.velocity_attention
            else None
        )
        start_epoch = resume_from.epoch + 1
        history = list(resume_from.history)
        best_student = resume_from.best_student
        best_attention = resume_from.best_attention
        best_epoch = resume_from.best_epoch
        best_vauc = (
            resume_from.best_valid_auc
            if resume_from.best_valid_auc is not None
            else -np.inf
        )
    else:
        theta = init_student(
            StudentConfig(tuple(cfg.hidden_sizes), cfg.lambda_reg),
            catalog.d_v,
            catalog.d_c,
            np.random.default_rng([cfg.seed, 0]),
        )
        phi = (
            init_attention(
                cfg.attention_hidden,
                catalog.d_v,
                catalog.d_c,
                len(rules),
                np.random.default_rng([cfg.seed, 1]),
            )
            if distill_enabled
            else None
        )
        vel_theta = theta.zeros_like()
        vel_phi = phi.zeros_like() if phi is not None else None
        start_epoch = 1
        history = []
        best_student = None
        best_attention = None
        best_epoch = 0
        best_vauc = -np.inf

    top_inputs = catalog.top_input_matrix()
    bottom_inputs = catalog.bottom_input_matrix()
    valid_triplets = (
        sample_triplets(
            catalog, valid_pairs, cfg.m_negatives, seed=cfg.seed + VALID_SAMPLE_SEED_OFFSET
        )
        if len(valid_pairs)
        else []
    )

    for epoch in range(start_epoch, cfg.epochs + 1):
        rho = rho_at(epoch - 1, cfg.rho_max, cfg.rho_alpha)
        triplets = sample_triplets(catalog, train_pairs, cfg.m_negatives, seed=cfg.seed + epoch)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(triplets))
        loss_sum = 0.0
        auc_sum = 0.0

        for batch_no, start in enumerate(range(0, len(order), cfg.batch_size)):
            chunk = order[start : start + cfg.batch_size]
            i_vec, j_vec, k_vec = _triplet_index_arrays(triplets, chunk)
            x_i, x_j, x_k = top_inputs[i_vec], bottom_inputs[j_vec], bottom_inputs[k_vec]
            m_ij, m_ik, cache = batch_forward(theta, x_i, x_j, x_k)
            diff = m_ij - m_ik
            sig = sigmoid(diff)
            losses = np.logaddexp(0.0, -diff)  # per-triplet BPR
            d_ij = sig - 1.0
            d_ik = 1.0 - sig
            auc_sum += float(np.sum(diff > 0) + 0.5 * np.sum(diff == 0))

            phi_grad = phi.zeros_like() if phi is not None else None
            if distill_enabled and len(rules) > 0 and rho > 0.0:
                activated, f_ij, f_ik = masks.batch_constraints(i_vec, j_vec, k_vec)
                shift = np.maximum(m_ij, m_ik)
                e_ij = np.exp(m_ij - shift)
                e_ik = np.exp(m_ik - shift)
                p_ij = e_ij / (e_ij + e_ik)
                p_ik = e_ik / (e_ij + e_ik)
                for b in np.nonzero(activated.any(axis=0))[0]:
                    rule_ids = np.nonzero(activated[:, b])[0]
                    constraints = [
                        (int(r), int(f_ij[r, b]), int(f_ik[r, b])) for r in rule_ids
                    ]
                    lam, att_cache = attention_forward(
                        phi, x_i[b], x_j[b], x_k[b], rule_ids
                    )
                    confidences = {int(r): float(l) for r, l in zip(rule_ids, lam)}
                    teacher = build_teacher(
                        (p_ij[b], p_ik[b]), constraints, confidences, cfg.c
                    )
                    losses[b] = (1.0 - rho) * losses[b] + rho * cross_entropy(
                        teacher.q, (p_ij[b], p_ik[b])
                    )
                    d_ij[b] = (1.0 - rho) * d_ij[b] + rho * (p_ij[b] - teacher.q[0])
                    d_ik[b] = (1.0 - rho) * d_ik[b] + rho * (p_ik[b] - teacher.q[1])
                    d_lam = confidence_grad_seed(
                        (p_ij[b], p_ik[b]),
                        teacher.q,
                        constraints,
                        rule_ids,
                        cfg.c,
                        rho,
                    )
                    attention_backward(phi, att_cache, d_lam, phi_grad)

            if not np.all(np.isfinite(losses)):
                raise ConsistencyError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}"
                )
            loss_sum += float(losses.sum())

            inv_b = 1.0 / chunk.size
            theta_grad = batch_backward(theta, cache, d_ij * inv_b, d_ik * inv_b)
            sgd_step(
                theta, theta_grad, vel_theta, cfg.learning_rate, cfg.momentum, cfg.lambda_reg
            )
            if phi is not None:
                for _, g, _ in phi_grad.leaves():
                    g *= inv_b
                sgd_step(phi, phi_grad, vel_phi, cfg.learning_rate, cfg.momentum, 0.0)

        train_loss = loss_sum / len(triplets)
        train_auc = auc_sum / len(triplets)
        valid_auc = None
        if valid_triplets:
            vm_ij, vm_ik = _scores_over(theta, catalog, valid_triplets)
            valid_auc = _rank_fraction(vm_ij, vm_ik)
            if valid_auc > best_vauc:
                best_vauc = valid_auc
                best_student = theta.copy()
                best_attention = phi.copy() if phi is not None else None
                best_epoch = epoch
        stats = EpochStats(epoch, train_loss, train_auc, valid_auc, rho)
        history.append(stats)
        if on_epoch is not None:
            on_epoch(stats, theta, phi)

    return Checkpoint(
        student=theta,
        attention=phi,
        velocity_student=vel_theta,
        velocity_attention=vel_phi,
        epoch=cfg.epochs,
        config=cfg,
        history=history,
        best_student=best_student,
        best_attention=best_attention,
        best_epoch=best_epoch,
        best_valid_auc=None if best_vauc == -np.inf else best_vauc,
    )


def _encoder_to_obj(p: EncoderParams | None):
    if p is None:
        return None
    return {
        "top": [{"weight": l.weight.tolist(), "bias": l.bias.tolist()} for l in p.top],
        "bottom": [
            {"weight": l.weight.tolist(), "bias": l.bias.tolist()} for l in p.bottom
        ],
    }


def _encoder_from_obj(obj) -> EncoderParams | None:
    from .student import DenseLayer

    if obj is None:
        return None

    def path(layers):
        return [
            DenseLayer(
                np.asarray(l["weight"], dtype=np.float64),
                np.asarray(l["bias"], dtype=np.float64),
            )
            for l in layers
        ]

    return EncoderParams(top=path(obj["top"]), bottom=path(obj["bottom"]))


def _attention_to_obj(p: AttentionParams | None):
    if p is None:
        return None
    return {name.split(".", 1)[1]: arr.tolist() for name, arr, _ in p.leaves()}


def _attention_from_obj(obj) -> AttentionParams | None:
    if obj is None:
        return None
    arrays = {key: np.asarray(val, dtype=np.float64) for key, val in obj.items()}
    # With zero rules, json yields h empty lists; restore the (h, 0) shape.
    if arrays["rule_proj"].size == 0:
        arrays["rule_proj"] = np.zeros((arrays["top_proj"].shape[0], 0))
    return AttentionParams(**arrays)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Versioned JSON; float64 values round-trip exactly via repr."""
    obj = {
        "version": CHECKPOINT_VERSION,
        "epoch": ckpt.epoch,
        "config": dataclasses.asdict(ckpt.config),
        "student": _encoder_to_obj(ckpt.student),
        "attention": _attention_to_obj(ckpt.attention),
        "velocity_student": _encoder_to_obj(ckpt.velocity_student),
        "velocity_attention": _attention_to_obj(ckpt.velocity_attention),
        "best_student": _encoder_to_obj(ckpt.best_student),
        "best_attention": _attention_to_obj(ckpt.best_attention),
        "best_epoch": ckpt.best_epoch,
        "best_valid_auc": ckpt.best_valid_auc,
        "history": [dataclasses.asdict(s) for s in ckpt.history],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: corrupt checkpoint ({exc})") from exc
    version = obj.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint version {version!r}, expected {CHECKPOINT_VERSION}"
        )
    try:
        config_obj = dict(obj["config"])
        config_obj["hidden_sizes"] = tuple(config_obj["hidden_sizes"])
        cfg = TrainConfig(**config_obj)
        ckpt = Checkpoint(
            student=_encoder_from_obj(obj["student"]),
            attention=_attention_from_obj(obj["attention"]),
            velocity_student=_encoder_from_obj(obj["velocity_student"]),
            velocity_attention=_attention_from_obj(obj["velocity_attention"]),
            epoch=int(obj["epoch"]),
            config=cfg,
            history=[EpochStats(**s) for s in obj["history"]],
            best_student=_encoder_from_obj(obj["best_student"]),
            best_attention=_attention_from_obj(obj["best_attention"]),
            best_epoch=int(obj["best_epoch"]),
            best_valid_auc=obj["best_valid_auc"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed checkpoint ({exc})") from exc
    for params in (ckpt.student, ckpt.velocity_student):
        for name, arr, _ in params.leaves():
            if not np.all(np.isfinite(arr)):
                raise ParseError(f"{path}: non-finite values in {name}")
    return ckpt
