"""Rule-regularized teacher construction and attentive confidence weights.

The teacher is not a second trained network: given the student's score
distribution p over a triplet's two pairs, it is the closed-form
projection of p toward the sides rewarded by the activated rules,

    q  propto  p * exp(C * sum_l lambda_l * f_l),

which exactly minimizes KL(q || p) - C * E_q[sum_l lambda_l f_l] over
the 2-simplex. Rule confidences lambda come from a one-hidden-layer
attention net over the raw item features and a one-hot rule id,
softmax-normalized over the triplet's activated rules.

Gradient convention: the student copy inside q is a constant (the
student never chases its own moving target); the attention parameters
stay differentiable through lambda.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .catalog import Catalog, Triplet
from .errors import ConsistencyError, InputError
from .linalg import sigmoid, softmax2
from .rules import RuleSet, constraint_vector
from .student import (
    BatchCache,
    EncoderParams,
    batch_forward,
    bpr_loss,
    student_backward,
)

LOG_FLOOR = 1e-300  # probabilities are clamped here before ln


@dataclass
class AttentionParams:
    """One-hidden-layer scorer; `bottom_proj` is shared by both bottoms."""

    top_proj: np.ndarray  # (h, D_v + D_c)
    bottom_proj: np.ndarray  # (h, D_v + D_c)
    rule_proj: np.ndarray  # (h, L)
    out_weight: np.ndarray  # (h,)
    hidden_bias: np.ndarray  # (h,)
    out_bias: np.ndarray  # (1,)

    def leaves(self):
        yield "attention.top_proj", self.top_proj, True
        yield "attention.bottom_proj", self.bottom_proj, True
        yield "attention.rule_proj", self.rule_proj, True
        yield "attention.out_weight", self.out_weight, True
        yield "attention.hidden_bias", self.hidden_bias, False
        yield "attention.out_bias", self.out_bias, False

    def copy(self) -> "AttentionParams":
        return AttentionParams(*(arr.copy() for _, arr, _ in self.leaves()))

    def zeros_like(self) -> "AttentionParams":
        return AttentionParams(*(np.zeros_like(arr) for _, arr, _ in self.leaves()))

    @property
    def hidden_size(self) -> int:
        return self.out_weight.size

    @property
    def n_rules(self) -> int:
        return self.rule_proj.shape[1]


@dataclass(frozen=True)
class DistillConfig:
    """Distillation knobs: regularization balance, attention width, schedule."""

    c: float = 4.0
    h: int = 8
    rho_max: float = 1.0
    rho_alpha: float = 0.95

    def __post_init__(self):
        if self.c <= 0:
            raise InputError("balance parameter c must be positive")
        if self.h < 1:
            raise InputError("attention hidden size must be >= 1")
        if not 0.0 <= self.rho_max <= 1.0:
            raise InputError("rho_max must lie in [0, 1]")
        if not 0.0 < self.rho_alpha < 1.0:
            raise InputError("rho_alpha must lie in (0, 1)")


@dataclass
class TeacherOutput:
    q: tuple[float, float]
    confidences: dict[int, float]


def init_attention(
    h: int, d_v: int, d_c: int, n_rules: int, rng: np.random.Generator
) -> AttentionParams:
    d_in = d_v + d_c

    def glorot(rows, cols):
        r = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-r, r, size=(rows, cols))

    return AttentionParams(
        top_proj=glorot(h, d_in),
        bottom_proj=glorot(h, d_in),
        rule_proj=glorot(h, n_rules) if n_rules > 0 else np.zeros((h, 0)),
        out_weight=glorot(h, 1)[:, 0],
        hidden_bias=np.zeros(h),
        out_bias=np.zeros(1),
    )


@dataclass
class AttentionCache:
    x_i: np.ndarray
    x_jk: np.ndarray  # x_j + x_k (bottom projection is shared)
    rule_ids: tuple[int, ...]
    tanh_h: np.ndarray  # (h, A)
    lam: np.ndarray  # (A,)


def normalized_confidences(scores: np.ndarray) -> np.ndarray:
    """Softmax with max-shift; safe for extreme logits."""
    shifted = np.exp(scores - scores.max())
    return shifted / shifted.sum()


def attention_forward(
    phi: AttentionParams,
    x_i: np.ndarray,
    x_j: np.ndarray,
    x_k: np.ndarray,
    rule_ids,
) -> tuple[np.ndarray, AttentionCache]:
    if len(rule_ids) == 0:
        raise InputError("attention needs a nonempty activated rule set")
    x_jk = x_j + x_k
    shared = phi.top_proj @ x_i + phi.bottom_proj @ x_jk + phi.hidden_bias
    pre = shared[:, None] + phi.rule_proj[:, list(rule_ids)]
    th = np.tanh(pre)
    scores = phi.out_weight @ th + phi.out_bias[0]
    lam = normalized_confidences(scores)
    return lam, AttentionCache(x_i, x_jk, tuple(rule_ids), th, lam)


def attention_confidence(
    phi: AttentionParams, catalog: Catalog, t: Triplet, activated
) -> dict[int, float]:
    """Per-sample confidence for each activated rule; sums to 1."""
    lam, _ = attention_forward(
        phi,
        catalog.top_input_matrix()[t.i],
        catalog.bottom_input_matrix()[t.j],
        catalog.bottom_input_matrix()[t.k],
        list(activated),
    )
    return {rid: float(l) for rid, l in zip(activated, lam)}


def attention_backward(
    phi: AttentionParams,
    cache: AttentionCache,
    d_lam: np.ndarray,
    out: AttentionParams,
) -> None:
    """Accumulate d(loss)/d(phi) into `out`, given d(loss)/d(lambda).

    Routes through the softmax jacobian, then the tanh hidden layer.
    """
    if cache.tanh_h.shape != (phi.hidden_size, len(cache.rule_ids)):
        raise ConsistencyError("attention cache does not match parameters")
    lam = cache.lam
    d_scores = lam * (d_lam - float(d_lam @ lam))
    d_pre = (phi.out_weight[:, None] * (1.0 - cache.tanh_h**2)) * d_scores[None, :]
    out.out_weight += cache.tanh_h @ d_scores
    out.out_bias[0] += d_scores.sum()
    out.rule_proj[:, list(cache.rule_ids)] += d_pre
    d_shared = d_pre.sum(axis=1)
    out.hidden_bias += d_shared
    out.top_proj += np.outer(d_shared, cache.x_i)
    out.bottom_proj += np.outer(d_shared, cache.x_jk)


def build_teacher(
    p: tuple[float, float],
    constraints,
    confidences: dict[int, float],
    c: float,
) -> TeacherOutput:
    """Closed-form projection of p toward the rule-rewarded side.

    `constraints` is the (rule_id, f_ij, f_ik) list from the rule engine.
    With no constraints the teacher is exactly the student.
    """
    if not constraints:
        return TeacherOutput(q=(float(p[0]), float(p[1])), confidences={})
    reward_ij = 0.0
    reward_ik = 0.0
    for rid, f_ij, f_ik in constraints:
        lam = confidences.get(rid, 0.0)
        reward_ij += lam * f_ij
        reward_ik += lam * f_ik
    log_ij = np.log(max(p[0], LOG_FLOOR)) + c * reward_ij
    log_ik = np.log(max(p[1], LOG_FLOOR)) + c * reward_ik
    return TeacherOutput(q=softmax2(log_ij, log_ik), confidences=dict(confidences))


def cross_entropy(q: tuple[float, float], p: tuple[float, float]) -> float:
    """-sum_a q_a ln p_a with the ln clamped at the float floor."""
    if min(p) <= 0.0:
        warnings.warn(
            "student distribution saturated to 0; clamping ln", RuntimeWarning
        )
    return -(
        q[0] * np.log(max(p[0], LOG_FLOOR)) + q[1] * np.log(max(p[1], LOG_FLOOR))
    )


def distill_loss(
    p: tuple[float, float], q: tuple[float, float], bpr: float, rho: float
) -> float:
    """(1-rho)*bpr + rho*CE(q, p); the L2 term is the trainer's business."""
    if not 0.0 <= rho <= 1.0:
        raise InputError(f"rho must lie in [0, 1], got {rho}")
    return float((1.0 - rho) * bpr + rho * cross_entropy(q, p))


def score_seed_gradients(
    m_ij: float, m_ik: float, p, q, rho: float
) -> tuple[float, float]:
    """d(loss)/d(m_ij), d(loss)/d(m_ik) for the blended objective.

    BPR part: d(-ln s(d))/dm. CE part: p - q with q held constant.
    """
    sig = sigmoid(m_ij - m_ik)
    d_ij = (1.0 - rho) * (sig - 1.0) + rho * (p[0] - q[0])
    d_ik = (1.0 - rho) * (1.0 - sig) + rho * (p[1] - q[1])
    return d_ij, d_ik


def confidence_grad_seed(
    p: tuple[float, float],
    q: tuple[float, float],
    constraints,
    rule_ids,
    c: float,
    rho: float,
) -> np.ndarray:
    """d(rho * CE(q, p))/d(lambda_l) for each rule in `rule_ids`.

    q's logits are ln p_const + C*sum lambda*f, so the CE responds to
    lambda only through the teacher's log-odds tilt.
    """
    g = (
        q[0]
        * q[1]
        * (np.log(max(p[1], LOG_FLOOR)) - np.log(max(p[0], LOG_FLOOR)))
    )
    f = {rid: (f_ij, f_ik) for rid, f_ij, f_ik in constraints}
    return np.array(
        [rho * c * g * (f[rid][0] - f[rid][1]) for rid in rule_ids], dtype=float
    )


@dataclass
class DistillStep:
    """Forward artifacts for one triplet, everything backprop needs."""

    triplet: Triplet
    m_ij: float
    m_ik: float
    student_cache: BatchCache
    p: tuple[float, float]
    teacher: TeacherOutput
    constraints: list[tuple[int, int, int]]
    att_cache: AttentionCache | None
    bpr: float
    loss: float
    rho: float
    c: float


def distill_forward(
    theta: EncoderParams,
    phi: AttentionParams | None,
    catalog: Catalog,
    t: Triplet,
    rules: RuleSet | None,
    rho: float,
    c: float,
) -> DistillStep:
    """Score a triplet, build its teacher, and blend the losses.

    A triplet no rule touches carries the plain full-weight BPR loss:
    there is no teacher to imitate, so the sample is pure ground truth.
    """
    x_i = catalog.top_input_matrix()[[t.i]]
    x_j = catalog.bottom_input_matrix()[[t.j]]
    x_k = catalog.bottom_input_matrix()[[t.k]]
    m_ij_arr, m_ik_arr, cache = batch_forward(theta, x_i, x_j, x_k)
    m_ij, m_ik = float(m_ij_arr[0]), float(m_ik_arr[0])
    p = softmax2(m_ij, m_ik)
    bpr = bpr_loss(m_ij, m_ik)

    constraints = (
        constraint_vector(rules, catalog, t) if rules is not None and len(rules) else []
    )
    if not constraints or rho == 0.0:
        detached = TeacherOutput(q=p, confidences={})
        return DistillStep(
            t, m_ij, m_ik, cache, p, detached, constraints, None, bpr, bpr, 0.0, c
        )

    if phi is None:
        raise InputError("attention parameters required when rules activate")
    rule_ids = [rid for rid, _, _ in constraints]
    lam, att_cache = attention_forward(phi, x_i[0], x_j[0], x_k[0], rule_ids)
    confidences = {rid: float(l) for rid, l in zip(rule_ids, lam)}
    teacher = build_teacher(p, constraints, confidences, c)
    loss = distill_loss(p, teacher.q, bpr, rho)
    return DistillStep(
        t, m_ij, m_ik, cache, p, teacher, constraints, att_cache, bpr, loss, rho, c
    )


def distill_backward(
    theta: EncoderParams, phi: AttentionParams | None, step: DistillStep
) -> tuple[EncoderParams, AttentionParams | None]:
    """Gradients of the blended per-triplet loss w.r.t. theta and phi."""
    d_ij, d_ik = score_seed_gradients(
        step.m_ij, step.m_ik, step.p, step.teacher.q, step.rho
    )
    theta_grad = student_backward(theta, step.student_cache, d_ij, d_ik)
    if phi is None:
        return theta_grad, None
    phi_grad = phi.zeros_like()
    if step.att_cache is not None:
        rule_ids = step.att_cache.rule_ids
        d_lam = confidence_grad_seed(
            step.p, step.teacher.q, step.constraints, rule_ids, step.c, step.rho
        )
        attention_backward(phi, step.att_cache, d_lam, phi_grad)
    return theta_grad, phi_grad
