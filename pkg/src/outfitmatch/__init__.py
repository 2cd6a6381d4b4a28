"""Outfit compatibility scoring with rule-guided attentive distillation."""

from .catalog import (
    Catalog,
    Item,
    PairSet,
    Triplet,
    load_catalog,
    load_pairs,
    positive_bottoms,
    sample_triplets,
    split_pairs,
)
from .distill import (
    AttentionParams,
    DistillConfig,
    TeacherOutput,
    attention_confidence,
    build_teacher,
    distill_backward,
    distill_forward,
    distill_loss,
)
from .metrics import (
    EvalReport,
    RetrievalReport,
    auc,
    evaluate_triplets,
    mrr_retrieval,
    per_rule_eval,
    pop_baseline,
    rand_baseline,
)
from .rules import Rule, RuleSet, activates, constraint_vector, mine_rules, parse_rules
from .student import (
    EncoderParams,
    StudentConfig,
    bpr_loss,
    compatibility,
    encode,
    student_backward,
    student_forward,
)
from .synthetic import gen_synthetic
from .training import (
    Checkpoint,
    TrainConfig,
    load_checkpoint,
    paper_preset,
    rho_at,
    save_checkpoint,
    sgd_step,
    train,
)

__version__ = "0.1.0"
