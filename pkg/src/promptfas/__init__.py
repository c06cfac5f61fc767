"""One-class prompt optimization and evaluation for face anti-spoofing over
frozen embedding spaces."""

from .encoders import ToyTextEncoder, tokenize
from .evaluation import (
    EvalReport,
    ProtocolSpec,
    ScoredSample,
    auc,
    build_protocol,
    classify,
    eer_and_hter,
    error_rates,
    predict_real_probability,
    run_protocol,
)
from .losses import (
    LossBreakdown,
    LossWeights,
    contrastive_loss,
    discrimination_loss,
    diversity_loss,
    guidance_loss,
    total_loss,
    total_loss_grad,
)
from .prompts import (
    PriorBank,
    Prompt,
    PromptSet,
    build_prior_bank,
    init_prompt_set,
    load_prior_descriptions,
    overall_spoof_embedding,
    prior_prototype,
    unknown_prototype,
)
from .store import EmbeddingStore, RecordMeta, read_embeddings, write_embeddings
from .synthetic import DomainSpec, default_benchmark, generate
from .trainer import TrainConfig, cosine_lr, fit, grad_check, sgd_step
from .vecmath import cosine_similarity, l2_distance, normalize, prototype, softmax_probs

__version__ = "0.1.0"
