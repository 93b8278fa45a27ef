"""GRPO with verifiable accuracy/format rewards for a toy autoregressive policy."""

from .grpo import GRPOTrainer, TrainConfig, compute_advantages, evaluate, grpo_loss_and_grad, kl_to_reference
from .parser import RESPONSE_PATTERN, extract_answer, validate_format
from .policy import (
    PolicyParams,
    PolicySnapshot,
    Vocabulary,
    make_vocabulary,
    read_checkpoint,
    sample_completion,
    sequence_logprob,
    write_checkpoint,
)
from .rewards import RewardWeights, combine, grade_completion, reward_accuracy, reward_format
from .tasks import Task, gen_tasks, load_manifest

__version__ = "0.1.0"
