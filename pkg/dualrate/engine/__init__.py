"""
Training, sampling and distillation drivers.
"""

from .distiller import (
    DistillConfig,
    DistillRecord,
    DistillState,
    LiveSample,
    RolloutBatch,
    aux_step,
    distill_checkpoint,
    distill_loop,
    distill_step,
    draw_rollout_batch,
    full_rollout,
    init_distill_state,
    initialize_student,
    rollout_light,
    sample_distill_times,
    student_step,
)
from .sampler import (
    NfeCounts,
    SampleConfig,
    SampleResult,
    SampleTrace,
    ancestral_sample,
    check_feature_staleness,
    count_nfe,
    run_chain,
    sampling_plan,
    sweep_noise_interp,
)
from .trainer import (
    TrainConfig,
    TrainSnapshot,
    TrainState,
    diffusion_loss,
    init_train_state,
    restore_train_state,
    sample_training_times,
    train_checkpoint,
    train_loop,
    train_step,
)

__all__ = [
    "DistillConfig",
    "DistillRecord",
    "DistillState",
    "LiveSample",
    "RolloutBatch",
    "aux_step",
    "distill_checkpoint",
    "distill_loop",
    "distill_step",
    "draw_rollout_batch",
    "full_rollout",
    "init_distill_state",
    "initialize_student",
    "rollout_light",
    "sample_distill_times",
    "student_step",
    "NfeCounts",
    "SampleConfig",
    "SampleResult",
    "SampleTrace",
    "ancestral_sample",
    "check_feature_staleness",
    "count_nfe",
    "run_chain",
    "sampling_plan",
    "sweep_noise_interp",
    "TrainConfig",
    "TrainSnapshot",
    "TrainState",
    "diffusion_loss",
    "init_train_state",
    "restore_train_state",
    "sample_training_times",
    "train_checkpoint",
    "train_loop",
    "train_step",
]
