"""Snapshot compressive video imaging with plug-and-play solvers and learned noise schedules."""

from .operator import (
    SciOperator,
    build_operator,
    apply_phi,
    apply_phi_transpose,
    simulate_measurement,
    pixel_index,
)
from .denoise import DenoiserSpec, denoise, denoise_vjp
from .solvers import (
    SolverConfig,
    NoiseSchedule,
    ReconTrace,
    schedule_step,
    schedule_exponential,
    schedule_constant,
    named_schedule,
    admm_reconstruct,
    gap_reconstruct,
    reconstruct,
    residual,
)
from .unfold import (
    TrainableSchedule,
    CheckpointPlan,
    TrainConfig,
    sigmoid_reparam,
    init_logits_step,
    loss_mse,
    forward_unrolled,
    backward_through_unroll,
    adam_step,
    AdamState,
    train,
)
from .metrics import aggregate_reports, psnr, ssim, video_report, QualityReport
from .data_io import (
    read_tensor,
    write_tensor,
    prepare_video,
    generate_mask,
    build_dataset,
    Sample,
)

__version__ = "0.1.0"
