from .tensor import (
    ShapeError,
    Tape,
    Tensor,
    add,
    concat,
    expand,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    sub,
    swapaxes,
    take,
)
from .loss import CLAMP_EPS, bce_multilabel
from .nn import (
    ConfigError,
    DecoderBlock,
    LayerNorm,
    Linear,
    MLP,
    Module,
    MultiheadAttention,
    multihead_cross_attention,
    transformer_decoder_block,
)
from .optim import AdamW, AdamWState, MissingGradError, StepSchedule, adamw_step
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckResult, check
