from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (
    AEUFLayer,
    AttentionFourierLayer,
    FourierLayer,
    Projection,
    SelfAttention,
    SpectralConv1d,
    UFourierLayer,
    UNet1d,
)
from .models import (
    VARIANTS,
    ModelSpec,
    NeuralOperator,
    RecurrentBaseline,
    assemble_input,
    build_model,
    count_parameters,
    forward,
    gradients,
    parameter_set,
)

__all__ = [
    "AEUFLayer",
    "AttentionFourierLayer",
    "FourierLayer",
    "ModelSpec",
    "NeuralOperator",
    "Projection",
    "RecurrentBaseline",
    "SelfAttention",
    "SpectralConv1d",
    "UFourierLayer",
    "UNet1d",
    "VARIANTS",
    "assemble_input",
    "build_model",
    "count_parameters",
    "forward",
    "gradients",
    "load_checkpoint",
    "parameter_set",
    "save_checkpoint",
]
