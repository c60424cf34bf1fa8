from .alignment import check_rows, monotonicity_score
from .config import VARIANTS, ModelConfig
from .layers import CBHG, GRU, BiGRU, ConvBN, Highway, Linear, Module, Prenet
from .network import (
    AttentionDecoder,
    DecoderNotInitializedError,
    DecoderState,
    InferenceOutput,
    ModelOutput,
    Postnet,
    SpeechModel,
    build_ablation_variant,
    build_model,
    max_decoder_steps,
    scheduled_sampling_choose,
)

__all__ = [
    "AttentionDecoder",
    "BiGRU",
    "CBHG",
    "ConvBN",
    "DecoderNotInitializedError",
    "DecoderState",
    "GRU",
    "Highway",
    "InferenceOutput",
    "Linear",
    "ModelConfig",
    "ModelOutput",
    "Module",
    "Postnet",
    "Prenet",
    "SpeechModel",
    "VARIANTS",
    "build_ablation_variant",
    "build_model",
    "check_rows",
    "max_decoder_steps",
    "monotonicity_score",
    "scheduled_sampling_choose",
]
