"""Architecture hyperparameters."""

from __future__ import annotations

from dataclasses import dataclass, replace

VARIANTS = ("full", "vanilla", "gru_encoder")


@dataclass(frozen=True)
class ModelConfig:
    """Network sizes. Defaults reproduce the published architecture table."""

    variant: str = "full"
    embed_dim: int = 256
    prenet_dropout: float = 0.5

    encoder_prenet: tuple = (256, 128)
    encoder_bank_k: int = 16
    encoder_bank_channels: int = 128
    encoder_proj: tuple = (128, 128)
    encoder_highway_layers: int = 4
    encoder_highway_units: int = 128
    encoder_gru_units: int = 128

    decoder_prenet: tuple = (256, 128)
    attention_rnn_units: int = 256
    attention_units: int = 256
    decoder_rnn_units: int = 256
    decoder_rnn_layers: int = 2
    r: int = 2

    mel_bands: int = 80
    linear_bins: int = 1025

    postnet_bank_k: int = 8
    postnet_bank_channels: int = 128
    postnet_proj: tuple = (256, 80)
    postnet_highway_layers: int = 4
    postnet_highway_units: int = 128
    postnet_gru_units: int = 128

    # ablations: plain residual-GRU encoder depth/width, and the frame
    # grouping of the vanilla decoder (one frame per step)
    rnn_encoder_layers: int = 2
    vanilla_rnn_units: int = 256
    vanilla_r: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown model variant {self.variant!r}; expected one of {VARIANTS}")
        if self.r < 1 or self.vanilla_r < 1:
            raise ValueError("reduction factor must be >= 1")
        if not 0 <= self.prenet_dropout < 1:
            raise ValueError("prenet_dropout must be in [0, 1)")
        for name, value in vars(self).items():
            if name in ("variant", "prenet_dropout"):
                continue
            values = value if isinstance(value, tuple) else (value,)
            if any(int(v) < 1 for v in values):
                raise ValueError(f"{name} must be positive, got {value}")
        if self.encoder_proj[-1] != self.encoder_prenet[-1]:
            raise ValueError(
                "encoder residual needs encoder_proj[-1] == encoder_prenet[-1] "
                f"({self.encoder_proj[-1]} != {self.encoder_prenet[-1]})"
            )
        if self.postnet_proj[-1] != self.mel_bands:
            raise ValueError(
                f"postnet residual needs postnet_proj[-1] == mel_bands "
                f"({self.postnet_proj[-1]} != {self.mel_bands})"
            )

    @property
    def memory_dim(self) -> int:
        if self.variant == "vanilla":
            return self.vanilla_rnn_units
        return 2 * self.encoder_gru_units

    @property
    def effective_r(self) -> int:
        return self.vanilla_r if self.variant == "vanilla" else self.r

    @property
    def has_postnet(self) -> bool:
        return self.variant != "vanilla"

    def with_variant(self, variant: str) -> "ModelConfig":
        return replace(self, variant=variant)

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """Desk-scale sizes: embed 64, conv channels 32, RNNs 128."""
        base = dict(
            embed_dim=64,
            encoder_prenet=(64, 32),
            encoder_bank_channels=32,
            encoder_proj=(32, 32),
            encoder_highway_units=32,
            encoder_gru_units=64,
            decoder_prenet=(64, 32),
            attention_rnn_units=128,
            attention_units=128,
            decoder_rnn_units=128,
            postnet_bank_channels=32,
            postnet_proj=(32, 80),
            postnet_highway_units=32,
            postnet_gru_units=32,
            vanilla_rnn_units=128,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def micro(cls, **overrides) -> "ModelConfig":
        """Smallest sensible network, for gradient checks (embed 8, channels 8)."""
        base = dict(
            embed_dim=8,
            encoder_prenet=(8, 8),
            encoder_bank_k=3,
            encoder_bank_channels=8,
            encoder_proj=(8, 8),
            encoder_highway_layers=2,
            encoder_highway_units=8,
            encoder_gru_units=4,
            decoder_prenet=(8, 8),
            attention_rnn_units=8,
            attention_units=8,
            decoder_rnn_units=8,
            mel_bands=6,
            linear_bins=9,
            postnet_bank_k=2,
            postnet_bank_channels=8,
            postnet_proj=(8, 6),
            postnet_highway_layers=2,
            postnet_highway_units=8,
            postnet_gru_units=4,
            vanilla_rnn_units=8,
        )
        base.update(overrides)
        return cls(**base)
