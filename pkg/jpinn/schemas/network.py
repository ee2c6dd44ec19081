"""Network topology schema."""

from typing import List, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from jpinn.config.settings import ACTIVATIONS


class NetworkTopology(BaseModel):
    """
    Encoder-decoder layout of a full residual network.

    The decoder mirrors the encoder; encoder layer ``i`` is skipped into
    decoder layer ``L - 1 - i``, which has the same width.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    input_width: int = Field(ge=1)
    encoder_widths: Tuple[int, ...]
    output_width: int = Field(ge=1)
    encoder_activation: str = "swish"
    decoder_activation: str = "swish"
    output_activation: str = "linear"
    attention: bool = True
    normalization: bool = True

    @field_validator("encoder_widths")
    @classmethod
    def _positive(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value or any(w < 1 for w in value):
            raise ValueError("encoder widths must be positive")
        return value

    @field_validator("encoder_activation", "decoder_activation", "output_activation")
    @classmethod
    def _known(cls, value: str) -> str:
        if value not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{value}'")
        return value

    @property
    def decoder_widths(self) -> Tuple[int, ...]:
        return tuple(reversed(self.encoder_widths))

    @property
    def activation_plan(self) -> List[str]:
        """Activation of every layer: encoder, decoder, then output."""
        depth = len(self.encoder_widths)
        return [self.encoder_activation] * depth + [self.decoder_activation] * depth + [self.output_activation]
