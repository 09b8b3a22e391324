"""Architecture specifications for the two fixed desk-scale networks.

Parameter naming and iteration order (the order used by ``flatten``, checkpoints
and PCA) is fixed:

- MLP with hidden widths ``w0, w1, ...``::

    dense0.weight (w0, D)  dense0.bias (w0,)
    dense1.weight (w1, w0) dense1.bias (w1,)
    ...
    logits.weight (K, w_last) logits.bias (K,)

- SmallCNN with channel counts ``c0, c1`` (3x3 valid convolutions, ReLU, one 2x2 max-pool)::

    conv0.weight (c0, 3, 3, C)  conv0.bias (c0,)
    conv1.weight (c1, 3, 3, c0) conv1.bias (c1,)
    logits.weight (K, c1 * floor((H-4)/2) * floor((W-4)/2)) logits.bias (K,)

Dense weights are stored ``(out, in)``; convolution kernels ``(out, kh, kw, in)``.
"""

from __future__ import annotations

from enum import StrEnum

from pydantic import BaseModel, ConfigDict, Field, model_validator

KERNEL = 3
POOL = 2


class ModelKind(StrEnum):
    """Supported architectures."""

    MLP = "mlp"
    SMALL_CNN = "small_cnn"


class ModelSpec(BaseModel):
    """Architecture description: kind, input shape ``(H, W, C)``, class count and layer widths."""

    kind: ModelKind
    input_shape: tuple[int, int, int]
    num_classes: int = Field(ge=2)
    widths: tuple[int, ...]

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_geometry(self) -> ModelSpec:
        if any(d < 1 for d in self.input_shape):
            raise ValueError(f"input shape must be positive, got {self.input_shape}")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"layer widths must be >= 1, got {self.widths}")
        if self.kind is ModelKind.SMALL_CNN:
            if len(self.widths) != 2:
                raise ValueError(f"small_cnn takes exactly two channel counts, got {self.widths}")
            h, w, _ = self.input_shape
            if h - 2 * (KERNEL - 1) < POOL or w - 2 * (KERNEL - 1) < POOL:
                raise ValueError(f"input {self.input_shape} too small for two 3x3 convolutions and a 2x2 pool")
        return self

    @classmethod
    def mlp(cls, input_shape: tuple[int, int, int], num_classes: int, widths: tuple[int, ...] = (256, 128)) -> ModelSpec:
        """Return an MLP spec (default ``input -> 256 -> 128 -> K``)."""
        return cls(kind=ModelKind.MLP, input_shape=input_shape, num_classes=num_classes, widths=widths)

    @classmethod
    def small_cnn(cls, input_shape: tuple[int, int, int], num_classes: int, channels: tuple[int, int] = (8, 16)) -> ModelSpec:
        """Return a SmallCNN spec (default 8/16 channels)."""
        return cls(kind=ModelKind.SMALL_CNN, input_shape=input_shape, num_classes=num_classes, widths=channels)

    @property
    def input_dim(self) -> int:
        """Number of input values per sample."""
        h, w, c = self.input_shape
        return h * w * c

    @property
    def pooled_shape(self) -> tuple[int, int, int]:
        """Feature-map shape after the conv stack and pooling (SmallCNN only)."""
        h, w, _ = self.input_shape
        ho = (h - 2 * (KERNEL - 1)) // POOL
        wo = (w - 2 * (KERNEL - 1)) // POOL
        return ho, wo, self.widths[-1]

    @property
    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        """Parameter name to shape, in the fixed iteration order."""
        shapes: dict[str, tuple[int, ...]] = {}
        if self.kind is ModelKind.MLP:
            prev = self.input_dim
            for i, width in enumerate(self.widths):
                shapes[f"dense{i}.weight"] = (width, prev)
                shapes[f"dense{i}.bias"] = (width,)
                prev = width
        else:
            prev = self.input_shape[2]
            for i, ch in enumerate(self.widths):
                shapes[f"conv{i}.weight"] = (ch, KERNEL, KERNEL, prev)
                shapes[f"conv{i}.bias"] = (ch,)
                prev = ch
            ho, wo, c = self.pooled_shape
            prev = ho * wo * c
        shapes["logits.weight"] = (self.num_classes, prev)
        shapes["logits.bias"] = (self.num_classes,)
        return shapes

    @property
    def layer_groups(self) -> list[str]:
        """Layer names (``dense0``, ``conv1``, ``logits``...) in forward order."""
        groups: list[str] = []
        for name in self.param_shapes:
            layer = name.split(".", 1)[0]
            if layer not in groups:
                groups.append(layer)
        return groups
