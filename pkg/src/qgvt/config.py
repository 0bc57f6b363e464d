"""Encoder geometry and named presets."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .errors import ValidationError


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 24
    dim: int = 1024
    heads: int = 16
    ffn_dim: int = 4096
    patch_size: int = 14
    image_size: int = 336
    eps: float = 1e-5
    text_dim: int = 768

    def __post_init__(self):
        for name in ("layers", "dim", "heads", "ffn_dim", "patch_size", "image_size", "text_dim"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.eps <= 0:
            raise ValidationError(f"eps must be positive, got {self.eps}")
        if self.dim % self.heads:
            raise ValidationError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.image_size % self.patch_size:
            raise ValidationError(
                f"image_size {self.image_size} is not a multiple of patch_size {self.patch_size}"
            )

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def token_count(self) -> int:
        """Number of patch tokens N (CLS excluded)."""
        return self.grid * self.grid

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3

    def to_metadata(self) -> dict[str, str]:
        return {k: repr(v) if isinstance(v, float) else str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_metadata(cls, meta: dict[str, str]) -> "EncoderConfig":
        kwargs = {}
        for name, field_type in (
            ("layers", int), ("dim", int), ("heads", int), ("ffn_dim", int),
            ("patch_size", int), ("image_size", int), ("eps", float), ("text_dim", int),
        ):
            if name not in meta:
                raise ValidationError(f"archive metadata lacks encoder field {name!r}")
            try:
                kwargs[name] = field_type(meta[name])
            except ValueError as exc:
                raise ValidationError(f"bad metadata value for {name!r}: {meta[name]!r}") from exc
        return cls(**kwargs)


PRESETS: dict[str, EncoderConfig] = {
    # CLIP ViT-L/14 at 336 px: 576 patch tokens
    "vit-l-14": EncoderConfig(),
    # desk-scale model used by the toy tests: 4x4 grid of 14 px patches
    "toy": EncoderConfig(layers=4, dim=16, heads=4, ffn_dim=32, image_size=56, text_dim=8),
}


def get_preset(name: str) -> EncoderConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValidationError(
            f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}"
        ) from None
