"""Model, loss, and schedule configuration plus the flat key/value config format.

The config document is line-oriented `key: value` text. Unknown keys are
rejected so typos never silently fall back to defaults. `to_text` emits every
key with its resolved value; `parse_config(to_text(cfg))` round-trips.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

_STAGE_DEFAULTS = {
    3: {"depths": [2, 2, 6], "heads": [3, 6, 12], "patch_size": 4},
    4: {"depths": [2, 2, 6, 2], "heads": [3, 6, 12, 24], "patch_size": 4},
    5: {"depths": [2, 2, 6, 2, 2], "heads": [3, 6, 12, 24, 48], "patch_size": 2},
}


@dataclass(frozen=True)
class StageSpec:
    channels: int
    depth: int
    heads: int
    grid: int  # tokens per side at this stage


@dataclass(frozen=True)
class LossConfig:
    lambda_dice: float = 1.0
    lambda_ce: float = 1.0
    eps: float = 1e-6

    def validate(self) -> None:
        if self.lambda_dice < 0 or self.lambda_ce < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.lambda_dice + self.lambda_ce <= 0:
            raise ConfigError("at least one of lambda_dice, lambda_ce must be positive")


@dataclass(frozen=True)
class ScheduleConfig:
    base_lr: float = 1e-4
    min_lr: float = 0.0
    warmup_fraction: float = 0.1
    epochs: int = 100

    def validate(self) -> None:
        if not (0.0 <= self.warmup_fraction < 1.0):
            raise ConfigError(f"warmup_fraction must be in [0,1), got {self.warmup_fraction}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.base_lr <= 0 or self.min_lr < 0 or self.min_lr > self.base_lr:
            raise ConfigError("require 0 < base lr and 0 <= min lr <= base lr")


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 224
    patch_size: int = 4
    window: int = 7
    base_channels: int = 96
    depths: tuple[int, ...] = (2, 2, 6, 2)
    heads: tuple[int, ...] = (3, 6, 12, 24)
    mlp_ratio: float = 4.0
    text_dim: int = 512
    visual_dim: int = 0  # 0 = last-stage channels
    use_text: bool = True
    use_cross_attention: bool = True
    use_convfuse: bool = True
    use_decoder_guidance: bool = False
    normalize_embeddings: bool = True

    @property
    def num_stages(self) -> int:
        return len(self.depths)

    @property
    def stages(self) -> tuple[StageSpec, ...]:
        out = []
        grid = self.image_size // self.patch_size
        ch = self.base_channels
        for depth, heads in zip(self.depths, self.heads):
            out.append(StageSpec(channels=ch, depth=depth, heads=heads, grid=grid))
            grid //= 2
            ch *= 2
        return tuple(out)

    @property
    def resolved_visual_dim(self) -> int:
        return self.visual_dim if self.visual_dim > 0 else self.stages[-1].channels

    def effective_window(self, grid: int) -> int:
        return min(self.window, grid)

    def validate(self) -> None:
        s = self.num_stages
        if s < 1:
            raise ConfigError("at least one stage required")
        if len(self.heads) != s:
            raise ConfigError(f"heads list has {len(self.heads)} entries for {s} stages")
        if self.patch_size < 1 or self.window < 1 or self.base_channels < 1:
            raise ConfigError("patch_size, window and base_channels must be positive")
        divisor = self.patch_size * (2 ** (s - 1))
        if self.image_size % divisor != 0:
            raise ConfigError(
                f"image_size {self.image_size} must be divisible by patch_size*2^(stages-1) = {divisor}"
            )
        for i, st in enumerate(self.stages, start=1):
            if st.depth < 2 or st.depth % 2 != 0:
                raise ConfigError(f"stage {i} depth {st.depth} must be even and >= 2")
            if st.channels % st.heads != 0:
                raise ConfigError(f"stage {i} heads {st.heads} do not divide channels {st.channels}")
            m_eff = self.effective_window(st.grid)
            if st.grid % m_eff != 0:
                raise ConfigError(
                    f"stage {i} grid {st.grid} not divisible by effective window {m_eff}"
                )
        if self.mlp_ratio <= 0:
            raise ConfigError("mlp_ratio must be positive")
        if self.text_dim < 1:
            raise ConfigError("text_dim must be positive")
        if self.visual_dim < 0:
            raise ConfigError("visual_dim must be >= 0 (0 selects the last stage width)")

    def variant_name(self) -> str:
        parts = []
        if not self.use_text:
            parts.append("w/o Text Guidance")
        else:
            if not self.use_cross_attention:
                parts.append("w/o Cross-Attention")
        if not self.use_convfuse:
            parts.append("w/o ConvFuse")
        return " + ".join(parts) if parts else "Full SwinTextUNet"


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    weight_decay: float = 1e-2
    batch_size: int = 8
    augment: bool = True
    embeddings_file: str = ""

    def validate(self) -> None:
        self.model.validate()
        self.loss.validate()
        self.schedule.validate()
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")


_BOOL_KEYS = {
    "use_text", "use_cross_attention", "use_convfuse", "use_decoder_guidance",
    "normalize_embeddings", "augment",
}
_INT_KEYS = {"image_size", "patch_size", "window", "base_channels", "num_stages",
             "text_dim", "visual_dim", "epochs", "batch_size"}
_FLOAT_KEYS = {"mlp_ratio", "lambda_dice", "lambda_ce", "lr", "min_lr",
               "weight_decay", "warmup_fraction"}
_LIST_KEYS = {"depths", "heads"}
_STR_KEYS = {"embeddings_file"}
ALL_KEYS = _BOOL_KEYS | _INT_KEYS | _FLOAT_KEYS | _LIST_KEYS | _STR_KEYS


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _BOOL_KEYS:
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        raise ConfigError(f"key {key!r}: expected a boolean, got {raw!r}")
    if key in _INT_KEYS:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"key {key!r}: expected an integer, got {raw!r}") from None
    if key in _FLOAT_KEYS:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"key {key!r}: expected a number, got {raw!r}") from None
    if key in _LIST_KEYS:
        try:
            return tuple(int(p.strip()) for p in raw.split(",") if p.strip())
        except ValueError:
            raise ConfigError(f"key {key!r}: expected comma-separated integers, got {raw!r}") from None
    return raw


def parse_config_text(text: str) -> RunConfig:
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if ":" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key: value', got {stripped!r}")
        key, _, raw = stripped.partition(":")
        key = key.strip()
        if key not in ALL_KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)

    num_stages = int(values.get("num_stages", 4))
    if num_stages in _STAGE_DEFAULTS:
        stage_defaults = _STAGE_DEFAULTS[num_stages]
    else:
        raise ConfigError(f"num_stages must be one of {sorted(_STAGE_DEFAULTS)}, got {num_stages}")
    depths = tuple(values.get("depths", stage_defaults["depths"]))
    heads = tuple(values.get("heads", stage_defaults["heads"]))
    if len(depths) != num_stages:
        raise ConfigError(f"depths has {len(depths)} entries but num_stages is {num_stages}")
    if len(heads) != num_stages:
        raise ConfigError(f"heads has {len(heads)} entries but num_stages is {num_stages}")

    model = ModelConfig(
        image_size=int(values.get("image_size", 224)),
        patch_size=int(values.get("patch_size", stage_defaults["patch_size"])),
        window=int(values.get("window", 7)),
        base_channels=int(values.get("base_channels", 96)),
        depths=depths,
        heads=heads,
        mlp_ratio=float(values.get("mlp_ratio", 4.0)),
        text_dim=int(values.get("text_dim", 512)),
        visual_dim=int(values.get("visual_dim", 0)),
        use_text=bool(values.get("use_text", True)),
        use_cross_attention=bool(values.get("use_cross_attention", True)),
        use_convfuse=bool(values.get("use_convfuse", True)),
        use_decoder_guidance=bool(values.get("use_decoder_guidance", False)),
        normalize_embeddings=bool(values.get("normalize_embeddings", True)),
    )
    loss = LossConfig(
        lambda_dice=float(values.get("lambda_dice", 1.0)),
        lambda_ce=float(values.get("lambda_ce", 1.0)),
    )
    schedule = ScheduleConfig(
        base_lr=float(values.get("lr", 1e-4)),
        min_lr=float(values.get("min_lr", 0.0)),
        warmup_fraction=float(values.get("warmup_fraction", 0.1)),
        epochs=int(values.get("epochs", 100)),
    )
    run = RunConfig(
        model=model,
        loss=loss,
        schedule=schedule,
        weight_decay=float(values.get("weight_decay", 1e-2)),
        batch_size=int(values.get("batch_size", 8)),
        augment=bool(values.get("augment", True)),
        embeddings_file=str(values.get("embeddings_file", "")),
    )
    run.validate()
    return run


def parse_config(path_or_text) -> RunConfig:
    """Parse a config document from a path or from literal text."""
    if isinstance(path_or_text, Path):
        return parse_config_text(path_or_text.read_text())
    text = str(path_or_text)
    if "\n" not in text and text.endswith((".cfg", ".conf", ".txt")) and Path(text).exists():
        return parse_config_text(Path(text).read_text())
    return parse_config_text(text)


def to_text(run: RunConfig) -> str:
    """Canonical serialization: every key, sorted, fully resolved."""
    m, l, s = run.model, run.loss, run.schedule
    values = {
        "image_size": m.image_size,
        "patch_size": m.patch_size,
        "window": m.window,
        "base_channels": m.base_channels,
        "num_stages": m.num_stages,
        "depths": ",".join(str(d) for d in m.depths),
        "heads": ",".join(str(h) for h in m.heads),
        "mlp_ratio": m.mlp_ratio,
        "text_dim": m.text_dim,
        "visual_dim": m.visual_dim,
        "use_text": m.use_text,
        "use_cross_attention": m.use_cross_attention,
        "use_convfuse": m.use_convfuse,
        "use_decoder_guidance": m.use_decoder_guidance,
        "normalize_embeddings": m.normalize_embeddings,
        "lambda_dice": l.lambda_dice,
        "lambda_ce": l.lambda_ce,
        "lr": s.base_lr,
        "min_lr": s.min_lr,
        "warmup_fraction": s.warmup_fraction,
        "epochs": s.epochs,
        "weight_decay": run.weight_decay,
        "batch_size": run.batch_size,
        "augment": run.augment,
        "embeddings_file": run.embeddings_file,
    }
    lines = []
    for key in sorted(values):
        v = values[key]
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{key}: {v}")
    return "\n".join(lines) + "\n"
