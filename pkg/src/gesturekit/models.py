"""Generator and discriminator networks plus checkpoint serialization.

The generator is a 1D convolutional U-Net: a shared encoder of 8
[Conv-BN-ReLU] blocks (max pooling after blocks 2, 4, 6) and three decoders
of 7 blocks each (nearest upsampling before blocks 2, 4, 6, skip
concatenation at matching temporal resolutions) with a final plain
convolution per head. The discriminator consumes audio features channel-
concatenated with body and hand parameters; face parameters are excluded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import formats
from .annotations import BODY_DIM, FACE_DIM, HAND_DIM
from .audio import FEATURE_DIM
from .errors import CheckpointError, ConfigError, ContractError, ShapeError

CHECKPOINT_VERSION = 1
ENCODER_BLOCKS = 8
DECODER_BLOCKS = 7
DISCRIMINATOR_BLOCKS = 6
POOL_AFTER = (2, 4, 6)
SUPPORTED_WINDOWS = (16, 32, 64)


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = FEATURE_DIM
    base_channels: int = 64
    face_channels: int = FACE_DIM
    body_channels: int = BODY_DIM
    hand_channels: int = HAND_DIM

    def __post_init__(self):
        if self.base_channels < 1:
            raise ConfigError("base_channels must be positive")

    @property
    def encoder_channels(self) -> tuple[int, ...]:
        b = self.base_channels
        return (b, b, 2 * b, 2 * b, 4 * b, 4 * b, 8 * b, 8 * b)

    @property
    def decoder_channels(self) -> tuple[int, ...]:
        b = self.base_channels
        return (8 * b, 4 * b, 4 * b, 2 * b, 2 * b, b, b)

    @property
    def head_channels(self) -> dict[str, int]:
        return {"face": self.face_channels, "body": self.body_channels,
                "hand": self.hand_channels}

    def to_dict(self) -> dict:
        return {"in_channels": self.in_channels, "base_channels": self.base_channels,
                "face_channels": self.face_channels, "body_channels": self.body_channels,
                "hand_channels": self.hand_channels}

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorConfig":
        return cls(**doc)


@dataclass(frozen=True)
class DiscriminatorConfig:
    base_channels: int = 64
    window_length: int = 64
    audio_channels: int = FEATURE_DIM
    body_channels: int = BODY_DIM
    hand_channels: int = HAND_DIM

    def __post_init__(self):
        if self.base_channels < 1:
            raise ConfigError("base_channels must be positive")
        if self.window_length not in SUPPORTED_WINDOWS:
            raise ConfigError(f"window_length must be one of {SUPPORTED_WINDOWS}")

    @property
    def input_channels(self) -> int:
        return self.audio_channels + self.body_channels + self.hand_channels

    @property
    def block_channels(self) -> tuple[int, ...]:
        b = self.base_channels
        return (b, b, 2 * b, 2 * b, 4 * b, 4 * b)

    @property
    def pool_after(self) -> tuple[int, ...]:
        # 16-frame windows keep enough temporal extent with 2 pools only
        return (2, 4) if self.window_length == 16 else POOL_AFTER

    @property
    def flat_features(self) -> int:
        final_t = self.window_length // (2 ** len(self.pool_after))
        return self.block_channels[-1] * final_t

    def to_dict(self) -> dict:
        return {"base_channels": self.base_channels, "window_length": self.window_length,
                "audio_channels": self.audio_channels, "body_channels": self.body_channels,
                "hand_channels": self.hand_channels}

    @classmethod
    def from_dict(cls, doc: dict) -> "DiscriminatorConfig":
        return cls(**doc)


class Conv1d:
    """Kernel-3 convolution layer with He-initialized weights."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 weight_scale: float | None = None):
        scale = np.sqrt(2.0 / (in_channels * 3)) if weight_scale is None else weight_scale
        self.weight = ag.Parameter(rng.normal(0.0, scale, size=(out_channels, in_channels, 3)))
        self.bias = ag.Parameter(np.zeros(out_channels))

    def __call__(self, x: ag.Tensor) -> ag.Tensor:
        return ag.conv1d(x, self.weight.tensor, self.bias.tensor)

    def named_parameters(self, prefix: str):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


class BatchNorm1d:
    def __init__(self, channels: int):
        self.gamma = ag.Parameter(np.ones(channels))
        self.beta = ag.Parameter(np.zeros(channels))
        self.state = ag.RunningStats(channels)

    def __call__(self, x: ag.Tensor, mode: str) -> ag.Tensor:
        return ag.batchnorm1d(x, self.gamma.tensor, self.beta.tensor, self.state, mode)

    def named_parameters(self, prefix: str):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]

    def named_stats(self, prefix: str):
        return [(f"{prefix}.running_mean", self.state, "mean"),
                (f"{prefix}.running_var", self.state, "var"),
                (f"{prefix}.batches_seen", self.state, "batches_seen")]


class ConvBlock:
    """The paper-style [Conv-BN-ReLU] unit."""

    def __init__(self, in_channels: int, out_channels: int, rng):
        self.conv = Conv1d(in_channels, out_channels, rng)
        self.bn = BatchNorm1d(out_channels)

    def __call__(self, x: ag.Tensor, mode: str) -> ag.Tensor:
        return ag.relu(self.bn(self.conv(x), mode))

    def named_parameters(self, prefix: str):
        return (self.conv.named_parameters(f"{prefix}.conv")
                + self.bn.named_parameters(f"{prefix}.bn"))

    def named_stats(self, prefix: str):
        return self.bn.named_stats(f"{prefix}.bn")


class Generator:
    """Shared encoder with face/body/hand decoder heads."""

    def __init__(self, config: GeneratorConfig, rng: np.random.Generator):
        self.config = config
        enc = config.encoder_channels
        self.encoder = []
        prev = config.in_channels
        for ch in enc:
            self.encoder.append(ConvBlock(prev, ch, rng))
            prev = ch
        # skips come from the pre-pool outputs of encoder blocks 2, 4, 6;
        # decoder block 2 runs at T/4 (pairs with encoder block 6), block 4
        # at T/2 (encoder block 4), block 6 at T (encoder block 2)
        skip_channels = {2: enc[5], 4: enc[3], 6: enc[1]}
        dec = config.decoder_channels
        self.decoders: dict[str, list[ConvBlock]] = {}
        self.final: dict[str, Conv1d] = {}
        for head in ("face", "body", "hand"):
            blocks = []
            prev = enc[-1]
            for i, ch in enumerate(dec, start=1):
                if i in (2, 4, 6):  # upsample + skip concat feed these blocks
                    blocks.append(ConvBlock(prev + skip_channels[i], ch, rng))
                else:
                    blocks.append(ConvBlock(prev, ch, rng))
                prev = ch
            self.decoders[head] = blocks
            # regression heads start near zero output so early training is
            # spent fitting targets rather than unwinding random outputs
            self.final[head] = Conv1d(prev, config.head_channels[head], rng,
                                      weight_scale=1e-3)

    def forward(self, features: ag.Tensor, mode: str):
        """Map (N, 28, T) or (28, T) features to the three parameter streams.

        T must be at least 8; lengths not divisible by 8 are reflect-padded
        and the outputs cropped back to T.
        """
        was_2d = features.ndim == 2
        x = ag.reshape(features, (1,) + features.shape) if was_2d else features
        if x.ndim != 3 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"generator expects (N, {self.config.in_channels}, T) "
                             f"features, got {features.shape}")
        t = x.shape[2]
        if t < 8:
            raise ShapeError(f"generator needs at least 8 frames, got {t}")
        pad = (-t) % 8
        if pad:
            x = ag.reflect_pad_time(x, pad)

        skips = {}
        h = x
        for i, block in enumerate(self.encoder, start=1):
            h = block(h, mode)
            if i in POOL_AFTER:
                skips[i] = h
                h = ag.maxpool1d(h)

        outputs = {}
        for head, blocks in self.decoders.items():
            d = h
            for i, block in enumerate(blocks, start=1):
                if i in (2, 4, 6):
                    d = ag.upsample_nearest(d)
                    skip = skips[{2: 6, 4: 4, 6: 2}[i]]
                    d = ag.concat_channels(d, skip)
                d = block(d, mode)
            out = self.final[head](d)
            if pad:
                out = ag.gather_time(out, np.arange(t))
            outputs[head] = ag.reshape(out, out.shape[1:]) if was_2d else out
        return outputs["face"], outputs["body"], outputs["hand"]

    def named_parameters(self):
        named = []
        for i, block in enumerate(self.encoder):
            named += block.named_parameters(f"gen.enc{i}")
        for head in ("face", "body", "hand"):
            for i, block in enumerate(self.decoders[head]):
                named += block.named_parameters(f"gen.{head}{i}")
            named += self.final[head].named_parameters(f"gen.{head}_out")
        return named

    def head_parameters(self, head: str):
        named = []
        for i, block in enumerate(self.decoders[head]):
            named += block.named_parameters(f"gen.{head}{i}")
        named += self.final[head].named_parameters(f"gen.{head}_out")
        return named

    def named_stats(self):
        stats = []
        for i, block in enumerate(self.encoder):
            stats += block.named_stats(f"gen.enc{i}")
        for head in ("face", "body", "hand"):
            for i, block in enumerate(self.decoders[head]):
                stats += block.named_stats(f"gen.{head}{i}")
        return stats


class Discriminator:
    """Audio-conditioned real/fake classifier over fixed-length windows."""

    def __init__(self, config: DiscriminatorConfig, rng: np.random.Generator):
        self.config = config
        self.blocks = []
        prev = config.input_channels
        for ch in config.block_channels:
            self.blocks.append(ConvBlock(prev, ch, rng))
            prev = ch
        scale = np.sqrt(1.0 / config.flat_features)
        self.linear_weight = ag.Parameter(rng.normal(0.0, scale, size=(1, config.flat_features)))
        self.linear_bias = ag.Parameter(np.zeros(1))

    def forward(self, features: ag.Tensor, body: ag.Tensor, hand: ag.Tensor,
                mode: str) -> ag.Tensor:
        """Probability in (0, 1) that each (audio, body, hand) window is a
        real in-sync pair. Returns a (N,) tensor."""
        cfg = self.config
        for name, tensor, channels in (("features", features, cfg.audio_channels),
                                       ("body", body, cfg.body_channels),
                                       ("hand", hand, cfg.hand_channels)):
            if tensor.ndim != 3:
                raise ShapeError(f"discriminator {name} must be (N, C, T), "
                                 f"got {tensor.shape}")
            if tensor.shape[1] == FACE_DIM and channels != FACE_DIM:
                raise ContractError("face parameters are excluded from the "
                                    "discriminator input")
            if tensor.shape[1] != channels:
                raise ShapeError(f"discriminator {name} must have {channels} "
                                 f"channels, got {tensor.shape[1]}")
            if tensor.shape[2] != cfg.window_length:
                raise ShapeError(f"discriminator expects {cfg.window_length}-frame "
                                 f"windows, got {tensor.shape[2]}")
        x = ag.concat_channels(features, body, hand)
        for i, block in enumerate(self.blocks, start=1):
            x = block(x, mode)
            if i in cfg.pool_after:
                x = ag.maxpool1d(x)
        n = x.shape[0]
        flat = ag.reshape(x, (n, cfg.flat_features))
        logit = ag.linear(flat, self.linear_weight.tensor, self.linear_bias.tensor)
        return ag.reshape(ag.sigmoid(logit), (n,))

    def named_parameters(self):
        named = []
        for i, block in enumerate(self.blocks):
            named += block.named_parameters(f"disc.block{i}")
        named += [("disc.linear.weight", self.linear_weight),
                  ("disc.linear.bias", self.linear_bias)]
        return named

    def named_stats(self):
        stats = []
        for i, block in enumerate(self.blocks):
            stats += block.named_stats(f"disc.block{i}")
        return stats


@dataclass
class ModelBundle:
    """Generator + discriminator with their configs and training counters."""

    generator: Generator | None
    discriminator: Discriminator
    gen_config: GeneratorConfig | None
    disc_config: DiscriminatorConfig
    subject_id: str = ""
    iteration: int = 0

    @classmethod
    def create(cls, gen_config: GeneratorConfig, disc_config: DiscriminatorConfig,
               subject_id: str = "", seed: int = 0) -> "ModelBundle":
        rng = np.random.default_rng(seed)
        generator = Generator(gen_config, rng)
        discriminator = Discriminator(disc_config, rng)
        return cls(generator=generator, discriminator=discriminator,
                   gen_config=gen_config, disc_config=disc_config,
                   subject_id=subject_id)

    @classmethod
    def create_sync_classifier(cls, disc_config: DiscriminatorConfig,
                               subject_id: str = "", seed: int = 0) -> "ModelBundle":
        rng = np.random.default_rng(seed)
        return cls(generator=None, discriminator=Discriminator(disc_config, rng),
                   gen_config=None, disc_config=disc_config, subject_id=subject_id)

    def named_parameters(self):
        named = []
        if self.generator is not None:
            named += self.generator.named_parameters()
        named += self.discriminator.named_parameters()
        return named

    def generator_parameters(self):
        return [p for _, p in self.generator.named_parameters()]

    def discriminator_parameters(self):
        return [p for _, p in self.discriminator.named_parameters()]

    def named_stats(self):
        stats = []
        if self.generator is not None:
            stats += self.generator.named_stats()
        stats += self.discriminator.named_stats()
        return stats


def generator_forward(bundle: ModelBundle, features: ag.Tensor, mode: str):
    return bundle.generator.forward(features, mode)


def discriminator_forward(bundle: ModelBundle, features: ag.Tensor, body: ag.Tensor,
                          hand: ag.Tensor, mode: str) -> ag.Tensor:
    return bundle.discriminator.forward(features, body, hand, mode)


def synthesize(bundle: ModelBundle, features: np.ndarray) -> dict[str, np.ndarray]:
    """Eval-mode generation from a (T, 28) feature matrix; returns
    frame-major (T, dim) arrays per stream."""
    x = ag.Tensor(np.asarray(features, dtype=np.float64).T[None])
    face, body, hand = bundle.generator.forward(x, "eval")
    return {"face": face.data[0].T.copy(), "body": body.data[0].T.copy(),
            "hand": hand.data[0].T.copy()}


# --- checkpoints ---------------------------------------------------------------

def _bundle_arrays(bundle: ModelBundle) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {"meta.iteration": np.array(float(bundle.iteration))}
    for name, param in bundle.named_parameters():
        arrays[name] = param.data
        arrays[f"{name}.adam_m"] = param.adam_m
        arrays[f"{name}.adam_v"] = param.adam_v
        arrays[f"{name}.steps"] = np.array(float(param.step_count))
    for name, state, attr in bundle.named_stats():
        value = getattr(state, attr)
        arrays[name] = np.array(float(value)) if np.isscalar(value) else value
    return arrays


def save_checkpoint(bundle: ModelBundle, path) -> None:
    """Serialize every parameter, optimizer moment, running stat, and counter."""
    config = {
        "kind": "sync_classifier" if bundle.generator is None else "model_bundle",
        "generator": bundle.gen_config.to_dict() if bundle.gen_config else None,
        "discriminator": bundle.disc_config.to_dict(),
        "subject_id": bundle.subject_id,
        "iteration": bundle.iteration,
    }
    formats.write_arrays(path, config, _bundle_arrays(bundle), version=CHECKPOINT_VERSION)


def load_checkpoint(path) -> ModelBundle:
    """Rebuild a bundle bit-exactly from a checkpoint file."""
    version, config, arrays = formats.read_arrays(path)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    for key in ("kind", "discriminator", "subject_id", "iteration"):
        if key not in config:
            raise CheckpointError(f"{path}: config block missing '{key}'")
    try:
        disc_config = DiscriminatorConfig.from_dict(config["discriminator"])
        if config["kind"] == "model_bundle":
            gen_config = GeneratorConfig.from_dict(config["generator"])
            bundle = ModelBundle.create(gen_config, disc_config,
                                        subject_id=config["subject_id"])
        elif config["kind"] == "sync_classifier":
            bundle = ModelBundle.create_sync_classifier(
                disc_config, subject_id=config["subject_id"])
        else:
            raise CheckpointError(f"{path}: unknown checkpoint kind '{config['kind']}'")
    except (TypeError, ConfigError) as exc:
        raise CheckpointError(f"{path}: invalid model config: {exc}") from exc
    bundle.iteration = int(config["iteration"])

    expected = _bundle_arrays(bundle)
    if set(expected) != set(arrays):
        missing = sorted(set(expected) - set(arrays))[:3]
        extra = sorted(set(arrays) - set(expected))[:3]
        raise CheckpointError(f"{path}: array set does not match config "
                              f"(missing {missing}, unexpected {extra})")
    for name, param in bundle.named_parameters():
        for key, target in ((name, "data"), (f"{name}.adam_m", "adam_m"),
                            (f"{name}.adam_v", "adam_v")):
            arr = arrays[key]
            if arr.shape != param.data.shape:
                raise CheckpointError(f"{path}: array '{key}' has shape {arr.shape}, "
                                      f"config implies {param.data.shape}")
            setattr(param, target, arr.copy())
        param.step_count = int(arrays[f"{name}.steps"])
    for name, state, attr in bundle.named_stats():
        arr = arrays[name]
        if attr == "batches_seen":
            state.batches_seen = int(arr)
        else:
            if arr.shape != getattr(state, attr).shape:
                raise CheckpointError(f"{path}: running stat '{name}' has wrong shape")
            setattr(state, attr, arr.copy())
    return bundle
