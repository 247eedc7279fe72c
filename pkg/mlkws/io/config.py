import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union, get_args, get_origin, get_type_hints

import yaml

from mlkws.sampling.stft_samples import FbankConfig, StftConfig
from mlkws.spatial.geometry import (
    ArrayGeometry,
    DEFAULT_LOOKS,
    DEFAULT_PAIRS,
    LookDirectionSet,
    SOUND_SPEED,
    mic_pairs,
    uniform_circular_array,
)


class ConfigError(ValueError):
    """Run configuration violates the schema."""


@dataclass(frozen=True)
class ArrayConfig:
    r"""Microphone array. Either a uniform circular array or explicit positions.

    Args:
        num_mics (int, optional): Microphones of the circular array. Defaults to 6.

        radius (float, optional): Radius in metres. Defaults to 0.035.

        rotation_deg (float, optional): Azimuth of microphone 0. Defaults to 0.

        sound_speed (float, optional): Speed of sound in m/s. Defaults to 343.

        mic_positions (Tuple[Tuple[float, float], ...], optional): Explicit positions,
            overriding the circular layout.
    """

    num_mics: int = 6
    radius: float = 0.035
    rotation_deg: float = 0.0
    sound_speed: float = SOUND_SPEED
    mic_positions: Optional[Tuple[Tuple[float, float], ...]] = None

    def geometry(self) -> ArrayGeometry:
        if self.mic_positions is not None:
            return ArrayGeometry(self.mic_positions, self.sound_speed)
        return uniform_circular_array(
            self.num_mics, self.radius, self.sound_speed, self.rotation_deg
        )


@dataclass(frozen=True)
class SpatialConfig:
    r"""Spatial features.

    Args:
        pairs (Tuple[Tuple[int, int], ...], optional): Microphone index pairs of the
            IPDs.

        looks (Tuple[float, ...], optional): Look directions in degrees.

        normalize_df (bool, optional): Average the directional feature over pairs
            instead of summing. Defaults to True.

        reference_mic (int, optional): Reference microphone. Defaults to 0.
    """

    pairs: Tuple[Tuple[int, int], ...] = DEFAULT_PAIRS
    looks: Tuple[float, ...] = DEFAULT_LOOKS
    normalize_df: bool = True
    reference_mic: int = 0

    def __post_init__(self):
        LookDirectionSet(self.looks)
        if self.reference_mic < 0:
            raise ConfigError(
                f"reference_mic={self.reference_mic} must be non-negative"
            )


@dataclass(frozen=True)
class NetworkConfig:
    r"""Mask estimator sizes.

    Args:
        repeats (int, optional): Repeats of the dilated block stack. Defaults to 2.

        blocks (int, optional): Blocks per repeat, dilations :math:`1 \dots 2^{B-1}`.
            Defaults to 4.

        bottleneck (int, optional): Trunk channels. Defaults to 64.

        hidden (int, optional): Channels inside a block. Defaults to 128.

        kernel_size (int, optional): Depthwise kernel size. Defaults to 3.

        causal (bool, optional): Causal convolutions. Defaults to False.

        zero_init_head (bool, optional): Zero the mask head so untrained masks are 0.5.
            Defaults to False.
    """

    repeats: int = 2
    blocks: int = 4
    bottleneck: int = 64
    hidden: int = 128
    kernel_size: int = 3
    causal: bool = False
    zero_init_head: bool = False

    def __post_init__(self):
        for name in ("repeats", "blocks", "bottleneck", "hidden", "kernel_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"network.{name} must be positive")


@dataclass(frozen=True)
class KwsConfig:
    r"""Keyword spotter and attention fusion sizes.

    Args:
        regions (int, optional): Frequency regions of the weight-sharing convolution.
            Defaults to 8.

        kernels (int, optional): Kernels per region. Defaults to 8.

        kernel_size (int, optional): Kernel extent along frequency. Defaults to 4.

        dense (Tuple[int, ...], optional): Dense layer widths. Defaults to (64, 64).

        attention_dim (int, optional): Rows of the attention projection. Defaults
            to 128.
    """

    regions: int = 8
    kernels: int = 8
    kernel_size: int = 4
    dense: Tuple[int, ...] = (64, 64)
    attention_dim: int = 128

    def __post_init__(self):
        if min((self.regions, self.kernels, self.kernel_size, self.attention_dim)) < 1:
            raise ConfigError("kws sizes must be positive")
        if len(self.dense) == 0 or min(self.dense) < 1:
            raise ConfigError(f"kws.dense={self.dense} must list positive widths")


@dataclass(frozen=True)
class SimulationConfig:
    r"""Dataset recipe. Ranges are closed intervals sampled uniformly.

    Args:
        num_utterances (int, optional): Utterances to generate. Defaults to 100.

        duration_s (float, optional): Utterance length. Defaults to 2.

        positive_fraction (float, optional): Probability of a keyword target.
            Defaults to 0.5.

        max_interferers (int, optional): Interferers per utterance, 0 to 2.
            Defaults to 2.

        room_min (Tuple[float, float, float], optional): Smallest room.

        room_max (Tuple[float, float, float], optional): Largest room.

        t60_range (Tuple[float, float], optional): Reverberation times.

        anechoic (bool, optional): Force T60 = 0. Defaults to False.

        sir_range (Tuple[float, float], optional): SIR in dB. Defaults to (-12, 12).

        snr_range (Tuple[float, float], optional): SNR in dB, None for no point noise.
            Defaults to (12, 30).

        sensor_noise_snr_db (float, optional): Uncorrelated sensor noise, None for none.

        doa_centers_deg (Tuple[float, ...], optional): Source ``j`` is drawn around
            centre ``j mod len``; None for uniform azimuths.

        doa_spread_deg (float, optional): Half-width around the centres. Defaults to 0.

        min_source_distance_m (float, optional): Closest source. Defaults to 0.5.

        max_source_distance_m (float, optional): Farthest source. Defaults to 2.5.

        max_order (int, optional): Image order cap, None for the -60 dB rule.

        speech_dir (str, optional): Directory of mono 16 kHz background speech WAVs.

        keyword_dir (str, optional): Directory of mono 16 kHz keyword WAVs.
    """

    num_utterances: int = 100
    duration_s: float = 2.0
    positive_fraction: float = 0.5
    max_interferers: int = 2
    room_min: Tuple[float, float, float] = (3.0, 3.0, 2.5)
    room_max: Tuple[float, float, float] = (8.0, 10.0, 6.0)
    t60_range: Tuple[float, float] = (0.0, 0.6)
    anechoic: bool = False
    sir_range: Tuple[float, float] = (-12.0, 12.0)
    snr_range: Optional[Tuple[float, float]] = (12.0, 30.0)
    sensor_noise_snr_db: Optional[float] = None
    doa_centers_deg: Optional[Tuple[float, ...]] = None
    doa_spread_deg: float = 0.0
    min_source_distance_m: float = 0.5
    max_source_distance_m: float = 2.5
    max_order: Optional[int] = None
    speech_dir: Optional[str] = None
    keyword_dir: Optional[str] = None

    def __post_init__(self):
        if self.num_utterances < 1:
            raise ConfigError(f"num_utterances={self.num_utterances} must be positive")
        if self.duration_s <= 0:
            raise ConfigError(f"duration_s={self.duration_s} must be positive")
        if not 0 <= self.positive_fraction <= 1:
            raise ConfigError("positive_fraction must lie in [0, 1]")
        if not 0 <= self.max_interferers <= 2:
            raise ConfigError("max_interferers must lie in [0, 2]")
        if any(lo > hi or lo <= 0 for lo, hi in zip(self.room_min, self.room_max)):
            raise ConfigError(f"Room range {self.room_min}..{self.room_max} invalid")
        ranges = [("t60_range", self.t60_range), ("sir_range", self.sir_range)]
        if self.snr_range is not None:
            ranges.append(("snr_range", self.snr_range))
        for name, r in ranges:
            if len(r) != 2 or r[0] > r[1]:
                raise ConfigError(f"{name}={r} must be an ordered pair")
        if self.t60_range[0] < 0:
            raise ConfigError("t60_range must be non-negative")
        if not 0 < self.min_source_distance_m <= self.max_source_distance_m:
            raise ConfigError("Source distance range invalid")


@dataclass(frozen=True)
class TrainingConfig:
    r"""Optimisation settings shared by the trainers.

    Args:
        epochs (int, optional): Passes over the training split. Defaults to 30.

        batch_size (int, optional): Utterances per step. Defaults to 8.

        learning_rate (float, optional): Adam step size. Defaults to 1e-3.

        betas (Tuple[float, float], optional): Adam decay rates. Defaults to
            (0.9, 0.999).

        eps (float, optional): Adam denominator floor. Defaults to 1e-8.

        validation_fraction (float, optional): Held-out share of the manifest.
            Defaults to 0.1.

        mode (str, optional): Enhancement mode in {"mlenet", "dae"}.

        frontend (str, optional): Joint-training front-end in {"mlenet", "fbf"}.

        use_mic_channel (bool, optional): Fuse the reference microphone as channel
            K + 1. Defaults to True.

        freeze_frontend (bool, optional): Keep the front-end fixed during joint
            training. Defaults to False.

        aux_si_snr (bool, optional): Add the multi-look loss to the joint objective.
            Defaults to False.

        aux_weight (float, optional): Weight of the auxiliary loss. Defaults to 0.01.
    """

    epochs: int = 30
    batch_size: int = 8
    learning_rate: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    validation_fraction: float = 0.1
    mode: str = "mlenet"
    frontend: str = "mlenet"
    use_mic_channel: bool = True
    freeze_frontend: bool = False
    aux_si_snr: bool = False
    aux_weight: float = 0.01

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.validation_fraction < 1:
            raise ConfigError("validation_fraction must lie in [0, 1)")
        if self.mode not in ("mlenet", "dae"):
            raise ConfigError(f"training.mode={self.mode} not in (mlenet, dae)")
        if self.frontend not in ("mlenet", "fbf"):
            raise ConfigError(f"training.frontend={self.frontend} not in (mlenet, fbf)")


@dataclass(frozen=True)
class EvaluationConfig:
    r"""Evaluation protocol.

    Args:
        fa_budget (int, optional): Allowed false alarms on the negative set.
            Defaults to 1.

        sir_split_db (float, optional): Boundary between the low- and high-SIR buckets.
            Defaults to 6.
    """

    fa_budget: int = 1
    sir_split_db: float = 6.0

    def __post_init__(self):
        if self.fa_budget < 0:
            raise ConfigError(f"fa_budget={self.fa_budget} must be non-negative")


@dataclass(frozen=True)
class RunConfig:
    """Complete configuration of a run. ``seed`` is the default seed of the CLI and is
    not part of :func:`config_hash`."""

    array: ArrayConfig = field(default_factory=ArrayConfig)
    spatial: SpatialConfig = field(default_factory=SpatialConfig)
    stft: StftConfig = field(default_factory=StftConfig)
    fbank: FbankConfig = field(default_factory=FbankConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    kws: KwsConfig = field(default_factory=KwsConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    seed: int = 0

    def __post_init__(self):
        geometry = self.array.geometry()
        try:
            mic_pairs(geometry, self.spatial.pairs)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if self.spatial.reference_mic >= geometry.num_mics:
            raise ConfigError(
                f"reference_mic={self.spatial.reference_mic} outside array of "
                f"{geometry.num_mics} mics"
            )

    @property
    def geometry(self) -> ArrayGeometry:
        return self.array.geometry()

    @property
    def pairs(self):
        return mic_pairs(self.geometry, self.spatial.pairs)

    @property
    def looks(self) -> LookDirectionSet:
        return LookDirectionSet(self.spatial.looks)


def config_from_dict(data: Optional[dict]) -> RunConfig:
    """Build a :class:`RunConfig` from nested mappings.

    Args:
        data (dict): Parsed configuration; missing sections and keys take defaults.

    Raises:
        ConfigError: Unknown section or key, or a value failing validation.

    Returns:
        RunConfig: Validated configuration.
    """
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError("Configuration must be a mapping of sections")
    sections = {f.name: f for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - set(sections))
    if unknown:
        raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}")
    kwargs = {}
    try:
        for name, value in data.items():
            if name == "seed":
                kwargs[name] = _coerce(value, int, name)
                continue
            cls = sections[name].default_factory
            if not isinstance(value, dict):
                raise ConfigError(f"Section {name} must be a mapping")
            known = {f.name for f in dataclasses.fields(cls)}
            bad = sorted(set(value) - known)
            if bad:
                raise ConfigError(f"Unknown keys in {name}: {', '.join(bad)}")
            hints = get_type_hints(cls)
            kwargs[name] = cls(
                **{k: _coerce(v, hints[k], f"{name}.{k}") for k, v in value.items()}
            )
        return RunConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def load_config(path: Optional[Union[str, Path]]) -> RunConfig:
    """Load a YAML or JSON configuration file; None gives the defaults.

    Raises:
        ConfigError: Missing or malformed file.
    """
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file {path} does not exist")
    try:
        with open(path, "rt") as f:
            if path.suffix.lower() == ".json":
                data = json.load(f)
            else:
                data = yaml.safe_load(f)
    except (yaml.YAMLError, json.JSONDecodeError) as e:
        raise ConfigError(f"Config file {path} is not valid YAML/JSON: {e}") from e
    return config_from_dict(data)


def config_to_dict(cfg: RunConfig) -> dict:
    """Plain nested dictionary of a configuration (tuples become lists)."""
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def save_config(cfg: RunConfig, path: Union[str, Path]):
    """Write the configuration as canonical JSON."""
    with open(path, "wt") as f:
        f.write(json.dumps(config_to_dict(cfg), sort_keys=True, indent=2) + "\n")


HASH_SCOPES = {
    "run": None,
    "manifest": ("array", "simulation"),
    "model": ("array", "spatial", "stft", "fbank", "network", "kws"),
}


def config_hash(cfg: RunConfig, scope: str = "run") -> str:
    """First 16 hex characters of the SHA-256 of the canonical JSON of the sections
    an artifact depends on.

    ``"run"`` covers everything except ``seed`` and ``training.epochs`` and guards
    resumption, so a finished run may be continued with more epochs.
    ``"manifest"`` covers the sections that shape the simulated audio and
    ``"model"`` the network architecture, so trained checkpoints can be reused
    under other training or evaluation settings.

    Args:
        cfg (RunConfig): Configuration.

        scope (str, optional): One of ``HASH_SCOPES``. Defaults to "run".

    Raises:
        ValueError: Unknown scope.

    Returns:
        str: Configuration hash.
    """
    if scope not in HASH_SCOPES:
        raise ValueError(
            f"Hash scope {scope} not recognised. Should be one of "
            f"{', '.join(HASH_SCOPES)}."
        )
    data = config_to_dict(cfg)
    sections = HASH_SCOPES[scope]
    if sections is None:
        data.pop("seed")
        data["training"].pop("epochs")
    else:
        data = {k: data[k] for k in sections}
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _coerce(value, hint, name: str):
    """Convert a parsed YAML/JSON value to the annotated field type."""
    origin, args = get_origin(hint), get_args(hint)
    if origin is Union:
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError(f"{name} may not be null")
        (inner,) = [a for a in args if a is not type(None)]
        return _coerce(value, inner, name)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name}={value!r} must be a list")
        if len(args) == 2 and args[1] is Ellipsis:
            args = (args[0],) * len(value)
        if len(value) != len(args):
            raise ConfigError(f"{name}={value!r} must have {len(args)} entries")
        return tuple(
            _coerce(v, a, f"{name}[{i}]") for i, (v, a) in enumerate(zip(value, args))
        )
    if isinstance(value, bool) and hint is not bool:
        raise ConfigError(f"{name}={value!r} must be a {hint.__name__}")
    try:
        if hint is float:
            return float(value)
        if hint is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(f"{value} is not integral")
            return int(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name}={value!r} must be a {hint.__name__}") from e
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name}={value!r} must be true or false")
        return value
    if hint is str and not isinstance(value, str):
        raise ConfigError(f"{name}={value!r} must be a string")
    return value
