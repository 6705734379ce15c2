""" Functionality relating to configuration of the comer package.

Configuration files are flat TOML documents (one level of sections, no nesting):

    preset = "toy"

    [model]
    d_model = 64
    coverage = "fusion"

    [training]
    lr = 0.02

Every key is declared by one of the section classes below. Unknown sections and keys
  are rejected so that a typo in an ablation config cannot silently fall back to a
  default value.
"""
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, NamedTuple, Optional, Type, Union

import tomlkit
from tomlkit.exceptions import TOMLKitError

from .constants import CONFIG_FILE_NAME
from .errors import ConfigError, ConfigTypeError

PathType = Union[Path, str]

PRESETS = ("toy", "paper")
DEFAULT_PRESET = "toy"
COVERAGE_MODES = ("none", "self", "cross", "fusion")
PRECISIONS = ("single", "double")


class _Field(NamedTuple):
    """Declaration of a single configuration key.

    Args:
        type_: The expected python type of the value.
        toy: Default value under the "toy" preset.
        paper: Default value under the "paper" preset.
        check: Optional predicate the value must satisfy.
        requirement: Human-readable description of ``check`` used in error messages.
    """

    type_: type
    toy: Any
    paper: Any
    check: Optional[Callable[[Any], bool]] = None
    requirement: str = ""

    def default(self, preset: str) -> Any:
        """The default value for the given preset."""
        return self.toy if preset == "toy" else self.paper


def _positive(value: Any) -> bool:
    return value > 0


def _non_negative(value: Any) -> bool:
    return value >= 0


def _probability(value: Any) -> bool:
    return 0 <= value < 1


def _positive_odd(value: Any) -> bool:
    return value > 0 and value % 2 == 1


class _Section:
    """Base class of the configuration sections.

    Child classes declare ``section`` (the TOML table name) and ``fields``
      (a mapping of key to ``_Field``). Cross-field constraints are added by
      overriding ``_validate_relations``.
    """

    section: str = ""
    fields: Dict[str, _Field] = {}

    def __init__(self, preset: str = DEFAULT_PRESET, **values: Any):
        """
        Args:
            preset: The name of the preset providing default values.
            values: Explicit values, overriding the preset defaults.

        Raises:
            ConfigError: If an undeclared key is provided.
        """
        unknown = sorted(set(values) - set(self.fields))
        if unknown:
            raise ConfigError(
                f"Unknown key(s) in the [{self.section}] configuration: "
                f"{', '.join(unknown)}; "
                f"Expected one of: {', '.join(self.fields)}"
            )
        for key, field in self.fields.items():
            setattr(self, key, values.get(key, field.default(preset)))
        self._validate()

    def _validate(self) -> None:
        """Validates the configuration.

        Raises:
            ConfigError: If a configuration has an invalid value.
            ConfigTypeError: If a configuration has an invalid type.
        """
        for key, field in self.fields.items():
            value = getattr(self, key)
            # Integers are accepted where floats are expected (i.e. "lr = 1").
            is_bool = isinstance(value, bool)
            if field.type_ is float and isinstance(value, int) and not is_bool:
                value = float(value)
            if not isinstance(value, field.type_) or (is_bool and field.type_ is not bool):
                raise ConfigTypeError(
                    f"Expected a {field.type_.__name__} value for the "
                    f"{self.section}.{key} configuration; Found: {value!r}"
                )
            value = field.type_(value)  # Convert from tomlkit type.
            if field.check is not None and not field.check(value):
                raise ConfigError(
                    f"The {self.section}.{key} configuration must be {field.requirement}; "
                    f"Found: {value!r}"
                )
            setattr(self, key, value)
        self._validate_relations()

    def _validate_relations(self) -> None:
        """Hook for constraints that involve more than one key."""

    def as_dict(self) -> Dict[str, Any]:
        """All declared keys mapped to their current values."""
        return {key: getattr(self, key) for key in self.fields}

    def __eq__(self, other: Any) -> bool:
        """Check equality."""
        return isinstance(other, type(self)) and (self.as_dict() == other.as_dict())

    def __repr__(self) -> str:
        """Human-readable representation."""
        values = ", ".join(f"{key}={value!r}" for key, value in self.as_dict().items())
        return f"{type(self).__name__}({values})"


class DecoderConfig(_Section):
    """The ``[model]`` section: transformer decoder and coverage wiring."""

    section = "model"
    fields = {
        "d_model": _Field(int, 64, 256, _positive, "positive"),
        "heads": _Field(int, 4, 8, _positive, "positive"),
        "d_ff": _Field(int, 128, 1024, _positive, "positive"),
        "num_layers": _Field(int, 3, 3, _positive, "positive"),
        "dropout": _Field(float, 0.1, 0.3, _probability, "in [0, 1)"),
        "coverage": _Field(
            str, "fusion", "fusion", COVERAGE_MODES.__contains__, f"one of {COVERAGE_MODES}"
        ),
        "arm_start_layer": _Field(int, 2, 2, _positive, "positive"),
        "arm_shared": _Field(bool, True, True),
        "scale_embedding": _Field(bool, True, True),
        "pe_temperature": _Field(float, 10000.0, 10000.0, _positive, "positive"),
    }

    d_model: int
    heads: int
    d_ff: int
    num_layers: int
    dropout: float
    coverage: str
    arm_start_layer: int
    arm_shared: bool
    scale_embedding: bool
    pe_temperature: float

    def _validate_relations(self) -> None:
        if self.d_model % self.heads:
            raise ConfigError(
                f"The model.d_model configuration must be divisible by model.heads; "
                f"Found: {self.d_model} and {self.heads}"
            )
        if self.d_model % 4:
            raise ConfigError(
                f"The model.d_model configuration must be divisible by 4 "
                f"(2D positional encoding); Found: {self.d_model}"
            )
        if self.coverage != "none" and self.arm_start_layer < 2:
            raise ConfigError(
                "The model.arm_start_layer configuration must be at least 2 when "
                f"coverage is enabled; Found: {self.arm_start_layer}"
            )
        if self.coverage in ("cross", "fusion") and self.num_layers < 2:
            raise ConfigError(
                f"The {self.coverage} coverage mode requires model.num_layers >= 2; "
                f"Found: {self.num_layers}"
            )


class EncoderConfig(_Section):
    """The ``[encoder]`` section: the DenseNet backbone."""

    section = "encoder"
    fields = {
        "num_blocks": _Field(int, 2, 3, _positive, "positive"),
        "layers_per_block": _Field(int, 3, 16, _positive, "positive"),
        "growth_rate": _Field(int, 8, 24, _positive, "positive"),
        "transition_factor": _Field(float, 0.5, 0.5, lambda v: 0 < v <= 1, "in (0, 1]"),
        "bottleneck_factor": _Field(int, 4, 4, _positive, "positive"),
        "dropout": _Field(float, 0.1, 0.2, _probability, "in [0, 1)"),
        "stem_kernel": _Field(int, 3, 7, _positive_odd, "a positive odd number"),
        "stem_stride": _Field(int, 2, 2, _positive, "positive"),
        "stem_pool": _Field(bool, False, True),
        "trailing_transition": _Field(bool, True, False),
    }

    num_blocks: int
    layers_per_block: int
    growth_rate: int
    transition_factor: float
    bottleneck_factor: int
    dropout: float
    stem_kernel: int
    stem_stride: int
    stem_pool: bool
    trailing_transition: bool

    @property
    def num_transitions(self) -> int:
        """Transitions sit between blocks, plus one after the last block if configured."""
        return self.num_blocks - 1 + int(self.trailing_transition)

    @property
    def total_stride(self) -> int:
        """The total downsampling factor from image pixels to feature cells."""
        return self.stem_stride * (2 if self.stem_pool else 1) * 2 ** self.num_transitions


class ArmConfig(_Section):
    """The ``[arm]`` section: the attention refinement module and normalization."""

    section = "arm"
    fields = {
        "kernel_size": _Field(int, 5, 5, _positive_odd, "a positive odd number"),
        "channels": _Field(int, 16, 32, _positive, "positive"),
        "norm_eps": _Field(float, 1e-5, 1e-5, _positive, "positive"),
        "norm_momentum": _Field(float, 0.1, 0.1, lambda v: 0 < v <= 1, "in (0, 1]"),
    }

    kernel_size: int
    channels: int
    norm_eps: float
    norm_momentum: float


class TrainConfig(_Section):
    """The ``[training]`` section."""

    section = "training"
    fields = {
        "lr": _Field(float, 0.02, 0.08, _non_negative, "non-negative"),
        "momentum": _Field(float, 0.9, 0.9, lambda v: 0 <= v < 1, "in [0, 1)"),
        "weight_decay": _Field(float, 1e-4, 1e-4, _non_negative, "non-negative"),
        "epochs": _Field(int, 20, 300, _non_negative, "non-negative"),
        "batch_size": _Field(int, 16, 8, _positive, "positive"),
        "seed": _Field(int, 0, 0, _non_negative, "non-negative"),
        "precision": _Field(
            str, "single", "single", PRECISIONS.__contains__, "single/double"
        ),
        "augment": _Field(bool, True, True),
        "scale_min": _Field(float, 0.7, 0.7, _positive, "positive"),
        "scale_max": _Field(float, 1.4, 1.4, _positive, "positive"),
        "val_fraction": _Field(float, 0.1, 0.1, lambda v: 0 <= v < 1, "in [0, 1)"),
        "val_beam": _Field(int, 1, 1, _positive, "positive"),
    }

    lr: float
    momentum: float
    weight_decay: float
    epochs: int
    batch_size: int
    seed: int
    precision: str
    augment: bool
    scale_min: float
    scale_max: float
    val_fraction: float
    val_beam: int

    def _validate_relations(self) -> None:
        if self.scale_min > self.scale_max:
            raise ConfigError(
                "The training.scale_min configuration must not exceed training.scale_max; "
                f"Found: {self.scale_min} > {self.scale_max}"
            )


class GrammarConfig(_Section):
    """The ``[dataset]`` section: formula grammar and glyph rendering."""

    section = "dataset"
    fields = {
        "n": _Field(int, 2000, 2000, _positive, "positive"),
        "seed": _Field(int, 0, 0, _non_negative, "non-negative"),
        "min_length": _Field(int, 1, 1, _positive, "positive"),
        "max_length": _Field(int, 30, 30, _positive, "positive"),
        "uniform_fraction": _Field(float, 0.5, 0.5, lambda v: 0 <= v <= 1, "in [0, 1]"),
        "short_mean": _Field(float, 6.0, 6.0, _positive, "positive"),
        "script_prob": _Field(float, 0.2, 0.2, _probability, "in [0, 1)"),
        "paren_prob": _Field(float, 0.1, 0.1, _probability, "in [0, 1)"),
        "operator_prob": _Field(float, 0.5, 0.5, lambda v: 0 <= v <= 1, "in [0, 1]"),
        "max_depth": _Field(int, 2, 2, lambda v: 0 <= v <= 2, "in [0, 2]"),
        "tile_size": _Field(int, 16, 16, lambda v: v >= 4, "at least 4"),
        "margin": _Field(int, 4, 4, _non_negative, "non-negative"),
        "gap": _Field(int, 2, 2, _non_negative, "non-negative"),
        "jitter": _Field(int, 2, 2, _non_negative, "non-negative"),
        "atlas_seed": _Field(int, 7, 7, _non_negative, "non-negative"),
    }

    n: int
    seed: int
    min_length: int
    max_length: int
    uniform_fraction: float
    short_mean: float
    script_prob: float
    paren_prob: float
    operator_prob: float
    max_depth: int
    tile_size: int
    margin: int
    gap: int
    jitter: int
    atlas_seed: int

    def _validate_relations(self) -> None:
        if self.min_length > self.max_length:
            raise ConfigError(
                "The dataset.min_length configuration must not exceed dataset.max_length; "
                f"Found: {self.min_length} > {self.max_length}"
            )
        if self.margin < self.jitter:
            raise ConfigError(
                "The dataset.margin configuration must be at least dataset.jitter; "
                f"Found: {self.margin} < {self.jitter}"
            )


class SearchConfig(_Section):
    """The ``[search]`` section: beam search and evaluation."""

    section = "search"
    fields = {
        "beam_size": _Field(int, 10, 10, _positive, "positive"),
        "max_len": _Field(
            int, 0, 0, _non_negative, "non-negative (0 derives it from data)"
        ),
        "long_threshold": _Field(int, 15, 15, _positive, "positive"),
        "joint": _Field(bool, True, True),
    }

    beam_size: int
    max_len: int
    long_threshold: int
    joint: bool


SECTIONS: Dict[str, Type[_Section]] = {
    cls.section: cls
    for cls in (
        DecoderConfig, EncoderConfig, ArmConfig, TrainConfig, GrammarConfig, SearchConfig
    )
}


class RunConfig:
    """The merged configuration of a run: every section, from file and flag overrides."""

    def __init__(self, preset: str = DEFAULT_PRESET, **sections: Dict[str, Any]):
        """
        Args:
            preset: The preset ("toy" or "paper") supplying defaults.
            sections: Mapping of section name to the explicitly configured values.

        Raises:
            ConfigError: If the preset, a section name or a key is unknown.
        """
        if preset not in PRESETS:
            raise ConfigError(
                f"The preset configuration must be one of {PRESETS}; Found: {preset!r}"
            )
        unknown = sorted(set(sections) - set(SECTIONS))
        if unknown:
            raise ConfigError(
                f"Unknown configuration section(s): {', '.join(unknown)}; "
                f"Expected one of: {', '.join(SECTIONS)}"
            )
        self.preset = preset
        self.model = DecoderConfig(preset, **sections.get("model", dict()))
        self.encoder = EncoderConfig(preset, **sections.get("encoder", dict()))
        self.arm = ArmConfig(preset, **sections.get("arm", dict()))
        self.training = TrainConfig(preset, **sections.get("training", dict()))
        self.dataset = GrammarConfig(preset, **sections.get("dataset", dict()))
        self.search = SearchConfig(preset, **sections.get("search", dict()))

    @classmethod
    def from_toml(cls, file: PathType) -> "RunConfig":
        """Create a RunConfig object by parsing a TOML configuration file.

        Args:
            file: The path to the configuration file.

        Raises:
            ConfigError: If the file cannot be read or parsed.
        """
        try:
            document = tomlkit.parse(Path(file).read_text())
        except (TOMLKitError, OSError) as error:
            raise ConfigError(
                f"Cannot read the configuration file {file}: {error}"
            ) from error
        contents = dict(document.value if hasattr(document, "value") else document)
        preset = str(contents.pop("preset", DEFAULT_PRESET))
        for key, value in contents.items():
            if not isinstance(value, dict):
                raise ConfigError(
                    f"Only the 'preset' key may appear outside a section; Found: {key}"
                )
        return cls(preset, **{key: dict(value) for key, value in contents.items()})

    @classmethod
    def from_preset(cls, name: str) -> "RunConfig":
        """Create a RunConfig object holding only the defaults of a preset."""
        return cls(name)

    def as_dict(self) -> Dict[str, Dict[str, Any]]:
        """Section name mapped to that section's keys and values."""
        return {name: getattr(self, name).as_dict() for name in SECTIONS}

    def with_overrides(self, overrides: Iterable[str]) -> "RunConfig":
        """Return a new RunConfig with ``section.key=value`` overrides applied.

        Values are parsed as TOML scalars, falling back to plain strings
          (so ``model.coverage=self`` needs no quoting).

        Raises:
            ConfigError: If an override is malformed or names an unknown key.
        """
        values = self.as_dict()
        for override in overrides:
            target, separator, raw = override.partition("=")
            section, dot, key = target.strip().partition(".")
            if not (separator and dot and key):
                raise ConfigError(
                    f"Overrides must have the form section.key=value; Found: {override!r}"
                )
            if section not in values:
                raise ConfigError(f"Unknown configuration section in override: {section}")
            values[section][key] = _parse_scalar(raw.strip())
        return RunConfig(self.preset, **values)

    def to_toml(self) -> str:
        """Serialize every section (explicit values, not only overrides) to TOML."""
        document = tomlkit.document()
        document.add("preset", self.preset)
        for name, values in self.as_dict().items():
            table = tomlkit.table()
            for key, value in values.items():
                table.add(key, value)
            document.add(name, table)
        return tomlkit.dumps(document)

    def write(self, file: Path) -> None:
        """Write the configuration to a TOML file."""
        file.write_text(self.to_toml())

    def __eq__(self, other: Any) -> bool:
        """Check equality."""
        return isinstance(other, type(self)) and self.as_dict() == other.as_dict()

    def __repr__(self) -> str:
        """Human-readable representation."""
        return f"RunConfig(preset={self.preset!r}, {self.as_dict()!r})"


def _parse_scalar(raw: str) -> Any:
    """Parse a TOML scalar, returning the raw string if it is not valid TOML."""
    try:
        return tomlkit.parse(f"value = {raw}")["value"]
    except TOMLKitError:
        return raw


def find_config(source: PathType) -> Optional[Path]:
    """Travel up the tree of the provided source, looking for a comer.toml file.

    Args:
        source: A path to the source from which to start the search.

    Returns:
        Path to the comer.toml file, if found, else None.
    """
    source = Path(source)
    haystack = [source, *source.parents] if source.is_dir() else source.parents
    for directory in haystack:
        needle = directory / CONFIG_FILE_NAME
        if needle.exists():
            return needle
    else:
        return None


def load_config(
    file: Optional[PathType] = None, overrides: Optional[List[str]] = None
) -> RunConfig:
    """Load a RunConfig from an explicit file, else a discovered comer.toml, else defaults.

    Args:
        file: Optional path to a configuration file.
        overrides: Optional ``section.key=value`` overrides applied last.
    """
    if file is None:
        file = find_config(Path.cwd())
    config = RunConfig.from_toml(file) if file is not None else RunConfig()
    return config.with_overrides(overrides or [])
