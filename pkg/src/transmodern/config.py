"""
Loads toml/json config files (or plain dicts) into the typed config dataclasses of this package.
"""

import dataclasses
import json
import logging
import types
import typing
import warnings
from collections import ChainMap
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from typeguard import TypeCheckError
from typeguard import check_type as _check_type

from .errors import ConfigErrorInvalidType, ConfigErrorMissingKey
from .helpers import camel_to_snake

logger = logging.getLogger(__name__)

T = typing.TypeVar("T")
# anything usable as an annotation
T_typelike: typing.TypeAlias = type | types.UnionType
# a config file path or already parsed data
T_data = str | Path | dict[str, typing.Any]
C = typing.TypeVar("C")

Type = typing.Type[typing.Any]


def _data_for_nested_key(key: str, raw: dict[str, typing.Any]) -> dict[str, typing.Any]:
    """
    Walk a dotted key (`pipeline.encoder`) down the parsed document.

    Example:
        key = pipeline.encoder
        raw = {"pipeline": {"encoder": {"hidden": 64}}}
        -> {"hidden": 64}
    """
    parts = key.split(".")
    while parts:
        raw = raw[parts.pop(0)]

    return raw


def _guess_key(clsname: str) -> str:
    """
    If no key is manually defined for `load_into`, the class' name is used to look for its section.

    EncoderConfig -> encoder, TrainConfig -> train
    """
    key = camel_to_snake(clsname)
    return key.removesuffix("_config")


def read_document(path: str | Path) -> dict[str, typing.Any]:
    """
    Read a .toml or .json config file into a dict.
    """
    path = Path(path)
    if path.suffix == ".json":
        with path.open("r", encoding="utf-8") as f:
            return typing.cast(dict[str, typing.Any], json.load(f))

    with path.open("rb") as f:
        return tomllib.load(f)


def _load_data(data: T_data, key: str = None, classname: str = None) -> dict[str, typing.Any]:
    """
    Pick the section a config class reads from: an explicit (dotted) key, the guessed class section, or everything.

    E.g. class EncoderConfig will be loaded from the [encoder] table when the document has one,
    and from the whole document otherwise.
    """
    if isinstance(data, (str, Path)):
        data = read_document(data)

    if not data:
        return {}

    if key:
        return _data_for_nested_key(key, data)

    if classname is not None:
        guess = _guess_key(classname)
        if isinstance(data.get(guess), dict):
            return typing.cast(dict[str, typing.Any], data[guess])

    # no section found, just return all data
    return data


def check_type(value: typing.Any, expected_type: T_typelike) -> bool:
    """
    Boolean form of typeguard's check_type: unions and parameterized generics included.
    """
    try:
        _check_type(value, expected_type)
        return True
    except TypeCheckError:
        return False


def ensure_types(data: dict[str, T], annotations: dict[str, type]) -> dict[str, T]:
    """
    Every loaded value must match its field annotation.
    """
    final: dict[str, T] = {}
    for key, _type in annotations.items():
        value = data[key]
        if not check_type(value, _type):
            raise ConfigErrorInvalidType(key, value=value, expected_type=_type)

        final[key] = value
    return final


def convert_config(items: dict[str, T]) -> dict[str, T]:
    """
    Normalize raw keys to field names (`vocab-size` -> `vocab_size`) and drop None values so defaults apply.
    """
    return {k.replace("-", "_").replace(".", "_"): v for k, v in items.items() if v is not None}


def is_custom_class(_type: Type) -> bool:
    """
    Returns whether _type is one of our config dataclasses (and not a builtin or typing construct).
    """
    return type(_type) is type and dataclasses.is_dataclass(_type)


def is_optional(_type: Type | None) -> bool:
    """
    Whether None is an acceptable value for `_type`.

    Examples:
        None -> True
        int | None -> True
        list[int] -> False
    """
    return _type is None or _type is types.NoneType or types.NoneType in typing.get_args(_type)


def _default_for(cls: Type, key: str) -> tuple[bool, typing.Any]:
    """
    Look up the dataclass default for a field, if it has one.
    """
    for fld in dataclasses.fields(cls):
        if fld.name != key:
            continue
        if fld.default is not dataclasses.MISSING:
            return True, fld.default
        if fld.default_factory is not dataclasses.MISSING:
            return True, fld.default_factory()
    return False, None


def load_recursive(cls: Type, data: dict[str, typing.Any], annotations: dict[str, Type]) -> dict[str, typing.Any]:
    """
    Fill in every field: nested config sections become config instances, absent fields take their default.

    Example:
        class EncoderConfig:
            hidden: int

        class PipelineConfig:
            encoder: EncoderConfig

        data = {"encoder": {"hidden": 64}}
        -> {"encoder": EncoderConfig(hidden=64)}
    """
    updated = {}
    for name, annotation in annotations.items():
        if name in data:
            value: typing.Any = data[name]
            if isinstance(value, dict):
                nested = [annotation] if is_custom_class(annotation) else typing.get_args(annotation)
                section = next((arg for arg in nested if is_custom_class(arg)), None)
                if section is not None:
                    value = load_into_recurse(section, value)
        else:
            has_default, value = _default_for(cls, name)
            if not has_default:
                if not is_optional(annotation):
                    raise ConfigErrorMissingKey(name, cls, annotation)
                value = None

        updated[name] = value

    return updated


def _all_annotations(cls: Type) -> ChainMap[str, Type]:
    """
    Resolved annotations of cls and its bases, nearest class first.
    """
    hints = typing.get_type_hints(cls)
    own = [c for c in getattr(cls, "__mro__", []) if "__annotations__" in c.__dict__]
    return ChainMap(*({k: hints[k] for k in c.__annotations__ if k in hints} for c in own))


def all_annotations(cls: Type) -> dict[str, Type]:
    """
    Annotations of the dataclass fields only.
    """
    names = {f.name for f in dataclasses.fields(cls)}
    return {k: v for k, v in _all_annotations(cls).items() if k in names}


def load_into_recurse(cls: typing.Type[C], data: dict[str, typing.Any]) -> C:
    """
    Build `cls` from one config section.

    Unknown keys are reported and skipped; nested sections load the same way; every value is type checked.
    """
    annotations = all_annotations(cls)

    to_load = convert_config(data)
    unknown = sorted(set(to_load) - set(annotations))
    if unknown:
        warnings.warn(f"Ignoring unknown config key(s) for {cls.__name__}: {', '.join(unknown)}")
        logger.warning("ignoring unknown config keys for %s: %s", cls.__name__, unknown)

    to_load = load_recursive(cls, to_load, annotations)
    to_load = ensure_types(to_load, annotations)
    return cls(**to_load)


def load_into(cls: typing.Type[C], data: T_data, /, key: str = None) -> C:
    """
    Load your config into a config dataclass.

    Args:
        cls: the config dataclass to instantiate.
        data: can be a dictionary or a path to a .toml/.json file to load (as pathlib.Path or str)
        key: optional (nested) dictionary key to load data from (e.g. 'pipeline.encoder')

    """
    to_load = _load_data(data, key, cls.__name__)
    return load_into_recurse(cls, to_load)


def config_to_dict(config: typing.Any) -> dict[str, typing.Any]:
    """
    Turn a (nested) config dataclass into plain json-compatible data.
    """
    return dataclasses.asdict(config)


class TypedConfig:
    """
    Mixin for config dataclasses: SomeConfig.load(data, ...) = load_into(SomeConfig, data, ...).
    """

    @classmethod
    def load(cls: typing.Type[C], data: T_data, key: str = None) -> C:
        """
        Load a class' config values from a dict or config file.
        """
        return load_into(cls, data, key=key)

    def to_dict(self) -> dict[str, typing.Any]:
        """
        Plain data mirror of this config, as written into checkpoints and reports.
        """
        return config_to_dict(self)
