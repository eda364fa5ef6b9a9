import json

import pytest

import src.transmodern as transmodern
from src.transmodern.config import _guess_key, check_type, convert_config, is_optional, load_into, read_document
from src.transmodern.errors import ConfigError, ConfigErrorInvalidType, ConfigErrorInvalidValue, ConfigErrorMissingKey
from src.transmodern.helpers import camel_to_snake, derive_seed

from .constants import EMPTY_FILE, ENCODER_FILE, PIPELINE_FILE, WRONG_TYPE_FILE


def test_camel_to_snake():
    assert camel_to_snake("EncoderConfig") == "encoder_config"
    assert camel_to_snake("HeadConfig") == "head_config"
    assert _guess_key("TrainConfig") == "train"
    assert _guess_key("PipelineConfig") == "pipeline"


def test_derive_seed_is_stable_and_named():
    assert derive_seed(0, "mask", 1, 3) == derive_seed(0, "mask", 1, 3)
    assert derive_seed(0, "mask", 1, 3) != derive_seed(0, "mask", 1, 4)
    assert derive_seed(0, "mask") != derive_seed(1, "mask")
    assert 0 <= derive_seed(123, "x") < 2**63


def test_check_type():
    assert check_type(3, int)
    assert not check_type("3", int)
    assert check_type(None, int | None)
    assert check_type([1, 2], list[int])
    assert not check_type(["1", 2], list[int])


def test_is_optional_and_convert():
    assert is_optional(int | None)
    assert is_optional(None)
    assert not is_optional(list[int])

    assert convert_config({"max-context": 8, "rope.theta": 1.0, "skip": None}) == {"max_context": 8, "rope_theta": 1.0}


def test_defaults_without_data():
    config = transmodern.EncoderConfig.load({})
    assert config == transmodern.EncoderConfig()
    assert config.hidden == 768
    assert config.layers == 22
    assert config.heads == 12
    assert config.intermediate == 1152
    assert config.vocab_size == 50280
    assert config.max_context == 8192
    assert config.global_every == 3
    assert config.local_window == 128
    assert config.rope_theta_global == 160_000.0
    assert config.rope_theta_local == 10_000.0
    assert config.mask_rate == 0.30

    assert transmodern.EncoderConfig.load(EMPTY_FILE) == transmodern.EncoderConfig()


def test_load_json_file():
    config = transmodern.EncoderConfig.load(ENCODER_FILE)
    assert config.hidden == 32
    assert config.head_dim == 8
    assert config.local_window == 8
    # unset keys keep their default
    assert config.rope_theta_local == 10_000.0


def test_load_nested_pipeline():
    config = transmodern.PipelineConfig.load(PIPELINE_FILE)
    assert config.out_dir == "runs/toy"
    assert config.source_vocab_size == 300
    assert config.ibm_iterations == 3
    assert config.seed == 7

    assert isinstance(config.encoder, transmodern.EncoderConfig)
    assert config.encoder.hidden == 32
    assert config.encoder.local_window == 16

    assert isinstance(config.train, transmodern.TrainConfig)
    assert config.train.stage1_steps == 20
    assert config.train.learning_rate == 0.001
    assert config.train.warmup == 2

    # not in the file: default factories
    assert config.source_train.stage2_steps == 0
    assert config.toy.topics == 2
    assert config.toy.nouns_per_topic == 12


def test_load_with_dotted_key():
    data = read_document(PIPELINE_FILE)
    encoder = load_into(transmodern.EncoderConfig, data, key="pipeline.encoder")
    assert encoder.max_context == 512

    train = transmodern.TrainConfig.load(PIPELINE_FILE, key="pipeline.train")
    assert train.batch_size == 4

    with pytest.raises(KeyError):
        transmodern.TrainConfig.load(PIPELINE_FILE, key="pipeline.missing")


def test_section_is_guessed_from_classname(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"encoder": {"layers": 1}, "train": {"batch_size": 2}}))

    assert transmodern.EncoderConfig.load(path).layers == 1
    assert transmodern.TrainConfig.load(path).batch_size == 2


def test_wrong_type():
    with pytest.raises(ConfigErrorInvalidType) as e:
        transmodern.EncoderConfig.load(WRONG_TYPE_FILE)

    assert isinstance(e.value, ConfigError)
    assert "hidden" in str(e.value)


def test_invalid_values():
    with pytest.raises(ConfigErrorInvalidValue):
        transmodern.EncoderConfig.load({"hidden": 30, "heads": 4})

    with pytest.raises(ConfigErrorInvalidValue):
        # head_dim 5 is odd
        transmodern.EncoderConfig(hidden=20, heads=4)

    with pytest.raises(ConfigErrorInvalidValue):
        transmodern.EncoderConfig(local_window=7)

    with pytest.raises(ConfigErrorInvalidValue):
        transmodern.TrainConfig(mask_token_fraction=0.5)

    with pytest.raises(ConfigErrorInvalidValue):
        transmodern.TrainConfig(stage1_context=128, stage2_context=64)

    with pytest.raises(ConfigErrorInvalidValue):
        transmodern.PipelineConfig(ibm_iterations=0)


def test_unknown_keys_warn():
    with pytest.warns(UserWarning, match="colour"):
        config = transmodern.TrainConfig.load({"colour": "red", "batch_size": 3})

    assert config.batch_size == 3


def test_missing_required_key():
    from dataclasses import dataclass

    @dataclass
    class NeedsName(transmodern.TypedConfig):
        name: str

    with pytest.raises(ConfigErrorMissingKey):
        NeedsName.load({"other": 1})


def test_to_dict_round_trip():
    config = transmodern.PipelineConfig.load(PIPELINE_FILE)
    data = config.to_dict()
    assert data["encoder"]["hidden"] == 32

    again = transmodern.PipelineConfig.load(data)
    assert again == config
