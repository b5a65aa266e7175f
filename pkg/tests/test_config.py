"""Strict TOML configuration loading."""

import math

import pytest

from scenemix import AppConfig, ConfigError
from scenemix.augment import Mode

FULL = """
[dataset]
root = "/data/objects"

[output]
dir = "runs/a"
log_level = "debug"

[placement]
delta = 0.1
noise_sigma = 0.02

[augment.single]
dropout_rate = 0.2

[augment.final_scene]
shift_range = 0.0

[compose]
target_points = 2048
subsample_method = "fps"

[refiner]
endpoint_url = "http://localhost:9999/v1/chat/completions"
model_name = "local-test"
api_key_env = "MY_REFINER_KEY"
max_retries = 5
temperature = 0.2

[batch]
batch_size = 16
alpha = 0.25
max_objects = 4
workers = 2
global_seed = 42

[loss]
init_temperature = 0.05
dynamic_budget = true

[train]
epochs = 3
lr = 0.01

[eval]
n_max = 3
reposition_method = "gradient"

[baselines]
mixup_matching = "random"
"""


class TestDefaults:
    def test_empty_dict_gives_library_defaults(self):
        cfg = AppConfig.from_dict({})
        assert cfg.dataset_root == "."
        assert cfg.target_points == 10000
        assert cfg.batch.alpha == 0.5
        assert cfg.loss.alpha == 0.5
        assert cfg.train.epochs == 30
        assert cfg.policies.single.yaw_range == pytest.approx(math.pi)
        assert cfg.policies.pre_compose.shift_range == 0.0
        assert cfg.refiner.endpoint_url == ""
        assert cfg.refiner.api_key_env == "REFINER_API_KEY"
        assert cfg.mixup_matching == "greedy"


class TestFullFile:
    def test_every_section_propagates(self, tmp_path):
        path = tmp_path / "app.toml"
        path.write_text(FULL)
        cfg = AppConfig.load(path)
        assert cfg.dataset_root == "/data/objects"
        assert cfg.output_dir == "runs/a" and cfg.log_level == "debug"
        assert cfg.placement.delta == 0.1 and cfg.placement.noise_sigma == 0.02
        assert cfg.policies.single.dropout_rate == 0.2
        assert cfg.policies.single.mode is Mode.SINGLE
        assert cfg.policies.final_scene.shift_range == 0.0
        # untouched policy fields keep their mode defaults
        assert cfg.policies.single.yaw_range == pytest.approx(math.pi)
        assert cfg.policies.pre_compose.tilt_range == pytest.approx(math.pi / 36)
        assert cfg.target_points == 2048 and cfg.subsample_method == "fps"
        assert cfg.batch.target_points == 2048  # compose budget feeds the batcher
        assert cfg.refiner.model_name == "local-test"
        assert cfg.refiner.api_key_env == "MY_REFINER_KEY"
        assert cfg.refiner.max_retries == 5 and cfg.refiner.temperature == 0.2
        assert cfg.batch.batch_size == 16 and cfg.batch.global_seed == 42
        assert cfg.loss.alpha == 0.25  # mirrored from batch.alpha
        assert cfg.loss.init_temperature == 0.05 and cfg.loss.dynamic_budget
        assert cfg.train.epochs == 3 and cfg.train.lr == 0.01
        assert cfg.eval.n_max == 3 and cfg.eval.reposition_method == "gradient"
        assert cfg.mixup_matching == "random"

    def test_secrets_stay_out_of_the_file(self):
        # only the *name* of the key's environment variable is configurable
        with pytest.raises(ConfigError, match="unknown config key 'refiner.api_key'"):
            AppConfig.from_dict({"refiner": {"api_key": "sk-anything"}})

    def test_alpha_lives_in_batch_not_loss(self):
        with pytest.raises(ConfigError, match="unknown config key 'loss.alpha'"):
            AppConfig.from_dict({"loss": {"alpha": 0.5}})


class TestRejections:
    @pytest.mark.parametrize("data, fragment", [
        ({"banana": {}}, "unknown config key 'banana'"),
        ({"batch": {"batchsize": 4}}, "unknown config key 'batch.batchsize'"),
        ({"augment": {"single": {"dropout": 0.1}}}, "'augment.single.dropout'"),
        ({"batch": {"batch_size": 1.5}}, "must be an integer"),
        ({"batch": {"workers": True}}, "must be an integer"),
        ({"placement": {"delta": "wide"}}, "must be a number"),
        ({"dataset": {"root": 3}}, "must be str"),
        ({"augment": "yes"}, "must be a table"),
        ({"compose": {"subsample_method": "voxel"}}, "subsample_method"),
        ({"baselines": {"mixup_matching": "hungarian"}}, "mixup_matching"),
        ({"output": {"log_level": "verbose"}}, "log_level"),
    ])
    def test_unknown_keys_and_wrong_types(self, data, fragment):
        with pytest.raises(ConfigError, match=fragment):
            AppConfig.from_dict(data)

    def test_invalid_values_become_config_errors(self):
        with pytest.raises(ConfigError):
            AppConfig.from_dict({"batch": {"alpha": 1.5}})
        with pytest.raises(ConfigError):
            AppConfig.from_dict({"eval": {"reposition_method": "newton"}})
        with pytest.raises(ConfigError, match="augment.single"):
            AppConfig.from_dict({"augment": {"single": {"scale_min": 1.5, "scale_max": 0.9}}})

    def test_bad_toml_reports_the_file(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("[batch\nbatch_size = 4\n")
        with pytest.raises(ConfigError, match="broken.toml"):
            AppConfig.load(path)

    def test_missing_file_raises_oserror(self, tmp_path):
        with pytest.raises(OSError):
            AppConfig.load(tmp_path / "nope.toml")
