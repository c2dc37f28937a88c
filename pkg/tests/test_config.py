import json

import pytest

from cpeal.config import ExperimentConfig, config_from_dict, load_config
from cpeal.errors import ConfigError


def test_default_round_trip():
    cfg = ExperimentConfig().validate()
    again = config_from_dict(json.loads(cfg.to_json()))
    assert again == cfg


def test_partial_config_fills_defaults():
    cfg = config_from_dict({"cycles": 3, "train": {"base_lr": 0.1}})
    assert cfg.cycles == 3 and cfg.train.base_lr == 0.1
    assert cfg.train.epochs == 200 and cfg.head.ctx == 16


def test_dataset_path_replaces_synth():
    cfg = config_from_dict({"dataset_path": "d.cpeb"})
    assert cfg.synth is None


@pytest.mark.parametrize("data,needle", [
    ({"cycels": 3}, "unknown field"),
    ({"train": {"epoch": 3}}, "train: unknown field"),
    ({"cycles": "3"}, "cycles: expected an integer"),
    ({"train": {"interw": 1}}, "train.interw: expected true/false"),
    ({"seeds": [0, "a"]}, "seeds[1]"),
    ({"strategies": []}, "non-empty"),
    ({"strategies": ["bald"]}, "unknown strategies"),
    ({"head": {"kind": "mlp"}}, "head.kind"),
    ({"cycles": 0}, "cycles"),
    ({"dataset_path": "x", "synth": {"num_classes": 2, "dim": 2, "per_class": 4, "class_separation": 1}},
     "exactly one"),
])
def test_bad_configs_name_the_field(data, needle):
    with pytest.raises(ConfigError, match=needle.replace("[", r"\[").replace("]", r"\]")):
        config_from_dict(data)


def test_json_error_reports_line_and_column(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{\n  "cycles": 3,\n  "seeds": [0,]\n}\n')
    with pytest.raises(ConfigError, match=r"c\.json:3:"):
        load_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.json")
