import pytest

from emocog.config import parse_config_text, read_config
from emocog.errors import ConfigError


def test_parse_basic():
    text = """
# stage-1 run
seed = 7
batch-size=16
modalities = va
out = runs/a = b
"""
    assert parse_config_text(text) == {"seed": "7", "batch_size": "16", "modalities": "va", "out": "runs/a = b"}


@pytest.mark.parametrize("text,field", [
    ("seed 7", "<config>:1"),
    ("= 3", "<config>:1"),
    ("lr = 1\nlr = 2", "lr"),
    ("lr = 1\nlr-x = 2\nlr = 3", "lr"),
])
def test_parse_errors(text, field):
    with pytest.raises(ConfigError) as err:
        parse_config_text(text)
    assert err.value.field == field


def test_dash_and_underscore_collide():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("batch-size = 2\nbatch_size = 3")


def test_read_config(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("epochs = 3\n")
    assert read_config(p) == {"epochs": "3"}
    p.write_text("epochs\n")
    with pytest.raises(ConfigError, match="run.cfg:1"):
        read_config(p)
