import pytest

from dnsurgery.errors import ConfigError
from dnsurgery.surgery import Phase, TriggerSchedule, parse_config, parse_phases

TEXT = """
# surgery settings
base_lr = 0.1
lr_policy = inv        # Caffe-style
lr_gamma = 1e-4
lr_power = 0.75
max_iter = 300
batch_size = 32
trigger_gamma = 1e-3
trigger_power = 1
trigger_stop_iter = 200
seed = 9
c = 1.5
c.fc3 = 0.5
phases = fc1+fc2:100, all:200
"""


def test_parse_full():
    cfg = parse_config(TEXT)
    assert cfg.base_lr == 0.1 and cfg.lr_policy == "inv" and cfg.lr_power == 0.75
    assert cfg.max_iter == 300 and cfg.batch_size == 32 and cfg.seed == 9
    assert cfg.trigger == TriggerSchedule(1e-3, 1.0, 200)
    assert cfg.c_for("fc1") == 1.5 and cfg.c_for("fc3") == 0.5
    assert cfg.phases == [Phase(("fc1", "fc2"), 100), Phase(None, 200)]


def test_overrides():
    cfg = parse_config(TEXT, {"seed": 4})
    assert cfg.seed == 4


@pytest.mark.parametrize("text", [
    "bogus = 1",
    "base_lr 0.1",
    "max_iter = ten",
    "base_lr = -1",
    "max_iter = 10\nphases = all:5",
    "phases = fc1",
    "phases = fc1:x",
    "trigger_gamma = -1",
])
def test_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_phase_syntax():
    assert parse_phases("conv1+conv2:8000, fc1+fc2:8000") == [
        Phase(("conv1", "conv2"), 8000), Phase(("fc1", "fc2"), 8000)]
