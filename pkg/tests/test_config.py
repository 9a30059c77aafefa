import json

import pytest

from crossadapt.config import (
    DESK_BATCH_SIZE,
    Profile,
    RunConfig,
    apply_overrides,
    load_config,
    sweep_configs,
    validate_config,
)
from crossadapt.errors import ConfigError
from crossadapt.transfer.offline import TrainerMode


def _write(tmp_path, data) -> str:
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return str(path)


def test_defaults_follow_published_settings():
    cfg = load_config()
    assert cfg.distill.lam == 0.7
    assert cfg.distill.temperature == 4.0
    assert cfg.distill.batch_size == 4096
    assert cfg.online.tau == 10
    assert cfg.sampling.r == 0.1 and cfg.sampling.r_pos == 0.5 and cfg.sampling.K == 10
    assert cfg.shift.theta_low == 0.01 and cfg.shift.theta_high == 0.05
    assert cfg.shift.n_windows == 10
    assert cfg.data.ratio == [4, 4, 1, 1]
    assert cfg.mode == TrainerMode.CROSSADAPT_SAMPLE


def test_desk_profile_shrinks_batches():
    cfg = load_config(profile=Profile.DESK)
    assert cfg.distill.batch_size == DESK_BATCH_SIZE
    assert cfg.online.batch_size == DESK_BATCH_SIZE
    assert cfg.teacher_training.batch_size == DESK_BATCH_SIZE
    assert cfg.distill.lam == 0.7


def test_overrides_parse_json_values():
    cfg = load_config(
        overrides=["distill.lambda=0.2", "online.tau=5", "seeds=[1, 2]", "mode=crossadapt"]
    )
    assert cfg.distill.lam == 0.2
    assert cfg.online.tau == 5
    assert cfg.seeds == [1, 2]
    assert cfg.mode == TrainerMode.CROSSADAPT_SAMPLE


def test_override_applies_after_profile():
    cfg = load_config(profile="desk", overrides=["online.batch_size=64"])
    assert cfg.online.batch_size == 64
    assert cfg.distill.batch_size == DESK_BATCH_SIZE


@pytest.mark.parametrize(
    "override", ["distill.nope=1", "nope=1", "distill.lambda=-1", "online.tau", "seeds=[]"]
)
def test_bad_overrides_raise_config_error(override):
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), [override])


def test_config_file(tmp_path):
    path = _write(tmp_path, {"distill": {"lambda": 0.5}, "seeds": [7]})
    cfg = load_config(path)
    assert cfg.distill.lam == 0.5
    assert cfg.seeds == [7]


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError, match="unknown_section"):
        load_config(_write(tmp_path, {"unknown_section": {}}))


def test_for_seed_sets_every_seed():
    cfg = RunConfig().for_seed(3)
    assert cfg.seeds == [3]
    assert cfg.distill.seed == cfg.sampling.seed == cfg.online.seed == 3
    assert RunConfig().distill.seed == 0


def test_snapshot_round_trip():
    cfg = load_config(overrides=["distill.lambda=0.3", "ablations.no_projection=true"])
    again = validate_config(json.loads(cfg.snapshot()))
    assert again == cfg
    assert again.ablations.active() == ["no_projection"]


def test_sweep_configs_override_one_setting():
    cfg = apply_overrides(RunConfig(), ["sweep.parameter=lambda", "sweep.values=[0.1, 0.9]"])
    swept = sweep_configs(cfg)
    assert [value for value, _ in swept] == [0.1, 0.9]
    for value, one in swept:
        assert one.sweep is None
        assert one.distill.lam == value
        assert one.online.lam == value
        assert one.sampling.r == cfg.sampling.r
    assert cfg.distill.lam == 0.7


def test_sweep_over_metric_and_ratio():
    cfg = validate_config({"sweep": {"parameter": "metric", "values": ["kl", "wasserstein"]}})
    assert [c.shift.metric.value for _, c in sweep_configs(cfg)] == ["kl", "wasserstein"]
    cfg = validate_config({"sweep": {"parameter": "r", "values": [0.05, 0.2]}})
    assert [c.sampling.r for _, c in sweep_configs(cfg)] == [0.05, 0.2]


def test_sweep_errors():
    with pytest.raises(ConfigError):
        sweep_configs(RunConfig())
    with pytest.raises(ConfigError):
        validate_config({"sweep": {"parameter": "tau", "values": [1]}})
    with pytest.raises(ConfigError):
        validate_config({"sweep": {"parameter": "r", "values": []}})
    bad_value = validate_config({"sweep": {"parameter": "r", "values": [2.0]}})
    with pytest.raises(ConfigError):
        sweep_configs(bad_value)
