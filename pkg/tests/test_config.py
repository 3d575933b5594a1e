import pytest

from gancompress.config import ConfigError, TrainConfig, apply_overrides, config_from_dict, load_config


def test_defaults():
    c = TrainConfig().validate()
    assert (c.phase1_epochs, c.phase2_epochs, c.lr0, c.decay_start, c.n_decom) == (80, 60, 2e-4, 30, 9)
    assert c.weights.beta == 10 and c.weights.gamma == 0.005
    assert c.betas == (0.5, 0.999) and c.reset_optimizer


def test_round_trip_and_hash(tmp_path):
    c = config_from_dict(dict(seed=5, dataset=dict(kind="synth", n=8)))
    path = tmp_path / "c.yaml"
    path.write_text(c.dump())
    again = load_config(path)
    assert again == c and again.hash() == c.hash()
    assert c.replace(seed=6).hash() != c.hash()


@pytest.mark.parametrize("data,field", [
    (dict(decay_start=90), "decay_start"),
    (dict(phase2_epochs=0), "phase2_epochs"),
    (dict(lr0=0), "lr0"),
    (dict(resolution=30), "resolution"),
    (dict(extractor="alexnet"), "extractor"),
    (dict(bogus=1), "bogus"),
    (dict(dataset=dict(kind="imagenet")), "dataset.kind"),
    (dict(augment="yes"), "augment"),
    (dict(batch_size=1.5), "batch_size"),
    (dict(betas=[0.5]), "betas"),
])
def test_validation_reports_field(data, field):
    with pytest.raises(ConfigError) as exc:
        config_from_dict(data)
    assert exc.value.path == field


def test_overrides_ignore_none():
    c = apply_overrides(TrainConfig(), seed=3, n_decom=None)
    assert c.seed == 3 and c.n_decom == 9
    with pytest.raises(ConfigError):
        apply_overrides(TrainConfig(), n_decom=0)


def test_bad_yaml(tmp_path):
    path = tmp_path / "x.yaml"
    path.write_text("a: [1,\n")
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text("- 1\n")
    with pytest.raises(ConfigError):
        load_config(path)
