import pytest

from fisheyehdk.harness.config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    dumps_config,
    load_config,
    preset,
    save_config,
)


def test_defaults_validate():
    cfg = ExperimentConfig().validate()
    assert cfg.model.mode in ("none", "rdc", "hdk")


def test_toml_round_trip(tmp_path):
    cfg = preset("toy_f50")
    save_config(cfg, tmp_path / "c.toml")
    again = load_config(tmp_path / "c.toml")
    assert again.to_dict() == cfg.to_dict()
    assert again.hash() == cfg.hash()


def test_file_with_partial_tables(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('seed = 4\n\n[dataset]\nsize = 32\nf = 80\n\n[model]\nmode = "rdc"\n')
    cfg = load_config(path)
    assert cfg.seed == 4 and cfg.dataset.size == 32 and cfg.model.mode == "rdc"
    assert cfg.optim.epochs == ExperimentConfig().optim.epochs


def test_every_key_overridable():
    base = ExperimentConfig()
    for section, values in base.to_dict().items():
        if not isinstance(values, dict):
            continue
        for key in values:
            # each key accepts an override of its current value
            value = getattr(getattr(base, section), key)
            if value is None:
                continue
            text = dumps_config(base).split(f"[{section}]")[1].split("\n[")[0]
            line = next(l for l in text.splitlines() if l.startswith(f"{key} = "))
            out = apply_overrides(base, [f"{section}.{key}={line.split(' = ', 1)[1]}"])
            assert getattr(getattr(out, section), key) == value


def test_override_values():
    cfg = load_config("preset:toy_f50", ["model.mode=none", "optim.epochs=3", "dataset.f=120",
                                         "model.channels=[8, 8]", "seed=9", "out=elsewhere"])
    assert cfg.model.mode == "none" and cfg.optim.epochs == 3 and cfg.seed == 9
    assert cfg.dataset.f == 120.0 and isinstance(cfg.dataset.f, float)
    assert cfg.model.channels == [8, 8] and cfg.out == "elsewhere"


@pytest.mark.parametrize("bad", ["model.nope=1", "nosuch.key=1", "epochs", "seed.x=1"])
def test_bad_override(bad):
    with pytest.raises(ConfigError):
        load_config(None, [bad])


@pytest.mark.parametrize("bad", [
    "model.mode=\"fancy\"", "dataset.f=-3", "model.channels=[]", "optim.momentum=1.0",
    "dataset.size=30", "model.connectivity=6", "optim.epochs=0", "model.deformable_layers=[5]",
    "optim.lr_encoder=0", "dataset.coeffs=[-1.0, 0.0, 0.0, 0.0]", "compare.modes=[\"x\"]",
])
def test_validation(bad):
    with pytest.raises(ConfigError):
        load_config(None, [bad])


def test_unknown_key_in_file(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[model]\nflavour = 1\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_malformed_file(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[model\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset("huge")


def test_placement_selects_layers():
    cfg = load_config(None, ["model.channels=[4, 4, 4, 4]", "model.placement=\"last\"", "model.num_deformable=2"])
    assert list(cfg.model.layers()) == [2, 3]
    cfg = load_config(None, ["model.channels=[4, 4, 4, 4]", "model.placement=\"first\"", "model.num_deformable=3"])
    assert list(cfg.model.layers()) == [0, 1, 2]


def test_toy_preset_within_budget():
    cfg = preset("toy_f50")
    assert cfg.dataset.size <= 96
    assert cfg.optim.epochs + cfg.optim.pretrain_epochs <= 20
    assert cfg.dataset.f == 50.0 and len(cfg.compare.seeds) >= 5


def test_estimator_params_round_trip():
    from fisheyehdk.harness.segmenter import FisheyeSegmenter

    cfg = preset("toy_f50")
    est = FisheyeSegmenter(**cfg.estimator_params(seed=3))
    assert est.random_state == 3 and est.mode == "hdk" and est.num_classes == 4


def test_shipped_configs_load():
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent / "configs"
    assert load_config(root / "toy_f50.toml").to_dict() == preset("toy_f50").to_dict()
    load_config(root / "quick.toml")


@pytest.mark.parametrize("name,layers", [("first_l1", [0]), ("first_l3", [0, 1, 2]),
                                         ("last_l1", [3]), ("last_l3", [1, 2, 3])])
def test_placement_presets(name, layers):
    cfg = preset(name)
    assert list(cfg.model.layers()) == layers
    assert cfg.estimator_params()["deformable_layers"] == tuple(layers)
