from pathlib import Path

import pytest

from vitcae.config import TrainConfig, dump_config, load_config, parse_config, save_config
from vitcae.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_empty_file_gives_desk_defaults(tmp_path):
    p = tmp_path / "empty.cfg"
    p.write_text("")
    cfg = load_config(p)
    assert cfg == TrainConfig()
    assert (cfg.image_h, cfg.patch_size, cfg.embed_dim, cfg.n_heads, cfg.n_layers) == (16, 4, 64, 4, 2)
    assert (cfg.d_global, cfg.d_local, cfg.batch_size) == (32, 8, 64)


def test_patch_size_must_divide_image():
    with pytest.raises(ConfigError, match="divid"):
        parse_config("image_h = 64\nimage_w = 64\npatch_size = 7\n")


@pytest.mark.parametrize("name", ["desk.cfg", "table2.cfg"])
def test_shipped_configs_round_trip(name, tmp_path):
    cfg = load_config(CONFIGS / name)
    assert parse_config(dump_config(cfg)) == cfg
    save_config(cfg, tmp_path / "again.cfg")
    assert load_config(tmp_path / "again.cfg") == cfg


def test_table_ii_values():
    cfg = load_config(CONFIGS / "table2.cfg")
    assert (cfg.image_h, cfg.patch_size, cfg.embed_dim, cfg.n_heads, cfg.n_layers) == (64, 8, 768, 12, 12)
    assert (cfg.d_global, cfg.d_local, cfg.batch_size, cfg.epochs, cfg.lr) == (256, 64, 512, 200, 1e-4)


def test_errors_name_the_key(tmp_path):
    with pytest.raises(ConfigError, match="unknown key 'colour'"):
        parse_config("colour = red\n")
    with pytest.raises(ConfigError, match="'batch_size'"):
        parse_config("batch_size = many\n")
    with pytest.raises(ConfigError, match="expected"):
        parse_config("just words\n")
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.cfg")
    with pytest.raises(ConfigError):
        parse_config("n_heads = 5\n")
    with pytest.raises(ConfigError):
        parse_config("mask_prob = 1.5\n")


def test_comments_booleans_and_overrides():
    cfg = parse_config("# header\ntemperature_schedule = off  # trailing\nmin_epoch = auto\n", seed=9)
    assert cfg.temperature_schedule is False and cfg.min_epoch is None and cfg.seed == 9
    assert cfg.freeze_policy().min_epoch == cfg.warmup_epochs + 1
    assert parse_config("min_epoch = 3\n").freeze_policy().min_epoch == 3
