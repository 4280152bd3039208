import pytest

from errors import ConfigError
from run_config import RunConfig, load_config, parse_config


def test_defaults():
    cfg = load_config(None)
    assert cfg.grid == 8 and cfg.max_len == 64 and cfg.T_prime == 100
    assert cfg.codec_config().width == 13
    assert cfg.voting_config().tau is None
    assert cfg.radii == (1.0, 2.0, 3.0)


def test_parse_with_comments_and_aliases():
    text = "# desk run\nK = 5\nlambda=0.1   # bit threshold\n\ndims=16,16,16\nzero_padding=true\ntau=2\n"
    cfg = parse_config(text)
    assert cfg.K == 5
    assert cfg.lam == 0.1
    assert cfg.dims == (16, 16, 16)
    assert cfg.zero_padding is True
    assert cfg.voting_config().tau == 2
    assert cfg.codec_config().lam == 0.1


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key 'bogus'"):
        parse_config("bogus=1\n")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("K=2\nK=3\n")


def test_missing_equals_rejected():
    with pytest.raises(ConfigError, match=":1:"):
        parse_config("K 2\n")


@pytest.mark.parametrize(
    "text",
    [
        "grid=6",
        "K=abc",
        "zero_padding=maybe",
        "T=1000\nT_prime=300",
        "K=200",
        "tau=20",
        "tau=many",
        "split=0.5,0.5,0.5",
        "hidden_dim=10",
        "connectivity=8",
        "radii=",
        "n_cases=0",
        "branch_prob=2",
    ],
)
def test_invalid_values_fail_at_load(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_text_round_trip():
    cfg = parse_config("K=7\nlambda=0.25\nsplit=0.8,0.1,0.1\nschedule_kind=linear\n")
    text = cfg.to_text()
    assert "lambda=0.25" in text
    assert parse_config(text) == cfg
    lines = text.splitlines()
    assert lines == sorted(lines)


def test_overrides_are_validated():
    cfg = RunConfig()
    assert cfg.with_overrides(seed=5).seed == 5
    with pytest.raises(ConfigError):
        cfg.with_overrides(K=0)


def test_load_from_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("epochs=3\n", encoding="ascii")
    assert load_config(path).epochs == 3
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_builders_share_dims():
    cfg = parse_config("dims=16,16,16\npool_size=4\n")
    assert cfg.denoiser_arch().dims == (16, 16, 16)
    assert cfg.tree_spec().dims == (16, 16, 16)
    assert cfg.train_config().learning_rate == 1e-3
