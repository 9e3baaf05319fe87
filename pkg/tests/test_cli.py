import csv
import json

import pytest

from feat_video.cli import build_parser, main
from feat_video.config import config_keys, format_config, load_config, parse_config
from feat_video.training import TrainConfig

TOY = """
# tiny run
d = 16
n_triplets = 1
patch = 4
frames = 2
height = 16
width = 16
timesteps = 10
steps = 3
batch_size = 2
n_train = 4
n_val = 2
val_draws = 1
radius_min = 2
radius_max = 3   # trailing comment
flip = false
"""


def test_parse_config_types_and_comments():
    cfg = parse_config(TOY)
    assert cfg.model.d == 16 and cfg.model.timesteps == 10
    assert cfg.steps == 3 and cfg.flip is False
    assert cfg.radius_max == 3.0 and isinstance(cfg.radius_max, float)


@pytest.mark.parametrize(
    "text,msg", [("d 16", "expected 'key = value'"), ("dd = 1", "unknown key"), ("d = x", "expected int"), ("flip = maybe", "boolean")]
)
def test_parse_config_errors(text, msg):
    with pytest.raises(ValueError, match=msg):
        parse_config(text)


def test_format_round_trip(tmp_path):
    cfg = parse_config(TOY)
    path = tmp_path / "c.txt"
    path.write_text(format_config(cfg))
    assert load_config(path) == cfg
    assert set(config_keys()) == set(TrainConfig().to_dict())


def test_parser_has_all_subcommands():
    parser = build_parser()
    for cmd in ("train", "sample", "bench", "ablate", "gradcheck", "count"):
        args = parser.parse_args([cmd, "--seed", "3", "--out-dir", "o", "--checkpoint", "c"])
        assert args.command == cmd and args.seed == 3 and args.out_dir == "o"


def test_count(capsys):
    assert main(["count", "--preset", "S"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert 95e6 < info["params"] < 220e6
    assert info["flops"] < info["flops_quadratic_twin"]


def test_train_then_sample(tmp_path, capsys):
    cfg = tmp_path / "toy.txt"
    cfg.write_text(TOY)
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out-dir", str(run), "--seed", "2"]) == 0
    rows = list(csv.reader(open(run / "loss.csv")))
    assert rows[0] == ["step", "loss", "wall_ms"] and len(rows) == 4
    assert load_config(run / "config.txt").seed == 2

    out = tmp_path / "samples"
    ck = str(run / "checkpoint.npz")
    assert main(["sample", "--checkpoint", ck, "--out-dir", str(out), "--seed", "5", "-n", "2"]) == 0
    manifest = json.loads((out / "sample001_manifest.json").read_text())
    assert manifest["seed"] == 5 and manifest["shape"] == [2, 1, 16, 16]
    assert all((out / f).exists() for f in manifest["files"])
    first = (out / "sample000_f000.pgm").read_bytes()
    main(["sample", "--checkpoint", ck, "--out-dir", str(tmp_path / "again"), "--seed", "5", "-n", "2"])
    assert (tmp_path / "again" / "sample000_f000.pgm").read_bytes() == first


def test_sample_requires_checkpoint(capsys):
    assert main(["sample"]) == 2


def test_bench_writes_csv(tmp_path):
    assert main(["bench", "--sizes", "64,128", "--dim", "4", "--out-dir", str(tmp_path)]) == 0
    rows = list(csv.reader(open(tmp_path / "bench.csv")))
    assert rows[0] == ["kernel", "T", "D", "median_ns", "p10_ns", "p90_ns"]
    assert {r[0] for r in rows[1:]} <= {"wkv_scan", "channel_attention", "softmax_attention"}


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert "wkv_scan" in out and "FAIL" not in out
