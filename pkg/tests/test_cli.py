import csv
import gzip
import struct

import numpy as np
import pytest

from ghostconv import cli
from ghostconv.arch import LayerSpec, NetworkSpec, build_ghostnet, load_spec, save_spec
from ghostconv.data import read_idx, write_pnm

L = LayerSpec.make


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_build_ghostnet(tmp_path, capsys):
    path = tmp_path / "g.txt"
    code, _, _ = run(capsys, "build", "--arch", "ghostnet", "--alpha", "1.0", "--out", path)
    assert code == 0
    assert load_spec(path) == build_ghostnet(1.0)


def test_build_to_stdout(capsys):
    code, out, _ = run(capsys, "build", "--arch", "tiny")
    assert code == 0 and out.startswith("input c=1 h=28 w=28")


@pytest.mark.parametrize("argv", [
    ["build", "--arch", "ghostnet", "--alpha", "0"],
    ["build", "--arch", "ghostnet", "--alpha", "-2"],
    ["build"],
    ["build", "--arch", "tiny", "--alpha", "2"],
    ["build", "--arch", "vgg16", "--ghostify", "--s", "999"],
])
def test_build_invalid_exits_2(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2 and err.startswith("error:")


def test_invalid_spec_file_exits_2_with_layer(tmp_path, capsys):
    (tmp_path / "bad.txt").write_text("input c=3 h=8 w=8\nconv out=4\nfc out=10\n")
    code, _, err = run(capsys, "analyze", "--spec", tmp_path / "bad.txt")
    assert code == 2 and "layer 1" in err


def test_missing_file_exits_3(tmp_path, capsys):
    code, _, err = run(capsys, "analyze", "--spec", tmp_path / "nope.txt")
    assert code == 3 and "nope.txt" in err


def test_ghostify_ratio_one_keeps_costs(tmp_path, capsys):
    run(capsys, "build", "--arch", "vgg16", "--out", tmp_path / "vgg.txt")
    run(capsys, "build", "--spec", tmp_path / "vgg.txt", "--ghostify", "--s", "1", "--d", "3",
        "--out", tmp_path / "g1.txt")
    run(capsys, "analyze", "--spec", tmp_path / "vgg.txt", "--csv", tmp_path / "a.csv")
    run(capsys, "analyze", "--spec", tmp_path / "g1.txt", "--csv", tmp_path / "b.csv")
    cols = lambda p: [r[2:] for r in csv.reader(open(p))]  # drop index and layer name
    assert cols(tmp_path / "a.csv") == cols(tmp_path / "b.csv")


def test_analyze_ghostnet(capsys, tmp_path):
    code, out, _ = run(capsys, "analyze", "--arch", "ghostnet", "--input", "224x224", "--csv", tmp_path / "r.csv")
    assert code == 0
    summary = dict(tok.split("=") for tok in out.splitlines()[0].split())
    assert 4.9e6 <= int(summary["params"]) <= 5.5e6
    assert 134e6 <= int(summary["flops"]) <= 148e6
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert rows[-1]["layer"] == "total" and rows[-1]["params"] == summary["params"]


def test_analyze_input_override(capsys):
    _, out224, _ = run(capsys, "analyze", "--arch", "ghostnet")
    _, out448, _ = run(capsys, "analyze", "--arch", "ghostnet", "--input", "448")
    f = lambda out: int(out.split()[1].split("=")[1])
    assert f(out448) / f(out224) == pytest.approx(4, rel=0.02)


def test_compare_single_layer(tmp_path, capsys):
    save_spec(tmp_path / "a.txt", NetworkSpec((L("conv", out=128, k=3),), (256, 14, 14)))
    (tmp_path / "b.txt").write_text("input c=256 h=14 w=14\nghost out=128 k=3 s=2 d=3 relu=0 bn=0\n")
    code, out, _ = run(capsys, "compare", "--spec", tmp_path / "a.txt", "--spec", tmp_path / "b.txt",
                       "--csv", tmp_path / "c.csv")
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "c.csv")))
    assert float(rows[0]["flops_ratio"]) == pytest.approx(2304 / 1156.5, rel=1e-12)
    assert float(rows[0]["theory_speedup"]) == pytest.approx(1.9922, abs=1e-4)
    assert float(rows[0]["params_ratio"]) == pytest.approx(float(rows[0]["theory_compression"]), rel=1e-12)
    assert "flops_ratio=" in out


def test_compare_with_itself(tmp_path, capsys):
    run(capsys, "build", "--arch", "tiny", "--out", tmp_path / "t.txt")
    code, _, _ = run(capsys, "compare", "--spec", tmp_path / "t.txt", "--spec", tmp_path / "t.txt",
                     "--csv", tmp_path / "c.csv")
    assert code == 0
    for row in csv.DictReader(open(tmp_path / "c.csv")):
        assert float(row["params_ratio"]) == 1.0 and float(row["flops_ratio"]) == 1.0


def test_compare_needs_two(capsys, tmp_path):
    run(capsys, "build", "--arch", "tiny", "--out", tmp_path / "t.txt")
    code, _, _ = run(capsys, "compare", "--spec", tmp_path / "t.txt")
    assert code == 2


def test_sweep_s(tmp_path, capsys):
    code, _, _ = run(capsys, "sweep", "--arch", "vgg16", "--param", "s", "--values", "2,3,4,5", "--epochs", "0",
                     "--csv", tmp_path / "s.csv")
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    flops = [int(r["flops"]) for r in rows]
    assert all(a > b for a, b in zip(flops, flops[1:]))
    assert rows[0]["value"] == "baseline"


def test_sweep_bad_values(tmp_path, capsys):
    with pytest.raises(SystemExit):
        cli.main(["sweep", "--arch", "vgg16", "--param", "s", "--values", "a,b", "--csv", str(tmp_path / "x")])


def test_toyfit_self_pair(tmp_path, capsys, rng):
    img = rng.integers(0, 256, (1, 12, 12), dtype=np.uint8)
    write_pnm(tmp_path / "a.pgm", img)
    code, out, _ = run(capsys, "toyfit", "--source", tmp_path / "a.pgm", "--target", tmp_path / "a.pgm",
                       "--csv", tmp_path / "t.csv", "--pgm-dir", tmp_path / "maps")
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert [r["d"] for r in rows] == ["1", "3", "5", "7"]
    assert all(float(r["mse"]) < 1e-10 for r in rows)
    assert (tmp_path / "maps" / "pair0_fit_d3.pgm").exists()


def test_toyfit_harvest_from_network(tmp_path, capsys, mnist_dir):
    code, out, _ = run(capsys, "toyfit", "--arch", "tiny", "--dataset", "mnist", "--data", mnist_dir,
                       "--layer", "2", "--top-k", "3", "--csv", tmp_path / "t.csv")
    assert code == 0
    table = {}
    for r in csv.DictReader(open(tmp_path / "t.csv")):
        table.setdefault(r["pair_id"], []).append(float(r["mse"]))
    assert len(table) == 3
    assert all(all(a >= b for a, b in zip(v, v[1:])) for v in table.values())


def test_toyfit_layer_out_of_range(tmp_path, capsys, mnist_dir):
    code, _, _ = run(capsys, "toyfit", "--arch", "tiny", "--data", mnist_dir, "--layer", "99",
                     "--csv", tmp_path / "t.csv")
    assert code == 2


def _single_sample_mnist(root, mnist_dir, index=0):
    images = read_idx(f"{mnist_dir}/train-images-idx3-ubyte.gz", 0x803)[index : index + 1]
    labels = read_idx(f"{mnist_dir}/train-labels-idx1-ubyte.gz", 0x801)[index : index + 1]
    root.mkdir()
    for name, arr, magic in (("train-images-idx3-ubyte", images, 0x803), ("train-labels-idx1-ubyte", labels, 0x801)):
        head = struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape)
        (root / (name + ".gz")).write_bytes(gzip.compress(head + arr.tobytes()))
    return images[0], int(labels[0])


def test_train_then_infer_memorized_sample(tmp_path, capsys, mnist_dir):
    image, label = _single_sample_mnist(tmp_path / "one", mnist_dir)
    out = tmp_path / "run"
    code, stdout, _ = run(capsys, "--seed", "1", "train", "--arch", "tiny", "--data", tmp_path / "one",
                          "--epochs", "30", "--lr", "0.05", "--batch-size", "1", "--schedule", "constant",
                          "--out", out)
    assert code == 0 and "train_acc=1.0000" in stdout
    assert (out / "history.csv").exists() and (out / "checkpoint_epoch030.gnck").exists()
    write_pnm(tmp_path / "x.pgm", image[None])
    code, stdout, _ = run(capsys, "infer", "--spec", out / "spec.txt", "--checkpoint", out / "checkpoint_epoch030.gnck",
                          "--image", tmp_path / "x.pgm", "--top-k", "3")
    assert code == 0
    lines = stdout.splitlines()
    assert len(lines) == 3
    top = dict(tok.split("=") for tok in lines[0].split())
    assert int(top["class"]) == label and float(top["prob"]) > 0.9


def test_infer_bad_checkpoint_exits_3(tmp_path, capsys):
    (tmp_path / "w.gnck").write_bytes(b"NOPE" + bytes(20))
    write_pnm(tmp_path / "x.pgm", np.zeros((1, 28, 28), np.uint8))
    code, _, err = run(capsys, "infer", "--arch", "tiny", "--checkpoint", tmp_path / "w.gnck",
                       "--image", tmp_path / "x.pgm")
    assert code == 3 and "offset=0" in err and "w.gnck" in err


def test_train_missing_dataset_exits_3(tmp_path, capsys):
    code, _, _ = run(capsys, "train", "--arch", "tiny", "--data", tmp_path, "--out", tmp_path / "o")
    assert code == 3


def test_train_truncated_dataset_exits_3(tmp_path, capsys, mnist_dir):
    _single_sample_mnist(tmp_path / "one", mnist_dir)
    p = tmp_path / "one" / "train-images-idx3-ubyte.gz"
    p.write_bytes(gzip.compress(gzip.decompress(p.read_bytes())[:-10]))
    code, _, err = run(capsys, "train", "--arch", "tiny", "--data", tmp_path / "one", "--out", tmp_path / "o")
    assert code == 3 and "offset=" in err


def test_data_dir_env(tmp_path, capsys, mnist_dir, monkeypatch):
    _single_sample_mnist(tmp_path / "one", mnist_dir)
    monkeypatch.setenv("GHOSTCONV_DATA_DIR", str(tmp_path / "one"))
    code, _, _ = run(capsys, "--threads", "1", "train", "--arch", "tiny", "--epochs", "1", "--out", tmp_path / "o")
    assert code == 0


def test_subcommand_required(capsys):
    with pytest.raises(SystemExit):
        cli.main([])
