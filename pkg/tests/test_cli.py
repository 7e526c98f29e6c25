import pytest
import yaml

from mirecon.cli import main
from mirecon.dataset_io import read_dataset
from mirecon.geometry import OrientedPointSet, box_mesh, icosphere
from mirecon.meshio import load_cloud, load_mesh, save_cloud, save_mesh
from mirecon.network import load_checkpoint

SMALL = ["--n-d", "8", "--n-s", "16", "--k", "3", "--points", "400", "--near", "8", "--cube", "2"]


@pytest.fixture(scope="module")
def meshes(tmp_path_factory):
    d = tmp_path_factory.mktemp("meshes")
    save_mesh(d / "cube.obj", box_mesh((0.2, 0.2, 0.2), (0.8, 0.8, 0.8)))
    save_mesh(d / "ball.obj", icosphere(2, 0.4, (0.5, 0.5, 0.5)))
    return d


@pytest.fixture(scope="module")
def prepared(meshes, tmp_path_factory):
    out = tmp_path_factory.mktemp("prep")
    assert main(["prepare", "--meshes", str(meshes), "--out", str(out)] + SMALL) == 0
    return out


@pytest.fixture(scope="module")
def trained(prepared, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", "--dataset", str(prepared / "dataset.lmir"), "--out", str(out), "--epochs", "2",
                 "--batch-size", "8", "--c", "4"]) == 0
    return out


def test_prepare_outputs(prepared):
    manifest, batches = read_dataset(prepared / "dataset.lmir")
    assert [r.mesh for r in manifest.records] == ["ball", "cube"]
    assert [len(b) for b in batches] == [10, 10]
    assert batches[0].dims == (8, 16, 3)
    assert sorted(p.name for p in (prepared / "clouds").iterdir()) == ["ball.ply", "cube.ply"]
    assert (prepared / "gt" / "cube.obj").exists()
    cfg = yaml.safe_load((prepared / "config.yaml").read_text())
    assert cfg["n_d"] == 8 and cfg["near"] == 8


def test_prepare_deterministic(meshes, prepared, tmp_path):
    assert main(["prepare", "--meshes", str(meshes), "--out", str(tmp_path)] + SMALL) == 0
    assert (tmp_path / "dataset.lmir").read_bytes() == (prepared / "dataset.lmir").read_bytes()


def test_prepare_skips_bad_mesh(meshes, tmp_path, capsys):
    d = tmp_path / "m"
    d.mkdir()
    (d / "cube.obj").write_bytes((meshes / "cube.obj").read_bytes())
    (d / "broken.obj").write_text("v 0 0 0\nf 1 2 3\n")
    assert main(["prepare", "--meshes", str(d), "--out", str(tmp_path / "o")] + SMALL) == 0
    out = capsys.readouterr().out
    assert "skipped 1" in out and "1 warning(s)" in out


def test_prepare_empty_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["prepare", "--meshes", str(tmp_path / "empty"), "--out", str(tmp_path / "o")]) == 1


def test_unknown_config_key(tmp_path, meshes):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("meshes: x\nbogus_key: 3\n")
    assert main(["prepare", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_flags_override_config(tmp_path, meshes):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"meshes": "/nonexistent", "near": 99, "n_d": 8, "n_s": 16, "k": 3,
                                   "points": 400, "cube": 2}))
    out = tmp_path / "o"
    assert main(["prepare", "--config", str(cfg), "--meshes", str(meshes), "--near", "4", "--out", str(out)]) == 0
    _, batches = read_dataset(out / "dataset.lmir")
    assert len(batches[0]) == 6
    assert yaml.safe_load((out / "config.yaml").read_text())["near"] == 4


def test_train_outputs(trained):
    for name in ("epoch_0000.lmic", "epoch_0002.lmic", "last.lmic", "loss.csv", "loss.png", "config.yaml"):
        assert (trained / name).exists(), name
    assert (trained / "loss.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_train_lr_zero_keeps_weights(prepared, tmp_path):
    assert main(["train", "--dataset", str(prepared / "dataset.lmir"), "--out", str(tmp_path), "--epochs", "1",
                 "--lr", "0", "--c", "4", "--plot", "false"]) == 0
    a, _, _ = load_checkpoint(tmp_path / "epoch_0000.lmic")
    b, _, _ = load_checkpoint(tmp_path / "last.lmic")
    for (n, x), (_, y) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch_equal(x, y), n


def torch_equal(x, y):
    return x.numpy().tobytes() == y.numpy().tobytes()


def test_train_dim_mismatch(prepared, tmp_path, capsys):
    code = main(["train", "--dataset", str(prepared / "dataset.lmir"), "--out", str(tmp_path), "--n-d", "30"])
    assert code == 1
    assert "n_d" in capsys.readouterr().err


def test_train_resume_matches(prepared, trained, tmp_path):
    a = tmp_path / "a"
    assert main(["train", "--dataset", str(prepared / "dataset.lmir"), "--out", str(a), "--epochs", "1",
                 "--batch-size", "8", "--c", "4", "--plot", "false"]) == 0
    assert main(["train", "--dataset", str(prepared / "dataset.lmir"), "--out", str(a), "--epochs", "2",
                 "--batch-size", "8", "--c", "4", "--resume", str(a / "last.lmic"), "--plot", "false"]) == 0
    x, _, _ = load_checkpoint(a / "last.lmic")
    y, _, _ = load_checkpoint(trained / "last.lmic")
    for (n, p), (_, q) in zip(x.state_dict().items(), y.state_dict().items()):
        assert torch_equal(p, q), n


def test_reconstruct_and_eval(prepared, trained, tmp_path):
    rec = tmp_path / "rec"
    for shape in ("ball", "cube"):
        assert main(["reconstruct", "--checkpoint", str(trained / "last.lmic"), "--cloud",
                     str(prepared / "clouds" / f"{shape}.ply"), "--res", "12", "--out", str(rec),
                     "--dump-grid", "true"]) == 0
    assert (rec / "ball.obj").exists() and (rec / "ball.grid").exists()
    g = tmp_path / "gauss"
    for shape in ("ball", "cube"):
        assert main(["gauss-recon", "--cloud", str(prepared / "clouds" / f"{shape}.ply"), "--res", "16",
                     "--out", str(g)]) == 0
    assert load_mesh(g / "ball.obj").n_triangles > 0
    ev = tmp_path / "ev"
    assert main(["eval", "--recon", f"{{ours: {rec}, gauss: {g}}}", "--gt", str(prepared / "gt"),
                 "--samples", "500", "--out", str(ev)]) == 0
    for name in ("eval_ours.csv", "eval_gauss.csv", "eval_ours.png", "eval_gauss.png"):
        assert (ev / name).exists(), name
    lines = (ev / "eval_gauss.csv").read_text().splitlines()
    assert lines[0] == "shape,cd_x100,nce" and lines[3].startswith("mean,")
    bcr = [l for l in lines if l.startswith("bcr:")]
    assert len(bcr) == 2 and sum(float(l.split(",")[2]) for l in bcr) == pytest.approx(1.0)


def test_reconstruct_dims_mismatch(prepared, trained, tmp_path):
    assert main(["reconstruct", "--checkpoint", str(trained / "last.lmic"), "--cloud",
                 str(prepared / "clouds" / "ball.ply"), "--res", "8", "--k", "5", "--out", str(tmp_path)]) == 1


def test_gauss_recon_without_normals(prepared, tmp_path, capsys):
    c = load_cloud(prepared / "clouds" / "ball.ply")
    save_cloud(tmp_path / "bare.ply", OrientedPointSet(c.positions))
    assert main(["gauss-recon", "--cloud", str(tmp_path / "bare.ply"), "--out", str(tmp_path / "o")]) == 2
    assert "normals" in capsys.readouterr().err


def test_eval_orphans(prepared, tmp_path):
    r = tmp_path / "r"
    r.mkdir()
    save_mesh(r / "ball.obj", load_mesh(prepared / "gt" / "ball.obj"))
    assert main(["eval", "--recon", str(r), "--gt", str(prepared / "gt"), "--out", str(tmp_path / "o")]) == 2


def test_eval_single_method(prepared, tmp_path):
    out = tmp_path / "o"
    assert main(["eval", "--recon", str(prepared / "gt"), "--gt", str(prepared / "gt"), "--samples", "300",
                 "--out", str(out)]) == 0
    rows = (out / "eval.csv").read_text().splitlines()
    assert rows[1] == "ball,0.000000,0.000000"
    assert (out / "eval.png").exists()
