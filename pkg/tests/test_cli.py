import json
import shutil
import struct
import time

import numpy as np
import pytest

from tawsvd import io
from tawsvd.baselines import vanilla_svd_compress
from tawsvd.cli import main


def read_lrt_raw(path):
    """Independent reader: parses the container with struct, no package code."""
    buf = path.read_bytes()
    magic, version, rows, cols = struct.unpack_from("<4sBQQ", buf)
    assert magic == b"LRT1" and version == 1
    return np.frombuffer(buf, dtype="<f8", offset=21).reshape(rows, cols)


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture
def toy(tmp_path):
    assert main(["gen-toy", "--depth", "2", "--dims", "16,16,16", "--seed", "3", "--out",
                 str(tmp_path / "toy")]) == 0
    return tmp_path / "toy"


def test_gen_toy_manifest_and_calibration(toy):
    manifest = json.loads((toy / "manifest.json").read_text())
    assert [l["shape"] for l in manifest["layers"]] == [[16, 16], [16, 16]]
    assert read_lrt_raw(toy / "calib.lrt").shape == (16, 256)


def test_gen_toy_is_idempotent(tmp_path, toy):
    main(["gen-toy", "--depth", "2", "--dims", "16,16,16", "--seed", "3", "--out", str(tmp_path / "again")])
    assert tree_bytes(toy) == tree_bytes(tmp_path / "again")
    main(["gen-toy", "--depth", "2", "--dims", "16,16,16", "--seed", "3", "--out", str(toy)])
    assert tree_bytes(toy) == tree_bytes(tmp_path / "again")


def test_gen_toy_bad_dims_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["gen-toy", "--depth", "3", "--dims", "4,4", "--out", str(tmp_path / "x")])
    assert info.value.code == 2
    assert not (tmp_path / "x").exists()


@pytest.mark.parametrize("ratio, updated", [("0.2", False), ("0.5", True)])
def test_update_auto_threshold(tmp_path, toy, ratio, updated):
    out = tmp_path / "c"
    assert main(["compress", "--model", str(toy), "--calib", str(toy / "calib.lrt"), "--ratio", ratio,
                 "--method", "svdllm", "--update", "auto", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert [l["updated"] for l in report["layers"]] == [updated, updated]
    assert report["config"]["update"] == "auto"


def test_asvd_equals_svd_on_unit_scale(tmp_path):
    main(["gen-toy", "--depth", "1", "--dims", "8,6", "--seed", "1", "--out", str(tmp_path / "m")])
    rng = np.random.default_rng(0)
    io.write_tensor(tmp_path / "unit.lrt", rng.choice([-1.0, 1.0], size=(8, 64)))
    for method in ("svd", "asvd"):
        assert main(["compress", "--model", str(tmp_path / "m"), "--calib", str(tmp_path / "unit.lrt"),
                     "--ratio", "0.3", "--method", method, "--out", str(tmp_path / method)]) == 0
    for name in ("layer0.u.lrt", "layer0.v.lrt"):
        assert (tmp_path / "svd" / name).read_bytes() == (tmp_path / "asvd" / name).read_bytes()


def test_dump_whitening(tmp_path, toy):
    assert main(["compress", "--model", str(toy), "--ratio", "0.3", "--out", str(tmp_path / "c"),
                 "--dump-whitening", str(tmp_path / "w")]) == 0
    s = read_lrt_raw(tmp_path / "w" / "layer0.whitening.lrt")
    x = read_lrt_raw(toy / "calib.lrt")
    np.testing.assert_allclose(s @ s.T, x @ x.T, rtol=1e-9, atol=1e-9)
    assert np.all(np.triu(s, 1) == 0)


def test_numerical_failure_writes_report(tmp_path, toy):
    io.write_tensor(tmp_path / "zeros.lrt", np.zeros((16, 32)))
    code = main(["compress", "--model", str(toy), "--calib", str(tmp_path / "zeros.lrt"), "--ratio", "0.3",
                 "--damping", "0", "--out", str(tmp_path / "c"), "--report", str(tmp_path / "r.json")])
    assert code == 1
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["status"] == "failed" and report["layers"][0]["status"] == "failed"


def test_io_and_usage_exit_codes(tmp_path, toy):
    assert main(["compress", "--model", str(tmp_path / "missing"), "--ratio", "0.3",
                 "--out", str(tmp_path / "c")]) == 3
    (tmp_path / "bad.lrt").write_bytes(b"LRT1\x01")
    assert main(["compress", "--model", str(toy), "--calib", str(tmp_path / "bad.lrt"), "--ratio", "0.3",
                 "--out", str(tmp_path / "c")]) == 3
    with pytest.raises(SystemExit) as info:
        main(["compress", "--model", str(toy), "--ratio", "1.5", "--out", str(tmp_path / "c")])
    assert info.value.code == 2


def test_eval_identity_copy(tmp_path, toy, capsys):
    shutil.copytree(toy, tmp_path / "copy")
    assert main(["eval", "--original", str(toy), "--compressed", str(tmp_path / "copy"),
                 "--json", str(tmp_path / "e.json")]) == 0
    res = json.loads((tmp_path / "e.json").read_text())
    assert all(l["calib_loss"] < 1e-9 and l["propagated_loss"] < 1e-9 for l in res["layers"])
    assert res["output_deviation_calib"] < 1e-9 and res["output_deviation_holdout"] < 1e-9


def test_eval_full_rank_factored(tmp_path, toy):
    model = io.load_model(toy)
    for i, layer in enumerate(model.layers):
        model = model.with_layer(i, vanilla_svd_compress(layer.weight, 16))
    io.save_model(model, tmp_path / "full")
    assert main(["eval", "--original", str(toy), "--compressed", str(tmp_path / "full"),
                 "--json", str(tmp_path / "e.json")]) == 0
    res = json.loads((tmp_path / "e.json").read_text())
    assert res["output_deviation_calib"] < 1e-9 and res["output_deviation_holdout"] < 1e-9


def test_eval_dimension_mismatch(tmp_path, toy):
    main(["gen-toy", "--depth", "2", "--dims", "16,8,16", "--out", str(tmp_path / "other")])
    assert main(["eval", "--original", str(toy), "--compressed", str(tmp_path / "other")]) == 2


def _independent_recompute(orig_dir, comp_dir, calib):
    """Recompute report quantities straight from the files with plain numpy."""
    om = json.loads((orig_dir / "manifest.json").read_text())
    cm = json.loads((comp_dir / "manifest.json").read_text())
    relu = om["activation"] == "relu"
    ws = [read_lrt_raw(orig_dir / l["weight"]) for l in om["layers"]]
    approx = [read_lrt_raw(comp_dir / l["u"]) @ read_lrt_raw(comp_dir / l["v"]) for l in cm["layers"]]
    out = []
    x = calib
    for i, (w, wa) in enumerate(zip(ws, approx)):
        out.append(np.linalg.norm((w - wa) @ x))
        x = w @ x
        if relu and i < len(ws) - 1:
            x = np.maximum(x, 0)
    params = sum(l["rank"] * (l["shape"][0] + l["shape"][1]) for l in cm["layers"])
    return out, params


def test_report_fields_recomputable_from_files(tmp_path, toy):
    out = tmp_path / "c"
    assert main(["compress", "--model", str(toy), "--ratio", "0.3", "--update", "off", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    losses, params = _independent_recompute(toy, out, read_lrt_raw(toy / "calib.lrt"))
    for rec, loss in zip(report["layers"], losses):
        assert rec["measured_loss"] == pytest.approx(loss, rel=1e-9)
    assert report["model"]["param_count_after"] == params
    assert main(["eval", "--original", str(toy), "--compressed", str(out), "--json", str(tmp_path / "e.json")]) == 0
    res = json.loads((tmp_path / "e.json").read_text())
    for rec, loss in zip(res["layers"], losses):
        assert rec["calib_loss"] == pytest.approx(loss, rel=1e-9)


def test_verify_minimal_and_negative_control(capsys):
    assert main(["verify", "--sizes", "2x3"]) == 0
    assert "8/8 checks passed" in capsys.readouterr().out
    assert main(["verify", "--sizes", "2x3,6x8", "--disable-whitening"]) == 1
    out = capsys.readouterr().out
    assert "FAIL  single-value loss = sigma" in out


def test_compare_writes_csv(tmp_path):
    csv_path = tmp_path / "rows.csv"
    assert main(["compare", "--depth", "2", "--width", "8", "--ratios", "0.4", "--trials", "1",
                 "--calib-count", "32", "--csv", str(csv_path)]) == 0
    lines = csv_path.read_text().splitlines()
    assert lines[0].startswith("trial,seed,ratio,method,layer")
    assert len(lines) == 1 + 4 * 2


def test_verify_default_run(capsys):
    t0 = time.perf_counter()
    assert main(["verify"]) == 0
    assert time.perf_counter() - t0 < 60
    out = capsys.readouterr().out
    assert "FAIL" not in out and "8/8 checks passed" in out
