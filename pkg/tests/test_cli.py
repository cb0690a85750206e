import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from sinefm.cli import make_parser, run
from sinefm.seedpack import unpack

SUBCOMMANDS = ["train", "eval", "flops", "pack", "unpack", "gradcheck", "ablate", "sweep",
               "sample-hparams"]
SMALL_DATA = ["--train-count", "16", "--test-count", "8", "--size", "8"]


def rows(text):
    return [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]


def test_flops_compare_standard(capsys):
    assert run(["flops", "--arch", "tiny-vgg", "--hw", "32", "32", "--compare-standard"]) == 0
    out = rows(capsys.readouterr().out)
    assert out[0] == ["layer", "params", "flops", "standard_params", "standard_flops"]
    assert out[-2][0] == "total" and out[-1][0] == "ratio"
    assert float(out[-1][1]) >= 3.0 and float(out[-1][2]) >= 2.0


def test_flops_json_and_text(capsys):
    import json

    assert run(["flops", "--arch", "tiny-resnet", "--compare-standard", "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["ratio"]["params"] >= 3.0
    assert run(["flops", "--arch", "resnet50", "--text"]) == 0
    assert "cost-table v1" in capsys.readouterr().out


def test_gradcheck_sinusoidal(capsys):
    assert run(["gradcheck", "--family", "sinusoidal"]) == 0
    (fam, err), = rows(capsys.readouterr().out)[1:]
    assert fam == "sinusoidal" and float(err) < 1e-4


def test_gradcheck_failure_exit(capsys):
    assert run(["gradcheck", "--family", "gaussian", "--tol", "1e-30"]) == 3


def test_pack_unpack_corrupt(tmp_path, capsys):
    path = tmp_path / "m.sfm"
    assert run(["pack", "--arch", "tiny-vgg", "--sinefm", "--seed", "4", "--out", str(path)]) == 0
    out = dict(r for r in rows(capsys.readouterr().out))
    assert float(out["ratio"]) >= 3.0
    npz = tmp_path / "w.npz"
    assert run(["unpack", "--in", str(path), "--out", str(npz)]) == 0
    assert "sinefm 16 64 16" in capsys.readouterr().out
    assert len(np.load(npz).files) == 13
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    proc = subprocess.run([sys.executable, "-m", "sinefm.cli", "unpack", "--in", str(path)],
                          capture_output=True, text=True)
    assert proc.returncode == 3 and "checksum" in proc.stderr


def test_unpack_hex_dump(tmp_path, capsys):
    path = tmp_path / "m.sfm"
    run(["pack", "--arch", "tiny-unet", "--out", str(path)])
    capsys.readouterr()
    assert run(["unpack", "--in", str(path), "--hex-dump"]) == 0
    assert "checksum fnv1a64" in capsys.readouterr().out


def test_pack_with_weights(tmp_path, capsys):
    from sinefm.network import build, tiny_vgg

    state = build(tiny_vgg(), seed=99).state_dict()
    np.savez(tmp_path / "w.npz", **state)
    assert run(["pack", "--arch", "tiny-vgg", "--weights", str(tmp_path / "w.npz"),
                "--out", str(tmp_path / "m.sfm")]) == 0
    model = unpack((tmp_path / "m.sfm").read_bytes())
    assert all(np.array_equal(v, state[k]) for k, v in model.state_dict().items())


def test_missing_file_is_invalid_input(tmp_path):
    assert run(["unpack", "--in", str(tmp_path / "nope.sfm")]) == 2


def test_usage_errors():
    assert run([]) == 1
    assert run(["flops"]) == 1
    assert run(["sweep", "--axis", "bogus", "--values", "1"]) == 1


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_documents_every_flag(cmd, capsys):
    assert run([cmd, "--help"]) == 0
    text = capsys.readouterr().out
    sub = next(a for a in make_parser()._subparsers._group_actions[0].choices.items() if a[0] == cmd)[1]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text


def test_sample_hparams_reproducible(capsys):
    argv = ["sample-hparams", "--seed", "42", "--family", "sinusoidal", "--count", "2"]
    run(argv)
    first = capsys.readouterr().out
    run(argv)
    assert capsys.readouterr().out == first
    assert rows(first)[1] == ["0", "1.0838629710598822", "2.5159210026506744"]


def test_sample_hparams_bound_override(capsys):
    assert run(["sample-hparams", "--family", "gaussian", "--bound", "epsilon=3:4"]) == 0
    eps = [float(r[1]) for r in rows(capsys.readouterr().out)[1:]]
    assert all(3 <= e < 4 for e in eps)
    assert run(["sample-hparams", "--bound", "omega=x:y"]) == 1


def test_train_eval_round_trip(tmp_path, capsys):
    pack = tmp_path / "m.sfm"
    argv = ["train", "--sinefm", "--cs", "4", "--fanout", "2", *SMALL_DATA, "--epochs", "1",
            "--batch", "8", "--seed", "3", "--out", str(pack), "--history", str(tmp_path / "h.csv"),
            "--plot-dir", str(tmp_path / "plots")]
    assert run(argv) == 0
    first = capsys.readouterr().out
    assert (tmp_path / "plots" / "history.png").stat().st_size > 0
    assert (tmp_path / "h.csv").read_text().startswith("epoch,loss,metric,lr")
    blob = pack.read_bytes()
    assert run(argv) == 0
    assert capsys.readouterr().out == first and pack.read_bytes() == blob
    assert run(["eval", "--pack", str(pack), *SMALL_DATA, "--seed", "3"]) == 0
    out = dict(r for r in rows(capsys.readouterr().out) if len(r) == 2)
    accuracy = [r for r in rows(first) if r[0] == "accuracy"][0][1]
    assert out["accuracy"] == accuracy


def test_ablate_and_sweep(tmp_path, capsys):
    common = [*SMALL_DATA, "--epochs", "1", "--batch", "8", "--cs", "4", "--fanout", "2"]
    assert run(["ablate", "--families", "sinusoidal,monomial", "--trials", "1", *common,
                "--plot-dir", str(tmp_path)]) == 0
    table = rows(capsys.readouterr().out)
    assert table[0] == ["family", "trial", "metric"] and len(table) == 1 + 2 + 4
    assert (tmp_path / "ablation.png").exists()
    out = tmp_path / "sweep.csv"
    assert run(["sweep", "--axis", "omega_bounds", "--values", "0:1,1:2", *common,
                "--out", str(out), "--plot-dir", str(tmp_path)]) == 0
    assert rows(out.read_text())[1][0] == "0.0:1.0"
    assert (tmp_path / "sweep_omega_bounds.png").exists()


def test_flops_and_sample_plots(tmp_path):
    assert run(["flops", "--arch", "tiny-vgg", "--compare-standard", "--plot-dir", str(tmp_path)]) == 0
    assert run(["sample-hparams", "--plot-dir", str(tmp_path)]) == 0
    assert (tmp_path / "cost_comparison.png").exists() and (tmp_path / "transforms.png").exists()


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sinefm.cli", "flops", "--arch", "tiny-vgg"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.splitlines()[-1].startswith("total,")
