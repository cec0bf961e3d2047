import numpy as np
import pytest

from thermorom.cli import main
from thermorom.dataio import write_container


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", str(root / "exp"), "--grid", "8", "6", "5", "--train-hours", "200",
                 "--eval-hours", "20", "--negative-fraction", "0.05"]) == 0
    return root / "exp"


def test_train_assimilate_evaluate(synth_dir, capsys):
    cfg = str(synth_dir / "config.json")
    assert main(["train", "--config", cfg]) == 0
    assert main(["assimilate", "--config", cfg, "--no-plots", "--spin-up-h", "2"]) == 0
    out = capsys.readouterr().out
    assert "satellite,role,estimate,mape_percent,n_points" in out.splitlines()
    assert main(["evaluate", str(synth_dir / "report"), "--spin-up-h", "4"]) == 0
    assert main(["inspect", str(synth_dir / "model.rdx"), "--values"]) == 0
    assert "A_lag_1" in capsys.readouterr().out


def test_exit_codes(synth_dir, tmp_path):
    cfg = str(synth_dir / "config.json")
    assert main(["assimilate", "--config", cfg, "--assim", str(tmp_path / "nope.csv")]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "bad.rdx").write_bytes(b"NOPE" + bytes(20))
    assert main(["inspect", str(tmp_path / "bad.rdx")]) == 3
    # a model whose state matrix explodes trips the divergence guard
    from thermorom.dataio import load_model, save_model
    from dataclasses import replace

    assert main(["train", "--config", cfg]) == 0
    model = load_model(synth_dir / "model.rdx")
    save_model(tmp_path / "wild.rdx", replace(model, a=50.0 * np.eye(model.r)))
    rc = main(["assimilate", "--config", cfg, "--model", str(tmp_path / "wild.rdx"), "--no-plots",
               "--out", str(tmp_path / "o")])
    assert rc == 4
    with pytest.raises(SystemExit) as exc:
        main(["assimilate", "--kind", "bogus"])
    assert exc.value.code == 2


def test_inspect_container(tmp_path, capsys):
    write_container(tmp_path / "c.rdx", {"x": np.arange(3)}, {"note": "hi"})
    assert main(["inspect", str(tmp_path / "c.rdx")]) == 0
    assert "x,<i8,3" in capsys.readouterr().out
