import numpy as np
import pytest

from dgan.cli import build_parser, main
from dgan.datapipe.manifest import load_manifest, read_png


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["dataset-gen", "--subjects", "3", "--size", "16", "--drop", "2", "--seed", "4",
                 "--out-dir", str(data)]) == 0
    run = root / "run"
    main(["train", "--manifest", str(data / "manifest.csv"), "--out-dir", str(run), "--max-iterations", "3",
          "--set", "image_size=16", "--set", "base_width=8", "--set", "gen_depth=3", "--set", "batch_size=2",
          "--log-every", "1"])
    return root, data, run / "final.bin"


def test_dataset_gen_drops_labels(trained):
    _, data, _ = trained
    recs = load_manifest(data / "manifest.csv")
    assert len(recs) == 3 * 5
    assert sum(r.label_name == "neutral" for r in recs) == 3


def test_train_writes_log_and_checkpoint(trained):
    root, _, ckpt = trained
    assert ckpt.exists()
    assert len((root / "run" / "train_log.csv").read_text().splitlines()) == 4


def test_synth_sweep_compose(trained, capsys):
    root, data, ckpt = trained
    face = sorted(data.glob("*/neutral.png"))[0]
    out = root / "out"
    common = ["--checkpoint", str(ckpt), "--input", str(face), "--out-dir", str(out)]
    main(["synth", *common, "--label", "happiness", "--output", "h.png"])
    assert read_png(out / "h.png", 16).shape == (16, 16, 3)
    main(["sweep", *common, "--label", "anger", "--steps", "4"])
    strip = capsys.readouterr().out.strip().splitlines()[-1]
    assert read_png(strip, None).shape == (16, 64, 3)
    main(["compose", *common, "--label-a", "fear", "--label-b", "fear", "--mask", "upper-half", "--output", "c.png"])
    main(["synth", *common, "--label", "fear", "--output", "f.png"])
    assert np.array_equal(read_png(out / "c.png"), read_png(out / "f.png"))


def test_augment_fills_gaps(trained, capsys):
    root, data, ckpt = trained
    main(["augment", "--checkpoint", str(ckpt), "--manifest", str(data / "manifest.csv"),
          "--out-dir", str(root / "aug")])
    assert "generated 6 images" in capsys.readouterr().out


def test_unknown_label_rejected(trained):
    root, data, ckpt = trained
    face = sorted(data.glob("*/neutral.png"))[0]
    with pytest.raises(SystemExit, match="unknown label"):
        main(["synth", "--checkpoint", str(ckpt), "--input", str(face), "--label", "joy", "--out-dir", str(root)])


def test_parser_requires_subcommand():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
