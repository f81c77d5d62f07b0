import numpy as np
import pytest

from micromotion.cli import default_split, dispatch, split_dataset
from micromotion.tensor_io import (
    VideoTensor,
    read_trace,
    read_video,
    write_video,
)


def _run(*argv):
    return dispatch([str(a) for a in argv])


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    status = _run("synth", "--out", out, "--seed", "5", "--frames", "400",
                  "--height", "16", "--width", "16")
    assert status == 0
    return out


class TestSynth:
    def test_outputs_exist_with_manifest(self, synth_dir):
        for name in ("transmission.mmv", "fluorescence.csv", "spikes.csv",
                     "regions.csv", "synth.manifest"):
            assert (synth_dir / name).exists(), name

    def test_byte_identical_reruns(self, tmp_path):
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            assert _run("synth", "--out", out, "--seed", "9", "--frames", "200",
                        "--height", "16", "--width", "16", "--threads", "1") == 0
            outs.append(out)
        for name in ("transmission.mmv", "fluorescence.csv", "spikes.csv",
                     "regions.csv"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name

    def test_manifest_contents(self, synth_dir):
        text = (synth_dir / "synth.manifest").read_text()
        assert "command=synth" in text
        assert "arg.seed=5" in text
        assert "version=" in text


class TestFilter:
    def test_filter_round_trip(self, synth_dir, tmp_path):
        out = tmp_path / "filtered.mmv"
        assert _run("filter", synth_dir / "transmission.mmv", out) == 0
        video = read_video(out)
        assert video.frames == 400
        # zero-phase bandpass zeroes the DC bin of every pixel
        means = video.data.astype(np.float64).mean(axis=0)
        assert np.abs(means).max() < 1e-4
        assert (tmp_path / "filtered.mmv.manifest").exists()

    def test_band_flags_checked(self, synth_dir, tmp_path):
        status = _run("filter", synth_dir / "transmission.mmv",
                      tmp_path / "x.mmv", "--flo", "30")
        assert status != 0


class TestPipeline:
    def test_template_match_predict_flow(self, synth_dir, tmp_path):
        filtered = tmp_path / "filtered.mmv"
        assert _run("filter", synth_dir / "transmission.mmv", filtered) == 0

        template = tmp_path / "template.mmv"
        assert _run("template", "--video", filtered, "--spikes",
                    synth_dir / "spikes.csv", "--window", "21", template) == 0
        meta = (tmp_path / "template.mmv.meta").read_text()
        assert "spike_count=" in meta and "window=21" in meta

        matched = tmp_path / "matched.mmv"
        assert _run("match", "--video", filtered, "--template", template,
                    matched) == 0
        assert read_video(matched).frames == 400

    def test_train1d_predict1d_densemap_flow(self, synth_dir, tmp_path):
        filtered = tmp_path / "filtered.mmv"
        assert _run("filter", synth_dir / "transmission.mmv", filtered) == 0

        net = tmp_path / "net1d.mmn"
        assert _run("train1d", "--video", filtered, "--target",
                    synth_dir / "fluorescence.csv", "--epochs", "1",
                    "--batch", "64", "--train-range", "100:400", net) == 0

        pred = tmp_path / "pred1d.mmv"
        assert _run("predict1d", "--net", net, "--video", filtered, pred) == 0
        assert read_video(pred).frames == 400

        net3 = tmp_path / "net3d.mmn"
        assert _run("train3d", "--video", filtered, "--target",
                    synth_dir / "fluorescence.csv", "--net1d", net,
                    "--roi", "2,2,6,6", "--epochs", "2", "--segment", "128",
                    "--train-range", "100:400", net3) == 0

        trace3 = tmp_path / "pred3d.csv"
        assert _run("predict3d", "--net", net3, "--video", filtered,
                    "--roi", "2,2,6,6", trace3) == 0
        assert read_trace(trace3).frames == 400

        assert _run("densemap", "--net", net3, tmp_path / "dm") == 0
        for c in range(3):
            assert (tmp_path / f"dm_ch{c}.pgm").exists()
            assert (tmp_path / f"dm_ch{c}.csv").exists()

    def test_score_and_map(self, synth_dir, tmp_path, capsys):
        assert _run("score", "--pred", synth_dir / "fluorescence.csv",
                    "--target", synth_dir / "fluorescence.csv") == 0
        out = capsys.readouterr().out.strip()
        assert abs(float(out) - 1.0) < 1e-5

        pred = tmp_path / "p.mmv"
        video = read_video(synth_dir / "transmission.mmv")
        write_video(VideoTensor(video.data[:, :4, :4].copy(), video.fps), pred)
        assert _run("map", "--pred", pred, "--target",
                    synth_dir / "fluorescence.csv", tmp_path / "map.pgm") == 0
        assert (tmp_path / "map.pgm").exists()
        assert (tmp_path / "map.csv").exists()


class TestReport:
    def test_report_and_missing_method_error(self, synth_dir, tmp_path, capsys):
        filtered = tmp_path / "filtered.mmv"
        assert _run("filter", synth_dir / "transmission.mmv", filtered) == 0
        out = tmp_path / "report"
        status = _run("report", "--fluorescence", synth_dir / "fluorescence.csv",
                      "--regions", synth_dir / "regions.csv",
                      "--methods", "bandpass", "--bandpass", filtered,
                      "--null-trials", "5", "--out", out)
        assert status == 0
        assert (out / "report.txt").exists()
        assert (out / "scores.csv").exists()
        assert (out / "map_bandpass.pgm").exists()
        assert (out / "trace_bandpass_strong.csv").exists()

        status = _run("report", "--fluorescence", synth_dir / "fluorescence.csv",
                      "--regions", synth_dir / "regions.csv",
                      "--methods", "bandpass,cnn1d", "--bandpass", filtered,
                      "--out", tmp_path / "r2")
        assert status != 0
        assert "cnn1d" in capsys.readouterr().err


class TestDispatch:
    def test_unknown_subcommand_fails(self, capsys):
        assert _run("explode") != 0
        assert capsys.readouterr().err != ""

    def test_no_subcommand_fails(self):
        assert dispatch([]) == 2

    def test_missing_file_reports_error(self, tmp_path, capsys):
        assert _run("filter", tmp_path / "nope.mmv", tmp_path / "out.mmv") != 0
        assert "filter" in capsys.readouterr().err

    def test_selftest_passes(self, capsys):
        assert _run("selftest") == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out


class TestConfigFile:
    def test_config_defaults_and_flag_override(self, synth_dir, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text("flo=3.0\nfhi=12.0\n# comment\n\norder=2\n")
        out = tmp_path / "f.mmv"
        assert _run("filter", synth_dir / "transmission.mmv", out,
                    "--config", config, "--fhi", "14.0") == 0
        manifest = (str(out) + ".manifest")
        text = open(manifest).read()
        assert "arg.flo=3.0" in text      # from file
        assert "arg.fhi=14.0" in text     # flag wins
        assert "arg.order=2" in text

    def test_unknown_config_key_rejected(self, synth_dir, tmp_path, capsys):
        config = tmp_path / "bad.cfg"
        config.write_text("not_a_flag=1\n")
        assert _run("filter", synth_dir / "transmission.mmv",
                    tmp_path / "x.mmv", "--config", config) == 2
        assert "not_a_flag" in capsys.readouterr().err


class TestSplitDataset:
    def test_partition(self, rng):
        video = VideoTensor(rng.standard_normal((10, 2, 2)).astype(np.float32), 50.0)
        train, val = split_dataset(video, (3, 10), (0, 3))
        assert train.frames == 7 and val.frames == 3
        assert np.array_equal(np.concatenate([val.data, train.data]), video.data)

    def test_overlap_rejected(self, rng):
        video = VideoTensor(rng.standard_normal((10, 2, 2)).astype(np.float32), 50.0)
        with pytest.raises(ValueError):
            split_dataset(video, (0, 5), (4, 8))

    def test_out_of_range_rejected(self, rng):
        video = VideoTensor(rng.standard_normal((10, 2, 2)).astype(np.float32), 50.0)
        with pytest.raises(ValueError):
            split_dataset(video, (0, 11), (0, 0))

    def test_default_split_mirrors_paper_proportion(self):
        train, val = default_split(10570)
        assert val == (0, 3072)
        assert train == (3072, 10570)
        train, val = default_split(5000)
        assert val[1] == 1453
