import pytest

from byolspeak.audio_io import Waveform, load_wav, save_wav
from byolspeak.cli import run
from byolspeak.config import parse_kv_file, parse_run_config
from byolspeak.features import load_norm_stats

from helpers import fourier_peak_hz, tone


class TestConfigFile:
    def test_parse_kv(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("# comment\nseed = 3\naugment.mixup_alpha = 0.2\n\n")
        assert parse_kv_file(p) == {"seed": "3", "augment.mixup_alpha": "0.2"}

    def test_duplicate_key(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("seed = 1\nseed = 2\n")
        with pytest.raises(ValueError, match="duplicate"):
            parse_kv_file(p)

    def test_full_config(self, tmp_path):
        (tmp_path / "m.tsv").write_text("s\tx.wav\n")
        p = tmp_path / "run.cfg"
        p.write_text(
            "seed = 7\n"
            "mel.n_mels = 32\n"
            "augment.mixup_alpha = 0.3\n"
            "augment.pitch_semitones = -2, 2\n"
            "augment.enable_noise = false\n"
            "train.steps = 5\n"
            "train.batch_size = 2\n"
            "paths.manifest = m.tsv\n"
        )
        rc = parse_run_config(p)
        assert rc.seed == 7
        assert rc.mel.n_mels == 32
        assert rc.policy.mixup_alpha == 0.3
        assert rc.policy.pitch_semitones == (-2.0, 2.0)
        assert rc.policy.enable_noise is False
        assert rc.train.steps == 5
        assert rc.train.seed == 7
        assert rc.manifest == tmp_path / "m.tsv"

    def test_missing_seed_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("train.steps = 1\n")
        with pytest.raises(ValueError, match="seed"):
            parse_run_config(p)

    def test_seed_override(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("seed = 1\n")
        assert parse_run_config(p, seed_override=42).seed == 42

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("seed = 1\ntrain.warp_speed = 9\n")
        with pytest.raises(ValueError, match="unknown key"):
            parse_run_config(p)

    def test_missing_referenced_path(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("seed = 1\npaths.manifest = nowhere.tsv\n")
        with pytest.raises(FileNotFoundError):
            parse_run_config(p)


class TestExitCodes:
    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert run(["frobnicate"]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_unknown_flag_is_usage_error(self, capsys):
        assert run(["eval-mcd", "--a", "x", "--b", "y", "--sideways"]) == 1

    def test_missing_file_is_data_error(self, capsys, tmp_path):
        assert run(["eval-mcd", "--a", str(tmp_path / "no.wav"), "--b", str(tmp_path / "no.wav")]) == 2
        assert "error" in capsys.readouterr().err


class TestSynthAndStats:
    def test_synth_corpus_and_featstats(self, tmp_path, capsys):
        corpus = tmp_path / "corpus"
        assert run(["synth-corpus", "--speakers", "2", "--utts", "2", "--out", str(corpus), "--seed", "5", "--duration", "1.3"]) == 0
        assert (corpus / "manifest.tsv").exists()
        assert len(list(corpus.glob("*.wav"))) == 4
        stats_file = tmp_path / "s.nst"
        assert run(["featstats", "--manifest", str(corpus / "manifest.tsv"), "--out", str(stats_file)]) == 0
        out = capsys.readouterr().out
        assert "mean " in out and "std " in out
        stats = load_norm_stats(stats_file)
        assert stats.std > 0


class TestEvalMcd:
    def test_identical_files_zero(self, tmp_path, capsys):
        p = tmp_path / "x.wav"
        save_wav(p, tone(220, 1.0))
        assert run(["eval-mcd", "--a", str(p), "--b", str(p)]) == 0
        assert capsys.readouterr().out.strip() == "mcd 0.000"

    def test_different_files_positive(self, tmp_path, capsys):
        pa, pb = tmp_path / "a.wav", tmp_path / "b.wav"
        save_wav(pa, tone(220, 1.0))
        save_wav(pb, tone(300, 1.0))
        assert run(["eval-mcd", "--a", str(pa), "--b", str(pb)]) == 0
        value = float(capsys.readouterr().out.split()[1])
        assert value > 0


class TestAugmentCommand:
    def test_pitch_chain(self, tmp_path, capsys):
        src = tmp_path / "in.wav"
        save_wav(src, tone(220, 2.0))
        out = tmp_path / "out.wav"
        assert run(["augment", "--wav", str(src), "--pitch", "12", "--out", str(out), "--seed", "7"]) == 0
        w = load_wav(out)
        assert fourier_peak_hz(w) == pytest.approx(440, rel=0.02)

    def test_stretch_changes_length(self, tmp_path):
        src = tmp_path / "in.wav"
        save_wav(src, tone(220, 1.0))
        out = tmp_path / "out.wav"
        assert run(["augment", "--wav", str(src), "--stretch", "1.05", "--out", str(out), "--seed", "7"]) == 0
        assert load_wav(out).samples.size == 16800

    def test_noise_requires_snr(self, tmp_path):
        src = tmp_path / "in.wav"
        save_wav(src, tone(220, 1.0))
        assert run(["augment", "--wav", str(src), "--noise", str(src), "--out", str(tmp_path / "o.wav"), "--seed", "1"]) == 1

    def test_idempotent_per_seed(self, tmp_path):
        src = tmp_path / "in.wav"
        noise = tmp_path / "n.wav"
        save_wav(src, tone(220, 1.5))
        save_wav(noise, tone(3000, 0.4))
        outs = []
        for name in ("o1.wav", "o2.wav"):
            out = tmp_path / name
            assert run([
                "augment", "--wav", str(src), "--pitch", "1", "--stretch", "1.05",
                "--noise", str(noise), "--snr", "5", "--out", str(out), "--seed", "7",
            ]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """Tiny end-to-end CLI run shared by train/embed/eval tests."""
    root = tmp_path_factory.mktemp("cli_run")
    corpus = root / "corpus"
    assert run(["synth-corpus", "--speakers", "2", "--utts", "2", "--out", str(corpus), "--seed", "3", "--duration", "1.3"]) == 0
    assert run(["featstats", "--manifest", str(corpus / "manifest.tsv"), "--out", str(root / "s.nst")]) == 0
    cfg = root / "run.cfg"
    cfg.write_text(
        "seed = 11\n"
        "train.steps = 2\n"
        "train.batch_size = 2\n"
        "augment.enable_noise = false\n"
        "paths.manifest = corpus/manifest.tsv\n"
        "paths.stats = s.nst\n"
        "paths.checkpoint_dir = run\n"
    )
    assert run(["train", "--config", str(cfg)]) == 0
    return root


class TestTrainCommand:
    def test_outputs_exist(self, trained_run):
        assert (trained_run / "run" / "final.ckpt").exists()
        log = (trained_run / "run" / "train.log").read_text().strip().splitlines()
        assert len(log) == 2
        assert len(log[0].split("\t")) == 5

    def test_rerun_is_byte_identical(self, trained_run, tmp_path):
        cfg2 = trained_run / "run2.cfg"
        cfg2.write_text(
            "seed = 11\n"
            "train.steps = 2\n"
            "train.batch_size = 2\n"
            "augment.enable_noise = false\n"
            "paths.manifest = corpus/manifest.tsv\n"
            "paths.stats = s.nst\n"
            "paths.checkpoint_dir = run2\n"
        )
        assert run(["train", "--config", str(cfg2)]) == 0
        a = (trained_run / "run" / "final.ckpt").read_bytes()
        b = (trained_run / "run2" / "final.ckpt").read_bytes()
        assert a == b
        assert (trained_run / "run" / "train.log").read_text() == (trained_run / "run2" / "train.log").read_text()

    def test_noise_enabled_without_dir_is_data_error(self, trained_run, capsys):
        cfg = trained_run / "bad.cfg"
        cfg.write_text(
            "seed = 1\n"
            "train.steps = 1\n"
            "paths.manifest = corpus/manifest.tsv\n"
            "paths.stats = s.nst\n"
            "paths.checkpoint_dir = runbad\n"
        )
        assert run(["train", "--config", str(cfg)]) == 2
        assert "noise" in capsys.readouterr().err


class TestEmbedCommand:
    def test_text_output(self, trained_run, capsys):
        out = trained_run / "emb.txt"
        assert run([
            "embed", "--ckpt", str(trained_run / "run" / "final.ckpt"),
            "--stats", str(trained_run / "s.nst"),
            "--manifest", str(trained_run / "corpus" / "manifest.tsv"),
            "--out", str(out), "--format", "txt",
        ]) == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 4
        name, vals = lines[0].split("\t")
        assert len(vals.split(" ")) == 512

    def test_binary_output(self, trained_run):
        out = trained_run / "emb.bin"
        wav = next((trained_run / "corpus").glob("*.wav"))
        assert run([
            "embed", "--ckpt", str(trained_run / "run" / "final.ckpt"),
            "--stats", str(trained_run / "s.nst"),
            "--wav", str(wav), "--out", str(out), "--format", "bin",
        ]) == 0
        assert out.stat().st_size == 512 * 4


class TestEvalS2t:
    def test_table_and_machine_output(self, trained_run, capsys):
        manifest = str(trained_run / "corpus" / "manifest.tsv")
        ckpt = str(trained_run / "run" / "final.ckpt")
        stats = str(trained_run / "s.nst")
        assert run(["eval-s2t", "--ckpt", ckpt, "--stats", stats, "--probe", manifest, "--ref", manifest]) == 0
        table = capsys.readouterr().out
        assert "median" in table
        assert run(["eval-s2t", "--ckpt", ckpt, "--stats", stats, "--probe", manifest, "--ref", manifest, "--machine"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert all(line.startswith("s2t_same\t") for line in lines)
        assert lines[-1].split("\t")[1] == "median"
        assert float(lines[-1].split("\t")[2]) == pytest.approx(0.0, abs=1e-6)
