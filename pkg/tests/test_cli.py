"""Command-line behavior, config merging, checkpoints, exit codes."""

import json
import sys
from pathlib import Path

import numpy as np
import pytest

import strokesimp as ss
import external_stub as stub
import synthcorpus as sc
from strokesimp.cli import _Checkpoint, main

STUB = Path(__file__).parent / "external_stub.py"


def run(*argv):
    return main([str(a) for a in argv])


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def tree_bytes(directory):
    """Relative path -> content for every file under a directory."""
    directory = Path(directory)
    return {
        str(p.relative_to(directory)): p.read_bytes()
        for p in sorted(directory.rglob("*"))
        if p.is_file()
    }


class TestCorpusCommand:
    def test_manifest_and_stdout(self, tmp_path, mixed_dir, mixed_corpus, capsys):
        manifest = tmp_path / "manifest.json"
        assert run("corpus", "--input", mixed_dir, "--manifest-out", manifest) == 0
        out = capsys.readouterr().out
        assert "strokes  glyphs" in out
        assert "total: 10 glyphs (0 dropped outside CJK)" in out
        doc = read_json(manifest)
        assert doc["schema"] == "strokesimp-corpus/1"
        assert doc["count"] == 10
        assert doc["stroke_counts"] == {"3": 2, "4": 2, "5": 3, "6": 3}
        assert doc["hash"] == ss.corpus_hash(mixed_corpus.glyphs)
        assert sorted(doc["by_strokes"]["3"]) == [0x4E00, 0x4E01]

    def test_non_cjk_dropped(self, tmp_path, capsys):
        src = tmp_path / "src"
        sc.write_corpus(
            src, {0x41: [sc.STROKE_LIBRARY[0]], 0x4E2D: list(sc.STROKE_LIBRARY[:3])}
        )
        manifest = tmp_path / "m.json"
        assert run("corpus", "--input", src, "--manifest-out", manifest) == 0
        assert "(1 dropped outside CJK)" in capsys.readouterr().out
        assert read_json(manifest)["count"] == 1

    def test_missing_input(self, tmp_path):
        assert run("corpus", "--input", tmp_path / "nope", "--manifest-out",
                   tmp_path / "m.json") == 2


class TestSimplifyCommand:
    def test_full_run_artifacts(self, tmp_path, mixed_dir, capsys):
        out = tmp_path / "out"
        assert run("simplify", "--input", mixed_dir, "--out", out) == 0
        report = ss.parse_report(out / "report.json")
        assert len(report["glyphs"]) == 10
        for doc in report["glyphs"]:
            assert doc["tolerance"] is not None
            assert len(doc["steps"]) == doc["K"] - 1
        # aggregate curve rows: one per (K, k): sum of (K - 1)
        rows = (out / "curves_optimal.csv").read_text().strip().splitlines()
        assert len(rows) == 1 + (2 + 3 + 4 + 5)
        for count in (3, 4, 5, 6):
            assert (out / f"sheet_k{count}.svg").exists()
        # every glyph classifies correctly in full, nothing excluded
        assert report["aggregates"]["misclassified_full"] == [
            {"K": 3, "count": 0}, {"K": 4, "count": 0},
            {"K": 5, "count": 0}, {"K": 6, "count": 0},
        ]
        ck_lines = (out / "steps.jsonl").read_text().strip().splitlines()
        steps_total = 2 + 2 + 3 + 3 + 4 + 4 + 4 + 5 + 5 + 5
        assert len(ck_lines) == 10 + steps_total  # one k=0 row per glyph
        stdout = capsys.readouterr().out
        assert "processed 10 glyphs over 10 classes" in stdout

    def test_two_runs_byte_identical(self, tmp_path, mixed_dir):
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert run("simplify", "--input", mixed_dir, "--out", a,
                   "--threads", 1) == 0
        assert run("simplify", "--input", mixed_dir, "--out", b,
                   "--threads", 2, "--batch", 7) == 0
        files_a = tree_bytes(a)
        files_b = tree_bytes(b)
        del files_a["steps.jsonl"], files_b["steps.jsonl"]
        assert files_a == files_b

    def test_resume_after_truncation_byte_identical(self, tmp_path, mixed_dir):
        fresh = tmp_path / "fresh"
        resumed = tmp_path / "resumed"
        assert run("simplify", "--input", mixed_dir, "--out", fresh) == 0
        assert run("simplify", "--input", mixed_dir, "--out", resumed) == 0

        ck = resumed / "steps.jsonl"
        lines = ck.read_text(encoding="utf-8").splitlines()
        kept = lines[:-4]
        ck.write_text(
            "\n".join(kept) + "\n" + '{"codepoint": 20000, "k"',
            encoding="utf-8",
        )
        (resumed / "report.json").unlink()
        assert run("simplify", "--input", mixed_dir, "--out", resumed) == 0
        assert (resumed / "report.json").read_bytes() == (
            fresh / "report.json"
        ).read_bytes()
        for name in ("curves_optimal.csv", "sheet_k6.svg"):
            assert (resumed / name).read_bytes() == (fresh / name).read_bytes()

    def test_single_k_mode(self, tmp_path, mixed_dir):
        out = tmp_path / "out"
        assert run("simplify", "--input", mixed_dir, "--out", out, "--k", 1) == 0
        report = ss.parse_report(out / "report.json")
        for doc in report["glyphs"]:
            assert doc["tolerance"] is None
            assert [s["k"] for s in doc["steps"]] == [1]
        assert report["aggregates"]["curves"] == []
        assert not list(out.glob("sheet_k*.svg"))

    def test_stroke_count_filter(self, tmp_path, mixed_dir):
        out = tmp_path / "out"
        assert run("simplify", "--input", mixed_dir, "--out", out,
                   "--strokes", 5) == 0
        report = ss.parse_report(out / "report.json")
        assert len(report["glyphs"]) == 3
        assert all(doc["K"] == 5 for doc in report["glyphs"])
        assert list(out.glob("sheet_k*.svg")) == [out / "sheet_k5.svg"]

    def test_with_baseline(self, tmp_path, mixed_dir):
        out = tmp_path / "out"
        assert run("simplify", "--input", mixed_dir, "--out", out,
                   "--with-baseline", "--strokes", 4) == 0
        assert (out / "baseline.jsonl").exists()
        report = ss.parse_report(out / "report.json")
        (block,) = report["aggregates"]["curves"]
        assert block["baseline"] is not None
        for opt, base in zip(block["points"], block["baseline"]):
            assert base["mean"] <= opt["mean"]
        rows = (out / "curves_baseline.csv").read_text().strip().splitlines()
        assert len(rows) == 1 + 3

    def test_beam_mode(self, tmp_path, mixed_dir):
        out = tmp_path / "out"
        assert run("simplify", "--input", mixed_dir, "--out", out,
                   "--beam", 2, "--strokes", 6) == 0
        report = ss.parse_report(out / "report.json")
        assert len(report["glyphs"]) == 3
        exhaustive = tmp_path / "exhaustive"
        assert run("simplify", "--input", mixed_dir, "--out", exhaustive,
                   "--strokes", 6) == 0
        exact = ss.parse_report(exhaustive / "report.json")
        for beam_doc, exact_doc in zip(report["glyphs"], exact["glyphs"]):
            for b, e in zip(beam_doc["steps"], exact_doc["steps"]):
                assert b["legibility"] <= e["legibility"]

    def test_format_json_only(self, tmp_path, mixed_dir):
        out = tmp_path / "out"
        assert run("simplify", "--input", mixed_dir, "--out", out,
                   "--strokes", 3, "--format", "json") == 0
        assert (out / "report.json").exists()
        assert not (out / "curves_optimal.csv").exists()

    def test_single_stroke_glyphs_skipped(self, tmp_path, capsys):
        src = tmp_path / "src"
        sc.write_corpus(
            src,
            {
                0x4E00: [sc.STROKE_LIBRARY[0]],
                0x4E8C: list(sc.STROKE_LIBRARY[1:4]),
                0x4E09: list(sc.STROKE_LIBRARY[4:8]),
            },
        )
        out = tmp_path / "out"
        assert run("simplify", "--input", src, "--out", out) == 0
        assert "skipping 1 single-stroke glyph" in capsys.readouterr().err
        report = ss.parse_report(out / "report.json")
        assert [doc["codepoint"] for doc in report["glyphs"]] == [0x4E09, 0x4E8C]
        assert report["corpus"]["count"] == 3  # skip affects targets, not corpus


class TestSimplifyWithExternal:
    def command(self, mode="dense"):
        return f"external:{sys.executable} {STUB} {mode}"

    def corpus_dir(self, tmp_path):
        src = tmp_path / "src"
        sc.write_corpus(
            src,
            {
                0x4E00: list(sc.STROKE_LIBRARY[0:3]),
                0x4E01: list(sc.STROKE_LIBRARY[3:6]),
            },
        )
        return src

    def test_misclassified_fulls_are_excluded(self, tmp_path, cfg):
        src = self.corpus_dir(tmp_path)
        out = tmp_path / "out"
        code = run(
            "simplify", "--input", src, "--out", out,
            "--classifier", self.command(),
        )
        assert code == 0
        report = ss.parse_report(out / "report.json")
        assert report["backend"]["kind"] == "external"
        assert report["backend"]["class_count"] == 5

        # recompute which fulls the stub misclassifies, independently
        corpus = ss.filter_corpus_cjk(ss.load_glyphs(src))
        wrong = 0
        for glyph in corpus.glyphs:
            img = ss.render_subset(
                glyph, ss.full_subset(glyph.stroke_count), cfg
            )
            probs = stub.probs_for(img.pixels.tobytes())
            predicted = stub.EXPECTED_LABELS[probs.index(max(probs))]
            if predicted != glyph.class_label:
                wrong += 1
        (entry,) = report["aggregates"]["misclassified_full"]
        assert entry == {"K": 3, "count": wrong}
        kept = [b["K"] for b in report["aggregates"]["curves"]]
        assert kept == ([3] if wrong < 2 else [])

    def test_backend_crash_exits_3(self, tmp_path, mixed_dir):
        code = run(
            "simplify", "--input", mixed_dir, "--out", tmp_path / "out",
            "--classifier", self.command("crash"),
        )
        assert code == 3

    def test_class_space_mismatch_exits_1(self, tmp_path, mixed_dir):
        # the stub only knows five classes; the mixed corpus has others
        code = run(
            "simplify", "--input", mixed_dir, "--out", tmp_path / "out",
            "--classifier", self.command(),
        )
        assert code == 1


class TestBaselineCommand:
    def test_artifacts(self, tmp_path, mixed_dir):
        out = tmp_path / "out"
        assert run("baseline", "--input", mixed_dir, "--out", out, "--k", 1) == 0
        doc = read_json(out / "baseline.json")
        assert doc["schema"] == "strokesimp-baseline/1"
        assert len(doc["glyphs"]) == 10
        for block in doc["glyphs"]:
            assert [p["k"] for p in block["points"]] == [1]
            p = block["points"][0]
            assert p["min"] <= p["mean"] <= p["max"]
        rows = (out / "curves_baseline.csv").read_text().strip().splitlines()
        assert len(rows) == 1 + 4  # one k=1 row for each distinct K

    def test_all_k_and_resume(self, tmp_path, mixed_dir):
        fresh = tmp_path / "fresh"
        resumed = tmp_path / "resumed"
        assert run("baseline", "--input", mixed_dir, "--out", fresh,
                   "--strokes", 4) == 0
        assert run("baseline", "--input", mixed_dir, "--out", resumed,
                   "--strokes", 4) == 0
        ck = resumed / "baseline.jsonl"
        lines = ck.read_text().splitlines()
        ck.write_text("\n".join(lines[:-2]) + "\n", encoding="utf-8")
        (resumed / "baseline.json").unlink()
        assert run("baseline", "--input", mixed_dir, "--out", resumed,
                   "--strokes", 4) == 0
        assert (resumed / "baseline.json").read_bytes() == (
            fresh / "baseline.json"
        ).read_bytes()

    def test_budget_exit_4(self, tmp_path, mixed_dir):
        code = run("baseline", "--input", mixed_dir, "--out", tmp_path / "o",
                   "--budget", 5)
        assert code == 4


class TestRenderCommand:
    def test_png_matches_library(self, tmp_path, mixed_dir, mixed_corpus, cfg):
        from PIL import Image

        svg = sorted(mixed_dir.iterdir())[0]
        out = tmp_path / "glyph.png"
        assert run("render", "--input", svg, "--out", out) == 0
        glyph = mixed_corpus.glyphs[0]
        want = ss.render_subset(glyph, ss.full_subset(glyph.stroke_count), cfg)
        got = np.asarray(Image.open(out))
        assert np.array_equal(got, want.pixels)

    def test_remove_and_pgm(self, tmp_path, mixed_dir, mixed_corpus, cfg):
        svg = sorted(mixed_dir.iterdir())[0]
        out = tmp_path / "glyph.pgm"
        assert run("render", "--input", svg, "--out", out, "--remove", "0,2") == 0
        glyph = mixed_corpus.glyphs[0]
        subset = ss.full_subset(3) & ~0b101
        want = ss.render_subset(glyph, subset, cfg)
        raw = out.read_bytes()
        assert raw.startswith(b"P5\n64 64\n255\n")
        assert raw[len(b"P5\n64 64\n255\n"):] == want.pixels.tobytes()

    def test_on_white_and_grid(self, tmp_path, mixed_dir):
        from PIL import Image

        svg = sorted(mixed_dir.iterdir())[0]
        out = tmp_path / "glyph.png"
        assert run("render", "--input", svg, "--out", out,
                   "--on-white", "--grid", 32) == 0
        px = np.asarray(Image.open(out))
        assert px.shape == (32, 32)
        assert px[0, 0] == 255  # background is white when inverted

    @pytest.mark.parametrize(
        "extra",
        [
            ("--remove", "0,0"),
            ("--remove", "9"),
            ("--remove", "0,1,2"),
            ("--remove", "x"),
        ],
    )
    def test_bad_remove_exits_2(self, tmp_path, mixed_dir, extra):
        svg = sorted(mixed_dir.iterdir())[0]  # a three-stroke glyph
        code = run("render", "--input", svg, "--out", tmp_path / "g.png", *extra)
        assert code == 2

    def test_bad_suffix_and_missing_input(self, tmp_path, mixed_dir):
        svg = sorted(mixed_dir.iterdir())[0]
        assert run("render", "--input", svg, "--out", tmp_path / "g.bmp") == 2
        assert run("render", "--input", tmp_path / "nope.svg",
                   "--out", tmp_path / "g.png") == 2

    def test_codepoint_override(self, tmp_path):
        doc = '<svg viewBox="0 0 10 10"><path d="M1,5 L9,5"/></svg>'
        svg = tmp_path / "anon.svg"
        svg.write_text(doc, encoding="utf-8")
        out = tmp_path / "g.png"
        assert run("render", "--input", svg, "--out", out,
                   "--codepoint", "U+4E00") == 0
        assert out.exists()
        # without an override the document carries no codepoint
        assert run("render", "--input", svg, "--out", tmp_path / "h.png") == 1


class TestProtocolCheckCommand:
    def stub_command(self, mode):
        return f"{sys.executable} {STUB} {mode}"

    def test_happy_path(self, capsys):
        code = run(
            "protocol-check", self.stub_command("dense"), "--grid", 16
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "handshake ok: 5 classes" in out
        assert "probe disc" in out
        assert "probe blank" in out
        assert "protocol ok" in out

    def test_crash_exits_3(self):
        assert run("protocol-check", self.stub_command("crash")) == 3

    def test_timeout_exits_3(self):
        code = run(
            "protocol-check", self.stub_command("mute"), "--timeout", 1.0
        )
        assert code == 3


class TestConfigResolution:
    def test_config_file_applies_and_flags_win(self, tmp_path, mixed_dir):
        conf = tmp_path / "run.toml"
        conf.write_text(
            f'input = "{mixed_dir}"\ngrid = 32\nthreads = 2\n'
            'strokes = [3]\n',
            encoding="utf-8",
        )
        out = tmp_path / "out"
        assert run("simplify", "--config", conf, "--out", out, "--grid", 64) == 0
        report = ss.parse_report(out / "report.json")
        assert report["raster"]["grid"] == 64  # flag beat the file
        assert all(doc["K"] == 3 for doc in report["glyphs"])

    def test_config_file_alone_supplies_input(self, tmp_path, mixed_dir):
        conf = tmp_path / "run.toml"
        conf.write_text(
            f'input = "{mixed_dir}"\nstrokes = [3]\nformat = "json"\n',
            encoding="utf-8",
        )
        out = tmp_path / "out"
        assert run("simplify", "--config", conf, "--out", out) == 0
        assert (out / "report.json").exists()
        assert not (out / "curves_optimal.csv").exists()

    @pytest.mark.parametrize(
        "body",
        [
            'nonsense_key = 1\n',
            'grid = "wide"\n',
            'k = true\n',
            'format = "yaml"\n',
            'classifier = "magic"\n',
            'strokes = [1]\n',
            'timeout = 0\n',
            'grid = 4\n',
        ],
    )
    def test_bad_config_values_exit_2(self, tmp_path, mixed_dir, body):
        conf = tmp_path / "run.toml"
        conf.write_text(f'input = "{mixed_dir}"\n' + body, encoding="utf-8")
        assert run("simplify", "--config", conf, "--out", tmp_path / "o") == 2

    def test_malformed_toml_exits_2(self, tmp_path):
        conf = tmp_path / "run.toml"
        conf.write_text("input = [unclosed\n", encoding="utf-8")
        assert run("simplify", "--config", conf) == 2

    def test_missing_config_file_exits_2(self, tmp_path):
        assert run("simplify", "--config", tmp_path / "none.toml") == 2

    def test_missing_input_exits_2(self, tmp_path):
        assert run("simplify", "--out", tmp_path / "o") == 2

    def test_budget_exit_4(self, tmp_path, mixed_dir):
        code = run("simplify", "--input", mixed_dir, "--out", tmp_path / "o",
                   "--budget", 10)
        assert code == 4

    def test_k_out_of_range_exits_2(self, tmp_path, mixed_dir):
        code = run("simplify", "--input", mixed_dir, "--out", tmp_path / "o",
                   "--k", 5, "--strokes", 3)
        assert code == 2

    def test_unknown_flag_exits_2(self):
        assert run("simplify", "--frobnicate") == 2

    def test_no_subcommand_exits_2(self):
        assert main([]) == 2


class TestCheckpointFile:
    FIELDS = ("subset", "legibility", "predicted", "correct")

    def record(self, cp, k, leg):
        return {
            "codepoint": cp, "k": k, "subset": 0b11,
            "legibility": leg, "predicted": cp, "correct": True,
        }

    def test_round_trip_and_latest_wins(self, tmp_path):
        path = tmp_path / "steps.jsonl"
        ck = _Checkpoint(path, self.FIELDS)
        ck.add(self.record(100, 1, 0.5))
        ck.add(self.record(100, 2, 0.4))
        ck.add(self.record(100, 1, 0.9))  # supersedes the first line
        again = _Checkpoint(path, self.FIELDS)
        assert again.get(100, 1)["legibility"] == 0.9
        assert again.get(100, 2)["legibility"] == 0.4
        assert again.get(100, 3) is None

    def test_torn_and_foreign_lines_skipped(self, tmp_path):
        path = tmp_path / "steps.jsonl"
        good = json.dumps(self.record(7, 1, 0.25))
        missing_field = json.dumps({"codepoint": 8, "k": 1})
        path.write_text(
            "\n".join([good, "not json at all", missing_field, "[1, 2]",
                       '{"codepoint": 9, "k']) + "\n",
            encoding="utf-8",
        )
        ck = _Checkpoint(path, self.FIELDS)
        assert ck.get(7, 1)["legibility"] == 0.25
        assert ck.get(8, 1) is None
        assert len(ck.records) == 1
