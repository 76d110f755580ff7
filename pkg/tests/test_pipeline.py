import json
from fractions import Fraction

import pytest

from dvp.cli import main as cli_main
from dvp.codec_driver import CBR, VBV, default_profile, encoder_invocations
from dvp.frame_io import write_y4m
from dvp.pipeline import LadderConfig, cache_key, run_ladder
from dvp.precoder_net import build_network, save_weights
from dvp.resampler import BICUBIC, ScaleFactor

from conftest import make_video

S = ScaleFactor

MANIFEST_KEYS = [
    "gop_index", "start_frame", "frame_count", "bitrate", "scale",
    "encoded_width", "encoded_height", "segment_uri", "codec",
]


@pytest.fixture
def weights_file(tmp_path):
    path = tmp_path / "w.dvpw"
    save_weights(build_network("random", seed=21), path)
    return path


@pytest.fixture
def source_y4m(tmp_path):
    video = make_video(64, 48, 12, seed=13, smooth=True, fps=Fraction(30, 1))
    path = tmp_path / "src.y4m"
    write_y4m(video, path)
    return path


def base_config(tmp_path, weights_file, **overrides) -> LadderConfig:
    kwargs = dict(
        bitrates=[3_000, 12_000],
        codec=default_profile("mock"),
        scales=[S(1), S(3, 2), S(2), S(3), S(6)],
        gop_len=4,
        footprint_n=2,
        weights_path=weights_file,
        output_dir=tmp_path / "out",
        jobs=1,
    )
    kwargs.update(overrides)
    return LadderConfig(**kwargs)


class TestCacheKey:
    GOP_HASH = "abc123"

    def test_identical_inputs_same_key(self):
        profile = default_profile("mock")
        rc = VBV(18, 500_000, 500_000)
        assert cache_key(self.GOP_HASH, S(2), profile, rc) == cache_key(
            self.GOP_HASH, S(2), profile, rc
        )

    def test_crf_change_changes_key(self):
        profile = default_profile("mock")
        a = cache_key(self.GOP_HASH, S(2), profile, VBV(18, 500_000, 500_000))
        b = cache_key(self.GOP_HASH, S(2), profile, VBV(23, 500_000, 500_000))
        assert a != b

    def test_each_field_matters(self):
        profile = default_profile("mock")
        rc = CBR(500_000)
        base = cache_key(self.GOP_HASH, S(2), profile, rc)
        assert base != cache_key("other", S(2), profile, rc)
        assert base != cache_key(self.GOP_HASH, S(3), profile, rc)
        assert base != cache_key(self.GOP_HASH, S(2), default_profile("h264"), rc)
        assert base != cache_key(self.GOP_HASH, S(2), profile, CBR(600_000))

    def test_key_is_canonical_hex(self):
        key = cache_key(self.GOP_HASH, S(2), default_profile("mock"), CBR(1000))
        assert len(key) == 64 and all(c in "0123456789abcdef" for c in key)


class TestRunLadder:
    def test_manifest_cardinality_and_keys(self, tmp_path, weights_file, source_y4m):
        cfg = base_config(tmp_path, weights_file)
        result = run_ladder(source_y4m, cfg)
        assert len(result.manifest) == 3 * 2  # 3 GOPs x 2 bitrates
        assert not result.errors
        for entry in result.manifest:
            assert list(entry.keys()) == MANIFEST_KEYS
            assert entry["scale"] in {str(s) for s in cfg.scales}
            seg = cfg.output_dir / entry["segment_uri"]
            assert seg.exists()
        doc = json.loads(result.manifest_path.read_text())
        assert doc == result.manifest

    def test_entries_sorted_and_geometry_consistent(self, tmp_path, weights_file, source_y4m):
        cfg = base_config(tmp_path, weights_file)
        result = run_ladder(source_y4m, cfg)
        order = [(e["gop_index"], e["bitrate"]) for e in result.manifest]
        assert order == sorted(order)
        for e in result.manifest:
            s = S.parse(e["scale"])
            assert e["encoded_width"] == s.target(64)
            assert e["encoded_height"] == s.target(48)

    def test_native_only_ladder_keeps_geometry(self, tmp_path, weights_file, source_y4m):
        cfg = base_config(tmp_path, weights_file, scales=[S(1)])
        result = run_ladder(source_y4m, cfg)
        assert all(e["encoded_width"] == 64 and e["encoded_height"] == 48
                   for e in result.manifest)

    def test_classical_precoder_needs_no_weights(self, tmp_path, source_y4m):
        cfg = base_config(tmp_path, None, weights_path=None, luma_filter=BICUBIC)
        result = run_ladder(source_y4m, cfg)
        assert len(result.manifest) == 6

    def test_missing_weights_is_error(self, tmp_path, source_y4m):
        cfg = base_config(tmp_path, None, weights_path=None)
        with pytest.raises(Exception, match="weights"):
            run_ladder(source_y4m, cfg)

    def test_scale_choice_monotone_over_rungs(self, tmp_path, weights_file, source_y4m):
        cfg = base_config(tmp_path, weights_file,
                          bitrates=[1_500, 6_000, 30_000],
                          scales=list(S(x) for x in (1, 2, 3, 6)) + [S(3, 2)])
        result = run_ladder(source_y4m, cfg)
        by_gop = {}
        for e in result.manifest:
            by_gop.setdefault(e["gop_index"], []).append(
                (e["bitrate"], S.parse(e["scale"]).value))
        for gop, picks in by_gop.items():
            picks.sort()
            values = [v for _, v in picks]
            assert all(b <= a for a, b in zip(values, values[1:])), (gop, picks)

    def test_report_written(self, tmp_path, weights_file, source_y4m):
        cfg = base_config(tmp_path, weights_file)
        result = run_ladder(source_y4m, cfg)
        report = json.loads(result.report_path.read_text())
        assert len(report["cells"]) == 6
        assert all(c["sequence_psnr"] > 20 for c in report["cells"])
        assert {r["bitrate"] for r in report["rungs"]} == {3_000, 12_000}

    def test_failed_cells_report_structured_errors(self, tmp_path, source_y4m):
        profile = default_profile("h264")
        profile.encode_vbv_template = "no-such-binary {OUT}"
        profile.decode_template = "no-such-binary {IN} {OUT}"
        cfg = base_config(tmp_path, None, weights_path=None, luma_filter=BICUBIC,
                          codec=profile)
        result = run_ladder(source_y4m, cfg)
        assert not result.cells
        assert len(result.errors) == 6
        for err in result.errors:
            assert set(err) == {"gop_index", "bitrate", "error"}
        assert len(result.manifest) == 6  # error entries keep the cells accounted

    def test_production_encode_uses_vbv_rung_settings(self, tmp_path, weights_file, source_y4m):
        # The final encode of every cell must carry the per-scale CRF with
        # maxrate=bufsize=rung, not the CBR remap rate used during selection.
        from dvp.frame_io import read_y4m, segment_gops

        cfg = base_config(tmp_path, weights_file)
        result = run_ladder(source_y4m, cfg)
        gops = {g.index: g for g in segment_gops(read_y4m(source_y4m), cfg.gop_len)}
        cache_docs = [json.loads(p.read_text()) for p in cfg.cache_dir.glob("*.json")]
        assert len(cache_docs) == len(result.cells)
        for doc in cache_docs:
            entry = doc["entry"]
            scale = S.parse(entry["scale"])
            rc = VBV(cfg.codec.crf_for(scale), entry["bitrate"], entry["bitrate"])
            expected = cache_key(gops[entry["gop_index"]].content_hash(),
                                 scale, cfg.codec, rc)
            assert doc["encode_key"] == expected

    def test_resumability_zero_encoder_invocations(self, tmp_path, weights_file, source_y4m):
        cfg = base_config(tmp_path, weights_file)
        first = run_ladder(source_y4m, cfg)
        assert all(not c.cached for c in first.cells)
        encoder_invocations.reset()
        second = run_ladder(source_y4m, cfg)
        assert encoder_invocations.value == 0
        assert all(c.cached for c in second.cells)
        assert second.manifest == first.manifest

    def test_cache_invalidated_by_content_change(self, tmp_path, weights_file):
        video = make_video(64, 48, 4, seed=13, smooth=True)
        src1 = tmp_path / "a.y4m"
        write_y4m(video, src1)
        cfg = base_config(tmp_path, weights_file, bitrates=[6_000])
        run_ladder(src1, cfg)
        other = make_video(64, 48, 4, seed=14, smooth=True)
        src2 = tmp_path / "b.y4m"
        write_y4m(other, src2)
        encoder_invocations.reset()
        run_ladder(src2, cfg)
        assert encoder_invocations.value > 0

    def test_parallel_cells_match_serial(self, tmp_path, weights_file, source_y4m):
        cfg1 = base_config(tmp_path, weights_file, output_dir=tmp_path / "o1", jobs=1)
        cfg4 = base_config(tmp_path, weights_file, output_dir=tmp_path / "o2", jobs=4)
        r1 = run_ladder(source_y4m, cfg1)
        r4 = run_ladder(source_y4m, cfg4)
        assert r1.manifest == r4.manifest

    def test_bitrates_must_increase(self, tmp_path, weights_file):
        with pytest.raises(Exception, match="strictly increasing"):
            base_config(tmp_path, weights_file, bitrates=[5000, 5000])

    def test_raw_yuv_source(self, tmp_path, weights_file):
        from dvp.frame_io import write_yuv420

        video = make_video(32, 24, 4, seed=15, smooth=True)
        src = tmp_path / "clip.yuv"
        write_yuv420(video.frames, src)
        cfg = base_config(tmp_path, weights_file, bitrates=[6_000], gop_len=2,
                          scales=[S(1), S(2)])
        result = run_ladder(src, cfg, raw_dims=(32, 24), raw_fps=Fraction(30, 1))
        assert len(result.manifest) == 2


class TestCli:
    def test_encode_command(self, tmp_path, weights_file, source_y4m, capsys):
        out = tmp_path / "cliout"
        rc = cli_main([
            "encode", "--input", str(source_y4m), "--codec", "mock",
            "--bitrates", "3k,12k", "--gop", "4", "--scales", "1,3/2,2,6",
            "--footprint", "2", "--weights", str(weights_file),
            "--upscaler", "bilinear", "--out", str(out),
            "--manifest", str(tmp_path / "m.json"),
        ])
        assert rc == 0
        doc = json.loads((tmp_path / "m.json").read_text())
        assert len(doc) == 6
        assert "cells encoded" in capsys.readouterr().out

    def test_config_file_with_flag_override(self, tmp_path, weights_file, source_y4m):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text(
            "\n".join([
                f"input = {source_y4m}",
                "codec = mock",
                "bitrates = 3k,12k",
                "gop = 4",
                "scales = 1,2",
                "footprint = 2",
                f"weights = {weights_file}",
                f"out = {tmp_path / 'cfgout'}",
                "# comment line",
            ])
        )
        rc = cli_main(["encode", "--config", str(cfg_file), "--bitrates", "5k"])
        assert rc == 0
        doc = json.loads((tmp_path / "cfgout" / "manifest.json").read_text())
        assert {e["bitrate"] for e in doc} == {5000}  # flag beat the config

    def test_netinfo_command(self, tmp_path, capsys):
        rc = cli_main(["netinfo", "--json", str(tmp_path / "n.json")])
        assert rc == 0
        text = capsys.readouterr().out
        assert "parameters: 5928" in text
        doc = json.loads((tmp_path / "n.json").read_text())
        assert doc["params_weights_only"] == 5512
        assert doc["macs_total"] == 3_381_281_280

    def test_netinfo_with_weights(self, tmp_path, weights_file, capsys):
        rc = cli_main(["netinfo", "--weights", str(weights_file)])
        assert rc == 0
        assert "w.dvpw" in capsys.readouterr().out

    def test_hull_command(self, tmp_path, capsys):
        csv = tmp_path / "points.csv"
        csv.write_text("rate,distortion,scale\n100,10,1\n200,8,2\n300,9,3/2\n400,5,4\n")
        rc = cli_main(["hull", "--points", str(csv)])
        assert rc == 0
        text = capsys.readouterr().out
        assert "after monotonicity pruning (3)" in text
        assert "after convex hull (3)" in text
        assert "remap bitrate" in text

    def test_metrics_command(self, tmp_path, capsys):
        a = make_video(24, 16, 3, seed=1)
        b = make_video(24, 16, 3, seed=2)
        pa, pb = tmp_path / "a.y4m", tmp_path / "b.y4m"
        write_y4m(a, pa)
        write_y4m(b, pb)
        rc = cli_main(["metrics", "--reference", str(pa), "--distorted", str(pb)])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert 0 < doc["sequence_psnr"] < 100

    def test_rate_parsing(self):
        from dvp.cli import parse_rate, parse_rates

        assert parse_rate("500k") == 500_000
        assert parse_rate("1.5m") == 1_500_000
        assert parse_rate("800") == 800
        assert parse_rates("500k,1500k") == [500_000, 1_500_000]

    def test_scale_parsing(self):
        from dvp.cli import parse_scales
        from dvp.precoder_net import CANONICAL_SCALES

        assert parse_scales("all") == list(CANONICAL_SCALES)
        assert parse_scales("1,3/2") == [S(1), S(3, 2)]
