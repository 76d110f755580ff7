import io
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvp.frame_io import (
    FrameIOError,
    PlanarFrame,
    footprint,
    read_y4m,
    read_yuv420,
    segment_gops,
    write_y4m,
    write_yuv420,
    y4m_bytes,
)

from conftest import make_frame, make_video


def y4m_payload(width, height, count, header_extra=b" C420", fps=b"F30:1"):
    cw, ch = (width + 1) // 2, (height + 1) // 2
    rng = np.random.default_rng(42)
    out = b"YUV4MPEG2 W%d H%d %s%s\n" % (width, height, fps, header_extra)
    for _ in range(count):
        out += b"FRAME\n"
        out += rng.integers(0, 256, width * height + 2 * cw * ch, dtype=np.uint8).tobytes()
    return out


class TestReadY4m:
    def test_two_frame_4x4_c420(self):
        video = read_y4m(y4m_payload(4, 4, 2))
        assert len(video) == 2
        for f in video:
            assert f.y.shape == (4, 4)
            assert f.cb.shape == (2, 2)
            assert f.cr.shape == (2, 2)
        assert video.fps == Fraction(30, 1)

    def test_truncated_payload(self):
        payload = y4m_payload(4, 4, 1)
        with pytest.raises(FrameIOError, match="truncated"):
            read_y4m(payload[:-5])

    def test_fhd_luma_sample_count(self):
        video = read_y4m(y4m_payload(1920, 1080, 2))
        assert all(f.y.size == 2_073_600 for f in video)

    def test_unsupported_colorspace(self):
        with pytest.raises(FrameIOError, match="unsupported colorspace"):
            read_y4m(b"YUV4MPEG2 W4 H4 F30:1 C422\n")

    def test_missing_signature(self):
        with pytest.raises(FrameIOError, match="signature"):
            read_y4m(b"JUNK W4 H4 F30:1\n")

    def test_missing_geometry(self):
        with pytest.raises(FrameIOError, match="declare"):
            read_y4m(b"YUV4MPEG2 W4 F30:1\n")

    def test_no_colorspace_tag_defaults_to_420(self):
        video = read_y4m(y4m_payload(4, 4, 1, header_extra=b""))
        assert video.colorspace == "420jpeg"

    def test_garbled_frame_marker(self):
        data = y4m_payload(4, 4, 1).replace(b"FRAME\n", b"FRAMX\n")
        with pytest.raises(FrameIOError, match="FRAME"):
            read_y4m(data)

    def test_full_range_extension(self):
        video = read_y4m(y4m_payload(4, 4, 1, header_extra=b" C420 XCOLORRANGE=FULL"))
        assert video[0].pixel_range == "full"


class TestRoundTrip:
    @given(
        width=st.integers(2, 17),
        height=st.integers(2, 15),
        count=st.integers(1, 4),
        num=st.integers(1, 60),
        den=st.integers(1, 3),
    )
    @settings(max_examples=40, deadline=None)
    def test_frame_payloads_survive(self, width, height, count, num, den):
        video = make_video(width, height, count, seed=width * height,
                           fps=Fraction(num, den))
        buf = io.BytesIO()
        write_y4m(video, buf)
        back = read_y4m(buf.getvalue())
        assert len(back) == count
        assert back.fps == Fraction(num, den)
        for a, b in zip(video, back):
            assert a.same_pixels(b)

    def test_bytes_identical_after_rewrite(self):
        original = y4m_payload(6, 4, 3)
        video = read_y4m(original)
        buf = io.BytesIO()
        write_y4m(video, buf)
        assert read_y4m(buf.getvalue())[1].same_pixels(video[1])
        buf2 = io.BytesIO()
        write_y4m(read_y4m(buf.getvalue()), buf2)
        assert buf.getvalue() == buf2.getvalue()

    def test_raw_yuv_round_trip(self, tmp_path):
        video = make_video(10, 8, 3, seed=3)
        path = tmp_path / "clip.yuv"
        write_yuv420(video.frames, path)
        back = read_yuv420(path, 10, 8)
        assert len(back) == 3
        assert all(a.same_pixels(b) for a, b in zip(video, back))

    def test_raw_yuv_partial_frame(self, tmp_path):
        path = tmp_path / "bad.yuv"
        path.write_bytes(b"\0" * 100)
        with pytest.raises(FrameIOError, match="whole number"):
            read_yuv420(path, 10, 8)

    def test_y4m_bytes_header(self):
        video = make_video(4, 4, 1)
        data = y4m_bytes(video.frames, Fraction(24, 1))
        assert data.startswith(b"YUV4MPEG2 W4 H4 F24:1")


class TestSegmentGops:
    def test_270_frames_gop_90(self):
        gops = segment_gops(make_video(8, 6, 270, seed=1), 90)
        assert [len(g) for g in gops] == [90, 90, 90]
        assert [g.start_frame for g in gops] == [0, 90, 180]

    def test_100_frames_gop_90(self):
        gops = segment_gops(make_video(8, 6, 100, seed=1), 90)
        assert [len(g) for g in gops] == [90, 10]

    def test_30_frames_gop_30(self):
        gops = segment_gops(make_video(8, 6, 30, seed=1), 30)
        assert len(gops) == 1 and len(gops[0]) == 30

    def test_empty_input(self):
        with pytest.raises(FrameIOError, match="no frames"):
            segment_gops([], 90)

    def test_bad_gop_len(self):
        with pytest.raises(ValueError, match="gop_len"):
            segment_gops(make_video(8, 6, 10), 0)

    @given(count=st.integers(1, 50), gop_len=st.integers(1, 20))
    @settings(max_examples=40, deadline=None)
    def test_concatenation_reconstructs_input(self, count, gop_len):
        video = make_video(4, 4, count, seed=count)
        gops = segment_gops(video, gop_len)
        rebuilt = [f for g in gops for f in g.frames]
        assert len(rebuilt) == count
        assert all(a is b for a, b in zip(video.frames, rebuilt))
        assert all(len(g) == gop_len for g in gops[:-1])

    def test_content_hash_is_stable_and_content_sensitive(self):
        video = make_video(8, 6, 4, seed=5)
        g1 = segment_gops(video, 4)[0]
        g2 = segment_gops(video, 4)[0]
        assert g1.content_hash() == g2.content_hash()
        other = segment_gops(make_video(8, 6, 4, seed=6), 4)[0]
        assert g1.content_hash() != other.content_hash()


class TestFootprint:
    def test_90_frames_stride_5(self):
        gop = segment_gops(make_video(4, 4, 90), 90)[0]
        assert len(footprint(gop, 5)) == 18

    def test_stride_1_keeps_everything(self):
        gop = segment_gops(make_video(4, 4, 7), 7)[0]
        view = footprint(gop, 1)
        assert view.frames == gop.frames

    def test_7_frames_stride_3(self):
        gop = segment_gops(make_video(4, 4, 7), 7)[0]
        view = footprint(gop, 3)
        assert len(view) == 3
        assert all(view.frames[i] is gop.frames[i * 3] for i in range(3))

    def test_bad_stride(self):
        gop = segment_gops(make_video(4, 4, 3), 3)[0]
        with pytest.raises(ValueError, match="stride"):
            footprint(gop, 0)

    @given(count=st.integers(1, 40), n=st.integers(1, 40))
    @settings(max_examples=60, deadline=None)
    def test_count_is_ceil_division(self, count, n):
        gop = segment_gops(make_video(4, 4, count, seed=count), count)[0]
        assert len(footprint(gop, n)) == -(-count // n)


class TestPlanarFrame:
    def test_shape_validation(self):
        with pytest.raises(FrameIOError, match="shape"):
            PlanarFrame(4, 4, np.zeros((4, 3), np.uint8),
                        np.zeros((2, 2), np.uint8), np.zeros((2, 2), np.uint8))

    def test_dtype_validation(self):
        with pytest.raises(FrameIOError, match="uint8"):
            PlanarFrame(4, 4, np.zeros((4, 4), np.float32),
                        np.zeros((2, 2), np.uint8), np.zeros((2, 2), np.uint8))

    def test_odd_dims_use_ceiling_chroma(self):
        f = make_frame(5, 3)
        assert f.cb.shape == (2, 3)
        assert f.tobytes() == f.y.tobytes() + f.cb.tobytes() + f.cr.tobytes()

    def test_gop_rejects_mixed_geometry(self):
        from dvp.frame_io import GopSegment

        with pytest.raises(FrameIOError, match="geometry"):
            GopSegment(0, 0, (make_frame(4, 4), make_frame(6, 4)), Fraction(30))
