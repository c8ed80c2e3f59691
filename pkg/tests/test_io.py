import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidar_looming.errors import FormatVersionError, InvalidInputError, LoomingError, ParseError
from lidar_looming.io import (
    ColorScale,
    EgoMotionRecord,
    decode_threat_ppm,
    looming_map_bytes,
    looming_ppm_bytes,
    parse_ego_motion,
    parse_lgrid,
    parse_ppm,
    parse_rgrid,
    parse_velodyne_bytes,
    range_image_bytes,
    read_ego_motion,
    read_lgrid,
    read_rgrid,
    read_velodyne_bin,
    threat_ppm_bytes,
    velocity_at,
    write_lgrid,
    write_looming_ppm,
    write_rgrid,
    write_threat_ppm,
    write_velodyne_bin,
)
from lidar_looming.looming import LoomingMap, ThreatClass, ThreatMap, classify_threat
from lidar_looming.range_image import GridSpec, PointCloud, RangeImage

SPEC = GridSpec(width=12, height=5)


def f32_image(rng, spec=SPEC, empty_frac=0.3):
    ranges = rng.uniform(0.5, 120, spec.shape).astype(np.float32).astype(np.float64)
    mask = rng.random(spec.shape) > empty_frac
    return RangeImage(spec, ranges, mask, timestamp=1.25)


def f32_map(rng, spec=SPEC, dt=0.1):
    values = rng.normal(0, 2, spec.shape).astype(np.float32).astype(np.float64)
    mask = rng.random(spec.shape) > 0.3
    return LoomingMap(spec, values, mask, dt=dt)


# -- velodyne -------------------------------------------------------------------------


def test_two_records():
    data = struct.pack("<8f", 10.0, 0.0, 0.0, 0.5, 1.0, 2.0, 3.0, 0.25)
    cloud = parse_velodyne_bytes(data)
    assert len(cloud) == 2
    assert cloud.points[0].tolist() == [10.0, 0.0, 0.0]
    assert cloud.intensity.tolist() == [0.5, 0.25]
    assert cloud.dropped == 0


def test_truncated_file_reports_offset():
    data = struct.pack("<8f", *range(8)) + b"\x00" * 5
    with pytest.raises(ParseError) as exc:
        parse_velodyne_bytes(data)
    assert exc.value.where == 32
    assert "32" in str(exc.value)


def test_non_finite_records_dropped():
    data = struct.pack("<12f", 1, 2, 3, 0, float("nan"), 0, 0, 0, 4, 5, 6, float("inf"))
    cloud = parse_velodyne_bytes(data)
    assert len(cloud) == 1
    assert cloud.dropped == 2
    assert len(cloud) + cloud.dropped == len(data) // 16


def test_velodyne_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(40)
    pts = rng.normal(size=(500, 3)).astype(np.float32) * 20
    cloud = PointCloud(pts, rng.random(500).astype(np.float32))
    path = tmp_path / "scan.bin"
    write_velodyne_bin(cloud, path)
    assert path.stat().st_size == 500 * 16
    back = read_velodyne_bin(path)
    assert np.array_equal(back.points, cloud.points)
    assert np.array_equal(back.intensity, cloud.intensity)
    write_velodyne_bin(back, tmp_path / "again.bin")
    assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=400))
def test_velodyne_parser_total(data):
    try:
        cloud = parse_velodyne_bytes(data)
    except ParseError:
        assert len(data) % 16
        return
    assert len(cloud) + cloud.dropped == len(data) // 16
    assert np.all(np.isfinite(cloud.points))


# -- ego motion ------------------------------------------------------------------------------


def test_ego_interpolation_examples():
    recs = parse_ego_motion("# t,vx,vy,vz\n0.0,5,0,0\n\n1.0,7,0,0  # end\n")
    assert recs == [EgoMotionRecord(0.0, (5.0, 0.0, 0.0)), EgoMotionRecord(1.0, (7.0, 0.0, 0.0))]
    assert velocity_at(recs, 0.5) == (6.0, 0.0, 0.0)
    assert velocity_at(recs, -3.0) == (5.0, 0.0, 0.0)
    assert velocity_at(recs, 9.0) == (7.0, 0.0, 0.0)


def test_ego_exact_at_records_and_linear_between():
    rng = np.random.default_rng(41)
    ts = np.cumsum(rng.uniform(0.05, 0.2, 20))
    vs = rng.normal(size=(20, 3))
    recs = [EgoMotionRecord(float(t), tuple(v)) for t, v in zip(ts, vs)]
    for t, v in zip(ts, vs):
        assert velocity_at(recs, float(t)) == tuple(v)
    for k in range(19):
        for w in (0.25, 0.5, 0.9):
            got = np.array(velocity_at(recs, float(ts[k] + w * (ts[k + 1] - ts[k]))))
            assert np.allclose(got, vs[k] + w * (vs[k + 1] - vs[k]), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize(
    "text, line",
    [
        ("0,1,2,3\n1,1,2\n", 2),
        ("0,1,2,3\n# c\nx,1,2,3\n", 3),
        ("0,1,2,3\n0.5,1,1,1\n0.5,1,1,1\n", 3),
        ("0,1,2,3\n-1,0,0,0\n", 2),
        ("nan,0,0,0\n", 1),
    ],
)
def test_ego_errors_name_line(text, line):
    with pytest.raises(ParseError) as exc:
        parse_ego_motion(text)
    assert exc.value.where == line
    assert f"line {line}" in str(exc.value)


def test_ego_file(tmp_path):
    p = tmp_path / "ego.csv"
    p.write_text("0.0,5,0,0\n0.1,5,0.5,0\n")
    assert velocity_at(read_ego_motion(p), 0.05) == pytest.approx((5.0, 0.25, 0.0))
    with pytest.raises(InvalidInputError):
        velocity_at([], 0.0)


# -- RGRID / LGRID -------------------------------------------------------------------------


def test_rgrid_roundtrip(tmp_path):
    rng = np.random.default_rng(42)
    img = f32_image(rng, GridSpec(width=30, height=7, theta_min=-1.0, theta_max=2.0))
    path = tmp_path / "a.rgrid"
    write_rgrid(img, path)
    back = read_rgrid(path)
    assert back.same_as(img)
    assert back.timestamp == img.timestamp
    assert back.spec == img.spec
    assert range_image_bytes(back) == path.read_bytes()


def test_rgrid_header_layout():
    spec = GridSpec(width=2, height=2)
    mask = np.array([[True, False], [False, False]])
    img = RangeImage(spec, np.full(spec.shape, 3.5), mask, timestamp=0.5)
    data = range_image_bytes(img)
    header, body = data.split(b"\n", 1)
    fields = header.decode().split()
    assert fields[:4] == ["RGRID", "1", "2", "2"]
    assert float(fields[-1]) == 0.5
    assert body == struct.pack("<4f", 3.5, -1.0, -1.0, -1.0)


def test_rgrid_bad_magic():
    data = range_image_bytes(f32_image(np.random.default_rng(43)))
    with pytest.raises(ParseError, match="RGRID"):
        parse_rgrid(b"XGRID" + data[5:])


def test_rgrid_version_mismatch():
    data = range_image_bytes(f32_image(np.random.default_rng(44)))
    with pytest.raises(FormatVersionError):
        parse_rgrid(data.replace(b"RGRID 1 ", b"RGRID 2 ", 1))


def test_rgrid_short_payload():
    data = range_image_bytes(f32_image(np.random.default_rng(45)))
    with pytest.raises(ParseError, match=str(SPEC.width * SPEC.height * 4)):
        parse_rgrid(data[:-4])


def test_rgrid_rejects_invalid_ranges():
    img = RangeImage.empty(GridSpec(width=2, height=2))
    data = range_image_bytes(img)[:-8] + struct.pack("<2f", -1.0, -5.0)
    with pytest.raises(ParseError):
        parse_rgrid(data)


def test_rgrid_writer_rejects_float32_underflow():
    spec = GridSpec(width=2, height=2)
    img = RangeImage(spec, np.array([[1e-60, 1.0], [1.0, 1.0]]), np.ones((2, 2), bool))
    with pytest.raises(InvalidInputError):
        range_image_bytes(img)


def test_lgrid_roundtrip(tmp_path):
    rng = np.random.default_rng(46)
    m = f32_map(rng)
    path = tmp_path / "a.lgrid"
    write_lgrid(m, path)
    back = read_lgrid(path)
    assert np.array_equal(back.values, m.values)
    assert np.array_equal(back.mask, m.mask)
    assert back.dt == m.dt
    assert looming_map_bytes(back) == path.read_bytes()


def test_lgrid_reconstructs_clamp_count():
    values = np.zeros(SPEC.shape)
    values[0, :3] = [20.0, -20.0, 19.5]
    m = LoomingMap(SPEC, values, np.ones(SPEC.shape, bool), dt=0.1, clamped=2)
    assert parse_lgrid(looming_map_bytes(m)).clamped == 2


def test_lgrid_mask_length_mismatch():
    data = looming_map_bytes(f32_map(np.random.default_rng(47)))
    n = SPEC.width * SPEC.height
    with pytest.raises(ParseError) as exc:
        parse_lgrid(data + b"\x01")
    assert str(n) in str(exc.value) and str(n + 1) in str(exc.value)
    with pytest.raises(ParseError, match=f"{n - 3} bytes, expected {n}"):
        parse_lgrid(data[:-3])


def test_lgrid_bad_mask_byte():
    data = bytearray(looming_map_bytes(f32_map(np.random.default_rng(48))))
    data[-1] = 7
    with pytest.raises(ParseError):
        parse_lgrid(bytes(data))


def test_lgrid_magic_is_checked():
    data = range_image_bytes(f32_image(np.random.default_rng(49)))
    with pytest.raises(ParseError, match="LGRID"):
        parse_lgrid(data)


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=200), st.sampled_from([b"", b"RGRID 1 ", b"LGRID 1 ", b"RGRID 1 2 2 0 1 0 1 0\n"]))
def test_grid_parsers_total(tail, prefix):
    data = prefix + tail
    for parse in (parse_rgrid, parse_lgrid):
        try:
            parse(data)
        except LoomingError:
            pass


# -- PPM ----------------------------------------------------------------------------------------


def one_row_map(values, mask=None):
    """Bottom grid row holds ``values``; the row above it is EMPTY."""
    values = np.array([values, np.zeros(len(values))], dtype=float)
    spec = GridSpec(width=values.shape[1], height=2)
    full = np.zeros(values.shape, bool)
    full[0] = True if mask is None else np.array(mask, bool)
    return LoomingMap(spec, values, full)


def test_looming_ppm_pixels():
    m = one_row_map([2.0, -1.0, 4.0, 0.0, 1.0, -0.002], mask=[1, 1, 1, 1, 0, 1])
    data = looming_ppm_bytes(m, ColorScale(2.0))
    assert data.startswith(b"P6\n6 2\n255\n")
    assert parse_ppm(data)[0].sum() == 0
    px = parse_ppm(data)[1].tolist()
    assert px == [[255, 0, 0], [0, 0, 128], [255, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0]]


def test_looming_ppm_golden():
    m = one_row_map([0.5, -0.25])
    assert looming_ppm_bytes(m, ColorScale(1.0)) == b"P6\n2 2\n255\n" + bytes(6) + bytes([128, 0, 0, 0, 0, 64])


def test_looming_ppm_all_empty_and_orientation(tmp_path):
    spec = GridSpec(width=4, height=3)
    m = LoomingMap(spec, np.zeros(spec.shape), np.zeros(spec.shape, bool))
    assert parse_ppm(looming_ppm_bytes(m, ColorScale())).sum() == 0
    values = np.zeros(spec.shape)
    values[2, 0] = 1.0  # top grid row (highest elevation)
    m = LoomingMap(spec, values, np.ones(spec.shape, bool))
    path = tmp_path / "l.ppm"
    write_looming_ppm(m, ColorScale(1.0), path)
    img = parse_ppm(path.read_bytes())
    assert img.shape == (3, 4, 3)
    assert img[0, 0].tolist() == [255, 0, 0]


def test_looming_ppm_deterministic():
    rng = np.random.default_rng(50)
    a = f32_map(rng)
    b = LoomingMap(a.spec, a.values.copy(), a.mask.copy(), a.dt)
    assert looming_ppm_bytes(a, ColorScale(1.5)) == looming_ppm_bytes(b, ColorScale(1.5))


def test_color_scale_validation():
    for bad in (0.0, -1.0, float("nan"), float("inf")):
        with pytest.raises(InvalidInputError):
            ColorScale(bad)


def test_threat_ppm_palette():
    classes = np.array([[0, 1, 2, 3], [0, 0, 0, 0]], dtype=np.uint8)
    tm = ThreatMap(GridSpec(width=4, height=2), classes, (0.2, 0.5, 1.0))
    body = parse_ppm(threat_ppm_bytes(tm))[1].tolist()
    assert body == [[0, 0, 0], [255, 255, 0], [255, 165, 0], [255, 0, 0]]


def test_threat_ppm_roundtrip(tmp_path):
    rng = np.random.default_rng(51)
    m = LoomingMap(SPEC, rng.normal(0.5, 1, SPEC.shape), rng.random(SPEC.shape) > 0.2)
    tm = classify_threat(m, 0.2, 0.5, 1.0)
    path = tmp_path / "t.ppm"
    write_threat_ppm(tm, path)
    assert np.array_equal(decode_threat_ppm(path.read_bytes()), tm.classes)
    assert set(np.unique(tm.classes)) == set(int(c) for c in ThreatClass)


def test_threat_decoder_rejects_foreign_colors():
    with pytest.raises(ParseError):
        decode_threat_ppm(b"P6\n1 1\n255\n" + bytes([1, 2, 3]))


def test_ppm_parser_errors():
    with pytest.raises(ParseError):
        parse_ppm(b"P3\n1 1\n255\n0 0 0")
    with pytest.raises(ParseError):
        parse_ppm(b"P6\n2 1\n255\n" + bytes(3))
    assert parse_ppm(b"P6\n# c\n1 1\n255\n" + bytes(3)).shape == (1, 1, 3)


def test_unwritable_path(tmp_path):
    m = one_row_map([1.0, 0.5])
    with pytest.raises(OSError):
        write_looming_ppm(m, ColorScale(), tmp_path / "missing" / "x.ppm")
    assert list(tmp_path.iterdir()) == []
