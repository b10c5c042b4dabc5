import numpy as np
import pytest

from ehr_spotlight.errors import DimensionError, ParameterError
from ehr_spotlight.pathway import DimensionConfig, Event, build_vocabulary
from ehr_spotlight.render import (
    PAD_SHADE,
    RenderSpec,
    parse_zoom,
    render_heatmap,
    write_ppm,
    write_raster,
)


def test_block_size_arithmetic():
    grid = np.zeros((6, 400), dtype=np.int64)
    pixels = render_heatmap(RenderSpec(grid=grid, block_size=2))
    assert pixels.shape == (12, 800, 3)


def test_padding_shade_is_distinct_from_events():
    grid = np.zeros((2, 3), dtype=np.int64)
    grid[0, 0] = 1
    grid[1, 2] = 2
    pixels = render_heatmap(RenderSpec(grid=grid, block_size=1))
    assert tuple(pixels[0, 1]) == PAD_SHADE
    assert tuple(pixels[0, 0]) != PAD_SHADE
    assert tuple(pixels[1, 2]) != PAD_SHADE
    # grayscale: all three channels equal on event cells
    assert pixels[0, 0, 0] == pixels[0, 0, 1] == pixels[0, 0, 2]


def test_one_hot_mask_highlights_exactly_one_block():
    grid = np.ones((3, 4), dtype=np.int64)
    mask = np.zeros((3, 4))
    mask[1, 2] = 1.0
    plain = render_heatmap(RenderSpec(grid=grid, block_size=2))
    overlaid = render_heatmap(RenderSpec(grid=grid, mask=mask, block_size=2))
    diff = np.any(plain != overlaid, axis=2)
    changed_blocks = {(r // 2, c // 2) for r, c in np.argwhere(diff)}
    assert changed_blocks == {(1, 2)}


def test_no_mask_renders_plain_image():
    grid = np.zeros((3, 3), dtype=np.int64)
    pixels = render_heatmap(RenderSpec(grid=grid, block_size=3))
    assert np.all(pixels == np.asarray(PAD_SHADE, dtype=np.uint8))


def test_mask_shape_mismatch_rejected():
    with pytest.raises(DimensionError):
        RenderSpec(grid=np.zeros((3, 4)), mask=np.zeros((3, 5)))


def test_zoom_bounds_checked():
    with pytest.raises(DimensionError):
        RenderSpec(grid=np.zeros((3, 4)), zoom=((0, 5), (0, 2)))
    with pytest.raises(DimensionError):
        RenderSpec(grid=np.zeros((3, 4)), zoom=((2, 1), (0, 2)))


def test_zoom_crops_before_scaling():
    grid = np.arange(12).reshape(3, 4)
    pixels = render_heatmap(RenderSpec(grid=grid, zoom=((1, 3), (0, 2)), block_size=4))
    assert pixels.shape == (8, 8, 3)


def test_block_size_must_be_positive():
    with pytest.raises(ParameterError):
        RenderSpec(grid=np.zeros((2, 2)), block_size=0)


def test_annotation_draws_text_at_large_blocks():
    events = [Event("p", 0, "AB", "icd9", "procedures")]
    vocab = build_vocabulary(events)
    grid = np.zeros((2, 2), dtype=np.int64)
    grid[0, 0] = 1
    with_text = render_heatmap(RenderSpec(grid=grid, block_size=16, vocab=vocab))
    without = render_heatmap(RenderSpec(grid=grid, block_size=16, vocab=vocab, annotate=False))
    assert with_text.shape == without.shape == (32, 32, 3)
    assert np.any(with_text != without)
    # small blocks skip annotation entirely
    small_a = render_heatmap(RenderSpec(grid=grid, block_size=4, vocab=vocab))
    small_b = render_heatmap(RenderSpec(grid=grid, block_size=4, vocab=vocab, annotate=False))
    assert np.array_equal(small_a, small_b)


def test_write_ppm_header_and_payload(tmp_path):
    pixels = np.zeros((2, 3, 3), dtype=np.uint8)
    pixels[0, 0] = (255, 0, 0)
    path = tmp_path / "out.ppm"
    write_ppm(path, pixels)
    data = path.read_bytes()
    assert data.startswith(b"P6\n3 2\n255\n")
    assert len(data) == len(b"P6\n3 2\n255\n") + 2 * 3 * 3
    assert data[-18:-15] == b"\xff\x00\x00"[:3] or data[11:14] == b"\xff\x00\x00"


def test_write_raster_dispatches_on_suffix(tmp_path):
    pixels = np.zeros((2, 2, 3), dtype=np.uint8)
    write_raster(tmp_path / "a.ppm", pixels)
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6")


def test_parse_zoom():
    assert parse_zoom("1:3,0:5") == ((1, 3), (0, 5))
    with pytest.raises(ParameterError):
        parse_zoom("1:3")
    with pytest.raises(ParameterError):
        parse_zoom("a:b,c:d")
