import math
from dataclasses import replace

import numpy as np
import pytest

from hybridground.camera import Intrinsics, LookAtParams, look_at_view_transform
from hybridground.errors import ValidationError
from hybridground.prompting import (PROMPT_KINDS, PromptStyle, VisibilityReport, candidate_set,
                                    compute_visibility, place_prompts, text_bitmap)
from hybridground.render import RenderConfig, render

from conftest import make_cloud, make_olt

EYE = np.array([0.0, 0.0, 10.0])
TOP_DOWN = look_at_view_transform(LookAtParams(tuple(EYE), (0, 0, 0), (0, 1, 0)))


def oracle_depth(points, pose, intr, radius):
    """Per-pixel nearest depth by looping over points and their splat discs."""
    w, h = intr.image_width, intr.image_height
    f = (h / 2) / math.tan(math.radians(intr.vertical_fov) / 2)
    r = pose.rotation.tolist()
    t = pose.translation.tolist()
    grid = np.full((h, w), np.inf)
    pix = []
    for p in np.asarray(points).tolist():
        d = [p[i] - t[i] for i in range(3)]
        c = [d[0] * r[k][0] + d[1] * r[k][1] + d[2] * r[k][2] for k in range(3)]
        if c[2] <= 1e-9:
            pix.append(None)
            continue
        col = math.floor(w / 2 - f * c[0] / c[2] + 0.5)
        row = math.floor(h / 2 - f * c[1] / c[2] + 0.5)
        pix.append((col, row, c[2]))
        for dy in range(-radius, radius + 1):
            for dx in range(-radius, radius + 1):
                if dx * dx + dy * dy > radius * radius:
                    continue
                cc, rr = col + dx, row + dy
                if 0 <= cc < w and 0 <= rr < h and c[2] < grid[rr, cc]:
                    grid[rr, cc] = c[2]
    return grid, pix


def oracle_visibility(scene_points, object_points, pose, intr, radius, eps):
    grid, _ = oracle_depth(scene_points, pose, intr, radius)
    _, pix = oracle_depth(object_points, pose, intr, 0)
    h, w = grid.shape
    flags = []
    for entry in pix:
        if entry is None or not (0 <= entry[0] < w and 0 <= entry[1] < h):
            flags.append(False)
        else:
            col, row, d = entry
            flags.append(d <= grid[row, col] + eps)
    return np.array(flags)


def grid_object(n=10, spacing=0.1, z=0.0):
    xs = (np.arange(n) - (n - 1) / 2) * spacing + 0.013  # keep projections off half-pixel edges
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel(), np.full(n * n, z)], axis=1)


def test_single_point_sees_itself():
    intr = Intrinsics(64, 64, 60)
    cloud = make_cloud([[0.1, -0.2, 0.0]])
    img = render(cloud, TOP_DOWN, RenderConfig(intr, splat_radius=0))
    rep = compute_visibility(cloud.points, img, epsilon=0.0, alpha=0.2)
    assert rep.visible and rep.visible_points == 1 and rep.total_points == 1


def test_empty_point_set():
    img = render(make_cloud([[0, 0, 0]]), TOP_DOWN, RenderConfig(Intrinsics(16, 16, 60)))
    rep = compute_visibility(np.zeros((0, 3)), img, 0.01, 0.2)
    assert rep.total_points == 0 and not rep.visible and rep.visible_pixel_centroid is None


def test_object_behind_wall_plane():
    intr = Intrinsics(80, 80, 40)
    obj = grid_object(6, 0.1, z=0.0)
    xs = np.arange(-1.0, 1.0, 0.02)
    xx, yy = np.meshgrid(xs, xs)
    wall = np.stack([xx.ravel(), yy.ravel(), np.full(xx.size, 2.0)], axis=1)
    scene = np.concatenate([obj, wall])
    img = render(make_cloud(scene), TOP_DOWN, RenderConfig(intr, splat_radius=2))
    rep = compute_visibility(obj, img, epsilon=0.05, alpha=0.2)
    assert rep.visible_points == 0 and not rep.visible
    np.testing.assert_array_equal(rep.point_visible, oracle_visibility(scene, obj, TOP_DOWN, intr, 2, 0.05))


def test_partial_occluder_thirty_of_hundred():
    intr = Intrinsics(200, 200, 30)
    obj = grid_object(10, 0.1)
    # occluders on the camera rays of the first 30 object points
    occ = EYE + 0.9 * (obj[:30] - EYE)
    scene = np.concatenate([obj, occ])
    img = render(make_cloud(scene), TOP_DOWN, RenderConfig(intr, splat_radius=0))
    rep_lo = compute_visibility(obj, img, epsilon=0.01, alpha=0.5)
    rep_hi = compute_visibility(obj, img, epsilon=0.01, alpha=0.8)
    assert rep_lo.visible_points == 70
    assert rep_lo.visible and not rep_hi.visible
    assert not rep_lo.point_visible[:30].any() and rep_lo.point_visible[30:].all()
    np.testing.assert_array_equal(rep_lo.point_visible,
                                  oracle_visibility(scene, obj, TOP_DOWN, intr, 0, 0.01))


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_random_occluders_match_oracle(seed):
    rng = np.random.default_rng(seed)
    intr = Intrinsics(160, 120, 60)
    pose = look_at_view_transform(LookAtParams((2.5, -2.0, 2.0), (0, 0, 0.5), (0, 0, 1)))
    # a floor patch partly hidden by a random cluster between it and the camera
    obj = rng.uniform([-0.5, -0.5, 0], [0.5, 0.5, 0], size=(300, 3))
    occ = rng.uniform([0.3, -0.6, 0.6], [0.7, -0.2, 0.8], size=(200, 3))
    scene = np.concatenate([obj, occ])
    img = render(make_cloud(scene), pose, RenderConfig(intr, splat_radius=1))
    rep = compute_visibility(obj, img, epsilon=0.1, alpha=0.2)
    expected = oracle_visibility(scene, obj, pose, intr, 1, 0.1)
    np.testing.assert_array_equal(rep.point_visible, expected)
    assert 0 < rep.visible_points < len(obj)


def test_epsilon_and_alpha_monotone():
    rng = np.random.default_rng(5)
    pose = look_at_view_transform(LookAtParams((2.5, -2.0, 2.0), (0, 0, 0.5), (0, 0, 1)))
    obj = rng.uniform([-0.5, -0.5, 0], [0.5, 0.5, 0], size=(300, 3))
    occ = rng.uniform([0.3, -0.6, 0.6], [0.7, -0.2, 0.8], size=(200, 3))
    img = render(make_cloud(np.concatenate([obj, occ])), pose, RenderConfig(Intrinsics(160, 120, 60), 1))
    counts = [compute_visibility(obj, img, eps, 0.2).visible_points for eps in np.linspace(0, 2, 21)]
    assert counts == sorted(counts)
    assert counts[-1] > counts[0]
    flags = [compute_visibility(obj, img, 0.1, a).visible for a in np.linspace(0, 1, 41)]
    assert flags == sorted(flags, reverse=True)


def test_visibility_argument_checks():
    img = render(make_cloud([[0, 0, 0]]), TOP_DOWN, RenderConfig(Intrinsics(16, 16, 60)))
    with pytest.raises(ValidationError):
        compute_visibility([[0, 0, 0]], img, -1, 0.2)
    with pytest.raises(ValidationError):
        compute_visibility([[0, 0, 0]], img, 0.1, 1.5)


def test_candidate_set_examples():
    olt = make_olt((1, "chair", (0, 0, 0), (1, 1, 1)), (2, "chair", (1, 0, 0), (1, 1, 1)),
                   (3, "table", (2, 0, 0), (1, 1, 1)), (4, "sofa", (3, 0, 0), (1, 1, 1)))
    assert candidate_set(olt, "chair", "table") == [1, 2, 3]
    assert candidate_set(olt, "unicorn") == [1, 2, 3, 4]
    assert candidate_set(olt, "chairs") == [1, 2]


def test_text_bitmap_scales():
    bm = text_bitmap("12", 14)
    assert bm.shape == (14, 2 * 10 + 2)
    assert bm.any()


# ------------------------------------------------------------------ compositing

def _blank(w=1000, h=1000):
    intr = Intrinsics(w, h, 60)
    img = render(make_cloud([[50, 50, -50]]), TOP_DOWN, RenderConfig(intr, splat_radius=0))
    assert np.isinf(img.depth).all()
    return img


def _report(oid, cx, cy, n=1, visible=True):
    cols = np.full(n, cx)
    rows = np.full(n, cy)
    return VisibilityReport(oid, n, n if visible else 0, (cx, cy) if visible else None, visible, 0.2,
                            np.full(n, visible), cols, rows)


def test_marker_example():
    img = _blank()
    olt = make_olt((7, "lamp", (0, 0, 0), (1, 1, 1)))
    style = PromptStyle()
    out = place_prompts(img, [_report(7, 500, 500)], olt, style)
    assert out.placed == ((7, (500, 500)),)
    red = np.all(out.rgb == style.color, axis=2)
    white = np.all(out.rgb == style.text_color, axis=2) & out.footprint
    rows, cols = np.nonzero(red | white)
    assert (rows.min() + rows.max()) / 2 == 500 and (cols.min() + cols.max()) / 2 == 500
    assert tuple(out.rgb[500 - style.marker_radius + 1, 500]) == style.color
    assert white.sum() > 0
    assert not (red & white).any()


def test_zero_visible_is_identity():
    rng = np.random.default_rng(0)
    base = render(make_cloud(rng.uniform(-2, 2, size=(3000, 3)) * [1, 1, 0], rng.integers(0, 256, (3000, 3))),
                  TOP_DOWN, RenderConfig(Intrinsics(200, 150, 60)))
    olt = make_olt((1, "chair", (0, 0, 0), (1, 1, 1)))
    for kind in PROMPT_KINDS:
        out = place_prompts(base, [_report(1, 10, 10, visible=False)], olt, PromptStyle(kind))
        assert out.rgb.tobytes() == base.rgb.tobytes()
        assert out.placed == ()


@pytest.mark.parametrize("kind", PROMPT_KINDS)
def test_pixels_outside_footprint_unchanged(kind):
    rng = np.random.default_rng(1)
    pts = np.concatenate([rng.uniform(-3, 3, size=(4000, 3)) * [1, 1, 0],
                          rng.uniform([-1, -1, 0.55], [-0.5, -0.5, 0.55], size=(400, 3)),
                          rng.uniform([1, 0.5, 0.55], [1.6, 1.2, 0.55], size=(400, 3))])
    cloud = make_cloud(pts, rng.integers(0, 256, size=(len(pts), 3)))
    intr = Intrinsics(240, 200, 60)
    base = render(cloud, TOP_DOWN, RenderConfig(intr, splat_radius=1))
    olt = make_olt((1, "box", (-0.75, -0.75, 0.55), (0.5, 0.5, 0.1)), (2, "box", (1.3, 0.85, 0.55), (0.6, 0.7, 0.1)))
    reps = [compute_visibility(pts[4000:4400], base, 0.01, 0.2, 1),
            compute_visibility(pts[4400:], base, 0.01, 0.2, 2)]
    out = place_prompts(base, reps, olt, PromptStyle(kind))
    assert len(out.placed) == 2
    assert out.footprint.any()
    np.testing.assert_array_equal(out.rgb[~out.footprint], base.rgb[~out.footprint])
    assert (out.rgb[out.footprint] != base.rgb[out.footprint]).any()


def test_identical_centroids_drawn_in_id_order():
    img = _blank(200, 200)
    olt = make_olt((1, "chair", (0, 0, 0), (1, 1, 1)), (2, "chair", (1, 0, 0), (1, 1, 1)))
    both = place_prompts(img, [_report(2, 100, 100), _report(1, 100, 100)], olt)
    assert [oid for oid, _ in both.placed] == [1, 2]
    first = place_prompts(img, [_report(1, 100, 100)], olt)
    layered = place_prompts(replace(img, rgb=first.rgb), [_report(2, 100, 100)], olt)
    assert both.rgb.tobytes() == layered.rgb.tobytes()
    assert both.rgb.tobytes() != first.rgb.tobytes()


def test_unknown_report_id_rejected():
    olt = make_olt((1, "chair", (0, 0, 0), (1, 1, 1)))
    with pytest.raises(ValidationError):
        place_prompts(_blank(50, 50), [_report(9, 5, 5)], olt)
