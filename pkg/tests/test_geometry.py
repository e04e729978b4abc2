import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plancad import geometry as g

TAU = 2 * math.pi


def test_line_length_pythagorean():
    assert g.primitive_length(g.line((0, 0), (3, 4), "a")) == 5.0


def test_circle_length_analytic():
    assert g.primitive_length(g.circle((0, 0), 2.0, "c")) == pytest.approx(4 * math.pi, rel=1e-15)


def test_arc_length_quarter():
    arc = g.arc((0, 0), 1.0, 0.0, math.pi / 2, "a")
    assert g.primitive_length(arc) == pytest.approx(math.pi / 2, rel=1e-15)


def test_aabb_line():
    r = g.primitive_aabb(g.line((0, 0), (3, 4), "a"))
    assert (r.min_x, r.min_y, r.max_x, r.max_y) == (0, 0, 3, 4)


def test_aabb_circle():
    r = g.primitive_aabb(g.circle((1, 1), 2.0, "c"))
    assert (r.min_x, r.min_y, r.max_x, r.max_y) == (-1, -1, 3, 3)


def test_aabb_arc_includes_extremum():
    r = g.primitive_aabb(g.arc((0, 0), 1.0, 0.0, math.pi / 2, "a"))
    assert r.min_x == pytest.approx(0.0, abs=1e-12)
    assert r.min_y == pytest.approx(0.0, abs=1e-12)
    assert r.max_x == pytest.approx(1.0)
    assert r.max_y == pytest.approx(1.0)  # extremum at pi/2


def test_aabb_arc_crossing_zero():
    arc = g.arc((0, 0), 1.0, 3 * math.pi / 2, math.pi / 2, "a")
    r = g.primitive_aabb(arc)
    assert r.max_x == pytest.approx(1.0)  # extremum at angle 0 included
    assert r.min_x == pytest.approx(0.0, abs=1e-12)


def test_identity_transform_keeps_geometry_changes_id():
    p = g.line((1, 2), (3, 4), "orig")
    q = g.apply_transform(p, g.Affine.identity())
    assert q.p0 == p.p0 and q.p1 == p.p1
    assert q.source_id != "orig"
    named = g.apply_transform(p, g.Affine.identity(), derived_id="ref1/orig")
    assert named.source_id == "ref1/orig"


def test_uniform_scale_doubles_length():
    p = g.line((0, 0), (3, 4), "a")
    q = g.apply_transform(p, g.Affine.scaling(2.0))
    assert g.primitive_length(q) == pytest.approx(10.0, rel=1e-12)


def test_rotate_90_line():
    p = g.line((1, 0), (2, 0), "a")
    q = g.apply_transform(p, g.Affine.rotation(math.pi / 2))
    assert q.p0[0] == pytest.approx(0.0, abs=1e-12)
    assert q.p0[1] == pytest.approx(1.0)
    assert q.p1[0] == pytest.approx(0.0, abs=1e-12)
    assert q.p1[1] == pytest.approx(2.0)


def test_nonuniform_scale_rejected_on_curves():
    c = g.circle((0, 0), 1.0, "c")
    with pytest.raises(g.NonConformalOnCurve):
        g.apply_transform(c, g.Affine.scaling(2.0, 3.0))
    a = g.arc((0, 0), 1.0, 0, 1, "a")
    with pytest.raises(g.NonConformalOnCurve):
        g.apply_transform(a, g.Affine.scaling(1.0, 2.0))
    # Lines are fine under any invertible map.
    g.apply_transform(g.line((0, 0), (1, 1), "l"), g.Affine.scaling(2.0, 3.0))


def test_reflection_keeps_arc_ccw_and_points():
    a = g.arc((0, 0), 1.0, 0.0, math.pi / 2, "a")
    t = g.Affine(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0)  # mirror across x=0
    b = g.apply_transform(a, t)
    assert b.sweep == pytest.approx(math.pi / 2, abs=1e-12)
    # The image of the original point set is preserved.
    pts_a = {(round(-x, 9), round(y, 9)) for x, y in g.sample_points(a, 7)}
    pts_b = {(round(x, 9), round(y, 9)) for x, y in g.sample_points(b, 7)}
    assert pts_a == pts_b


def test_sample_points_line_endpoints():
    p = g.line((0, 0), (2, 0), "a")
    assert g.sample_points(p, 2) == [(0, 0), (2, 0)]
    assert g.sample_points(p, 3)[1] == (1.0, 0.0)


def test_sample_points_circle_convention():
    pts = g.sample_points(g.circle((0, 0), 1.0, "c"), 4)
    expect = [(1, 0), (0, 1), (-1, 0), (0, -1)]
    for got, want in zip(pts, expect):
        assert got[0] == pytest.approx(want[0], abs=1e-12)
        assert got[1] == pytest.approx(want[1], abs=1e-12)


def test_invariants_rejected():
    with pytest.raises(g.GeometryError):
        g.line((1, 1), (1, 1), "bad")
    with pytest.raises(g.GeometryError):
        g.circle((0, 0), 0.0, "bad")
    with pytest.raises(g.GeometryError):
        g.arc((0, 0), 1.0, 1.0, 1.0, "bad")  # zero sweep means full circle
    with pytest.raises(g.GeometryError):
        g.sample_points(g.line((0, 0), (1, 0), "a"), 1)


def test_angles_normalized():
    a = g.arc((0, 0), 1.0, -math.pi / 2, 5 * math.pi / 2 + 0.5, "a")
    assert 0 <= a.start_angle < TAU
    assert 0 <= a.end_angle < TAU


# -- properties ----------------------------------------------------------------

finite = st.floats(min_value=-1e4, max_value=1e4, allow_nan=False)
angles = st.floats(min_value=0, max_value=TAU - 1e-6, allow_nan=False)
radii = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False)


@st.composite
def primitives(draw):
    kind = draw(st.sampled_from(["line", "arc", "circle", "polyseg"]))
    if kind in ("line", "polyseg"):
        p0 = (draw(finite), draw(finite))
        p1 = (draw(finite), draw(finite))
        if math.hypot(p1[0] - p0[0], p1[1] - p0[1]) < 1e-6:
            p1 = (p0[0] + 1.0, p0[1])
        make = g.line if kind == "line" else g.polyseg
        return make(p0, p1, "h")
    center = (draw(finite), draw(finite))
    r = draw(radii)
    if kind == "circle":
        return g.circle(center, r, "h")
    a0 = draw(angles)
    sweep = draw(st.floats(min_value=1e-4, max_value=TAU - 1e-4))
    return g.arc(center, r, a0, a0 + sweep, "h")


@given(primitives(), angles, finite, finite)
@settings(max_examples=150, deadline=None)
def test_length_invariant_under_rigid_motion(p, theta, dx, dy):
    t = g.Affine.rotation(theta).then(g.Affine.translation(dx, dy))
    q = g.apply_transform(p, t)
    assert abs(g.primitive_length(q) - g.primitive_length(p)) \
        <= 1e-9 * g.primitive_length(p)


@given(primitives())
@settings(max_examples=100, deadline=None)
def test_aabb_soundness(p):
    box = g.primitive_aabb(p).expand(1e-9)
    for pt in g.sample_points(p, 1000):
        assert box.contains_point(pt)


@given(primitives(), st.floats(min_value=1e-3, max_value=1e3))
@settings(max_examples=100, deadline=None)
def test_uniform_scale_scales_length_exactly(p, s):
    q = g.apply_transform(p, g.Affine.scaling(s))
    assert abs(g.primitive_length(q) - s * g.primitive_length(p)) \
        <= 1e-12 * max(1.0, s * g.primitive_length(p))
