use super::{ConvexPolygon, Point2, VERTEX_EPS};

/// Shoelace sum / 2; positive for counter-clockwise (x, y) order.
pub fn signed_area(v: &[Point2]) -> f64 {
    let n = v.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        s += v[i].cross(v[(i + 1) % n]);
    }
    s / 2.0
}

pub fn polygon_area(p: &ConvexPolygon) -> f64 {
    signed_area(p.vertices()).max(0.0)
}

pub(crate) fn bounds(v: &[Point2]) -> Option<(f64, f64, f64, f64)> {
    let first = v.first()?;
    Some(v.iter().fold(
        (first.x, first.y, first.x, first.y),
        |(x0, y0, x1, y1), p| (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
    ))
}

pub(crate) fn extent(v: &[Point2]) -> f64 {
    bounds(v).map_or(0.0, |(x0, y0, x1, y1)| (x1 - x0).max(y1 - y0))
}

/// Drop consecutive (and wrap-around) vertices closer than [`VERTEX_EPS`].
pub(crate) fn dedup_ring(mut v: Vec<Point2>) -> Vec<Point2> {
    v.dedup_by(|b, a| a.dist(*b) <= VERTEX_EPS);
    while v.len() > 1 && v[0].dist(v[v.len() - 1]) <= VERTEX_EPS {
        v.pop();
    }
    v
}

/// Sutherland-Hodgman: clip an arbitrary simple polygon (`subject`) against
/// the half-planes of a convex `clip` polygon. The subject keeps its own
/// orientation; a concave subject may come back with degenerate bridging
/// edges but the enclosed area is correct.
pub fn clip_polygon(subject: &[Point2], clip: &ConvexPolygon) -> Vec<Point2> {
    let cv = clip.vertices();
    if subject.len() < 3 || cv.len() < 3 {
        return Vec::new();
    }
    let mut out = subject.to_vec();
    for i in 0..cv.len() {
        if out.is_empty() {
            break;
        }
        let a = cv[i];
        let e = cv[(i + 1) % cv.len()].sub(a);
        let input = std::mem::take(&mut out);
        let side = |p: Point2| e.cross(p.sub(a));
        let mut prev = input[input.len() - 1];
        let mut prev_side = side(prev);
        for &cur in &input {
            let cur_side = side(cur);
            if cur_side >= 0.0 {
                if prev_side < 0.0 {
                    out.push(crossing(prev, cur, prev_side, cur_side));
                }
                out.push(cur);
            } else if prev_side >= 0.0 {
                out.push(crossing(prev, cur, prev_side, cur_side));
            }
            prev = cur;
            prev_side = cur_side;
        }
    }
    dedup_ring(out)
}

fn crossing(p: Point2, q: Point2, dp: f64, dq: f64) -> Point2 {
    let t = dp / (dp - dq);
    p.add(q.sub(p).scale(t))
}

pub fn convex_intersection(a: &ConvexPolygon, b: &ConvexPolygon) -> ConvexPolygon {
    let v = clip_polygon(a.vertices(), b);
    if v.len() < 3 || signed_area(&v) <= 0.0 {
        return ConvexPolygon::empty();
    }
    ConvexPolygon::from_ccw_unchecked(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x: f64, y: f64, s: f64) -> ConvexPolygon {
        ConvexPolygon::new(vec![
            Point2::new(x, y),
            Point2::new(x + s, y),
            Point2::new(x + s, y + s),
            Point2::new(x, y + s),
        ])
        .unwrap()
    }

    #[test]
    fn areas() {
        assert_eq!(polygon_area(&square(0.0, 0.0, 1.0)), 1.0);
        let tri = ConvexPolygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
        ])
        .unwrap();
        assert_eq!(polygon_area(&tri), 0.5);
        assert_eq!(polygon_area(&ConvexPolygon::empty()), 0.0);
    }

    #[test]
    fn intersections() {
        let u = square(0.0, 0.0, 1.0);
        assert!((convex_intersection(&u, &u).area() - 1.0).abs() < 1e-12);
        assert!(convex_intersection(&u, &square(3.0, 3.0, 1.0)).is_empty());
        let off = convex_intersection(&u, &square(0.5, 0.5, 1.0));
        assert!((off.area() - 0.25).abs() < 1e-12);
        // edge-touching squares share no area
        assert!(convex_intersection(&u, &square(1.0, 0.0, 1.0)).is_empty());
        assert!(convex_intersection(&u, &ConvexPolygon::empty()).is_empty());
    }

    #[test]
    fn concave_subject_area() {
        // L-shape, area 3, clipped to [0,2]x[0,1] keeps area 2
        let l = [
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(2.0, 1.0),
            Point2::new(1.0, 1.0),
            Point2::new(1.0, 2.0),
            Point2::new(0.0, 2.0),
        ];
        assert!((signed_area(&l) - 3.0).abs() < 1e-12);
        let clip = ConvexPolygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(2.0, 1.0),
            Point2::new(0.0, 1.0),
        ])
        .unwrap();
        assert!((signed_area(&clip_polygon(&l, &clip)) - 2.0).abs() < 1e-12);
    }
}
