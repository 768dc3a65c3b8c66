use super::{canonical_angle, signed_area, GeomError, OrientedBox, Point2};

/// Andrew's monotone chain. Returns hull vertices in positive order with
/// collinear points removed.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: Point2, a: Point2, b: Point2| a.sub(o).cross(b.sub(o));
    let mut hull: Vec<Point2> = Vec::with_capacity(pts.len() * 2);
    for &p in &pts {
        while hull.len() >= 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Minimum-area enclosing rectangle by rotating calipers over the hull edges.
///
/// The result has `w` along the longer side.
pub fn min_area_rect(points: &[Point2]) -> Result<OrientedBox, GeomError> {
    if points.len() < 3 || points.iter().any(|p| !p.is_finite()) {
        return Err(GeomError::DegenerateInput);
    }
    let hull = convex_hull(points);
    let n = hull.len();
    if n < 3 {
        return Err(GeomError::DegenerateInput);
    }
    let scale = hull
        .iter()
        .map(|p| p.sub(hull[0]).norm())
        .fold(0.0, f64::max);
    if signed_area(&hull) <= 1e-12 * scale * scale {
        return Err(GeomError::DegenerateInput);
    }

    // Three calipers per edge: farthest along the edge direction, farthest
    // from the edge line, farthest against the edge direction. Each pointer
    // only moves forward around the hull.
    let unit = |i: usize| {
        let e = hull[(i + 1) % n].sub(hull[i]);
        e.scale(1.0 / e.norm())
    };
    let (mut right, mut top, mut left) = (0usize, 0usize, 0usize);
    let mut best: Option<Caliper> = None;
    for i in 0..n {
        let u = unit(i);
        let v = Point2::new(-u.y, u.x);
        let origin = hull[i];
        let pu = |k: usize| hull[k % n].sub(origin).dot(u);
        let pv = |k: usize| hull[k % n].sub(origin).dot(v);
        if i == 0 {
            right = 1;
        }
        for _ in 0..n {
            if pu(right + 1) < pu(right) {
                break;
            }
            right = (right + 1) % n;
        }
        if i == 0 {
            top = right;
        }
        for _ in 0..n {
            if pv(top + 1) < pv(top) {
                break;
            }
            top = (top + 1) % n;
        }
        if i == 0 {
            left = top;
        }
        for _ in 0..n {
            if pu(left + 1) > pu(left) {
                break;
            }
            left = (left + 1) % n;
        }
        let c = Caliper {
            origin,
            u,
            umin: pu(left).min(0.0),
            umax: pu(right),
            vmax: pv(top),
        };
        if best.as_ref().is_none_or(|b| c.area() < b.area()) {
            best = Some(c);
        }
    }

    let c = best.expect("non-empty hull");
    let v = Point2::new(-c.u.y, c.u.x);
    let center = c
        .origin
        .add(c.u.scale((c.umin + c.umax) / 2.0))
        .add(v.scale(c.vmax / 2.0));
    let (len_u, len_v) = (c.umax - c.umin, c.vmax);
    let (w, h, dir) = if len_u >= len_v {
        (len_u, len_v, c.u)
    } else {
        (len_v, len_u, v)
    };
    OrientedBox::new(center.x, center.y, w, h, canonical_angle(dir.y.atan2(dir.x)))
        .map_err(|_| GeomError::DegenerateInput)
}

struct Caliper {
    origin: Point2,
    u: Point2,
    umin: f64,
    umax: f64,
    vmax: f64,
}

impl Caliper {
    fn area(&self) -> f64 {
        (self.umax - self.umin) * self.vmax
    }
}
