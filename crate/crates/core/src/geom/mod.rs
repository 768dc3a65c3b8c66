//! Oriented-box geometry.
//!
//! Every detection in the platform is an [`OrientedBox`]: a rectangle with a
//! center, a width along its own x-axis, a height along its own y-axis and a
//! rotation `theta` in radians. Rotation is applied in pixel coordinates with
//! the usual matrix `[cos -sin; sin cos]`, so with image y pointing down a
//! positive angle turns the box clockwise on screen.
//!
//! Angles are folded into `[-pi/2, pi/2)` on construction. A box and the same
//! box with `w`/`h` swapped and `theta` shifted by a quarter turn are still two
//! distinct representations of one point set; use [`OrientedBox::same_shape`]
//! rather than `==` when that matters.

mod calipers;
mod iou;
mod polygon;

pub use calipers::{convex_hull, min_area_rect};
pub use iou::{obb_nms, rotated_iou};
pub use polygon::{clip_polygon, convex_intersection, polygon_area, signed_area};

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

/// Consecutive vertices closer than this collapse into one.
pub const VERTEX_EPS: f64 = 1e-9;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("invalid oriented box: {0}")]
    InvalidBox(String),
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("degenerate input: need at least 3 non-collinear points")]
    DegenerateInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 2D cross product.
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point2) -> f64 {
        self.sub(o).norm()
    }

    /// Rotate about the origin by `theta` radians.
    pub fn rotate(self, theta: f64) -> Point2 {
        let (s, c) = theta.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl From<(f64, f64)> for Point2 {
    fn from((x, y): (f64, f64)) -> Self {
        Point2::new(x, y)
    }
}

/// A convex polygon with vertices in positive (counter-clockwise in x/y)
/// order. May be empty, otherwise has at least three vertices.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ConvexPolygon {
    vertices: Vec<Point2>,
}

impl ConvexPolygon {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Validates convexity. Clockwise input is reversed, near-duplicate
    /// consecutive vertices are merged.
    pub fn new(vertices: Vec<Point2>) -> Result<Self, GeomError> {
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(GeomError::InvalidPolygon("non-finite vertex".into()));
        }
        let mut v = polygon::dedup_ring(vertices);
        if v.is_empty() {
            return Ok(Self::empty());
        }
        if v.len() < 3 {
            return Err(GeomError::InvalidPolygon(format!(
                "{} distinct vertices",
                v.len()
            )));
        }
        if signed_area(&v) < 0.0 {
            v.reverse();
        }
        let n = v.len();
        let tol = 1e-9 * polygon::extent(&v).max(1.0).powi(2);
        for i in 0..n {
            let a = v[i];
            let b = v[(i + 1) % n];
            let c = v[(i + 2) % n];
            if b.sub(a).cross(c.sub(b)) < -tol {
                return Err(GeomError::InvalidPolygon("not convex".into()));
            }
        }
        Ok(Self { vertices: v })
    }

    pub(crate) fn from_ccw_unchecked(vertices: Vec<Point2>) -> Self {
        Self { vertices }
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn area(&self) -> f64 {
        polygon_area(self)
    }

    /// Boundary points count as inside within `eps`.
    pub fn contains(&self, p: Point2, eps: f64) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let e = b.sub(a);
            e.cross(p.sub(a)) >= -eps * e.norm()
        })
    }

    /// Axis-aligned bounds `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> Option<(f64, f64, f64, f64)> {
        polygon::bounds(&self.vertices)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrientedBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    theta: f64,
}

/// Fold an angle into `[-pi/2, pi/2)` by multiples of pi.
pub fn canonical_angle(theta: f64) -> f64 {
    let mut t = (theta + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    // rem_euclid can round up to exactly pi
    if t >= FRAC_PI_2 {
        t -= PI;
    }
    t
}

impl OrientedBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self, GeomError> {
        if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite() && theta.is_finite())
        {
            return Err(GeomError::InvalidBox("non-finite field".into()));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(GeomError::InvalidBox(format!(
                "width and height must be positive, got {w} x {h}"
            )));
        }
        Ok(Self {
            cx,
            cy,
            w,
            h,
            theta: canonical_angle(theta),
        })
    }

    /// Axis-aligned box from its corner coordinates.
    pub fn from_xyxy(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GeomError> {
        Self::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0, 0.0)
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn center(&self) -> Point2 {
        Point2::new(self.cx, self.cy)
    }
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    /// Apply a rigid motion: rotate about the origin by `phi`, then translate.
    pub fn transformed(&self, phi: f64, dx: f64, dy: f64) -> Self {
        let c = self.center().rotate(phi);
        Self {
            cx: c.x + dx,
            cy: c.y + dy,
            w: self.w,
            h: self.h,
            theta: canonical_angle(self.theta + phi),
        }
    }

    /// Same rectangle grown by `d` on every side.
    pub fn dilated(&self, d: f64) -> Self {
        Self {
            w: self.w + 2.0 * d,
            h: self.h + 2.0 * d,
            ..*self
        }
    }

    pub fn corners(&self) -> [Point2; 4] {
        let c = self.center();
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)]
            .map(|(x, y)| Point2::new(x, y).rotate(self.theta).add(c))
    }

    /// Contains `p` (boundary inclusive within `eps` px).
    pub fn contains(&self, p: Point2, eps: f64) -> bool {
        let local = p.sub(self.center()).rotate(-self.theta);
        local.x.abs() <= self.w / 2.0 + eps && local.y.abs() <= self.h / 2.0 + eps
    }

    /// Equality as point sets: true when the corner sets coincide within `tol`.
    pub fn same_shape(&self, other: &OrientedBox, tol: f64) -> bool {
        let a = self.corners();
        let b = other.corners();
        a.iter()
            .all(|p| b.iter().any(|q| (p.x - q.x).abs() <= tol && (p.y - q.y).abs() <= tol))
    }

    /// Axis-aligned bounding rectangle `(x0, y0, x1, y1)` of the corners.
    pub fn aabb(&self) -> (f64, f64, f64, f64) {
        polygon::bounds(&self.corners()).expect("four corners")
    }

    /// Whole-pixel rectangle `(x0, y0, x1, y1)`, half-open, covering the
    /// axis-aligned bounds padded by `padding` of their extent on each side
    /// and clamped to a `width` x `height` image. May be empty.
    pub fn pixel_crop(&self, padding: f64, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let (x0, y0, x1, y1) = self.aabb();
        let (px, py) = ((x1 - x0) * padding, (y1 - y0) * padding);
        let clamp = |v: f64, hi: u32| v.clamp(0.0, hi as f64) as u32;
        let cx0 = clamp((x0 - px).floor(), width);
        let cy0 = clamp((y0 - py).floor(), height);
        let cx1 = clamp((x1 + px).ceil(), width);
        let cy1 = clamp((y1 + py).ceil(), height);
        (cx0, cy0, cx1.max(cx0), cy1.max(cy0))
    }
}

/// Corner polygon of a box: four vertices in positive order.
pub fn obb_corners(b: &OrientedBox) -> ConvexPolygon {
    ConvexPolygon::from_ccw_unchecked(b.corners().to_vec())
}

impl<'de> Deserialize<'de> for OrientedBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            cx: f64,
            cy: f64,
            w: f64,
            h: f64,
            theta: f64,
        }
        let r = Raw::deserialize(d)?;
        OrientedBox::new(r.cx, r.cy, r.w, r.h, r.theta).map_err(serde::de::Error::custom)
    }
}

impl<'de> Deserialize<'de> for ConvexPolygon {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            vertices: Vec<Point2>,
        }
        let r = Raw::deserialize(d)?;
        ConvexPolygon::new(r.vertices).map_err(serde::de::Error::custom)
    }
}
