use serde::{Deserialize, Serialize};

use crate::geom::{signed_area, OrientedBox, Point2};

/// Vertex count of synthesized ellipse masks. A multiple of four so the
/// polygon touches the ellipse at both axis extremes.
pub(crate) const ELLIPSE_VERTICES: usize = 96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskShape {
    /// Simple polygon in image pixel coordinates; need not be convex.
    Polygon(Vec<Point2>),
    Bitmask(Bitmask),
}

impl MaskShape {
    pub fn area_px(&self) -> f64 {
        match self {
            MaskShape::Polygon(v) => signed_area(v).abs(),
            MaskShape::Bitmask(b) => b.count() as f64,
        }
    }

    /// Points whose convex hull encloses the mask.
    pub fn boundary_points(&self) -> Vec<Point2> {
        match self {
            MaskShape::Polygon(v) => v.clone(),
            MaskShape::Bitmask(b) => b.boundary_corners(),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        match self {
            MaskShape::Polygon(v) => v.len() < 3 || self.area_px() <= 0.0,
            MaskShape::Bitmask(b) => b.count() < 16,
        }
    }
}

/// Binary raster placed at `(x0, y0)` in image coordinates. Pixel `(i, j)`
/// covers the unit square with top-left corner `(x0 + i, y0 + j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bitmask {
    pub x0: i64,
    pub y0: i64,
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Bitmask {
    pub fn new(x0: i64, y0: i64, width: usize, height: usize) -> Self {
        Self {
            x0,
            y0,
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn get(&self, i: i64, j: i64) -> bool {
        if i < 0 || j < 0 || i as usize >= self.width || j as usize >= self.height {
            return false;
        }
        self.data[j as usize * self.width + i as usize]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[j * self.width + i] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    fn boundary_corners(&self) -> Vec<Point2> {
        let mut out = Vec::new();
        for j in 0..self.height as i64 {
            for i in 0..self.width as i64 {
                if !self.get(i, j) {
                    continue;
                }
                let edge = !self.get(i - 1, j)
                    || !self.get(i + 1, j)
                    || !self.get(i, j - 1)
                    || !self.get(i, j + 1);
                if edge {
                    let (x, y) = ((self.x0 + i) as f64, (self.y0 + j) as f64);
                    out.extend([
                        Point2::new(x, y),
                        Point2::new(x + 1.0, y),
                        Point2::new(x + 1.0, y + 1.0),
                        Point2::new(x, y + 1.0),
                    ]);
                }
            }
        }
        out
    }
}

/// Polygon on the ellipse inscribed in `b`, `n` vertices in positive order.
pub fn inscribed_ellipse(b: &OrientedBox, n: usize) -> Vec<Point2> {
    let (a, c) = (b.w() / 2.0, b.h() / 2.0);
    (0..n)
        .map(|k| {
            let t = std::f64::consts::TAU * k as f64 / n as f64;
            Point2::new(a * t.cos(), c * t.sin())
                .rotate(b.theta())
                .add(b.center())
        })
        .collect()
}
