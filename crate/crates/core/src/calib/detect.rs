//! Square fiducial detection.
//!
//! Stages: local-mean threshold, dark component labelling, outer contour
//! tracing, quad fit, side-line refinement, homography unwarp to a 60x60
//! patch, 6x6 cell sampling, border check, payload decode.

use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::dictionary::MarkerDictionary;
use super::homography::Homography;
use crate::geom::{convex_hull, signed_area, Point2};

const PATCH: usize = 60;
const CELLS: usize = 6;
const CELL_PX: usize = PATCH / CELLS;
const MIN_CONTOUR_AREA: f64 = 32.0 * 32.0;
const MIN_IMAGE_SIDE: u32 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiducialDetection {
    pub marker_id: usize,
    /// Marker top-left corner first, then clockwise on screen.
    pub corners: [Point2; 4],
    pub side_lengths_px: [f64; 4],
}

impl FiducialDetection {
    pub fn center(&self) -> Point2 {
        self.corners
            .iter()
            .fold(Point2::default(), |a, &c| a.add(c))
            .scale(0.25)
    }

    pub fn mean_side(&self) -> f64 {
        self.side_lengths_px.iter().sum::<f64>() / 4.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Threshold window side; `None` uses 1/8 of the smaller image side.
    pub window: Option<usize>,
    /// A pixel is dark when it is this many levels below its window mean.
    pub offset: f64,
    /// Minimum spread between the darkest and brightest sampled cell.
    pub min_contrast: f64,
    pub max_bit_errors: u32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: None,
            offset: 7.0,
            min_contrast: 30.0,
            max_bit_errors: 1,
        }
    }
}

/// Odd window of about 1/8 of the smaller side, at least 3.
pub fn default_window(width: u32, height: u32) -> usize {
    let w = (width.min(height) / 8) as usize;
    let w = w | 1;
    w.max(3)
}

pub fn detect_fiducials(image: &GrayImage, dict: &MarkerDictionary) -> Vec<FiducialDetection> {
    detect_fiducials_with(image, dict, &DetectorConfig::default())
}

pub fn detect_fiducials_with(
    image: &GrayImage,
    dict: &MarkerDictionary,
    cfg: &DetectorConfig,
) -> Vec<FiducialDetection> {
    let (w, h) = image.dimensions();
    if w < MIN_IMAGE_SIDE || h < MIN_IMAGE_SIDE {
        return Vec::new();
    }
    let window = cfg.window.unwrap_or_else(|| default_window(w, h));
    let dark = threshold(image, window, cfg.offset);
    let labels = Labels::new(&dark, w as usize, h as usize);

    let mut found: Vec<FiducialDetection> = Vec::new();
    for comp in &labels.components {
        let (bw, bh) = (comp.x1 - comp.x0 + 1, comp.y1 - comp.y0 + 1);
        if ((bw * bh) as f64) < MIN_CONTOUR_AREA {
            continue;
        }
        let contour = labels.trace(comp);
        let Some(quad) = fit_quad(&contour) else {
            continue;
        };
        let quad = refine_quad(&labels, comp.label, &contour, quad);
        let Some(det) = decode(image, &quad, dict, cfg) else {
            continue;
        };
        // the same marker can surface twice through nested components
        match found
            .iter_mut()
            .find(|f| f.marker_id == det.marker_id && f.center().dist(det.center()) < f.mean_side() / 4.0)
        {
            Some(prev) if prev.mean_side() < det.mean_side() => *prev = det,
            Some(_) => {}
            None => found.push(det),
        }
    }
    found.sort_by(|a, b| {
        a.marker_id
            .cmp(&b.marker_id)
            .then(a.corners[0].y.total_cmp(&b.corners[0].y))
            .then(a.corners[0].x.total_cmp(&b.corners[0].x))
    });
    found
}

/// 3x3-smoothed intensity compared against the mean of a `window` box.
fn threshold(img: &GrayImage, window: usize, offset: f64) -> Vec<bool> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let integral = Integral::new(img);
    let half = (window / 2) as i64;
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let local = integral.mean(x as i64 - 1, y as i64 - 1, x as i64 + 1, y as i64 + 1);
            let wide = integral.mean(x as i64 - half, y as i64 - half, x as i64 + half, y as i64 + half);
            out[y * w + x] = local < wide - offset;
        }
    }
    out
}

struct Integral {
    w: usize,
    h: usize,
    sum: Vec<u64>,
}

impl Integral {
    fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut sum = vec![0u64; (w + 1) * (h + 1)];
        let raw = img.as_raw();
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += raw[y * w + x] as u64;
                sum[(y + 1) * (w + 1) + x + 1] = sum[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w, h, sum }
    }

    /// Mean over the inclusive box, clamped to the image.
    fn mean(&self, x0: i64, y0: i64, x1: i64, y1: i64) -> f64 {
        let x0 = x0.max(0) as usize;
        let y0 = y0.max(0) as usize;
        let x1 = (x1.min(self.w as i64 - 1)) as usize + 1;
        let y1 = (y1.min(self.h as i64 - 1)) as usize + 1;
        let s = |x: usize, y: usize| self.sum[y * (self.w + 1) + x];
        let total = s(x1, y1) + s(x0, y0) - s(x0, y1) - s(x1, y0);
        total as f64 / ((x1 - x0) * (y1 - y0)) as f64
    }
}

struct Component {
    label: u32,
    start: (usize, usize),
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

struct Labels {
    w: usize,
    h: usize,
    map: Vec<u32>,
    components: Vec<Component>,
}

// clockwise on screen, starting west
const DIRS: [(i64, i64); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

impl Labels {
    /// 8-connected labelling; label 0 is background.
    fn new(dark: &[bool], w: usize, h: usize) -> Self {
        let mut map = vec![0u32; w * h];
        let mut components = Vec::new();
        let mut stack = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if !dark[y * w + x] || map[y * w + x] != 0 {
                    continue;
                }
                let label = components.len() as u32 + 1;
                let mut c = Component {
                    label,
                    start: (x, y),
                    x0: x,
                    y0: y,
                    x1: x,
                    y1: y,
                };
                map[y * w + x] = label;
                stack.push((x, y));
                while let Some((px, py)) = stack.pop() {
                    c.x0 = c.x0.min(px);
                    c.x1 = c.x1.max(px);
                    c.y0 = c.y0.min(py);
                    c.y1 = c.y1.max(py);
                    for (dx, dy) in DIRS {
                        let (nx, ny) = (px as i64 + dx, py as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let i = ny as usize * w + nx as usize;
                        if dark[i] && map[i] == 0 {
                            map[i] = label;
                            stack.push((nx as usize, ny as usize));
                        }
                    }
                }
                components.push(c);
            }
        }
        Self {
            w,
            h,
            map,
            components,
        }
    }

    fn is(&self, label: u32, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && x < self.w as i64
            && y < self.h as i64
            && self.map[y as usize * self.w + x as usize] == label
    }

    /// Moore-neighbour trace of the outer boundary, starting from the
    /// component's first pixel in raster order (its west neighbour is
    /// background by construction).
    fn trace(&self, c: &Component) -> Vec<(i64, i64)> {
        let start = (c.start.0 as i64, c.start.1 as i64);
        let mut contour = vec![start];
        let mut cur = start;
        let mut back = 0usize; // direction from cur to the background pixel we came from
        let mut first_step: Option<(i64, i64)> = None;
        let limit = 4 * (c.x1 - c.x0 + c.y1 - c.y0 + 2) * 8;
        for _ in 0..limit {
            let mut next = None;
            for k in 1..=8 {
                let d = (back + k) % 8;
                let (nx, ny) = (cur.0 + DIRS[d].0, cur.1 + DIRS[d].1);
                if self.is(c.label, nx, ny) {
                    // the previously checked neighbour is background
                    let prev = (back + k - 1) % 8;
                    let bp = (cur.0 + DIRS[prev].0, cur.1 + DIRS[prev].1);
                    back = dir_index(bp.0 - nx, bp.1 - ny);
                    next = Some((nx, ny));
                    break;
                }
            }
            let Some(n) = next else { break };
            if cur == start {
                match first_step {
                    None => first_step = Some(n),
                    Some(f) if f == n => break,
                    Some(_) => {}
                }
            }
            if n != start || first_step.is_none() {
                contour.push(n);
            }
            cur = n;
        }
        if contour.len() > 1 && contour.last() == Some(&start) {
            contour.pop();
        }
        contour
    }
}

fn dir_index(dx: i64, dy: i64) -> usize {
    DIRS.iter()
        .position(|&d| d == (dx, dy))
        .expect("backtrack pixel is an 8-neighbour")
}

fn centers(contour: &[(i64, i64)]) -> Vec<Point2> {
    contour
        .iter()
        .map(|&(x, y)| Point2::new(x as f64 + 0.5, y as f64 + 0.5))
        .collect()
}

/// Largest quad on the contour's hull, accepted when it covers the contour
/// region almost entirely.
fn fit_quad(contour: &[(i64, i64)]) -> Option<[Point2; 4]> {
    if contour.len() < 16 {
        return None;
    }
    let pts = centers(contour);
    let area = signed_area(&pts).abs();
    if area < MIN_CONTOUR_AREA {
        return None;
    }
    let hull = convex_hull(&pts);
    let hull_area = signed_area(&hull);
    if hull.len() < 4 || area < 0.85 * hull_area {
        return None;
    }
    let quad = max_area_quad(&hull)?;
    let qa = signed_area(&quad);
    if qa < 0.85 * hull_area {
        return None;
    }
    let sides: Vec<f64> = (0..4).map(|i| quad[i].dist(quad[(i + 1) % 4])).collect();
    let (lo, hi) = sides
        .iter()
        .fold((f64::MAX, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if lo < 0.25 * hi {
        return None;
    }
    Some(quad)
}

/// Max-area quadrilateral with vertices on a convex polygon, O(n^3).
fn max_area_quad(hull: &[Point2]) -> Option<[Point2; 4]> {
    let n = hull.len();
    let mut best: Option<(f64, [usize; 4])> = None;
    let tri = |a: Point2, b: Point2, c: Point2| b.sub(a).cross(c.sub(a)).abs() / 2.0;
    for i in 0..n {
        for j in i + 2..n {
            let far = |range: &mut dyn Iterator<Item = usize>| {
                range
                    .map(|k| (tri(hull[i], hull[j], hull[k]), k))
                    .max_by(|a, b| a.0.total_cmp(&b.0))
            };
            let Some((a1, k)) = far(&mut (i + 1..j)) else { continue };
            let Some((a2, l)) = far(&mut (j + 1..n + i).map(|k| k % n)) else {
                continue;
            };
            if best.is_none_or(|(b, _)| a1 + a2 > b) {
                best = Some((a1 + a2, [i, k, j, l]));
            }
        }
    }
    let (_, idx) = best?;
    Some(idx.map(|i| hull[i]))
}

/// Move each side onto a least-squares line through the pixel-edge points of
/// the outer boundary, then re-intersect neighbouring sides.
fn refine_quad(labels: &Labels, label: u32, contour: &[(i64, i64)], quad: [Point2; 4]) -> [Point2; 4] {
    let mut cracks = Vec::with_capacity(contour.len() * 2);
    for &(x, y) in contour {
        let (fx, fy) = (x as f64, y as f64);
        if !labels.is(label, x - 1, y) {
            cracks.push(Point2::new(fx, fy + 0.5));
        }
        if !labels.is(label, x + 1, y) {
            cracks.push(Point2::new(fx + 1.0, fy + 0.5));
        }
        if !labels.is(label, x, y - 1) {
            cracks.push(Point2::new(fx + 0.5, fy));
        }
        if !labels.is(label, x, y + 1) {
            cracks.push(Point2::new(fx + 0.5, fy + 1.0));
        }
    }
    cracks.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    cracks.dedup();

    let mut lines = Vec::with_capacity(4);
    for i in 0..4 {
        let (a, b) = (quad[i], quad[(i + 1) % 4]);
        let len = a.dist(b);
        let u = b.sub(a).scale(1.0 / len);
        let tol = (0.04 * len).max(2.0);
        let margin = (0.12 * len).max(2.0);
        let pts: Vec<Point2> = cracks
            .iter()
            .copied()
            .filter(|p| {
                let d = p.sub(a);
                let along = d.dot(u);
                along > margin && along < len - margin && d.cross(u).abs() < tol
            })
            .collect();
        if pts.len() < 6 {
            return quad;
        }
        lines.push(fit_line(&pts));
    }
    let mut out = quad;
    for i in 0..4 {
        // corner i sits between side i-1 and side i
        let Some(p) = intersect(lines[(i + 3) % 4], lines[i]) else {
            return quad;
        };
        if p.dist(quad[i]) > 4.0 {
            return quad;
        }
        out[i] = p;
    }
    out
}

/// Total least squares: (point on line, unit direction).
fn fit_line(pts: &[Point2]) -> (Point2, Point2) {
    let n = pts.len() as f64;
    let m = pts.iter().fold(Point2::default(), |a, &p| a.add(p)).scale(1.0 / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let d = p.sub(m);
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    (m, Point2::new(angle.cos(), angle.sin()))
}

fn intersect((p, u): (Point2, Point2), (q, v): (Point2, Point2)) -> Option<Point2> {
    let den = u.cross(v);
    if den.abs() < 1e-9 {
        return None;
    }
    let t = q.sub(p).cross(v) / den;
    Some(p.add(u.scale(t)))
}

fn bilinear(img: &GrayImage, p: Point2) -> f64 {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x = p.x - 0.5;
    let y = p.y - 0.5;
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let px = |xi: i64, yi: i64| {
        let xi = xi.clamp(0, w - 1) as u32;
        let yi = yi.clamp(0, h - 1) as u32;
        img.get_pixel(xi, yi).0[0] as f64
    };
    let (x0, y0) = (x0 as i64, y0 as i64);
    let top = px(x0, y0) * (1.0 - fx) + px(x0 + 1, y0) * fx;
    let bot = px(x0, y0 + 1) * (1.0 - fx) + px(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Cell means of the unwarped patch, row-major, patch origin at `quad[0]`.
fn sample_cells(img: &GrayImage, quad: &[Point2; 4]) -> Option<[[f64; CELLS]; CELLS]> {
    let s = PATCH as f64;
    let src = [(0.0, 0.0), (s, 0.0), (s, s), (0.0, s)].map(Point2::from);
    let hm = Homography::from_points(&src, quad)?;
    let mut cells = [[0.0; CELLS]; CELLS];
    // central 6x6 of every 10x10 cell
    let inset = 2;
    for (r, row) in cells.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut n = 0.0;
            for v in r * CELL_PX + inset..(r + 1) * CELL_PX - inset {
                for u in c * CELL_PX + inset..(c + 1) * CELL_PX - inset {
                    acc += bilinear(img, hm.apply(Point2::new(u as f64 + 0.5, v as f64 + 0.5)));
                    n += 1.0;
                }
            }
            *cell = acc / n;
        }
    }
    Some(cells)
}

/// Grid as seen when the patch starts at the next corner clockwise.
fn rotate_start(g: &[[bool; CELLS]; CELLS]) -> [[bool; CELLS]; CELLS] {
    let mut out = [[false; CELLS]; CELLS];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = g[c][CELLS - 1 - r];
        }
    }
    out
}

fn payload(g: &[[bool; CELLS]; CELLS]) -> u16 {
    let mut code = 0u16;
    for row in &g[1..CELLS - 1] {
        for &white in &row[1..CELLS - 1] {
            code = (code << 1) | white as u16;
        }
    }
    code
}

fn decode(
    img: &GrayImage,
    quad: &[Point2; 4],
    dict: &MarkerDictionary,
    cfg: &DetectorConfig,
) -> Option<FiducialDetection> {
    let cells = sample_cells(img, quad)?;
    let flat = cells.iter().flatten();
    let lo = flat.clone().copied().fold(f64::MAX, f64::min);
    let hi = flat.copied().fold(f64::MIN, f64::max);
    if hi - lo < cfg.min_contrast {
        return None;
    }
    let t = (lo + hi) / 2.0;
    let mut grid = [[false; CELLS]; CELLS];
    for r in 0..CELLS {
        for c in 0..CELLS {
            grid[r][c] = cells[r][c] > t;
        }
    }
    let border_dark = (0..CELLS).all(|i| {
        !grid[0][i] && !grid[CELLS - 1][i] && !grid[i][0] && !grid[i][CELLS - 1]
    });
    if !border_dark {
        return None;
    }

    let mut best: Option<(u32, usize, usize)> = None;
    let mut g = grid;
    for start in 0..4 {
        let (id, d) = dict.nearest(payload(&g));
        if d <= cfg.max_bit_errors && best.is_none_or(|(bd, _, _)| d < bd) {
            best = Some((d, id, start));
        }
        g = rotate_start(&g);
    }
    let (_, marker_id, start) = best?;
    let corners = [0, 1, 2, 3].map(|i| quad[(start + i) % 4]);
    let side_lengths_px = [0, 1, 2, 3].map(|i| corners[i].dist(corners[(i + 1) % 4]));
    Some(FiducialDetection {
        marker_id,
        corners,
        side_lengths_px,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::render::{render_marker, MarkerScene};

    fn rmse(a: &[Point2; 4], b: &[Point2; 4]) -> f64 {
        (a.iter().zip(b).map(|(p, q)| p.dist(*q).powi(2)).sum::<f64>() / 4.0).sqrt()
    }

    #[test]
    fn blank_image_has_no_markers() {
        let img = GrayImage::from_pixel(256, 256, image::Luma([255]));
        assert!(detect_fiducials(&img, MarkerDictionary::builtin()).is_empty());
        let small = GrayImage::from_pixel(32, 32, image::Luma([0]));
        assert!(detect_fiducials(&small, MarkerDictionary::builtin()).is_empty());
    }

    #[test]
    fn axis_aligned_marker() {
        let scene = MarkerScene::new(7, 200.0, 0.0);
        let (img, truth) = render_marker(MarkerDictionary::builtin(), &scene);
        let dets = detect_fiducials(&img, MarkerDictionary::builtin());
        assert_eq!(dets.len(), 1, "{dets:?}");
        assert_eq!(dets[0].marker_id, 7);
        assert!(rmse(&dets[0].corners, &truth) < 1.5, "{:?} vs {truth:?}", dets[0].corners);
    }

    #[test]
    fn quarter_turn_reorders_corners() {
        let dict = MarkerDictionary::builtin();
        let (img0, _) = render_marker(dict, &MarkerScene::new(7, 200.0, 0.0));
        let (img, truth) = render_marker(dict, &MarkerScene::new(7, 200.0, std::f64::consts::FRAC_PI_2));
        let d0 = &detect_fiducials(&img0, dict)[0];
        let d = &detect_fiducials(&img, dict)[0];
        assert_eq!(d.marker_id, 7);
        assert!(rmse(&d.corners, &truth) < 1.5);
        for i in 0..4 {
            assert!((d.side_lengths_px[i] - d0.side_lengths_px[i]).abs() < 1.5);
        }
    }

    #[test]
    fn rotate_start_matches_resampling() {
        let mut g = [[false; CELLS]; CELLS];
        g[1][1] = true; // marker top-left inner cell
        // starting one corner later (q1 = marker top-right), that cell sits bottom-left
        let r = rotate_start(&g);
        assert!(r[4][1]);
    }
}
