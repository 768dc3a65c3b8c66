use std::fs;
use std::path::{Path, PathBuf};

use font8x8::UnicodeFonts;
use image::{Rgb, RgbImage};
use imageproc::drawing::draw_line_segment_mut;

use super::ExportError;
use crate::infer::DetectionSet;

/// Category colours, assigned by position in the sorted category list.
pub const PALETTE: [[u8; 3]; 10] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
];

const GLYPH: i64 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct OverlayStyle {
    pub line_width: u32,
    pub labels: bool,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            line_width: 2,
            labels: true,
        }
    }
}

impl OverlayStyle {
    pub fn color(&self, category: &str, categories: &[String]) -> Rgb<u8> {
        let i = categories.iter().position(|c| c == category).unwrap_or(0);
        Rgb(PALETTE[i % PALETTE.len()])
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn draw_label(img: &mut RgbImage, text: &str, x: i64, y: i64, bg: Rgb<u8>) {
    let w = GLYPH * text.chars().count() as i64 + 2;
    let h = GLYPH + 2;
    // keep the label on the image when it fits, otherwise let it clip
    let x = x.min(img.width() as i64 - w).max(0);
    let y = (y - h).max(0);
    let luma = 0.299 * bg[0] as f64 + 0.587 * bg[1] as f64 + 0.114 * bg[2] as f64;
    let fg = if luma > 140.0 { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) };
    for dy in 0..h {
        for dx in 0..w {
            put(img, x + dx, y + dy, bg);
        }
    }
    for (k, ch) in text.chars().enumerate() {
        let Some(rows) = font8x8::BASIC_FONTS.get(ch) else { continue };
        for (r, bits) in rows.iter().enumerate() {
            for c in 0..8 {
                if bits >> c & 1 == 1 {
                    put(img, x + 1 + k as i64 * GLYPH + c, y + 1 + r as i64, fg);
                }
            }
        }
    }
}

/// Draw every detection's corner polygon and a `category conf` label at its
/// top-most corner. Anything outside the image is clipped.
pub fn render_overlay(image: &RgbImage, dets: &DetectionSet, style: &OverlayStyle) -> Result<RgbImage, ExportError> {
    if image.dimensions() != (dets.width, dets.height) {
        return Err(ExportError::DimensionMismatch {
            image: image.dimensions(),
            detections: (dets.width, dets.height),
        });
    }
    let mut out = image.clone();
    let cats = dets.categories();
    let lw = style.line_width.max(1) as i64;
    for d in &dets.detections {
        let color = style.color(&d.category, &cats);
        let corners = d.bbox.corners();
        for k in 0..4 {
            let (a, b) = (corners[k], corners[(k + 1) % 4]);
            for o in 0..lw {
                let off = (o - lw / 2) as f32;
                for (ox, oy) in [(off, 0.0), (0.0, off)] {
                    draw_line_segment_mut(
                        &mut out,
                        (a.x as f32 + ox, a.y as f32 + oy),
                        (b.x as f32 + ox, b.y as f32 + oy),
                        color,
                    );
                }
            }
        }
        if style.labels {
            let top = corners
                .iter()
                .min_by(|p, q| p.y.total_cmp(&q.y).then(p.x.total_cmp(&q.x)))
                .expect("four corners");
            let text = format!("{} {:.2}", d.category, d.confidence);
            draw_label(&mut out, &text, top.x.round() as i64, top.y.round() as i64, color);
        }
    }
    Ok(out)
}

/// Write `<stem>_det<index>.png` for the listed detections: the padded,
/// clamped axis-aligned crop of each box. Boxes entirely off the image
/// produce no file.
pub fn export_crops(
    image: &RgbImage,
    dets: &DetectionSet,
    indices: &[usize],
    padding: f64,
    out_dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>, ExportError> {
    let mut out = Vec::new();
    if indices.is_empty() {
        return Ok(out);
    }
    fs::create_dir_all(out_dir).map_err(|source| ExportError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let (w, h) = image.dimensions();
    for &i in indices {
        let Some(d) = dets.by_index(i) else { continue };
        let (x0, y0, x1, y1) = d.bbox.pixel_crop(padding, w, h);
        if x1 <= x0 || y1 <= y0 {
            continue;
        }
        let crop = image::imageops::crop_imm(image, x0, y0, x1 - x0, y1 - y0).to_image();
        let path = out_dir.join(format!("{stem}_det{i}.png"));
        crop.save(&path).map_err(|source| ExportError::Encode {
            path: path.display().to_string(),
            source,
        })?;
        out.push(path);
    }
    Ok(out)
}

/// Read the source image, then write its overlay to `overlay_path` and the
/// listed crops into `crops_dir` as `<stem>_det<index>.png`.
pub fn write_visuals(
    image_path: &Path,
    dets: &DetectionSet,
    crop_indices: &[usize],
    padding: f64,
    overlay_path: &Path,
    crops_dir: &Path,
    stem: &str,
) -> Result<(), ExportError> {
    let rgb = image::open(image_path)
        .map_err(|source| ExportError::Decode {
            path: image_path.display().to_string(),
            source,
        })?
        .to_rgb8();
    let over = render_overlay(&rgb, dets, &OverlayStyle::default())?;
    if let Some(dir) = overlay_path.parent() {
        fs::create_dir_all(dir).map_err(|source| ExportError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    over.save(overlay_path).map_err(|source| ExportError::Encode {
        path: overlay_path.display().to_string(),
        source,
    })?;
    export_crops(&rgb, dets, crop_indices, padding, crops_dir, stem)?;
    Ok(())
}
