//! Kernel dimensions and stomatal density / aperture in physical units.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calib::{convert_measurement, MeasureKind, ScaleCalibration, Unit};
use crate::geom::{min_area_rect, Point2};
use crate::infer::{self, Backend, DetectionSet, InferError, InferenceParams, MaskSegment, MaskSource};
use crate::Warning;

pub const DEFAULT_OPEN_THRESH: f64 = 0.3;

#[derive(Debug, thiserror::Error)]
pub enum MorphoError {
    #[error("degenerate mask for detection {0}")]
    DegenerateMask(usize),
    #[error("no kernels detected")]
    NoKernels,
    #[error("no stomata detected")]
    NoStomata,
    #[error("calibration unit must be {expected}")]
    WrongUnit { expected: &'static str },
    #[error(transparent)]
    Infer(#[from] InferError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dimensions {
    pub length: f64,
    pub width: f64,
    pub area: f64,
}

/// Long and short side of the minimum-area rectangle around the mask, and
/// the mask area, all in calibrated units.
pub fn mask_dimensions(mask: &MaskSegment, c: &ScaleCalibration) -> Result<Dimensions, MorphoError> {
    if mask.shape.is_degenerate() {
        return Err(MorphoError::DegenerateMask(mask.detection_index));
    }
    let rect = min_area_rect(&mask.shape.boundary_points())
        .map_err(|_| MorphoError::DegenerateMask(mask.detection_index))?;
    Ok(Dimensions {
        length: convert_measurement(rect.w(), MeasureKind::Length, c),
        width: convert_measurement(rect.h(), MeasureKind::Length, c),
        area: convert_measurement(mask.area_px(), MeasureKind::Area, c),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelCategory {
    Healthy,
    Damaged,
    Unknown,
}

impl KernelCategory {
    pub fn from_label(s: &str) -> Self {
        match s {
            "healthy" => Self::Healthy,
            "damaged" => Self::Damaged,
            _ => Self::Unknown,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Healthy => "healthy",
            Self::Damaged => "damaged",
            Self::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRecord {
    pub kernel_index: usize,
    pub category: KernelCategory,
    pub length_mm: f64,
    pub width_mm: f64,
    pub area_mm2: f64,
    pub mask_source: MaskSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub stddev: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            stddev: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphometricsSummary {
    pub n: usize,
    pub length_mm: Option<Stat>,
    pub width_mm: Option<Stat>,
    pub area_mm2: Option<Stat>,
}

impl MorphometricsSummary {
    pub fn of(records: &[KernelRecord]) -> Self {
        let col = |f: fn(&KernelRecord) -> f64| Stat::of(&records.iter().map(f).collect::<Vec<_>>());
        Self {
            n: records.len(),
            length_mm: col(|r| r.length_mm),
            width_mm: col(|r| r.width_mm),
            area_mm2: col(|r| r.area_mm2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelMorphResult {
    pub kernels: DetectionSet,
    pub records: Vec<KernelRecord>,
    pub summary: MorphometricsSummary,
    pub warnings: Vec<Warning>,
}

/// Kernel detection, box-prompted segmentation, then per-kernel dimensions.
/// Kernels whose mask is degenerate are skipped with a warning.
pub fn kernel_morphometrics(
    image_ref: &str,
    backend: &dyn Backend,
    params: &InferenceParams,
    c: &ScaleCalibration,
) -> Result<KernelMorphResult, MorphoError> {
    if c.unit() != Unit::Millimeter {
        return Err(MorphoError::WrongUnit { expected: "mm" });
    }
    let role = params.role_or("kernel");
    let raw = infer::detect(backend, image_ref, role)?;
    let kernels = infer::postprocess(&raw, params);
    if kernels.is_empty() {
        return Err(MorphoError::NoKernels);
    }
    let masks = infer::segment(backend, image_ref, role, &kernels.detections, (kernels.width, kernels.height), false)?;
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (det, mask) in kernels.detections.iter().zip(&masks) {
        match mask_dimensions(mask, c) {
            Ok(d) => records.push(KernelRecord {
                kernel_index: det.index,
                category: KernelCategory::from_label(&det.category),
                length_mm: d.length,
                width_mm: d.width,
                area_mm2: d.area,
                mask_source: mask.source,
            }),
            Err(e) => warnings.push(Warning::new("degenerate_mask", e.to_string())),
        }
    }
    records.sort_by_key(|r| r.kernel_index);
    Ok(KernelMorphResult {
        summary: MorphometricsSummary::of(&records),
        kernels,
        records,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PoreAssociation {
    /// Stoma detection index to its pore detection index.
    pub assigned: BTreeMap<usize, usize>,
    /// Pores inside an already-served stoma with lower confidence.
    pub duplicate_pore: Vec<usize>,
    pub unassigned: Vec<usize>,
}

/// Attach each pore to the stoma whose box contains the pore center (the
/// nearest stoma center if several do); one pore per stoma, highest
/// confidence first.
pub fn associate_pores(stomata: &DetectionSet, pores: &DetectionSet) -> PoreAssociation {
    let mut claims: BTreeMap<usize, Vec<(f64, usize)>> = BTreeMap::new();
    let mut out = PoreAssociation::default();
    for p in &pores.detections {
        let c = p.bbox.center();
        let host = stomata
            .detections
            .iter()
            .filter(|s| s.bbox.contains(c, 1e-9))
            .min_by(|a, b| {
                a.bbox
                    .center()
                    .dist(c)
                    .total_cmp(&b.bbox.center().dist(c))
                    .then(a.index.cmp(&b.index))
            });
        match host {
            Some(s) => claims.entry(s.index).or_default().push((p.confidence, p.index)),
            None => out.unassigned.push(p.index),
        }
    }
    for (stoma, mut list) in claims {
        list.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        out.assigned.insert(stoma, list[0].1);
        out.duplicate_pore.extend(list[1..].iter().map(|&(_, i)| i));
    }
    out.duplicate_pore.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StomaRecord {
    pub stoma_index: usize,
    pub stoma_area_um2: f64,
    pub pore_index: Option<usize>,
    pub pore_length_um: Option<f64>,
    pub pore_width_um: Option<f64>,
    pub pore_area_um2: Option<f64>,
    pub aperture_ratio: Option<f64>,
    pub open_flag: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StomataSummary {
    pub stomata_count: usize,
    pub fov_area_mm2: f64,
    pub density_per_mm2: f64,
    pub mean_aperture_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StomataResult {
    pub stomata: DetectionSet,
    pub pores: DetectionSet,
    pub association: PoreAssociation,
    pub records: Vec<StomaRecord>,
    pub summary: StomataSummary,
    pub warnings: Vec<Warning>,
}

/// Field-of-view area in mm² for an image calibrated in px/µm.
pub fn fov_area_mm2(width: u32, height: u32, c: &ScaleCalibration) -> f64 {
    let p = c.px_per_unit();
    (width as f64 / p) * (height as f64 / p) * 1e-6
}

fn masks_for(
    seg: Option<&dyn Backend>,
    image_ref: &str,
    role: &str,
    set: &DetectionSet,
) -> Result<Vec<MaskSegment>, InferError> {
    let size = (set.width, set.height);
    match seg {
        Some(b) => infer::segment(b, image_ref, role, &set.detections, size, false),
        None => infer::segment(&NoMasks, image_ref, role, &set.detections, size, false),
    }
}

/// Backend that never has a mask, so segmentation falls back to ellipses.
struct NoMasks;

impl Backend for NoMasks {
    fn images(&self) -> Vec<String> {
        Vec::new()
    }
    fn detect(&self, image_ref: &str, role: &str) -> Result<DetectionSet, InferError> {
        Err(InferError::MissingPrediction {
            image: image_ref.into(),
            role: role.into(),
        })
    }
    fn mask(&self, _: &str, _: &str, _: usize) -> Result<Option<Vec<Point2>>, InferError> {
        Ok(None)
    }
    fn verdict(&self, _: &str, _: &str, _: usize) -> Result<Option<infer::Verdict>, InferError> {
        Ok(None)
    }
    fn crop_detect(&self, image_ref: &str, role: &str, _: usize, _: u32, _: u32) -> Result<DetectionSet, InferError> {
        self.detect(image_ref, role)
    }
}

/// Stomatal density, and per stoma its area plus the dimensions and aperture
/// ratio of its pore.
pub fn stomata_morphometrics(
    image_ref: &str,
    backend: &dyn Backend,
    params: &InferenceParams,
    c: &ScaleCalibration,
    open_thresh: f64,
    seg_backend: Option<&dyn Backend>,
) -> Result<StomataResult, MorphoError> {
    if c.unit() != Unit::Micrometer {
        return Err(MorphoError::WrongUnit { expected: "um" });
    }
    let stomata = infer::postprocess(&infer::detect(backend, image_ref, "stoma")?, params);
    if stomata.is_empty() {
        return Err(MorphoError::NoStomata);
    }
    let pores = infer::postprocess(&infer::detect(backend, image_ref, "pore")?, params);
    let association = associate_pores(&stomata, &pores);
    let stoma_masks = masks_for(seg_backend, image_ref, "stoma", &stomata)?;
    let pore_masks = masks_for(seg_backend, image_ref, "pore", &pores)?;
    let pore_mask = |idx: usize| {
        pores
            .detections
            .iter()
            .position(|d| d.index == idx)
            .map(|k| &pore_masks[k])
    };

    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (det, mask) in stomata.detections.iter().zip(&stoma_masks) {
        let mut rec = StomaRecord {
            stoma_index: det.index,
            stoma_area_um2: convert_measurement(mask.area_px(), MeasureKind::Area, c),
            pore_index: None,
            pore_length_um: None,
            pore_width_um: None,
            pore_area_um2: None,
            aperture_ratio: None,
            open_flag: None,
        };
        if let Some(pm) = association.assigned.get(&det.index).and_then(|&i| pore_mask(i)) {
            match mask_dimensions(pm, c) {
                Ok(d) => {
                    let ratio = d.width / d.length;
                    rec.pore_index = Some(pm.detection_index);
                    rec.pore_length_um = Some(d.length);
                    rec.pore_width_um = Some(d.width);
                    rec.pore_area_um2 = Some(d.area);
                    rec.aperture_ratio = Some(ratio);
                    rec.open_flag = Some(ratio >= open_thresh);
                }
                Err(e) => warnings.push(Warning::new("degenerate_mask", e.to_string())),
            }
        }
        records.push(rec);
    }
    records.sort_by_key(|r| r.stoma_index);
    for &i in &association.duplicate_pore {
        warnings.push(Warning::new("duplicate_pore", format!("pore {i} shares a stoma with a stronger pore")));
    }
    let ratios: Vec<f64> = records.iter().filter_map(|r| r.aperture_ratio).collect();
    let fov = fov_area_mm2(stomata.width, stomata.height, c);
    let summary = StomataSummary {
        stomata_count: records.len(),
        fov_area_mm2: fov,
        density_per_mm2: records.len() as f64 / fov,
        mean_aperture_ratio: Stat::of(&ratios).map(|s| s.mean),
    };
    Ok(StomataResult {
        stomata,
        pores,
        association,
        records,
        summary,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::calibration_manual;
    use crate::geom::OrientedBox;
    use crate::infer::{inscribed_ellipse, Bitmask, Detection, MaskShape};

    fn poly_mask(pts: Vec<Point2>) -> MaskSegment {
        MaskSegment {
            detection_index: 0,
            shape: MaskShape::Polygon(pts),
            source: MaskSource::Fixture,
        }
    }

    #[test]
    fn rectangle_mask_dimensions() {
        let c = calibration_manual(10.0, Unit::Millimeter).unwrap();
        let m = poly_mask(OrientedBox::new(100.0, 100.0, 60.0, 25.0, 0.0).unwrap().corners().to_vec());
        let d = mask_dimensions(&m, &c).unwrap();
        assert!((d.length - 6.0).abs() < 1e-9);
        assert!((d.width - 2.5).abs() < 1e-9);
        assert!((d.area - 15.0).abs() < 1e-9);
    }

    #[test]
    fn rotated_ellipse_mask() {
        let c = calibration_manual(10.0, Unit::Millimeter).unwrap();
        let b = OrientedBox::new(200.0, 150.0, 60.0, 24.0, 0.7).unwrap();
        let d = mask_dimensions(&poly_mask(inscribed_ellipse(&b, 96)), &c).unwrap();
        assert!((d.length / 6.0 - 1.0).abs() < 0.02);
        assert!((d.width / 2.4 - 1.0).abs() < 0.02);
        let analytic = std::f64::consts::PI * 30.0 * 12.0 / 100.0;
        assert!((d.area / analytic - 1.0).abs() < 0.01);
    }

    #[test]
    fn degenerate_masks() {
        let c = calibration_manual(10.0, Unit::Millimeter).unwrap();
        let mut bm = Bitmask::new(5, 5, 1, 1);
        bm.set(0, 0, true);
        let one_px = MaskSegment {
            detection_index: 4,
            shape: MaskShape::Bitmask(bm),
            source: MaskSource::Fixture,
        };
        assert!(matches!(mask_dimensions(&one_px, &c), Err(MorphoError::DegenerateMask(4))));
        let line = poly_mask(vec![Point2::new(0.0, 0.0), Point2::new(1.0, 1.0), Point2::new(2.0, 2.0)]);
        assert!(mask_dimensions(&line, &c).is_err());
    }

    #[test]
    fn doubling_scale_halves_lengths() {
        let c1 = calibration_manual(10.0, Unit::Millimeter).unwrap();
        let c2 = c1.scaled(2.0).unwrap();
        let b = OrientedBox::new(80.0, 90.0, 50.0, 20.0, 0.3).unwrap();
        let m = poly_mask(inscribed_ellipse(&b, 96));
        let (a, z) = (mask_dimensions(&m, &c1).unwrap(), mask_dimensions(&m, &c2).unwrap());
        assert_eq!(z.length, a.length / 2.0);
        assert_eq!(z.width, a.width / 2.0);
        assert_eq!(z.area, a.area / 4.0);
    }

    #[test]
    fn stat_two_pass() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.stddev - 1.25f64.sqrt()).abs() < 1e-12);
        assert_eq!(Stat::of(&[]), None);
    }

    fn set(items: &[(f64, f64, f64, f64, f64)], cat: &str) -> DetectionSet {
        let mut s = DetectionSet::new("leaf", 400, 400);
        for (i, &(cx, cy, w, h, conf)) in items.iter().enumerate() {
            let b = OrientedBox::new(cx, cy, w, h, 0.0).unwrap();
            s.detections.push(Detection::new(i, b, cat, conf).unwrap());
        }
        s
    }

    #[test]
    fn pores_attach_to_containing_stoma() {
        let stomata = set(&[(50.0, 50.0, 40.0, 20.0, 0.9), (150.0, 50.0, 40.0, 20.0, 0.9)], "stoma");
        let pores = set(
            &[
                (52.0, 50.0, 10.0, 3.0, 0.7),
                (48.0, 50.0, 10.0, 3.0, 0.9),
                (300.0, 300.0, 10.0, 3.0, 0.9),
                (150.0, 51.0, 10.0, 3.0, 0.8),
            ],
            "pore",
        );
        let a = associate_pores(&stomata, &pores);
        assert_eq!(a.assigned, BTreeMap::from([(0, 1), (1, 3)]));
        assert_eq!(a.duplicate_pore, vec![0]);
        assert_eq!(a.unassigned, vec![2]);
    }

    #[test]
    fn field_of_view() {
        let c = calibration_manual(2.0, Unit::Micrometer).unwrap();
        // 1000 x 500 px at 2 px/um is 500 x 250 um
        assert!((fov_area_mm2(1000, 500, &c) - 0.125).abs() < 1e-15);
    }
}
