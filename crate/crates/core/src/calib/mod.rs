//! Pixel-to-physical scale calibration.
//!
//! Kernel images carry square fiducial markers of known printed size; the
//! mean marker side in pixels gives the scale. Microscope images use a
//! user-supplied factor (read off the instrument's scale bar or taken from a
//! per-magnification preset).

mod detect;
mod dictionary;
mod homography;
pub mod render;

pub use detect::{default_window, detect_fiducials, detect_fiducials_with, DetectorConfig, FiducialDetection};
pub use dictionary::{hamming, rotate_cw, rotations, MarkerDictionary, MIN_ROTATIONAL_DISTANCE};
pub use homography::Homography;

use serde::{Deserialize, Serialize};

/// Marker sides may disagree by at most this coefficient of variation.
pub const MAX_SCALE_CV: f64 = 0.05;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CalibError {
    #[error("no fiducial markers detected")]
    NoFiducials,
    #[error("marker scale estimates disagree (cv {cv:.4} > {MAX_SCALE_CV})")]
    InconsistentScale { cv: f64 },
    #[error("invalid scale: {0}")]
    InvalidScale(String),
    #[error("dictionary: {0}")]
    Dictionary(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "mm")]
    Millimeter,
    #[serde(rename = "um")]
    Micrometer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fiducial,
    ScaleBar,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Length,
    Area,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleCalibration {
    px_per_unit: f64,
    unit: Unit,
    method: Method,
    dispersion_cv: f64,
}

impl ScaleCalibration {
    pub fn px_per_unit(&self) -> f64 {
        self.px_per_unit
    }
    pub fn unit(&self) -> Unit {
        self.unit
    }
    pub fn method(&self) -> Method {
        self.method
    }
    pub fn dispersion_cv(&self) -> f64 {
        self.dispersion_cv
    }

    /// Same calibration with the factor multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self, CalibError> {
        let mut c = *self;
        c.px_per_unit = checked_scale(self.px_per_unit * k)?;
        Ok(c)
    }
}

fn checked_scale(v: f64) -> Result<f64, CalibError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CalibError::InvalidScale(format!("{v} px per unit")))
    }
}

pub fn calibration_manual(px_per_unit: f64, unit: Unit) -> Result<ScaleCalibration, CalibError> {
    Ok(ScaleCalibration {
        px_per_unit: checked_scale(px_per_unit)?,
        unit,
        method: Method::Manual,
        dispersion_cv: 0.0,
    })
}

/// Mean of all per-side estimates `side_px / marker_side_mm`, with their
/// population coefficient of variation.
pub fn calibration_from_fiducials(
    dets: &[FiducialDetection],
    marker_side_mm: f64,
) -> Result<ScaleCalibration, CalibError> {
    if !(marker_side_mm.is_finite() && marker_side_mm > 0.0) {
        return Err(CalibError::InvalidScale(format!(
            "marker side {marker_side_mm} mm"
        )));
    }
    if dets.is_empty() {
        return Err(CalibError::NoFiducials);
    }
    let est: Vec<f64> = dets
        .iter()
        .flat_map(|d| d.side_lengths_px.iter().map(|s| s / marker_side_mm))
        .collect();
    let n = est.len() as f64;
    let mean = est.iter().sum::<f64>() / n;
    let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    let cv = var.sqrt() / mean;
    if cv > MAX_SCALE_CV {
        return Err(CalibError::InconsistentScale { cv });
    }
    Ok(ScaleCalibration {
        px_per_unit: checked_scale(mean)?,
        unit: Unit::Millimeter,
        method: Method::Fiducial,
        dispersion_cv: cv,
    })
}

pub fn convert_measurement(value_px: f64, kind: MeasureKind, c: &ScaleCalibration) -> f64 {
    match kind {
        MeasureKind::Length => value_px / c.px_per_unit,
        MeasureKind::Area => value_px / (c.px_per_unit * c.px_per_unit),
    }
}

/// Inverse of [`convert_measurement`].
pub fn to_pixels(value: f64, kind: MeasureKind, c: &ScaleCalibration) -> f64 {
    match kind {
        MeasureKind::Length => value * c.px_per_unit,
        MeasureKind::Area => value * c.px_per_unit * c.px_per_unit,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point2;

    fn det(side: f64) -> FiducialDetection {
        FiducialDetection {
            marker_id: 0,
            corners: [Point2::default(); 4],
            side_lengths_px: [side; 4],
        }
    }

    #[test]
    fn fiducial_scale() {
        let c = calibration_from_fiducials(&[det(200.0)], 20.0).unwrap();
        assert_eq!(c.px_per_unit(), 10.0);
        assert_eq!(c.dispersion_cv(), 0.0);
        assert_eq!(c.method(), Method::Fiducial);
        assert_eq!(c.unit(), Unit::Millimeter);

        let c = calibration_from_fiducials(&[det(200.0), det(202.0)], 20.0).unwrap();
        assert!((c.px_per_unit() - 10.05).abs() < 1e-12);
        // eight estimates, four at 10.0 and four at 10.1: population sd 0.05
        assert!((c.dispersion_cv() - 0.05 / 10.05).abs() < 1e-12);

        assert_eq!(calibration_from_fiducials(&[], 20.0), Err(CalibError::NoFiducials));
        assert!(matches!(
            calibration_from_fiducials(&[det(100.0), det(200.0)], 20.0),
            Err(CalibError::InconsistentScale { .. })
        ));
    }

    #[test]
    fn manual_scale() {
        let c = calibration_manual(2.0, Unit::Micrometer).unwrap();
        assert_eq!(c.px_per_unit(), 2.0);
        assert_eq!(c.method(), Method::Manual);
        assert_eq!(c.dispersion_cv(), 0.0);
        assert!(calibration_manual(0.0, Unit::Millimeter).is_err());
        assert!(calibration_manual(f64::NAN, Unit::Millimeter).is_err());
        assert!(calibration_manual(-1.0, Unit::Millimeter).is_err());

        let c = calibration_manual(10.0, Unit::Millimeter).unwrap();
        let mm = convert_measurement(37.5, MeasureKind::Length, &c);
        assert_eq!(to_pixels(mm, MeasureKind::Length, &c), 37.5);
    }

    #[test]
    fn conversions() {
        let c = calibration_manual(10.0, Unit::Millimeter).unwrap();
        assert_eq!(convert_measurement(100.0, MeasureKind::Length, &c), 10.0);
        assert_eq!(convert_measurement(100.0, MeasureKind::Area, &c), 1.0);
        let um = calibration_manual(2.0, Unit::Micrometer).unwrap();
        assert_eq!(convert_measurement(50.0, MeasureKind::Length, &um), 25.0);
    }
}
