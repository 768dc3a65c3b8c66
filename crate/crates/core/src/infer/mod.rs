//! Inference backends and shared detection post-processing.
//!
//! Pipelines never talk to a model directly; they ask a [`Backend`] for the
//! raw detections of a named model role and run the same threshold + NMS
//! chain on whatever comes back. The only backend shipped is
//! [`FixtureBackend`], which serves predictions from `<image_stem>.pred.json`
//! files and makes every pipeline reproducible offline.

mod fixture;
mod mask;

pub use fixture::{
    load_fixture, CropPredictions, DetRecord, FixtureBackend, FixtureFile, ModelPredictions, FIXTURE_SUFFIX,
    VerdictRecord,
};
pub use mask::{inscribed_ellipse, Bitmask, MaskShape};

use serde::{Deserialize, Serialize};

use crate::geom::{self, ConvexPolygon, OrientedBox, Point2};

#[derive(Debug, thiserror::Error)]
pub enum InferError {
    #[error("not a directory: {0}")]
    NotADirectory(String),
    #[error("no prediction for image `{image}` role `{role}`")]
    MissingPrediction { image: String, role: String },
    #[error("no mask for image `{image}` role `{role}` detection {index}")]
    MissingMask {
        image: String,
        role: String,
        index: usize,
    },
    #[error("no verdict for image `{image}` role `{role}` detection {index}")]
    MissingVerdict {
        image: String,
        role: String,
        index: usize,
    },
    #[error("schema violation in {file}: {detail}")]
    SchemaViolation { file: String, detail: String },
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
    #[error("invalid inference parameters: {0}")]
    InvalidParams(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Position in the backend's raw output for this role. Survives
    /// filtering, so masks, verdicts and crops stay addressable.
    pub index: usize,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    pub category: String,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub out_of_frame: bool,
}

impl Detection {
    pub fn new(
        index: usize,
        bbox: OrientedBox,
        category: &str,
        confidence: f64,
    ) -> Result<Self, InferError> {
        if category.is_empty() {
            return Err(InferError::InvalidDetection("empty category".into()));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(InferError::InvalidDetection(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self {
            index,
            bbox,
            category: category.to_owned(),
            confidence,
            out_of_frame: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub image_ref: String,
    pub width: u32,
    pub height: u32,
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(image_ref: &str, width: u32, height: u32) -> Self {
        Self {
            image_ref: image_ref.to_owned(),
            width,
            height,
            detections: Vec::new(),
        }
    }

    /// Same image metadata, no detections.
    pub fn clone_meta(&self) -> Self {
        Self::new(&self.image_ref, self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn count_category(&self, category: &str) -> usize {
        self.detections
            .iter()
            .filter(|d| d.category == category)
            .count()
    }

    /// Sorted, de-duplicated category labels.
    pub fn categories(&self) -> Vec<String> {
        let mut c: Vec<String> = self.detections.iter().map(|d| d.category.clone()).collect();
        c.sort();
        c.dedup();
        c
    }

    /// Flag detections whose center falls outside the image. They are kept.
    pub fn flag_out_of_frame(&mut self) {
        let (w, h) = (self.width as f64, self.height as f64);
        for d in &mut self.detections {
            let (x, y) = (d.bbox.cx(), d.bbox.cy());
            d.out_of_frame = !(0.0..=w).contains(&x) || !(0.0..=h).contains(&y);
        }
    }

    pub fn by_index(&self, index: usize) -> Option<&Detection> {
        self.detections.iter().find(|d| d.index == index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    Fixture,
    InscribedEllipse,
}

impl MaskSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            MaskSource::Fixture => "fixture",
            MaskSource::InscribedEllipse => "inscribed_ellipse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSegment {
    pub detection_index: usize,
    pub shape: MaskShape,
    pub source: MaskSource,
}

impl MaskSegment {
    pub fn area_px(&self) -> f64 {
        self.shape.area_px()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Frontal,
    Lateral,
}

impl View {
    pub fn as_str(&self) -> &'static str {
        match self {
            View::Frontal => "frontal",
            View::Lateral => "lateral",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub detection_index: usize,
    pub keep: bool,
    pub view: Option<View>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceParams {
    pub conf_thresh: f64,
    pub nms_iou: f64,
    /// Overrides the pipeline's default model role when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
}

impl Default for InferenceParams {
    fn default() -> Self {
        Self {
            conf_thresh: 0.25,
            nms_iou: 0.30,
            role: None,
        }
    }
}

impl InferenceParams {
    pub fn new(conf_thresh: f64, nms_iou: f64) -> Result<Self, InferError> {
        let p = Self {
            conf_thresh,
            nms_iou,
            role: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), InferError> {
        if !(0.0..=1.0).contains(&self.conf_thresh) {
            return Err(InferError::InvalidParams(format!(
                "conf_thresh {} outside [0, 1]",
                self.conf_thresh
            )));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(InferError::InvalidParams(format!(
                "nms_iou {} outside (0, 1]",
                self.nms_iou
            )));
        }
        Ok(())
    }

    pub fn role_or<'a>(&'a self, default: &'a str) -> &'a str {
        self.role.as_deref().unwrap_or(default)
    }
}

/// Source of raw model output. Implementations must be deterministic.
pub trait Backend: Send + Sync {
    /// Image references the backend can answer for.
    fn images(&self) -> Vec<String>;

    fn detect(&self, image_ref: &str, role: &str) -> Result<DetectionSet, InferError>;

    /// Mask polygon for a raw detection index, if the backend has one.
    fn mask(
        &self,
        image_ref: &str,
        role: &str,
        detection_index: usize,
    ) -> Result<Option<Vec<Point2>>, InferError>;

    fn verdict(
        &self,
        image_ref: &str,
        role: &str,
        detection_index: usize,
    ) -> Result<Option<Verdict>, InferError>;

    /// Stage-2 detections inside the crop of a parent detection, in crop-local
    /// coordinates. `crop_width`/`crop_height` size the returned set.
    fn crop_detect(
        &self,
        image_ref: &str,
        role: &str,
        parent_index: usize,
        crop_width: u32,
        crop_height: u32,
    ) -> Result<DetectionSet, InferError>;
}

/// Raw detections for a role, in backend order.
pub fn detect(backend: &dyn Backend, image_ref: &str, role: &str) -> Result<DetectionSet, InferError> {
    backend.detect(image_ref, role)
}

/// Confidence threshold followed by category-wise OBB NMS.
pub fn postprocess(raw: &DetectionSet, p: &InferenceParams) -> DetectionSet {
    let mut filtered = raw.clone_meta();
    filtered.detections = raw
        .detections
        .iter()
        .filter(|d| d.confidence >= p.conf_thresh)
        .cloned()
        .collect();
    geom::obb_nms(&filtered, p.nms_iou)
}

/// Box-prompted segmentation.
///
/// Each returned mask is clipped to its prompt box grown by one pixel and to
/// the image. Without a stored mask, `strict` decides between an error and
/// the ellipse inscribed in the box.
pub fn segment(
    backend: &dyn Backend,
    image_ref: &str,
    role: &str,
    prompts: &[Detection],
    image_size: (u32, u32),
    strict: bool,
) -> Result<Vec<MaskSegment>, InferError> {
    let frame = frame_polygon(image_size);
    prompts
        .iter()
        .map(|det| {
            let limit = geom::convex_intersection(&geom::obb_corners(&det.bbox.dilated(1.0)), &frame);
            match backend.mask(image_ref, role, det.index)? {
                Some(poly) => Ok(MaskSegment {
                    detection_index: det.index,
                    shape: MaskShape::Polygon(geom::clip_polygon(&poly, &limit)),
                    source: MaskSource::Fixture,
                }),
                None if strict => Err(InferError::MissingMask {
                    image: image_ref.to_owned(),
                    role: role.to_owned(),
                    index: det.index,
                }),
                None => Ok(MaskSegment {
                    detection_index: det.index,
                    shape: MaskShape::Polygon(geom::clip_polygon(
                        &inscribed_ellipse(&det.bbox, mask::ELLIPSE_VERTICES),
                        &limit,
                    )),
                    source: MaskSource::InscribedEllipse,
                }),
            }
        })
        .collect()
}

pub fn classify(
    backend: &dyn Backend,
    image_ref: &str,
    role: &str,
    detection_index: usize,
) -> Result<Verdict, InferError> {
    backend
        .verdict(image_ref, role, detection_index)?
        .ok_or_else(|| InferError::MissingVerdict {
            image: image_ref.to_owned(),
            role: role.to_owned(),
            index: detection_index,
        })
}

pub(crate) fn frame_polygon((w, h): (u32, u32)) -> ConvexPolygon {
    let (w, h) = (w as f64, h as f64);
    ConvexPolygon::new(vec![
        Point2::new(0.0, 0.0),
        Point2::new(w, 0.0),
        Point2::new(w, h),
        Point2::new(0.0, h),
    ])
    .unwrap_or_default()
}
