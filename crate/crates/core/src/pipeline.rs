//! The eight user-facing pipelines behind one per-image entry point.
//!
//! The CLI, the job workers and single-image requests all go through
//! [`run_image`] and [`run_batch`], so a given image, backend and parameter
//! set always yields the same record.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::calib::{self, CalibError, MarkerDictionary, ScaleCalibration, Unit};
use crate::counting::{self, CountError, SpikeletAssignment};
use crate::disease::{self, DiseaseError, FDKResult, FHBSummary, SpikeFHBRecord};
use crate::infer::{self, Backend, DetectionSet, InferError, InferenceParams};
use crate::morpho::{self, KernelRecord, MorphoError, MorphometricsSummary, StomaRecord, StomataSummary};
use crate::Warning;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PipelineId {
    #[serde(rename = "spike")]
    Spike,
    #[serde(rename = "spike-uav")]
    SpikeUav,
    #[serde(rename = "spikelet")]
    Spikelet,
    #[serde(rename = "fhb-single")]
    FhbSingle,
    #[serde(rename = "fhb-field")]
    FhbField,
    #[serde(rename = "fdk")]
    Fdk,
    #[serde(rename = "kernel-morph")]
    KernelMorph,
    #[serde(rename = "stomata")]
    Stomata,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown pipeline `{0}`")]
pub struct UnknownPipeline(pub String);

impl PipelineId {
    pub const ALL: [PipelineId; 8] = [
        Self::Spike,
        Self::SpikeUav,
        Self::Spikelet,
        Self::FhbSingle,
        Self::FhbField,
        Self::Fdk,
        Self::KernelMorph,
        Self::Stomata,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Spike => "spike",
            Self::SpikeUav => "spike-uav",
            Self::Spikelet => "spikelet",
            Self::FhbSingle => "fhb-single",
            Self::FhbField => "fhb-field",
            Self::Fdk => "fdk",
            Self::KernelMorph => "kernel-morph",
            Self::Stomata => "stomata",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            Self::Spike => "Wheat Spike",
            Self::SpikeUav => "Wheat Spike (UAV)",
            Self::Spikelet => "Spikelet",
            Self::FhbSingle => "FHB Single Spike",
            Self::FhbField => "FHB Field",
            Self::Fdk => "Fusarium-Damaged Kernels",
            Self::KernelMorph => "Kernel Morphometrics",
            Self::Stomata => "Stomata",
        }
    }
}

impl fmt::Display for PipelineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineId {
    type Err = UnknownPipeline;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| UnknownPipeline(s.to_owned()))
    }
}

/// Every tunable of every pipeline. Each pipeline reads only its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineParams {
    pub conf_thresh: f64,
    pub nms_iou: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gsd_mm_per_px: Option<f64>,
    pub tile_size: u32,
    pub overlap: u32,
    pub tau: f64,
    pub crop_padding: f64,
    pub area_weighted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub px_per_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marker_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub px_per_um: Option<f64>,
    pub open_thresh: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        let i = InferenceParams::default();
        Self {
            conf_thresh: i.conf_thresh,
            nms_iou: i.nms_iou,
            gsd_mm_per_px: None,
            tile_size: counting::DEFAULT_TILE_SIZE,
            overlap: counting::DEFAULT_OVERLAP,
            tau: counting::DEFAULT_TAU,
            crop_padding: disease::DEFAULT_CROP_PADDING,
            area_weighted: true,
            px_per_mm: None,
            marker_mm: None,
            px_per_um: None,
            open_thresh: morpho::DEFAULT_OPEN_THRESH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParamError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    CalibrationRequired(String),
}

impl ParamError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Invalid(_) => "invalid_params",
            Self::CalibrationRequired(_) => "calibration_required",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Float,
    Int,
    Bool,
}

/// One entry of a pipeline's parameter schema.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSpec {
    pub name: &'static str,
    #[serde(rename = "type")]
    pub kind: ParamKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    /// `min` itself is not allowed.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub exclusive_min: bool,
    pub default: Option<serde_json::Value>,
    pub required: bool,
    pub description: &'static str,
}

impl ParamSpec {
    fn float(name: &'static str, min: f64, max: f64, default: Option<f64>, description: &'static str) -> Self {
        Self {
            name,
            kind: ParamKind::Float,
            min: Some(min),
            max: Some(max),
            exclusive_min: false,
            default: default.map(serde_json::Value::from),
            required: false,
            description,
        }
    }

    fn positive(name: &'static str, max: f64, description: &'static str) -> Self {
        Self {
            exclusive_min: true,
            ..Self::float(name, 0.0, max, None, description)
        }
    }

    fn int(name: &'static str, min: u32, max: u32, default: u32, description: &'static str) -> Self {
        Self {
            kind: ParamKind::Int,
            default: Some(default.into()),
            ..Self::float(name, min as f64, max as f64, None, description)
        }
    }

    fn boolean(name: &'static str, default: bool, description: &'static str) -> Self {
        Self {
            kind: ParamKind::Bool,
            min: None,
            max: None,
            default: Some(default.into()),
            ..Self::float(name, 0.0, 0.0, None, description)
        }
    }

    fn required(mut self) -> Self {
        self.required = true;
        self
    }

    /// Whether `v` lies within the declared range.
    pub fn admits(&self, v: f64) -> bool {
        if !v.is_finite() {
            return false;
        }
        let lo = match self.min {
            Some(m) if self.exclusive_min => v > m,
            Some(m) => v >= m,
            None => true,
        };
        lo && self.max.is_none_or(|m| v <= m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineDescriptor {
    pub pipeline_id: PipelineId,
    pub display_name: &'static str,
    pub params: Vec<ParamSpec>,
    /// Exactly one of these parameters must be given.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub calibration_one_of: Vec<&'static str>,
}

pub fn descriptor(p: PipelineId) -> PipelineDescriptor {
    let mut params = vec![
        ParamSpec::float("conf_thresh", 0.0, 1.0, Some(0.25), "minimum detection confidence"),
        nms_spec(),
    ];
    let mut calibration_one_of = Vec::new();
    match p {
        PipelineId::Spike => {
            params.push(ParamSpec::positive("gsd_mm_per_px", 1000.0, "ground sampling distance for density"));
        }
        PipelineId::SpikeUav => {
            params.push(ParamSpec::positive("gsd_mm_per_px", 1000.0, "ground sampling distance for density"));
            params.push(ParamSpec::int("tile_size", 64, 8192, counting::DEFAULT_TILE_SIZE, "tile edge in px"));
            params.push(ParamSpec::int("overlap", 0, 4096, counting::DEFAULT_OVERLAP, "tile overlap in px, below tile_size"));
        }
        PipelineId::Spikelet => {
            params.push(tau_spec());
        }
        PipelineId::FhbSingle => {}
        PipelineId::FhbField => {
            params.push(ParamSpec::float("crop_padding", 0.0, 1.0, Some(disease::DEFAULT_CROP_PADDING), "spike crop padding per side, fraction of extent"));
        }
        PipelineId::Fdk => {
            params.push(ParamSpec::boolean("area_weighted", true, "also report the mask-area-weighted ratio"));
        }
        PipelineId::KernelMorph => {
            params.push(ParamSpec::positive("px_per_mm", 10000.0, "manual scale"));
            params.push(ParamSpec::positive("marker_mm", 1000.0, "printed fiducial side; calibrates each image"));
            calibration_one_of = vec!["px_per_mm", "marker_mm"];
        }
        PipelineId::Stomata => {
            params.push(ParamSpec::positive("px_per_um", 1000.0, "microscope scale").required());
            params.push(ParamSpec::float("open_thresh", 0.0, 1.0, Some(morpho::DEFAULT_OPEN_THRESH), "aperture ratio at or above which a stoma is open"));
        }
    }
    PipelineDescriptor {
        pipeline_id: p,
        display_name: p.display_name(),
        params,
        calibration_one_of,
    }
}

fn nms_spec() -> ParamSpec {
    ParamSpec {
        exclusive_min: true,
        ..ParamSpec::float("nms_iou", 0.0, 1.0, Some(0.30), "IoU at which same-category boxes suppress")
    }
}

fn tau_spec() -> ParamSpec {
    ParamSpec {
        exclusive_min: true,
        ..ParamSpec::float("tau", 0.0, 1.0, Some(counting::DEFAULT_TAU), "minimum share of a spikelet inside its spike")
    }
}

pub fn descriptors() -> Vec<PipelineDescriptor> {
    PipelineId::ALL.into_iter().map(descriptor).collect()
}

impl PipelineParams {
    pub fn inference(&self) -> InferenceParams {
        InferenceParams {
            conf_thresh: self.conf_thresh,
            nms_iou: self.nms_iou,
            role: None,
        }
    }

    fn value_of(&self, name: &str) -> Option<f64> {
        match name {
            "conf_thresh" => Some(self.conf_thresh),
            "nms_iou" => Some(self.nms_iou),
            "gsd_mm_per_px" => self.gsd_mm_per_px,
            "tile_size" => Some(self.tile_size as f64),
            "overlap" => Some(self.overlap as f64),
            "tau" => Some(self.tau),
            "crop_padding" => Some(self.crop_padding),
            "px_per_mm" => self.px_per_mm,
            "marker_mm" => self.marker_mm,
            "px_per_um" => self.px_per_um,
            "open_thresh" => Some(self.open_thresh),
            _ => None,
        }
    }

    /// Check the parameters this pipeline reads against its descriptor.
    pub fn validate(&self, p: PipelineId) -> Result<(), ParamError> {
        let d = descriptor(p);
        for spec in d.params.iter().filter(|s| s.kind != ParamKind::Bool) {
            match self.value_of(spec.name) {
                Some(v) if !spec.admits(v) => {
                    return Err(ParamError::Invalid(format!("{} = {v} is out of range", spec.name)))
                }
                None if spec.required => {
                    return Err(ParamError::CalibrationRequired(format!("{} requires {}", p, spec.name)))
                }
                _ => {}
            }
        }
        if p == PipelineId::SpikeUav && self.overlap >= self.tile_size {
            return Err(ParamError::Invalid(format!(
                "overlap {} must be smaller than tile_size {}",
                self.overlap, self.tile_size
            )));
        }
        if !d.calibration_one_of.is_empty() {
            let given = d.calibration_one_of.iter().filter(|n| self.value_of(n).is_some()).count();
            if given == 0 {
                return Err(ParamError::CalibrationRequired(format!(
                    "{p} requires one of {}",
                    d.calibration_one_of.join(", ")
                )));
            }
            if given > 1 {
                return Err(ParamError::Invalid(format!(
                    "{p} takes only one of {}",
                    d.calibration_one_of.join(", ")
                )));
            }
        }
        Ok(())
    }
}

/// One image to process. `name` is the original file name; fixtures are
/// matched by its stem and result rows are labelled and sorted by it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInput {
    pub name: String,
    pub path: Option<PathBuf>,
}

impl ImageInput {
    pub fn new(name: &str, path: Option<PathBuf>) -> Self {
        Self {
            name: name.to_owned(),
            path,
        }
    }
}

/// Field Book style plot identifier: file name up to the first underscore,
/// or the whole stem.
pub fn plot_id(file_name: &str) -> &str {
    let stem = match file_name.rfind('.') {
        Some(dot) if dot > 0 => &file_name[..dot],
        _ => file_name,
    };
    stem.split('_').next().unwrap_or(stem)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Records {
    SpikeCount {
        spike_count: usize,
        spikes_per_m2: Option<f64>,
    },
    Spikelet {
        assignment: SpikeletAssignment,
    },
    FhbSingle {
        record: SpikeFHBRecord,
    },
    FhbField {
        records: Vec<SpikeFHBRecord>,
        summary: Option<FHBSummary>,
    },
    Fdk {
        result: Option<FDKResult>,
    },
    KernelMorph {
        records: Vec<KernelRecord>,
        summary: MorphometricsSummary,
    },
    Stomata {
        records: Vec<StomaRecord>,
        summary: StomataSummary,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageResult {
    pub image: String,
    pub plot_id: String,
    pub status: ImageStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
    pub warnings: Vec<Warning>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<ScaleCalibration>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub records: Option<Records>,
    /// Everything drawn on the overlay.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detections: Option<DetectionSet>,
    /// Detection indices exported as crops.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub crop_indices: Vec<usize>,
}

impl ImageResult {
    fn failed(input: &ImageInput, e: RunError) -> Self {
        Self {
            image: input.name.clone(),
            plot_id: plot_id(&input.name).to_owned(),
            status: ImageStatus::Failed,
            error: Some(ErrorInfo {
                code: e.code().to_owned(),
                message: e.to_string(),
            }),
            warnings: Vec::new(),
            calibration: None,
            records: None,
            detections: None,
            crop_indices: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ImageStatus::Ok
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("invalid tiling: {0}")]
    Tiling(String),
    #[error("cannot read image {name}: {detail}")]
    Image { name: String, detail: String },
    #[error(transparent)]
    Disease(#[from] DiseaseError),
    #[error(transparent)]
    Morpho(#[from] MorphoError),
}

impl From<CountError> for RunError {
    fn from(e: CountError) -> Self {
        match e {
            CountError::InvalidTiling(s) => Self::Tiling(s),
            CountError::Infer(e) => Self::Infer(e),
        }
    }
}

fn infer_code(e: &InferError) -> &'static str {
    match e {
        InferError::NotADirectory(_) => "backend_unavailable",
        InferError::MissingPrediction { .. } => "missing_prediction",
        InferError::MissingMask { .. } => "missing_mask",
        InferError::MissingVerdict { .. } => "missing_verdict",
        InferError::SchemaViolation { .. } => "schema_violation",
        InferError::InvalidDetection(_) => "invalid_detection",
        InferError::InvalidParams(_) => "invalid_params",
        InferError::Io { .. } => "io_error",
    }
}

impl RunError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Infer(e) => infer_code(e),
            Self::Calib(CalibError::NoFiducials) => "no_fiducials",
            Self::Calib(CalibError::InconsistentScale { .. }) => "inconsistent_scale",
            Self::Calib(_) => "invalid_scale",
            Self::Params(p) => p.code(),
            Self::Tiling(_) => "invalid_params",
            Self::Image { .. } => "image_unreadable",
            Self::Disease(DiseaseError::Infer(e) | DiseaseError::Spike { source: e, .. }) => infer_code(e),
            Self::Disease(DiseaseError::NoKernels) => "no_kernels",
            Self::Disease(DiseaseError::NoSpikelets) => "no_spikelets",
            Self::Morpho(MorphoError::Infer(e)) => infer_code(e),
            Self::Morpho(MorphoError::NoKernels) => "no_kernels",
            Self::Morpho(MorphoError::NoStomata) => "no_stomata",
            Self::Morpho(MorphoError::DegenerateMask(_)) => "degenerate_mask",
            Self::Morpho(MorphoError::WrongUnit { .. }) => "invalid_scale",
        }
    }
}

fn image_size(input: &ImageInput) -> Result<(u32, u32), RunError> {
    let path = input.path.as_ref().ok_or_else(|| RunError::Image {
        name: input.name.clone(),
        detail: "no image file".into(),
    })?;
    image::image_dimensions(path).map_err(|e| RunError::Image {
        name: input.name.clone(),
        detail: e.to_string(),
    })
}

fn kernel_calibration(input: &ImageInput, params: &PipelineParams) -> Result<ScaleCalibration, RunError> {
    if let Some(p) = params.px_per_mm {
        return Ok(calib::calibration_manual(p, Unit::Millimeter)?);
    }
    let Some(side) = params.marker_mm else {
        return Err(ParamError::CalibrationRequired("kernel-morph requires px_per_mm or marker_mm".into()).into());
    };
    let path = input.path.as_ref().ok_or_else(|| RunError::Image {
        name: input.name.clone(),
        detail: "fiducial calibration needs the image file".into(),
    })?;
    let gray = image::open(path)
        .map_err(|e| RunError::Image {
            name: input.name.clone(),
            detail: e.to_string(),
        })?
        .to_luma8();
    let dets = calib::detect_fiducials(&gray, MarkerDictionary::builtin());
    Ok(calib::calibration_from_fiducials(&dets, side)?)
}

fn merge_sets(a: &DetectionSet, b: &DetectionSet) -> DetectionSet {
    let mut out = a.clone();
    out.detections.extend(b.detections.iter().cloned());
    out
}

fn ok_result(input: &ImageInput, records: Records, detections: DetectionSet) -> ImageResult {
    ImageResult {
        image: input.name.clone(),
        plot_id: plot_id(&input.name).to_owned(),
        status: ImageStatus::Ok,
        error: None,
        warnings: Vec::new(),
        calibration: None,
        records: Some(records),
        detections: Some(detections),
        crop_indices: Vec::new(),
    }
}

fn empty_set(input: &ImageInput) -> DetectionSet {
    let (w, h) = image_size(input).unwrap_or((0, 0));
    DetectionSet::new(&input.name, w, h)
}

fn run_inner(p: PipelineId, input: &ImageInput, backend: &dyn Backend, params: &PipelineParams) -> Result<ImageResult, RunError> {
    params.validate(p)?;
    let ip = params.inference();
    let name = input.name.as_str();
    let out = match p {
        PipelineId::Spike => {
            let r = counting::count_spikes(name, backend, &ip)?;
            let density = counting::spikes_per_area(r.spike_count, params.gsd_mm_per_px, r.detections.width, r.detections.height);
            let crops = r.detections.detections.iter().map(|d| d.index).collect();
            let mut res = ok_result(
                input,
                Records::SpikeCount {
                    spike_count: r.spike_count,
                    spikes_per_m2: density,
                },
                r.detections,
            );
            res.crop_indices = crops;
            res
        }
        PipelineId::SpikeUav => {
            let (w, h) = image_size(input)?;
            let grid = counting::plan_tiles(w, h, params.tile_size, params.overlap)?;
            let merged = counting::tile_and_merge(name, &grid, backend, &ip)?;
            let r = counting::SpikeCountResult::from_detections(merged, params.gsd_mm_per_px);
            ok_result(
                input,
                Records::SpikeCount {
                    spike_count: r.spike_count,
                    spikes_per_m2: r.spikes_per_m2,
                },
                r.detections,
            )
        }
        PipelineId::Spikelet => {
            let spikes = infer::postprocess(&infer::detect(backend, name, "spike")?, &ip);
            let spikelets = infer::postprocess(&infer::detect(backend, name, "spikelet")?, &ip);
            let assignment = counting::associate_spikelets(&spikes, &spikelets, params.tau);
            let crops = spikes.detections.iter().map(|d| d.index).collect();
            let mut res = ok_result(input, Records::Spikelet { assignment }, merge_sets(&spikes, &spikelets));
            res.crop_indices = crops;
            res
        }
        PipelineId::FhbSingle => match disease::fhb_single_spike(name, backend, &ip) {
            Ok((record, dets)) => ok_result(input, Records::FhbSingle { record }, dets),
            Err(DiseaseError::NoSpikelets) => {
                let mut res = ok_result(
                    input,
                    Records::FhbSingle {
                        record: SpikeFHBRecord::new(0, 0, 0),
                    },
                    empty_set(input),
                );
                res.warnings.push(Warning::new("no_spikelets", "no spikelets detected"));
                res
            }
            Err(e) => return Err(e.into()),
        },
        PipelineId::FhbField => {
            let r = disease::fhb_field_pipeline(name, backend, &ip, params.crop_padding)?;
            let crops = r.records.iter().map(|rec| rec.spike_index).collect();
            let mut res = ok_result(
                input,
                Records::FhbField {
                    records: r.records,
                    summary: r.summary,
                },
                r.spikes,
            );
            res.warnings = r.warnings;
            res.crop_indices = crops;
            res
        }
        PipelineId::Fdk => {
            let seg = params.area_weighted.then_some(backend);
            match disease::fdk_assess(name, backend, &ip, seg) {
                Ok((result, dets)) => ok_result(input, Records::Fdk { result: Some(result) }, dets),
                Err(DiseaseError::NoKernels) => {
                    let mut res = ok_result(input, Records::Fdk { result: None }, empty_set(input));
                    res.warnings.push(Warning::new("no_kernels", "no kernels detected"));
                    res
                }
                Err(e) => return Err(e.into()),
            }
        }
        PipelineId::KernelMorph => {
            let c = kernel_calibration(input, params)?;
            let mut res = match morpho::kernel_morphometrics(name, backend, &ip, &c) {
                Ok(r) => {
                    let mut res = ok_result(
                        input,
                        Records::KernelMorph {
                            records: r.records,
                            summary: r.summary,
                        },
                        r.kernels,
                    );
                    res.warnings = r.warnings;
                    res
                }
                Err(MorphoError::NoKernels) => {
                    let mut res = ok_result(
                        input,
                        Records::KernelMorph {
                            records: Vec::new(),
                            summary: MorphometricsSummary::of(&[]),
                        },
                        empty_set(input),
                    );
                    res.warnings.push(Warning::new("no_kernels", "no kernels detected"));
                    res
                }
                Err(e) => return Err(e.into()),
            };
            res.calibration = Some(c);
            res
        }
        PipelineId::Stomata => {
            let px = params
                .px_per_um
                .ok_or_else(|| ParamError::CalibrationRequired("stomata requires px_per_um".into()))?;
            let c = calib::calibration_manual(px, Unit::Micrometer)?;
            let mut res = match morpho::stomata_morphometrics(name, backend, &ip, &c, params.open_thresh, Some(backend)) {
                Ok(r) => {
                    let dets = merge_sets(&r.stomata, &r.pores);
                    let mut res = ok_result(
                        input,
                        Records::Stomata {
                            records: r.records,
                            summary: r.summary,
                        },
                        dets,
                    );
                    res.warnings = r.warnings;
                    res
                }
                Err(MorphoError::NoStomata) => {
                    let set = empty_set(input);
                    let fov = morpho::fov_area_mm2(set.width, set.height, &c);
                    let mut res = ok_result(
                        input,
                        Records::Stomata {
                            records: Vec::new(),
                            summary: StomataSummary {
                                stomata_count: 0,
                                fov_area_mm2: fov,
                                density_per_mm2: 0.0,
                                mean_aperture_ratio: None,
                            },
                        },
                        set,
                    );
                    res.warnings.push(Warning::new("no_stomata", "no stomata detected"));
                    res
                }
                Err(e) => return Err(e.into()),
            };
            res.calibration = Some(c);
            res
        }
    };
    Ok(out)
}

/// Run one pipeline on one image. Failures are reported in the result,
/// never raised.
pub fn run_image(p: PipelineId, input: &ImageInput, backend: &dyn Backend, params: &PipelineParams) -> ImageResult {
    match run_inner(p, input, backend, params) {
        Ok(r) => r,
        Err(e) => ImageResult::failed(input, e),
    }
}

/// Run a pipeline over many images with up to `concurrency` at once.
///
/// `should_stop` is asked, with the image index, before each image starts;
/// images not started when it answers true are left as `None`. `on_done`
/// sees each result as it finishes, from whichever thread ran it. The
/// output is in input order whatever the completion order.
pub fn run_batch(
    p: PipelineId,
    inputs: &[ImageInput],
    backend: &dyn Backend,
    params: &PipelineParams,
    concurrency: usize,
    should_stop: &(dyn Fn(usize) -> bool + Sync),
    on_done: &(dyn Fn(usize, &ImageResult) + Sync),
) -> Vec<Option<ImageResult>> {
    let slots: Vec<Mutex<Option<ImageResult>>> = inputs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = concurrency.clamp(1, inputs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(input) = inputs.get(i) else { break };
                if should_stop(i) {
                    break;
                }
                let r = run_image(p, input, backend, params);
                on_done(i, &r);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock"))
        .collect()
}
