//! Fusarium head blight scoring and damaged-kernel ratios.
//!
//! All ratios are exact rationals; they become decimals only at export.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Serialize, Serializer};

use crate::infer::{self, Backend, DetectionSet, InferError, InferenceParams, View};
use crate::Warning;

pub const DISEASED: &str = "diseased";
pub const DAMAGED: &str = "damaged";
pub const DEFAULT_CROP_PADDING: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum DiseaseError {
    #[error("no spikelets detected")]
    NoSpikelets,
    #[error("no kernels detected")]
    NoKernels,
    #[error("spike {spike_index}: {source}")]
    Spike {
        spike_index: usize,
        #[source]
        source: InferError,
    },
    #[error(transparent)]
    Infer(#[from] InferError),
}

pub fn ratio(num: usize, den: usize) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn ser_ratio<S: Serializer>(r: &BigRational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(to_f64(r))
}

fn ser_opt_ratio<S: Serializer>(r: &Option<BigRational>, s: S) -> Result<S::Ok, S::Error> {
    match r {
        Some(r) => s.serialize_f64(to_f64(r)),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpikeFHBRecord {
    pub spike_index: usize,
    pub view: Option<View>,
    pub total_spikelets: usize,
    pub diseased_spikelets: usize,
    /// `diseased / total`; absent when the spike has no spikelets.
    #[serde(serialize_with = "ser_opt_ratio")]
    pub severity: Option<BigRational>,
}

impl SpikeFHBRecord {
    pub fn new(spike_index: usize, total: usize, diseased: usize) -> Self {
        assert!(diseased <= total, "diseased {diseased} > total {total}");
        Self {
            spike_index,
            view: None,
            total_spikelets: total,
            diseased_spikelets: diseased,
            severity: (total > 0).then(|| ratio(diseased, total)),
        }
    }

    fn from_set(spike_index: usize, set: &DetectionSet) -> Self {
        Self::new(spike_index, set.len(), set.count_category(DISEASED))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FHBSummary {
    pub n_assessed: usize,
    pub n_infected: usize,
    #[serde(serialize_with = "ser_ratio")]
    pub incidence: BigRational,
    #[serde(serialize_with = "ser_ratio")]
    pub severity_infected: BigRational,
    #[serde(serialize_with = "ser_ratio")]
    pub severity_all: BigRational,
    #[serde(serialize_with = "ser_ratio")]
    pub index: BigRational,
}

/// Incidence, mean severity over infected and over all spikes, and
/// `index = incidence * severity_infected`. Records without a severity are
/// not assessable and are ignored; no assessable record means no summary.
pub fn fhb_metrics(records: &[SpikeFHBRecord]) -> Option<FHBSummary> {
    let sev: Vec<&BigRational> = records.iter().filter_map(|r| r.severity.as_ref()).collect();
    if sev.is_empty() {
        return None;
    }
    let n = sev.len();
    let infected: Vec<&BigRational> = sev.iter().copied().filter(|s| !s.is_zero()).collect();
    let sum = |v: &[&BigRational]| v.iter().fold(BigRational::zero(), |a, b| a + *b);
    let incidence = ratio(infected.len(), n);
    let severity_infected = if infected.is_empty() {
        BigRational::zero()
    } else {
        sum(&infected) / BigInt::from(infected.len())
    };
    let severity_all = sum(&sev) / BigInt::from(n);
    Some(FHBSummary {
        n_assessed: n,
        n_infected: infected.len(),
        index: &incidence * &severity_infected,
        incidence,
        severity_infected,
        severity_all,
    })
}

/// Severity of one spike photographed on its own.
pub fn fhb_single_spike(
    image_ref: &str,
    backend: &dyn Backend,
    params: &InferenceParams,
) -> Result<(SpikeFHBRecord, DetectionSet), DiseaseError> {
    let raw = infer::detect(backend, image_ref, params.role_or("fhb_spike_single"))?;
    let dets = infer::postprocess(&raw, params);
    if dets.is_empty() {
        return Err(DiseaseError::NoSpikelets);
    }
    Ok((SpikeFHBRecord::from_set(0, &dets), dets))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FhbFieldResult {
    pub spikes: DetectionSet,
    /// Kept spikes in spike index order, including ones without spikelets.
    pub records: Vec<SpikeFHBRecord>,
    pub summary: Option<FHBSummary>,
    pub warnings: Vec<Warning>,
}

/// Spike detection, per-spike view verdict, spikelet detection inside each
/// kept spike's crop, then aggregation.
pub fn fhb_field_pipeline(
    image_ref: &str,
    backend: &dyn Backend,
    params: &InferenceParams,
    crop_padding: f64,
) -> Result<FhbFieldResult, DiseaseError> {
    let raw = infer::detect(backend, image_ref, params.role_or("spike"))?;
    let spikes = infer::postprocess(&raw, params);
    let ctx = |spike_index| move |source| DiseaseError::Spike { spike_index, source };
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for spike in &spikes.detections {
        let verdict = infer::classify(backend, image_ref, "spike_view", spike.index).map_err(ctx(spike.index))?;
        if !verdict.keep {
            continue;
        }
        let (x0, y0, x1, y1) = spike.bbox.pixel_crop(crop_padding, spikes.width, spikes.height);
        let crop_raw = backend
            .crop_detect(image_ref, "fhb_spikelet", spike.index, x1 - x0, y1 - y0)
            .map_err(ctx(spike.index))?;
        let crop = infer::postprocess(&crop_raw, params);
        let mut rec = SpikeFHBRecord::from_set(spike.index, &crop);
        rec.view = verdict.view;
        if rec.severity.is_none() {
            warnings.push(Warning::new(
                "spike_without_spikelets",
                format!("spike {} has no spikelet detections", spike.index),
            ));
        }
        records.push(rec);
    }
    let summary = fhb_metrics(&records);
    if summary.is_none() {
        warnings.push(Warning::new("no_assessable_spikes", "no spike could be assessed"));
    }
    Ok(FhbFieldResult {
        spikes,
        records,
        summary,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FDKResult {
    pub total_kernels: usize,
    pub damaged_kernels: usize,
    #[serde(serialize_with = "ser_ratio")]
    pub fdk_ratio: BigRational,
    #[serde(serialize_with = "ser_opt_ratio")]
    pub area_weighted_ratio: Option<BigRational>,
}

/// Exact ratio of two non-negative finite floats.
fn float_ratio(num: f64, den: f64) -> Option<BigRational> {
    if den <= 0.0 {
        return None;
    }
    Some(BigRational::from_float(num)? / BigRational::from_float(den)?)
}

/// Count-based damaged-kernel ratio; with a segmenter, also the share of
/// mask area covered by damaged kernels.
pub fn fdk_assess(
    image_ref: &str,
    backend: &dyn Backend,
    params: &InferenceParams,
    seg_backend: Option<&dyn Backend>,
) -> Result<(FDKResult, DetectionSet), DiseaseError> {
    let role = params.role_or("kernel");
    let raw = infer::detect(backend, image_ref, role)?;
    let dets = infer::postprocess(&raw, params);
    if dets.is_empty() {
        return Err(DiseaseError::NoKernels);
    }
    let total = dets.len();
    let damaged = dets.count_category(DAMAGED);
    let area_weighted_ratio = match seg_backend {
        Some(seg) => {
            let masks = infer::segment(seg, image_ref, role, &dets.detections, (dets.width, dets.height), false)?;
            let (mut dmg, mut all) = (0.0, 0.0);
            for (m, d) in masks.iter().zip(&dets.detections) {
                let a = m.area_px();
                all += a;
                if d.category == DAMAGED {
                    dmg += a;
                }
            }
            float_ratio(dmg, all)
        }
        None => None,
    };
    Ok((
        FDKResult {
            total_kernels: total,
            damaged_kernels: damaged,
            fdk_ratio: ratio(damaged, total),
            area_weighted_ratio,
        },
        dets,
    ))
}
