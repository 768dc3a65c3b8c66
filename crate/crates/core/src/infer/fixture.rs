//! `<image_stem>.pred.json` prediction files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Backend, Detection, DetectionSet, InferError, Verdict, View};
use crate::geom::{OrientedBox, Point2};

pub const FIXTURE_SUFFIX: &str = ".pred.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureFile {
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub models: BTreeMap<String, ModelPredictions>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelPredictions {
    #[serde(default)]
    pub detections: Vec<DetRecord>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub masks: BTreeMap<String, Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub verdicts: BTreeMap<String, VerdictRecord>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub crops: BTreeMap<String, CropPredictions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetRecord {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub angle_rad: f64,
    pub category: String,
    pub conf: f64,
}

impl DetRecord {
    pub fn from_detection(d: &Detection) -> Self {
        Self {
            cx: d.bbox.cx(),
            cy: d.bbox.cy(),
            w: d.bbox.w(),
            h: d.bbox.h(),
            angle_rad: d.bbox.theta(),
            category: d.category.clone(),
            conf: d.confidence,
        }
    }

    fn to_detection(&self, index: usize) -> Result<Detection, String> {
        let bbox = OrientedBox::new(self.cx, self.cy, self.w, self.h, self.angle_rad)
            .map_err(|e| e.to_string())?;
        Detection::new(index, bbox, &self.category, self.conf).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub keep: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CropPredictions {
    pub detections: Vec<DetRecord>,
}

fn violation(file: &Path, detail: String) -> InferError {
    InferError::SchemaViolation {
        file: file.display().to_string(),
        detail,
    }
}

fn parse_index(file: &Path, ctx: &str, key: &str) -> Result<usize, InferError> {
    key.parse()
        .map_err(|_| violation(file, format!("{ctx}: key `{key}` is not a detection index")))
}

fn parse_view(s: &str) -> Option<View> {
    match s {
        "frontal" => Some(View::Frontal),
        "lateral" => Some(View::Lateral),
        _ => None,
    }
}

/// Read and validate one fixture file. Every record is checked against the
/// detection invariants; the error names the file and the offending record.
pub fn load_fixture(path: &Path) -> Result<FixtureFile, InferError> {
    let text = fs::read_to_string(path).map_err(|source| InferError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let f: FixtureFile =
        serde_json::from_str(&text).map_err(|e| violation(path, e.to_string()))?;
    if f.width == 0 || f.height == 0 {
        return Err(violation(path, "image dimensions must be positive".into()));
    }
    for (role, m) in &f.models {
        for (i, d) in m.detections.iter().enumerate() {
            d.to_detection(i)
                .map_err(|e| violation(path, format!("models.{role}.detections[{i}]: {e}")))?;
        }
        for (k, poly) in &m.masks {
            let ctx = format!("models.{role}.masks");
            parse_index(path, &ctx, k)?;
            if poly.len() < 3 || poly.iter().flatten().any(|v| !v.is_finite()) {
                return Err(violation(path, format!("{ctx}[{k}]: need >= 3 finite points")));
            }
        }
        for (k, v) in &m.verdicts {
            let ctx = format!("models.{role}.verdicts");
            parse_index(path, &ctx, k)?;
            if let Some(view) = &v.view {
                if parse_view(view).is_none() {
                    return Err(violation(path, format!("{ctx}[{k}]: unknown view `{view}`")));
                }
            }
        }
        for (k, c) in &m.crops {
            let ctx = format!("models.{role}.crops");
            parse_index(path, &ctx, k)?;
            for (i, d) in c.detections.iter().enumerate() {
                d.to_detection(i).map_err(|e| {
                    violation(path, format!("{ctx}[{k}].detections[{i}]: {e}"))
                })?;
            }
        }
    }
    Ok(f)
}

/// Serves predictions from a directory of fixture files.
#[derive(Debug, Clone)]
pub struct FixtureBackend {
    root: PathBuf,
    stems: Vec<String>,
}

/// `dir/img01.png` and `img01` both map to `img01`.
pub(crate) fn image_stem(image_ref: &str) -> &str {
    let name = image_ref.rsplit(['/', '\\']).next().unwrap_or(image_ref);
    match name.rfind('.') {
        Some(dot) if dot > 0 => &name[..dot],
        _ => name,
    }
}

impl FixtureBackend {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, InferError> {
        let root = root.as_ref();
        if !root.is_dir() {
            return Err(InferError::NotADirectory(root.display().to_string()));
        }
        let io = |source| InferError::Io {
            path: root.display().to_string(),
            source,
        };
        let mut stems = Vec::new();
        for entry in fs::read_dir(root).map_err(io)? {
            let name = entry.map_err(io)?.file_name();
            if let Some(stem) = name.to_str().and_then(|n| n.strip_suffix(FIXTURE_SUFFIX)) {
                stems.push(stem.to_owned());
            }
        }
        stems.sort();
        Ok(Self {
            root: root.to_owned(),
            stems,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn fixture_path(&self, image_ref: &str) -> PathBuf {
        self.root
            .join(format!("{}{}", image_stem(image_ref), FIXTURE_SUFFIX))
    }

    fn load(&self, image_ref: &str, role: &str) -> Result<FixtureFile, InferError> {
        let stem = image_stem(image_ref);
        if self.stems.binary_search_by(|s| s.as_str().cmp(stem)).is_err() {
            return Err(InferError::MissingPrediction {
                image: image_ref.to_owned(),
                role: role.to_owned(),
            });
        }
        load_fixture(&self.fixture_path(image_ref))
    }

    fn model(&self, image_ref: &str, role: &str) -> Result<(FixtureFile, ModelPredictions), InferError> {
        let mut f = self.load(image_ref, role)?;
        let m = f.models.remove(role).ok_or_else(|| InferError::MissingPrediction {
            image: image_ref.to_owned(),
            role: role.to_owned(),
        })?;
        Ok((f, m))
    }
}

fn to_set(image_ref: &str, w: u32, h: u32, recs: &[DetRecord]) -> DetectionSet {
    let mut set = DetectionSet::new(image_ref, w, h);
    set.detections = recs
        .iter()
        .enumerate()
        .map(|(i, r)| r.to_detection(i).expect("validated at load"))
        .collect();
    set.flag_out_of_frame();
    set
}

impl Backend for FixtureBackend {
    fn images(&self) -> Vec<String> {
        self.stems.clone()
    }

    fn detect(&self, image_ref: &str, role: &str) -> Result<DetectionSet, InferError> {
        let (f, m) = self.model(image_ref, role)?;
        Ok(to_set(image_ref, f.width, f.height, &m.detections))
    }

    fn mask(&self, image_ref: &str, role: &str, index: usize) -> Result<Option<Vec<Point2>>, InferError> {
        let (_, m) = self.model(image_ref, role)?;
        Ok(m
            .masks
            .get(&index.to_string())
            .map(|pts| pts.iter().map(|&[x, y]| Point2::new(x, y)).collect()))
    }

    fn verdict(&self, image_ref: &str, role: &str, index: usize) -> Result<Option<Verdict>, InferError> {
        let (_, m) = self.model(image_ref, role)?;
        Ok(m.verdicts.get(&index.to_string()).map(|v| Verdict {
            detection_index: index,
            keep: v.keep,
            view: v.view.as_deref().and_then(parse_view),
        }))
    }

    fn crop_detect(
        &self,
        image_ref: &str,
        role: &str,
        parent_index: usize,
        crop_width: u32,
        crop_height: u32,
    ) -> Result<DetectionSet, InferError> {
        let (_, m) = self.model(image_ref, role)?;
        let crop = m
            .crops
            .get(&parent_index.to_string())
            .ok_or_else(|| InferError::MissingPrediction {
                image: image_ref.to_owned(),
                role: format!("{role} (crop of detection {parent_index})"),
            })?;
        let name = format!("{}#{}", image_ref, parent_index);
        Ok(to_set(&name, crop_width, crop_height, &crop.detections))
    }
}
