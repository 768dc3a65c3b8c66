//! On-disk layout under the data directory:
//!
//! ```text
//! images/<image_id>/meta.json, original.<ext>
//! jobs/<job_id>/manifest.json, status.json, history.jsonl,
//!               results.json, results.csv, summary.csv, overlays/, crops/
//! claims.jsonl
//! ```
//!
//! Documents are replaced by writing a temporary sibling and renaming it, so
//! readers only ever see complete versions.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{JobError, JobRecord, JobState};

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> JobError + '_ {
    move |source| JobError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Replace `path` atomically with `bytes`, durable once this returns.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), JobError> {
    let dir = path.parent().expect("file inside a directory");
    let tmp = dir.join(format!(
        ".{}.{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("doc"),
        uuid::Uuid::new_v4().simple()
    ));
    let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), JobError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable document");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, JobError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| JobError::Corrupt {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

pub fn append_line<T: Serialize>(path: &Path, value: &T) -> Result<(), JobError> {
    let mut line = serde_json::to_vec(value).expect("serializable line");
    line.push(b'\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    f.write_all(&line).map_err(io_err(path))?;
    f.sync_data().map_err(io_err(path))
}

pub fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JobError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| JobError::Corrupt {
                path: path.display().to_string(),
                detail: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: String,
    pub filename: String,
    pub media_type: String,
    pub width: u32,
    pub height: u32,
    pub bytes: u64,
    pub sha256: String,
}

/// One state change, as appended to a job's history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub state: JobState,
    pub at_ms: u64,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub job_id: String,
    pub worker: String,
    pub at_ms: u64,
}

/// Keep only a plain file name: no directories, no control characters.
fn sanitize_filename(name: &str) -> String {
    let base = name.rsplit(['/', '\\']).next().unwrap_or(name);
    let clean: String = base
        .chars()
        .map(|c| if c.is_control() || c == ':' { '_' } else { c })
        .collect();
    if clean.is_empty() || clean == "." || clean == ".." {
        "image".into()
    } else {
        clean
    }
}

#[derive(Debug, Clone)]
pub struct JobStore {
    root: PathBuf,
}

impl JobStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, JobError> {
        let root = root.as_ref().to_owned();
        for sub in ["images", "jobs"] {
            let d = root.join(sub);
            fs::create_dir_all(&d).map_err(io_err(&d))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn image_dir(&self, image_id: &str) -> PathBuf {
        self.root.join("images").join(image_id)
    }

    pub fn job_dir(&self, job_id: &str) -> PathBuf {
        self.root.join("jobs").join(job_id)
    }

    pub fn claims_path(&self) -> PathBuf {
        self.root.join("claims.jsonl")
    }

    /// Store PNG or JPEG bytes. The id is derived from the content, so the
    /// same bytes always map to the same id; the first upload's file name
    /// is kept.
    pub fn put_image(&self, bytes: &[u8], filename: &str) -> Result<ImageMeta, JobError> {
        let format = image::guess_format(bytes).map_err(|_| JobError::UnsupportedMediaType)?;
        let (media_type, ext) = match format {
            image::ImageFormat::Png => ("image/png", "png"),
            image::ImageFormat::Jpeg => ("image/jpeg", "jpg"),
            _ => return Err(JobError::UnsupportedMediaType),
        };
        let (width, height) = image::ImageReader::with_format(io::Cursor::new(bytes), format)
            .into_dimensions()
            .map_err(|_| JobError::UnsupportedMediaType)?;
        let digest: String = Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect();
        let image_id = digest[..16].to_owned();
        let dir = self.image_dir(&image_id);
        let meta_path = dir.join("meta.json");
        if meta_path.exists() {
            return read_json(&meta_path);
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_atomic(&dir.join(format!("original.{ext}")), bytes)?;
        let meta = ImageMeta {
            image_id,
            filename: sanitize_filename(filename),
            media_type: media_type.into(),
            width,
            height,
            bytes: bytes.len() as u64,
            sha256: digest,
        };
        write_json(&meta_path, &meta)?;
        Ok(meta)
    }

    pub fn image(&self, image_id: &str) -> Result<ImageMeta, JobError> {
        let valid = !image_id.is_empty() && image_id.chars().all(|c| c.is_ascii_hexdigit());
        let path = self.image_dir(image_id).join("meta.json");
        if !valid || !path.exists() {
            return Err(JobError::UnknownImage(image_id.to_owned()));
        }
        read_json(&path)
    }

    pub fn image_file(&self, meta: &ImageMeta) -> PathBuf {
        let ext = if meta.media_type == "image/png" { "png" } else { "jpg" };
        self.image_dir(&meta.image_id).join(format!("original.{ext}"))
    }

    pub fn status_path(&self, job_id: &str) -> PathBuf {
        self.job_dir(job_id).join("status.json")
    }

    pub fn history_path(&self, job_id: &str) -> PathBuf {
        self.job_dir(job_id).join("history.jsonl")
    }

    fn valid_job_id(job_id: &str) -> bool {
        !job_id.is_empty() && job_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
    }

    pub fn load(&self, job_id: &str) -> Result<JobRecord, JobError> {
        let path = self.status_path(job_id);
        if !Self::valid_job_id(job_id) || !path.exists() {
            return Err(JobError::UnknownJob(job_id.to_owned()));
        }
        read_json(&path)
    }

    /// Persist a brand-new job: manifest, first status, first history line.
    pub fn create(&self, rec: &JobRecord) -> Result<(), JobError> {
        let dir = self.job_dir(&rec.job_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_json(&dir.join("manifest.json"), &rec.manifest())?;
        self.save(rec, None)
    }

    /// Write a new status version; a state change also goes to the history.
    pub fn save(&self, rec: &JobRecord, previous: Option<JobState>) -> Result<(), JobError> {
        write_json(&self.status_path(&rec.job_id), rec)?;
        if previous != Some(rec.state) {
            append_line(
                &self.history_path(&rec.job_id),
                &HistoryEntry {
                    state: rec.state,
                    at_ms: now_ms(),
                    version: rec.version,
                },
            )?;
        }
        Ok(())
    }

    pub fn history(&self, job_id: &str) -> Result<Vec<HistoryEntry>, JobError> {
        read_lines(&self.history_path(job_id))
    }

    pub fn claims(&self) -> Result<Vec<Claim>, JobError> {
        read_lines(&self.claims_path())
    }

    /// All persisted jobs, oldest submission first.
    pub fn list(&self) -> Result<Vec<JobRecord>, JobError> {
        let dir = self.root.join("jobs");
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let status = entry.path().join("status.json");
            if status.exists() {
                out.push(read_json::<JobRecord>(&status)?);
            }
        }
        out.sort_by(|a, b| a.submitted_at_ms.cmp(&b.submitted_at_ms).then(a.job_id.cmp(&b.job_id)));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png(w: u32, h: u32, v: u8) -> Vec<u8> {
        let img = image::GrayImage::from_pixel(w, h, image::Luma([v]));
        let mut out = io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png).unwrap();
        out.into_inner()
    }

    #[test]
    fn images_are_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let store = JobStore::open(dir.path()).unwrap();
        let a = store.put_image(&png(8, 6, 1), "../plot1_a.png").unwrap();
        assert_eq!((a.width, a.height), (8, 6));
        assert_eq!(a.filename, "plot1_a.png");
        let again = store.put_image(&png(8, 6, 1), "other.png").unwrap();
        assert_eq!(again, a);
        let b = store.put_image(&png(8, 6, 2), "b.png").unwrap();
        assert_ne!(b.image_id, a.image_id);
        assert!(matches!(store.put_image(b"hello", "x.txt"), Err(JobError::UnsupportedMediaType)));
        assert!(matches!(store.image("../../etc"), Err(JobError::UnknownImage(_))));
        assert!(store.image_file(&a).exists());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("doc.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
