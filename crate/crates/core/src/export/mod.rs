//! Result files: per-pipeline CSV tables, overlay renderings, detection crops.

mod overlay;
mod table;

pub use overlay::{export_crops, render_overlay, write_visuals, OverlayStyle, PALETTE};
pub use table::{format_decimal, render_csvs, schema, summary_schema, CsvFiles};

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("image is {image:?} but detections are for {detections:?}")]
    DimensionMismatch {
        image: (u32, u32),
        detections: (u32, u32),
    },
    #[error("records of {found} do not fit the {expected} schema")]
    SchemaMismatch { expected: String, found: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("decoding {path}: {source}")]
    Decode {
        path: String,
        source: image::ImageError,
    },
    #[error("encoding {path}: {source}")]
    Encode {
        path: String,
        source: image::ImageError,
    },
}
