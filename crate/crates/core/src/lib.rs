//! Wheat phenotyping pipelines built on oriented bounding boxes.

use serde::{Deserialize, Serialize};

pub mod calib;
pub mod counting;
pub mod disease;
pub mod export;
pub mod geom;
pub mod infer;
pub mod jobs;
pub mod morpho;
pub mod pipeline;
pub mod synth;

/// Non-fatal condition attached to a result, with a stable code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub code: String,
    pub detail: String,
}

impl Warning {
    pub fn new(code: &str, detail: impl Into<String>) -> Self {
        Self {
            code: code.to_owned(),
            detail: detail.into(),
        }
    }
}

#[cfg(doctest)]
mod book {
    macro_rules! chapters {
        ($($name:ident => $file:literal),* $(,)?) => {
            $(
                #[doc = include_str!(concat!("../../../book/src/", $file))]
                #[allow(dead_code)]
                struct $name;
            )*
        };
    }

    chapters! {
        Introduction => "introduction.md",
        Geometry => "geometry.md",
        Calibration => "calibration.md",
        Backends => "backends.md",
        Pipelines => "pipelines.md",
        Counting => "counting.md",
        Disease => "disease.md",
        Morphometrics => "morphometrics.md",
        Export => "export.md",
        Jobs => "jobs.md",
        Service => "service.md",
        Testing => "testing.md",
        Readme => "../../README.md",
    }
}
