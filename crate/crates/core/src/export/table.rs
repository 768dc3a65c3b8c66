use serde::Serialize;

use super::ExportError;
use crate::disease::to_f64;
use crate::pipeline::{ImageResult, PipelineId, Records};

/// Column list of the main table of a pipeline.
pub fn schema(p: PipelineId) -> &'static [&'static str] {
    match p {
        PipelineId::Spike | PipelineId::SpikeUav => &["image", "plot_id", "spike_count", "spikes_per_m2"],
        PipelineId::Spikelet => &["image", "plot_id", "spike_index", "spikelet_count"],
        PipelineId::FhbSingle => &["image", "plot_id", "total_spikelets", "diseased_spikelets", "severity"],
        PipelineId::FhbField => &[
            "image",
            "plot_id",
            "spike_index",
            "view",
            "total_spikelets",
            "diseased_spikelets",
            "severity",
        ],
        PipelineId::Fdk => &[
            "image",
            "plot_id",
            "total_kernels",
            "damaged_kernels",
            "fdk_ratio",
            "area_weighted_ratio",
        ],
        PipelineId::KernelMorph => &[
            "image",
            "plot_id",
            "kernel_index",
            "category",
            "length_mm",
            "width_mm",
            "area_mm2",
            "mask_source",
        ],
        PipelineId::Stomata => &[
            "image",
            "plot_id",
            "stoma_index",
            "stoma_area_um2",
            "pore_length_um",
            "pore_width_um",
            "pore_area_um2",
            "aperture_ratio",
            "open_flag",
        ],
    }
}

/// Column list of the per-image summary table, for pipelines that have one.
pub fn summary_schema(p: PipelineId) -> Option<&'static [&'static str]> {
    match p {
        PipelineId::Spikelet => Some(&["image", "plot_id", "unassigned_spikelets"]),
        PipelineId::FhbField => Some(&[
            "image",
            "plot_id",
            "n_assessed",
            "n_infected",
            "incidence",
            "severity_infected",
            "severity_all",
            "fhb_index",
        ]),
        PipelineId::Stomata => Some(&[
            "image",
            "plot_id",
            "stomata_count",
            "fov_area_mm2",
            "density_per_mm2",
            "mean_aperture_ratio",
        ]),
        _ => None,
    }
}

/// At most six significant digits, trailing zeros dropped; scientific
/// notation outside `[1e-4, 1e6)`.
pub fn format_decimal(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return String::new();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{m}e{exp}");
    }
    let fixed = format!("{v:.*}", (5 - exp) as usize);
    if fixed.contains('.') {
        fixed.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        fixed
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(format_decimal).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CsvFiles {
    pub main: String,
    pub summary: Option<String>,
}

struct Table {
    w: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(header: &[&str]) -> Result<Self, ExportError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(header)?;
        Ok(Self { w })
    }

    fn row(&mut self, r: &ImageResult, rest: Vec<String>) -> Result<(), ExportError> {
        let mut rec = vec![r.image.clone(), r.plot_id.clone()];
        rec.extend(rest);
        self.w.write_record(&rec)?;
        Ok(())
    }

    fn finish(self) -> Result<String, ExportError> {
        let bytes = self.w.into_inner().map_err(|e| ExportError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
    }
}

fn mismatch(p: PipelineId, r: &Records) -> ExportError {
    let found = match r {
        Records::SpikeCount { .. } => "spike counts",
        Records::Spikelet { .. } => "spikelet assignments",
        Records::FhbSingle { .. } => "single-spike FHB records",
        Records::FhbField { .. } => "field FHB records",
        Records::Fdk { .. } => "FDK results",
        Records::KernelMorph { .. } => "kernel records",
        Records::Stomata { .. } => "stoma records",
    };
    ExportError::SchemaMismatch {
        expected: p.to_string(),
        found: found.into(),
    }
}

/// Render a pipeline's tables. Images are ordered by file name and rows
/// within an image by record index; failed images contribute no rows.
pub fn render_csvs(p: PipelineId, results: &[&ImageResult]) -> Result<CsvFiles, ExportError> {
    let mut sorted: Vec<&ImageResult> = results.to_vec();
    sorted.sort_by(|a, b| a.image.cmp(&b.image));
    let mut main = Table::new(schema(p))?;
    let mut summary = summary_schema(p).map(Table::new).transpose()?;
    for r in sorted {
        let Some(records) = &r.records else { continue };
        match (p, records) {
            (
                PipelineId::Spike | PipelineId::SpikeUav,
                Records::SpikeCount {
                    spike_count,
                    spikes_per_m2,
                },
            ) => main.row(r, vec![spike_count.to_string(), opt(*spikes_per_m2)])?,
            (PipelineId::Spikelet, Records::Spikelet { assignment }) => {
                for (spike, n) in &assignment.per_spike_counts {
                    main.row(r, vec![spike.to_string(), n.to_string()])?;
                }
                if let Some(s) = summary.as_mut() {
                    s.row(r, vec![assignment.unassigned.len().to_string()])?;
                }
            }
            (PipelineId::FhbSingle, Records::FhbSingle { record }) => main.row(
                r,
                vec![
                    record.total_spikelets.to_string(),
                    record.diseased_spikelets.to_string(),
                    opt(record.severity.as_ref().map(to_f64)),
                ],
            )?,
            (PipelineId::FhbField, Records::FhbField { records, summary: sm }) => {
                let mut recs: Vec<_> = records.iter().collect();
                recs.sort_by_key(|x| x.spike_index);
                for rec in recs {
                    main.row(
                        r,
                        vec![
                            rec.spike_index.to_string(),
                            rec.view.map(|v| v.as_str().to_owned()).unwrap_or_default(),
                            rec.total_spikelets.to_string(),
                            rec.diseased_spikelets.to_string(),
                            opt(rec.severity.as_ref().map(to_f64)),
                        ],
                    )?;
                }
                if let Some(s) = summary.as_mut() {
                    let cells = match sm {
                        Some(m) => vec![
                            m.n_assessed.to_string(),
                            m.n_infected.to_string(),
                            format_decimal(to_f64(&m.incidence)),
                            format_decimal(to_f64(&m.severity_infected)),
                            format_decimal(to_f64(&m.severity_all)),
                            format_decimal(to_f64(&m.index)),
                        ],
                        None => vec!["0".into(), "0".into(), String::new(), String::new(), String::new(), String::new()],
                    };
                    s.row(r, cells)?;
                }
            }
            (PipelineId::Fdk, Records::Fdk { result }) => {
                let cells = match result {
                    Some(f) => vec![
                        f.total_kernels.to_string(),
                        f.damaged_kernels.to_string(),
                        format_decimal(to_f64(&f.fdk_ratio)),
                        opt(f.area_weighted_ratio.as_ref().map(to_f64)),
                    ],
                    None => vec!["0".into(), "0".into(), String::new(), String::new()],
                };
                main.row(r, cells)?;
            }
            (PipelineId::KernelMorph, Records::KernelMorph { records, .. }) => {
                for k in records {
                    main.row(
                        r,
                        vec![
                            k.kernel_index.to_string(),
                            k.category.as_str().into(),
                            format_decimal(k.length_mm),
                            format_decimal(k.width_mm),
                            format_decimal(k.area_mm2),
                            k.mask_source.as_str().into(),
                        ],
                    )?;
                }
            }
            (PipelineId::Stomata, Records::Stomata { records, summary: sm }) => {
                for s in records {
                    main.row(
                        r,
                        vec![
                            s.stoma_index.to_string(),
                            format_decimal(s.stoma_area_um2),
                            opt(s.pore_length_um),
                            opt(s.pore_width_um),
                            opt(s.pore_area_um2),
                            opt(s.aperture_ratio),
                            s.open_flag.map(|b| b.to_string()).unwrap_or_default(),
                        ],
                    )?;
                }
                if let Some(t) = summary.as_mut() {
                    t.row(
                        r,
                        vec![
                            sm.stomata_count.to_string(),
                            format_decimal(sm.fov_area_mm2),
                            format_decimal(sm.density_per_mm2),
                            opt(sm.mean_aperture_ratio),
                        ],
                    )?;
                }
            }
            (p, other) => return Err(mismatch(p, other)),
        }
    }
    Ok(CsvFiles {
        main: main.finish()?,
        summary: summary.map(Table::finish).transpose()?,
    })
}
