use std::path::Path;

use wheatai::infer::FixtureBackend;
use wheatai::pipeline::{run_image, ImageInput, ImageResult, PipelineId, Records};
use wheatai::synth::{demo_dataset, demo_params, write_demo_dataset, DEMO_MARKER_MM, DEMO_MARKER_PX};

fn run_all(root: &Path, p: PipelineId) -> Vec<ImageResult> {
    let dir = root.join(p.as_str());
    let backend = FixtureBackend::open(dir.join("preds")).unwrap();
    demo_dataset(p)
        .iter()
        .map(|s| {
            let input = ImageInput::new(s.name(), Some(dir.join("images").join(s.name())));
            let r = run_image(p, &input, &backend, &demo_params(p));
            assert!(r.is_ok(), "{p} {}: {:?}", s.name(), r.error);
            r
        })
        .collect()
}

#[test]
fn every_demo_image_runs_clean() {
    let tmp = tempfile::tempdir().unwrap();
    write_demo_dataset(tmp.path()).unwrap();

    let counts: Vec<usize> = run_all(tmp.path(), PipelineId::Spike)
        .iter()
        .map(|r| match r.records {
            Some(Records::SpikeCount { spike_count, .. }) => spike_count,
            _ => unreachable!(),
        })
        .collect();
    assert_eq!(counts, vec![9, 7, 11]);

    let uav: Vec<usize> = run_all(tmp.path(), PipelineId::SpikeUav)
        .iter()
        .map(|r| match r.records {
            Some(Records::SpikeCount { spike_count, .. }) => spike_count,
            _ => unreachable!(),
        })
        .collect();
    assert_eq!(uav, vec![40, 46, 52]);

    for r in run_all(tmp.path(), PipelineId::Spikelet) {
        let Some(Records::Spikelet { assignment }) = &r.records else { unreachable!() };
        let expect_stray = r.image != "P201_2.png";
        assert_eq!(assignment.unassigned.len(), usize::from(expect_stray), "{}", r.image);
    }

    let single: Vec<(usize, usize)> = run_all(tmp.path(), PipelineId::FhbSingle)
        .iter()
        .map(|r| match &r.records {
            Some(Records::FhbSingle { record }) => (record.total_spikelets, record.diseased_spikelets),
            _ => unreachable!(),
        })
        .collect();
    assert_eq!(single, vec![(14, 3), (12, 0), (16, 9)]);

    let field = run_all(tmp.path(), PipelineId::FhbField);
    let Some(Records::FhbField { records, summary }) = &field[0].records else { unreachable!() };
    assert_eq!(records.len(), 3);
    let s = summary.as_ref().unwrap();
    assert_eq!((s.n_assessed, s.n_infected), (3, 2));
    assert!(field[1].warnings.iter().any(|w| w.code == "spike_without_spikelets"));

    for (r, (n, d)) in run_all(tmp.path(), PipelineId::Fdk).iter().zip([(16, 4), (20, 2), (12, 6)]) {
        let Some(Records::Fdk { result: Some(f) }) = &r.records else { unreachable!() };
        assert_eq!((f.total_kernels, f.damaged_kernels), (n, d));
        assert!(f.area_weighted_ratio.is_some());
    }

    for r in run_all(tmp.path(), PipelineId::KernelMorph) {
        let c = r.calibration.as_ref().unwrap();
        let expect = DEMO_MARKER_PX / DEMO_MARKER_MM;
        assert!((c.px_per_unit() - expect).abs() / expect < 0.01, "{} {}", r.image, c.px_per_unit());
        let Some(Records::KernelMorph { records, .. }) = &r.records else { unreachable!() };
        assert_eq!(records[0].mask_source.as_str(), "inscribed_ellipse");
        assert!(records[1..].iter().all(|k| k.mask_source.as_str() == "fixture"));
    }

    let st = run_all(tmp.path(), PipelineId::Stomata);
    let Some(Records::Stomata { summary, .. }) = &st[0].records else { unreachable!() };
    assert_eq!(summary.stomata_count, 5);
    assert!((summary.fov_area_mm2 - 0.03).abs() < 1e-12);
    assert!(st[1].warnings.iter().any(|w| w.code == "duplicate_pore"));
}
