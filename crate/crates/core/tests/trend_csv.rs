use effort_core::diffusion::{TrainConfig, Trainer, TrainingCorpus};
use effort_core::eval::{trend_run, SeriesMetric, TrendSpec};
use effort_core::motion::synth_motion;
use effort_core::{baseline_metrics, default_group_map, default_vocabulary};

/// Parses the flat CSV by hand and checks it against the report's samples
/// and seed-averaged series.
#[test]
fn csv_matches_report() {
    let motions: Vec<_> = [1, 4, 6]
        .iter()
        .map(|&a| synth_motion(a, 1.0, 0.5, 10, a as u64).unwrap())
        .collect();
    let corpus = TrainingCorpus::from_motions(&motions, default_group_map(), default_vocabulary(), 16).unwrap();
    let config = TrainConfig {
        latent_dimension: 16,
        iterations: 2,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config, corpus).unwrap();
    trainer.run(|_, _| Ok(())).unwrap();

    let prompts = vec!["a man walks".to_owned(), "a man jumps".to_owned()];
    let spec = TrendSpec {
        base: vec![baseline_metrics(); 2],
        prompts: prompts.clone(),
        scales: vec![0.5, 1.0, 1.5],
        seeds: vec![3, 8],
        frames: 8,
        steps: 2,
        guidance: 2.0,
        scaled_regions: None,
    };
    let report = trend_run(&trainer.model, &spec).unwrap();
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("action,region,metric,scale,seed,value"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 3 * 2 * (7 * 2 + 3));
    assert!(rows.iter().all(|r| r.len() == 6));

    for series in &report.structural {
        for (k, &scale) in spec.scales.iter().enumerate() {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r[0] == series.action && r[1] == series.region && r[2] == series.metric.name())
                .filter(|r| r[3].parse::<f64>().unwrap() == scale)
                .map(|r| r[5].parse().unwrap())
                .collect();
            assert_eq!(values.len(), 2);
            let mean = (values[0] + values[1]) / 2.0;
            assert!((mean - series.values[k]).abs() <= 1e-12 * (1.0 + mean.abs()));
        }
    }
    let peaks = report
        .structural
        .iter()
        .filter(|s| s.metric == SeriesMetric::Peak)
        .count();
    assert_eq!(peaks, 2 * 7);
    for r in rows.iter().filter(|r| r[1] == "skeleton") {
        assert!(["weight", "time", "flow"].contains(&r[2]), "{r:?}");
        assert!(prompts.iter().any(|p| p == r[0]));
    }
}
