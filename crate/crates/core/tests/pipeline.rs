use panoptic4d::classes::ClassMap;
use panoptic4d::clustering::FeatureMode;
use panoptic4d::metrics::{evaluate, EvalConfig};
use panoptic4d::synth::{generate_sequence, SceneSpec};
use panoptic4d::tracking::{run_online_pipeline, PipelineConfig, PipelineOutput};
use panoptic4d::volume4d::Strategy;

fn run(strategy: Strategy, tau: usize, scene: &SceneSpec) -> (PipelineOutput, f64, usize) {
    let classes = ClassMap::default();
    let seq = generate_sequence(scene, &classes).unwrap();
    let mut config = PipelineConfig::default();
    config.volume.strategy = strategy;
    config.volume.tau = tau;
    config.cluster.feature_mode = FeatureMode::Emb;
    let out = run_online_pipeline(seq.len(), |t| Ok(seq.pipeline_input(t)), |c| classes.is_thing_raw(c), &config)
        .unwrap();
    let report = evaluate(std::slice::from_ref(&seq.labels), std::slice::from_ref(&out.labels), &EvalConfig::new(classes)).unwrap();
    let ids = panoptic4d::synth::instance_ids(&out.labels).len();
    (out, report.s_assoc, ids)
}

#[test]
fn every_strategy_tracks_separated_objects() {
    let scene = SceneSpec::with_objects(5, 12, 7);
    for s in Strategy::ALL.into_iter().filter(|s| *s != Strategy::Base) {
        let (_, s_assoc, ids) = run(s, 4, &scene);
        assert!(s_assoc >= 0.95, "{}: {s_assoc}", s.name());
        assert_eq!(ids, 5, "{}", s.name());
    }
}

#[test]
fn single_scan_windows_cannot_inherit_ids() {
    let scene = SceneSpec::with_objects(3, 8, 1);
    let (out, s_assoc, ids) = run(Strategy::Importance, 1, &scene);
    assert_eq!(out.stats.peak_volume_points, out.stats.peak_scan_points);
    // without a shared scan between windows nothing can be inherited
    assert_eq!(ids, 3 * 8);
    assert!(s_assoc < 0.5);
    let (_, s_assoc, _) = run(Strategy::Base, 4, &scene);
    assert!(s_assoc < 0.5);
}

#[test]
fn seeded_runs_repeat() {
    let scene = SceneSpec::with_objects(3, 6, 5);
    let (a, _, _) = run(Strategy::Decay, 4, &scene);
    let (b, _, _) = run(Strategy::Decay, 4, &scene);
    assert_eq!(a.labels, b.labels);
}

#[test]
fn importance_volume_stays_small() {
    let scene = SceneSpec::with_objects(5, 10, 2);
    let (thing, _, _) = run(Strategy::Thing, 4, &scene);
    let (imp, _, _) = run(Strategy::Importance, 4, &scene);
    assert!(imp.stats.total_volume_points < thing.stats.total_volume_points * 2);
    let ratio = imp.stats.total_volume_points as f64 / imp.stats.total_scan_points as f64;
    assert!(ratio < 1.5, "{ratio}");
}
