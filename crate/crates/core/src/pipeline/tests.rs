use super::*;
use crate::checkpoint::Checkpoint;
use crate::geometry::OrientedBox;
use crate::model::{ObjectInstance, Triplet};
use crate::ppg::PpgTrainConfig;
use crate::rpcm::EmbeddingTable;
use crate::synth::{bundled_recipes, generate_corpus};

fn corpus(n: usize, seed: u64) -> (CategoryVocabulary, Vec<SyntheticScene>) {
    let vocab = CategoryVocabulary::toy();
    let scenes = generate_corpus(&bundled_recipes(), &vocab, n, seed).unwrap();
    (vocab, scenes)
}

fn views(scenes: &[SyntheticScene], cfg: &PipelineConfig, classes: usize) -> Vec<ObjectView> {
    scenes.iter().map(|s| ObjectView::ground_truth(s, &cfg.features, classes)).collect()
}

fn positives(scenes: &[SyntheticScene], views: &[ObjectView]) -> Mat {
    positive_pair_features(&scenes.iter().zip(views).map(|(s, v)| (&s.graph, &v.semantic)).collect::<Vec<_>>()).unwrap()
}

fn small_rpcm() -> RpcmStageConfig {
    let mut rc = RpcmStageConfig { epochs: 4, ..RpcmStageConfig::default() };
    rc.model.hidden = 8;
    rc.model.joint = 8;
    rc.model.map_hidden = 8;
    rc
}

#[test]
fn split_counts() {
    let f = SplitFractions::default();
    assert_eq!(f.counts(100).unwrap(), [60, 20, 20]);
    assert_eq!(f.counts(7).unwrap(), [5, 1, 1]);
    assert_eq!(f.counts(0).unwrap(), [0, 0, 0]);
    let odd = SplitFractions { train: 0.42, val: 0.29, test: 0.29 };
    assert_eq!(odd.counts(100).unwrap(), [42, 29, 29]);
    let [a, b, c] = f.split(&(0..10).collect::<Vec<_>>()).unwrap();
    assert_eq!((a, b, c), ((0..6).collect(), vec![6, 7], vec![8, 9]));
    for bad in [SplitFractions { train: 0.7, val: 0.2, test: 0.2 }, SplitFractions { train: 1.2, val: -0.1, test: -0.1 }] {
        assert!(matches!(bad.counts(10), Err(PipelineError::Config(_))));
    }
}

#[test]
fn method_names_roundtrip() {
    for m in [Method::Rpcm, Method::Frequency, Method::Oracle] {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    assert!("rcpm".parse::<Method>().is_err());
}

#[test]
fn frequency_baseline_counts_ordered_pairs() {
    let b = |x: f64| OrientedBox::axis_aligned(x, 0.0, x + 4.0, 4.0).unwrap();
    let mut g = SceneGraph::empty(100.0, 100.0);
    g.objects = vec![
        ObjectInstance { id: 1, class_index: 0, bbox: b(0.0) },
        ObjectInstance { id: 2, class_index: 1, bbox: b(10.0) },
        ObjectInstance { id: 3, class_index: 1, bbox: b(20.0) },
    ];
    g.triplets = vec![Triplet::ground_truth(1, 2, 2), Triplet::ground_truth(1, 0, 3), Triplet::ground_truth(1, 2, 3)];
    let f = FrequencyBaseline::fit([&g], 2, 3);
    // Two (0, 1) pairs: one `0`, two `2`.
    assert_eq!(f.probability(0, 1, 0), 0.5);
    assert_eq!(f.probability(0, 1, 1), 0.0);
    assert_eq!(f.probability(0, 1, 2), 1.0);
    // (1, 1) has two ordered pairs and no triplets; (0, 0) none at all.
    assert_eq!(f.probability(1, 1, 2), 0.0);
    assert_eq!(f.probability(0, 0, 0), 0.0);

    let view = ObjectView {
        class_probs: one_hot_classes(&g, 2),
        semantic: Mat::zeros((3, 1)),
        confidence: vec![0.5, 1.0, 0.8],
        graph: SceneGraph { triplets: Vec::new(), ..g.clone() },
    };
    let t = f.predict(&view, &[(1, 3), (3, 1), (9, 1)]);
    assert_eq!(t.len(), 2);
    assert_eq!((t[0].relation_index, t[0].score), (0, 0.5 * 0.5 * 0.8));
    assert_eq!((t[1].relation_index, t[1].score), (2, 1.0 * 0.5 * 0.8));
}

#[test]
fn ppg_resume_matches_uninterrupted_training() {
    let (vocab, scenes) = corpus(8, 3);
    let cfg = PipelineConfig::default();
    let v = views(&scenes, &cfg, vocab.num_objects());
    let pos = positives(&scenes, &v);
    let ppg = PpgStageConfig { train: PpgTrainConfig { epochs: 4, ..cfg.ppg.train }, ..cfg.ppg };

    let mut straight = PpgStage::init(&pos, &ppg, 11).unwrap();
    straight.train_until(&pos, &ppg, u64::MAX, 11).unwrap();
    assert_eq!(straight.epochs_done, 4);

    let mut first = PpgStage::init(&pos, &ppg, 11).unwrap();
    first.train_until(&pos, &ppg, 2, 11).unwrap();
    let bytes = first.to_checkpoint().to_bytes();
    let mut resumed = PpgStage::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), &ppg).unwrap();
    resumed.train_until(&pos, &ppg, u64::MAX, 11).unwrap();
    assert_eq!(resumed.to_checkpoint().to_bytes(), straight.to_checkpoint().to_bytes());
    assert_eq!(resumed.history, straight.history);
}

#[test]
fn zero_epochs_leave_the_initialisation() {
    let (vocab, scenes) = corpus(6, 4);
    let cfg = PipelineConfig::default();
    let v = views(&scenes, &cfg, vocab.num_objects());
    let pos = positives(&scenes, &v);
    let init = PpgStage::init(&pos, &cfg.ppg, 2).unwrap();
    let mut s = init.clone();
    s.train_until(&pos, &cfg.ppg, 0, 2).unwrap();
    assert_eq!(s, init);
    assert!(s.history.is_empty());
}

#[test]
fn ppg_training_lowers_the_loss() {
    let (vocab, scenes) = corpus(12, 5);
    let cfg = PipelineConfig::default();
    let v = views(&scenes, &cfg, vocab.num_objects());
    let pos = positives(&scenes, &v);
    let mut s = PpgStage::init(&pos, &cfg.ppg, 0).unwrap();
    s.train_until(&pos, &cfg.ppg, 5, 0).unwrap();
    assert_eq!(s.history.len(), 5);
    assert!(s.history.iter().all(|l| l.is_finite()));
    assert!(s.history[4] < s.history[0], "{:?}", s.history);
}

#[test]
fn rpcm_resume_matches_uninterrupted_training() {
    let (vocab, scenes) = corpus(6, 6);
    let cfg = PipelineConfig::default();
    let c = vocab.num_objects();
    let v = views(&scenes, &cfg, c);
    let train: Vec<TrainingScene> = scenes.iter().zip(&v).map(|(s, v)| training_scene(&s.graph, v, &all_pairs(&v.graph)).unwrap()).collect();
    let rc = small_rpcm();
    let table = EmbeddingTable::bundled();
    let init = || RpcmStage::init(&rc, c, cfg.features.dim, vocab.relation_classes(), &table, 9).unwrap();

    let mut straight = init();
    straight.train_until(&train, &rc, u64::MAX, 9).unwrap();
    let mut first = init();
    first.train_until(&train, &rc, 1, 9).unwrap();
    let ck = Checkpoint::from_bytes(&first.to_checkpoint().to_bytes()).unwrap();
    let mut resumed = RpcmStage::from_checkpoint(&ck, &rc).unwrap();
    resumed.train_until(&train, &rc, u64::MAX, 9).unwrap();
    assert_eq!(resumed.to_checkpoint().to_bytes(), straight.to_checkpoint().to_bytes());
    assert_eq!(straight.history.len(), 4);
}

#[test]
fn predictions_do_not_depend_on_worker_count() {
    let (vocab, scenes) = corpus(10, 7);
    let cfg = PipelineConfig::default();
    let c = vocab.num_objects();
    let baseline = FrequencyBaseline::fit(scenes.iter().map(|s| &s.graph), c, vocab.num_relations());
    let cascade = Cascade { features: cfg.features, object_classes: c, proposer: None, rpcm: None, baseline: Some(&baseline), detector: None };
    let one = cascade.predict_all(Task::PredCls, Method::Frequency, &scenes, 1).unwrap();
    let four = cascade.predict_all(Task::PredCls, Method::Frequency, &scenes, 4).unwrap();
    assert_eq!(one, four);
    assert!(one.iter().any(|g| !g.triplets.is_empty()));
}

#[test]
fn missing_stages_are_config_errors() {
    let (vocab, scenes) = corpus(2, 8);
    let cascade = Cascade {
        features: PipelineConfig::default().features,
        object_classes: vocab.num_objects(),
        proposer: None,
        rpcm: None,
        baseline: None,
        detector: None,
    };
    for (task, method) in [(Task::PredCls, Method::Rpcm), (Task::PredCls, Method::Frequency), (Task::SgCls, Method::Frequency)] {
        assert!(matches!(cascade.predict(task, method, &scenes[0]), Err(PipelineError::Config(_))), "{task} {method}");
    }
    assert_eq!(cascade.predict(Task::SgDet, Method::Oracle, &scenes[0]).unwrap(), scenes[0].graph);
}

#[test]
fn oracle_scores_full_recall_and_length_mismatch_is_rejected() {
    let (vocab, scenes) = corpus(5, 9);
    let preds: Vec<SceneGraph> = scenes.iter().map(|s| s.graph.clone()).collect();
    let cfg = EvalConfig { task: Task::PredCls, ks: vec![1500], ..EvalConfig::default() };
    let r = evaluate_corpus(&scenes, &preds, &vocab, &cfg).unwrap();
    assert!(r.metrics.iter().all(|m| m.mr == 100.0 && m.hmr == 100.0));
    assert!(matches!(evaluate_corpus(&scenes, &preds[1..], &vocab, &cfg), Err(PipelineError::Data(_))));
}
