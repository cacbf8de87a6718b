//! Trains the pair proposer and the relation predictor on a bundled toy
//! corpus and compares PredCls recall with the relation-frequency baseline.
//!
//! cargo run --release --example toy_predcls -- [scenes] [seed] [iterations...]
//!
//! `TOY_EPOCHS`, `TOY_LR`, `TOY_HIDDEN` and `TOY_BG` override the relation
//! stage settings.

use std::time::Instant;

use cascade_sgg::eval::{EvalConfig, Task};
use cascade_sgg::model::CategoryVocabulary;
use cascade_sgg::pipeline::{
    positive_pair_features, training_scene, Cascade, FrequencyBaseline, Method, ObjectView, PipelineConfig, PpgStage, RpcmStage,
    SplitFractions,
};
use cascade_sgg::rpcm::EmbeddingTable;
use cascade_sgg::synth::{bundled_recipes, generate_corpus};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(200);
    let seed: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);
    let mut iterations: Vec<usize> = args.map(|a| a.parse()).collect::<Result<_, _>>()?;
    if iterations.is_empty() {
        iterations = vec![1, 4];
    }
    let t0 = Instant::now();
    let vocab = CategoryVocabulary::toy();
    let corpus = generate_corpus(&bundled_recipes(), &vocab, count, seed)?;
    let [train, val, test] = SplitFractions::default().split(&corpus)?;
    // `TOY_SPLIT=val` scores the validation split instead, for tuning.
    let test = if std::env::var("TOY_SPLIT").as_deref() == Ok("val") { val } else { test };
    let cfg = PipelineConfig::default();
    let c = vocab.num_objects();
    let views: Vec<ObjectView> = train.iter().map(|s| ObjectView::ground_truth(s, &cfg.features, c)).collect();

    let pos = positive_pair_features(&train.iter().zip(&views).map(|(s, v)| (&s.graph, &v.semantic)).collect::<Vec<_>>())?;
    let mut ppg = PpgStage::init(&pos, &cfg.ppg, seed)?;
    ppg.train_until(&pos, &cfg.ppg, u64::MAX, seed)?;
    let proposer = ppg.proposer(cfg.ppg.k1);
    println!("ppg: {} positives, loss {:.4} -> {:.4} ({:.1?})", pos.nrows(), ppg.history[0], ppg.history.last().unwrap(), t0.elapsed());

    let scenes = train
        .iter()
        .zip(&views)
        .map(|(s, v)| training_scene(&s.graph, v, &proposer.propose(&v.graph, &v.semantic)?))
        .collect::<Result<Vec<_>, _>>()?;
    let baseline = FrequencyBaseline::fit(train.iter().map(|s| &s.graph), c, vocab.num_relations());
    let eval = EvalConfig { task: Task::PredCls, ks: vec![20, 50, 1500], ..EvalConfig::default() };
    let cascade = Cascade { features: cfg.features, object_classes: c, proposer: Some(&proposer), rpcm: None, baseline: Some(&baseline), detector: None };
    let preds = cascade.predict_all(Task::PredCls, Method::Frequency, &test, 1)?;
    let r = cascade_sgg::pipeline::evaluate_corpus(&test, &preds, &vocab, &eval)?;
    println!("frequency  {}", r.to_csv("frequency").lines().last().unwrap());
    let preds = cascade.predict_all(Task::PredCls, Method::Oracle, &test, 1)?;
    let r = cascade_sgg::pipeline::evaluate_corpus(&test, &preds, &vocab, &eval)?;
    println!("oracle     {}", r.to_csv("oracle").lines().last().unwrap());

    let table = EmbeddingTable::bundled();
    for l in iterations {
        let t = Instant::now();
        let mut rc = cfg.rpcm.clone();
        rc.model.iterations = l;
        if let Ok(v) = std::env::var("TOY_EPOCHS") {
            rc.epochs = v.parse()?;
        }
        if let Ok(v) = std::env::var("TOY_LR") {
            rc.adam.learning_rate = v.parse()?;
        }
        if let Ok(v) = std::env::var("TOY_HIDDEN") {
            rc.model.hidden = v.parse()?;
            rc.model.joint = rc.model.hidden;
            rc.model.map_hidden = rc.model.hidden;
        }
        if let Ok(v) = std::env::var("TOY_BG") {
            rc.background_ratio = v.parse()?;
        }
        let mut stage = RpcmStage::init(&rc, c, cfg.features.dim, vocab.relation_classes(), &table, seed)?;
        stage.train_until(&scenes, &rc, u64::MAX, seed)?;
        let model = stage.trainer.model.clone();
        let cascade = Cascade { rpcm: Some(&model), ..cascade.clone() };
        let preds = cascade.predict_all(Task::PredCls, Method::Rpcm, &test, 1)?;
        let r = cascade_sgg::pipeline::evaluate_corpus(&test, &preds, &vocab, &eval)?;
        println!(
            "rpcm L={l}   {}  loss {:.3} -> {:.3} ({:.1?})",
            r.to_csv("rpcm").lines().last().unwrap(),
            stage.history[0],
            stage.history.last().unwrap(),
            t.elapsed()
        );
        if std::env::var_os("TOY_VERBOSE").is_some() {
            print!("{}", r.to_text());
        }
    }
    println!("total {:.1?}", t0.elapsed());
    Ok(())
}
