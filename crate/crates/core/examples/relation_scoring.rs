//! Runs an untrained relation predictor over one synthetic scene and prints
//! the prototype-similarity prediction for the first few candidate pairs,
//! then the same scene after a handful of training steps.
//!
//! cargo run --release --example relation_scoring -- [seed] [steps]

use cascade_sgg::model::CategoryVocabulary;
use cascade_sgg::pipeline::{all_pairs, predict_relations, training_scene, ObjectView, PipelineConfig, RpcmStage};
use cascade_sgg::rpcm::EmbeddingTable;
use cascade_sgg::synth::{bundled_recipes, generate_corpus};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);
    let steps: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(20);
    let vocab = CategoryVocabulary::toy();
    let scenes = generate_corpus(&bundled_recipes(), &vocab, 8, seed)?;
    let cfg = PipelineConfig::default();
    let c = vocab.num_objects();
    let views: Vec<ObjectView> = scenes.iter().map(|s| ObjectView::ground_truth(s, &cfg.features, c)).collect();
    let train = scenes
        .iter()
        .zip(&views)
        .map(|(s, v)| training_scene(&s.graph, v, &all_pairs(&v.graph)))
        .collect::<Result<Vec<_>, _>>()?;

    let rc = cfg.rpcm.clone();
    let mut stage = RpcmStage::init(&rc, c, cfg.features.dim, vocab.relation_classes(), &EmbeddingTable::bundled(), seed)?;
    let show = |stage: &RpcmStage, label: &str| -> anyhow::Result<()> {
        let (scene, view) = (&scenes[0], &views[0]);
        let pairs: Vec<(u32, u32)> = scene.graph.annotated_pairs().into_iter().take(5).collect();
        let mut t = predict_relations(&stage.trainer.model, view, &pairs)?;
        t.sort_by(|a, b| b.score.total_cmp(&a.score));
        println!("{label}");
        for gt in scene.graph.triplets.iter().filter(|g| pairs.contains(&g.pair())) {
            let best = t.iter().find(|p| p.pair() == gt.pair()).expect("scored pair");
            let name = |r| vocab.relation_name(r).unwrap_or("?");
            println!("  {:>3} -> {:<3} gt {:<24} top {:<24} {:.3}", gt.subject_id, gt.object_id, name(gt.relation_index), name(best.relation_index), best.score);
        }
        Ok(())
    };
    show(&stage, "untrained")?;
    let rc = cascade_sgg::pipeline::RpcmStageConfig { epochs: steps, ..rc };
    stage.train_until(&train, &rc, steps, seed)?;
    show(&stage, &format!("after {steps} epochs, loss {:.3} -> {:.3}", stage.history[0], stage.history.last().unwrap()))?;
    Ok(())
}
