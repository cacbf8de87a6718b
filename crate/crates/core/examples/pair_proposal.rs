//! Pair proposal on the bundled toy corpus: trains the two adversarial
//! autoencoders on annotated pairs only and reports, after each epoch, how
//! well the reconstruction score separates annotated from unannotated pairs
//! on held-out scenes.
//!
//! cargo run --release --example pair_proposal -- [scenes] [epochs] [seed]
//!
//! `PPG_LR` overrides the learning rate.

use std::collections::BTreeSet;

use cascade_sgg::model::CategoryVocabulary;
use cascade_sgg::pipeline::{positive_pair_features, ObjectView, PipelineConfig, PpgStage, SplitFractions};
use cascade_sgg::ppg::ranking_auc;
use cascade_sgg::synth::{bundled_recipes, generate_corpus};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(200);
    let cfg = PipelineConfig::default();
    let epochs: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(cfg.ppg.train.epochs);
    let seed: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);

    let vocab = CategoryVocabulary::toy();
    let corpus = generate_corpus(&bundled_recipes(), &vocab, count, seed)?;
    let [train, val, _test] = SplitFractions::default().split(&corpus)?;
    let c = vocab.num_objects();
    let view = |s| ObjectView::ground_truth(s, &cfg.features, c);
    let train_views: Vec<ObjectView> = train.iter().map(view).collect();
    let val_views: Vec<ObjectView> = val.iter().map(view).collect();
    let pos = positive_pair_features(&train.iter().zip(&train_views).map(|(s, v)| (&s.graph, &v.semantic)).collect::<Vec<_>>())?;

    let mut ppg_cfg = cfg.ppg;
    ppg_cfg.train.epochs = epochs;
    if let Ok(v) = std::env::var("PPG_LR") {
        ppg_cfg.train.adam.learning_rate = v.parse()?;
    }
    let mut stage = PpgStage::init(&pos, &ppg_cfg, seed)?;
    println!("{} annotated training pairs, {} features each", pos.nrows(), pos.ncols());
    println!("epoch  loss      val AUC");
    for e in 1..=epochs {
        stage.train_until(&pos, &ppg_cfg, e, seed)?;
        let proposer = stage.proposer(ppg_cfg.k1);
        let (mut yes, mut no) = (Vec::new(), Vec::new());
        for (s, v) in val.iter().zip(&val_views) {
            let annotated: BTreeSet<(u32, u32)> = s.graph.annotated_pairs().into_iter().collect();
            for p in proposer.score(&v.graph, &v.semantic)? {
                if annotated.contains(&p.pair) { yes.push(p.score) } else { no.push(p.score) }
            }
        }
        println!("{e:>5}  {:<8.4}  {:.4}", stage.history.last().unwrap(), ranking_auc(&yes, &no));
    }
    Ok(())
}
