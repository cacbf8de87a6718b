//! Scores degraded copies of the ground truth with the multi-label recall
//! metrics: the oracle, one that drops rare relations, and one with random
//! scores plus a wrong-relation decoy per triplet. Dropping rare classes costs
//! mMR far more than MR.
//!
//! cargo run --release --example recall_eval -- [scenes] [seed]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cascade_sgg::eval::{evaluate_task, EvalConfig, ImageEval, Task};
use cascade_sgg::model::{CategoryVocabulary, SceneGraph};
use cascade_sgg::synth::{bundled_recipes, generate_corpus};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(40);
    let seed: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);
    let vocab = CategoryVocabulary::toy();
    let scenes = generate_corpus(&bundled_recipes(), &vocab, count, seed)?;

    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &scenes {
        for t in &s.graph.triplets {
            *freq.entry(t.relation_index).or_default() += 1;
        }
    }
    let mut by_count: Vec<(usize, usize)> = freq.iter().map(|(&r, &n)| (r, n)).collect();
    by_count.sort_by_key(|&(r, n)| (std::cmp::Reverse(n), r));
    let common: Vec<usize> = by_count.iter().take(by_count.len() / 2).map(|&(r, _)| r).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variants: Vec<(&str, Vec<SceneGraph>)> = vec![
        ("oracle", scenes.iter().map(|s| s.graph.clone()).collect()),
        (
            "common-only",
            scenes
                .iter()
                .map(|s| {
                    let mut g = s.graph.clone();
                    g.triplets.retain(|t| common.contains(&t.relation_index));
                    g
                })
                .collect(),
        ),
        (
            "noisy-scores",
            scenes
                .iter()
                .map(|s| {
                    let mut g = s.graph.clone();
                    for t in &mut g.triplets {
                        t.score = rng.gen();
                    }
                    let n = g.triplets.len();
                    let mut wrong = g.triplets.clone();
                    wrong.shuffle(&mut rng);
                    for t in wrong.iter_mut().take(n) {
                        t.relation_index = (t.relation_index + 1) % vocab.num_relations();
                        t.score = rng.gen();
                    }
                    g.triplets.extend(wrong);
                    g
                })
                .collect(),
        ),
    ];
    let cfg = EvalConfig { task: Task::PredCls, ks: vec![5, 20, 100], ..EvalConfig::default() };
    for (name, preds) in &variants {
        let images: Vec<ImageEval<'_>> =
            scenes.iter().zip(preds).map(|(s, p)| ImageEval { name: &s.name, gt: &s.graph, pred: p }).collect();
        let r = evaluate_task(&images, vocab.relation_classes(), &cfg)?;
        println!("{name:<13} {}", r.to_csv(name).lines().last().unwrap_or_default());
    }
    Ok(())
}
