//! Generates a small corpus from the bundled recipes and prints per-family
//! object and relation counts, plus one scene in the annotation format.
//!
//! cargo run --example generate_scenes -- [scenes] [seed]

use std::collections::BTreeMap;

use cascade_sgg::model::{serialize_annotation, CategoryVocabulary};
use cascade_sgg::synth::{bundled_recipes, generate_corpus};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(30);
    let seed: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);
    let vocab = CategoryVocabulary::toy();
    let corpus = generate_corpus(&bundled_recipes(), &vocab, count, seed)?;

    let mut per_family: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    let mut per_relation: BTreeMap<&str, usize> = BTreeMap::new();
    for scene in &corpus {
        let n = scene.graph.objects.len();
        let e = per_family.entry(scene.family.as_str()).or_default();
        e.0 += 1;
        e.1 += n;
        e.2 += scene.graph.triplets.len();
        for t in &scene.graph.triplets {
            *per_relation.entry(vocab.relation_name(t.relation_index).unwrap_or("?")).or_default() += 1;
        }
    }
    println!("{:<12} {:>6} {:>8} {:>9}", "family", "scenes", "objects", "triplets");
    for (family, (scenes, objects, triplets)) in &per_family {
        println!("{family:<12} {scenes:>6} {objects:>8} {triplets:>9}");
    }
    println!();
    for (rel, n) in &per_relation {
        println!("{rel:<36} {n:>5}");
    }
    if let Some(first) = corpus.first() {
        let (objects, triplets) = serialize_annotation(&first.graph, &vocab);
        println!("\n# {} ({}) objects\n{objects}# triplets\n{triplets}", first.name, first.family);
    }
    Ok(())
}
