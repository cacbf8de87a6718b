//! Procedural toy scenes: rule-driven object layouts, a geometric relationship
//! oracle and synthetic object features.

mod features;
mod generate;
mod oracle;
mod recipe;

use serde::{Deserialize, Serialize};

pub use features::FeatureModel;
pub use generate::{generate_scene, MAX_ATTEMPTS};
pub use oracle::{compile_rules, relationship_oracle, CompiledPredicate, CompiledRule};
pub use recipe::{bundled_recipes, LayoutRule, Placement, Predicate, RelationRule, SceneRecipe};

use crate::model::{CategoryVocabulary, SceneGraph};

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("layout rule {rule} is infeasible after {attempts} attempts")]
    Infeasible { rule: String, attempts: usize },
}

/// SplitMix64 finaliser over a pair; used to derive independent child seeds.
pub fn derive_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub name: String,
    pub family: String,
    pub seed: u64,
    pub graph: SceneGraph,
}

/// `count` scenes cycling through `recipes`; scene `i` uses seed
/// `derive_seed(seed, i)`.
pub fn generate_corpus(
    recipes: &[SceneRecipe],
    vocab: &CategoryVocabulary,
    count: usize,
    seed: u64,
) -> Result<Vec<SyntheticScene>, GenerationError> {
    if recipes.is_empty() && count > 0 {
        return Err(GenerationError::InvalidRecipe("no recipes given".into()));
    }
    (0..count)
        .map(|i| {
            let recipe = &recipes[i % recipes.len()];
            let scene_seed = derive_seed(seed, i as u64);
            let graph = generate_scene(&recipe.clone().with_seed(scene_seed), vocab)?;
            Ok(SyntheticScene { name: format!("scene_{i:04}"), family: recipe.name.clone(), seed: scene_seed, graph })
        })
        .collect()
}
