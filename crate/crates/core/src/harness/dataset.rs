use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::model::CategoryVocabulary;
use crate::synth::SyntheticScene;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];
pub const MANIFEST: &str = "manifest.json";
pub const VOCABULARY: &str = "vocabulary.txt";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub file: String,
    pub count: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub scenes: usize,
    pub recipes: Vec<String>,
    pub vocabulary_sha256: String,
    pub splits: BTreeMap<String, SplitEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub vocab: CategoryVocabulary,
    pub train: Vec<SyntheticScene>,
    pub val: Vec<SyntheticScene>,
    pub test: Vec<SyntheticScene>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let mut f = std::fs::File::create(path).map_err(HarnessError::io(path))?;
    f.write_all(bytes).map_err(HarnessError::io(path))
}

/// One JSON scene per line, then the vocabulary and a manifest with checksums.
pub fn write_dataset(
    dir: &Path,
    vocab: &CategoryVocabulary,
    splits: [&[SyntheticScene]; 3],
    seed: u64,
    recipes: Vec<String>,
) -> Result<Manifest, HarnessError> {
    std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    let mut entries = BTreeMap::new();
    for (name, scenes) in SPLITS.iter().zip(splits) {
        let mut text = String::new();
        for s in scenes {
            text.push_str(&serde_json::to_string(s).expect("scenes serialise"));
            text.push('\n');
        }
        let file = format!("{name}.jsonl");
        write_file(&dir.join(&file), text.as_bytes())?;
        entries.insert(name.to_string(), SplitEntry { file, count: scenes.len(), sha256: sha256_hex(text.as_bytes()) });
    }
    let vocab_text = vocab.to_text();
    write_file(&dir.join(VOCABULARY), vocab_text.as_bytes())?;
    let manifest = Manifest {
        seed,
        scenes: splits.iter().map(|s| s.len()).sum(),
        recipes,
        vocabulary_sha256: sha256_hex(vocab_text.as_bytes()),
        splits: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
    write_file(&dir.join(MANIFEST), json.as_bytes())?;
    Ok(manifest)
}

/// Reads a dataset written by [`write_dataset`], verifying every checksum.
pub fn read_dataset(dir: &Path) -> Result<Dataset, HarnessError> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(HarnessError::Missing { stage: "dataset".into(), what: "a generated dataset".into(), path: manifest_path });
    }
    let read = |p: &Path| std::fs::read(p).map_err(HarnessError::io(p));
    let manifest: Manifest = serde_json::from_slice(&read(&manifest_path)?)
        .map_err(|e| HarnessError::Malformed(format!("{}: {e}", manifest_path.display())))?;
    let vocab_bytes = read(&dir.join(VOCABULARY))?;
    if sha256_hex(&vocab_bytes) != manifest.vocabulary_sha256 {
        return Err(HarnessError::Malformed(format!("{}: checksum mismatch", dir.join(VOCABULARY).display())));
    }
    let vocab = CategoryVocabulary::from_text(&String::from_utf8_lossy(&vocab_bytes)).map_err(|e| HarnessError::Malformed(e.to_string()))?;
    let mut parts = Vec::new();
    for name in SPLITS {
        let entry = manifest.splits.get(name).ok_or_else(|| HarnessError::Malformed(format!("manifest lacks split `{name}`")))?;
        let path = dir.join(&entry.file);
        let bytes = read(&path)?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(HarnessError::Malformed(format!("{}: checksum mismatch", path.display())));
        }
        let scenes: Vec<SyntheticScene> = String::from_utf8_lossy(&bytes)
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| HarnessError::Malformed(format!("{} line {}: {e}", path.display(), i + 1))))
            .collect::<Result<_, _>>()?;
        if scenes.len() != entry.count {
            return Err(HarnessError::Malformed(format!("{}: {} scenes, manifest says {}", path.display(), scenes.len(), entry.count)));
        }
        parts.push(scenes);
    }
    let test = parts.pop().expect("three splits");
    let val = parts.pop().expect("three splits");
    let train = parts.pop().expect("three splits");
    Ok(Dataset { manifest, vocab, train, val, test })
}
