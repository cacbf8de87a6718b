use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VocabError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("duplicate {kind} class `{name}`")]
    Duplicate { kind: &'static str, name: String },
    #[error("line {line}: interaction references undeclared {kind} `{name}`")]
    Undeclared { line: usize, kind: &'static str, name: String },
}

/// An admissible `(subject class, relation, object class)` combination, by index.
pub type Interaction = (usize, usize, usize);

/// Object and relation class names plus the admissible interaction map.
///
/// Indices are positions in the declaration order and are stable across
/// [`to_text`](Self::to_text) / [`from_text`](Self::from_text).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryVocabulary {
    object_classes: Vec<String>,
    relation_classes: Vec<String>,
    interactions: BTreeSet<Interaction>,
    object_lookup: HashMap<String, usize>,
    relation_lookup: HashMap<String, usize>,
}

fn lookup_table(names: &[String], kind: &'static str) -> Result<HashMap<String, usize>, VocabError> {
    let mut map = HashMap::with_capacity(names.len());
    for (i, n) in names.iter().enumerate() {
        if map.insert(n.clone(), i).is_some() {
            return Err(VocabError::Duplicate { kind, name: n.clone() });
        }
    }
    Ok(map)
}

impl CategoryVocabulary {
    pub fn new<S: Into<String>>(
        object_classes: impl IntoIterator<Item = S>,
        relation_classes: impl IntoIterator<Item = S>,
    ) -> Result<Self, VocabError> {
        let object_classes: Vec<String> = object_classes.into_iter().map(Into::into).collect();
        let relation_classes: Vec<String> = relation_classes.into_iter().map(Into::into).collect();
        for name in object_classes.iter().chain(&relation_classes) {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(VocabError::Syntax { line: 0, msg: format!("class name `{name}` must be a single non-empty token") });
            }
        }
        let object_lookup = lookup_table(&object_classes, "object")?;
        let relation_lookup = lookup_table(&relation_classes, "relation")?;
        Ok(Self { object_classes, relation_classes, interactions: BTreeSet::new(), object_lookup, relation_lookup })
    }

    /// Adds an admissible combination given by names.
    pub fn allow(&mut self, subject: &str, relation: &str, object: &str) -> Result<(), VocabError> {
        let undeclared = |kind, name: &str| VocabError::Undeclared { line: 0, kind, name: name.to_string() };
        let s = self.object_index(subject).ok_or_else(|| undeclared("object", subject))?;
        let r = self.relation_index(relation).ok_or_else(|| undeclared("relation", relation))?;
        let o = self.object_index(object).ok_or_else(|| undeclared("object", object))?;
        self.interactions.insert((s, r, o));
        Ok(())
    }

    pub fn object_classes(&self) -> &[String] {
        &self.object_classes
    }

    pub fn relation_classes(&self) -> &[String] {
        &self.relation_classes
    }

    pub fn num_objects(&self) -> usize {
        self.object_classes.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_classes.len()
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.object_lookup.get(name).copied()
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relation_lookup.get(name).copied()
    }

    pub fn object_name(&self, index: usize) -> Option<&str> {
        self.object_classes.get(index).map(String::as_str)
    }

    pub fn relation_name(&self, index: usize) -> Option<&str> {
        self.relation_classes.get(index).map(String::as_str)
    }

    pub fn interactions(&self) -> &BTreeSet<Interaction> {
        &self.interactions
    }

    pub fn is_admissible(&self, subject: usize, relation: usize, object: usize) -> bool {
        self.interactions.contains(&(subject, relation, object))
    }

    /// Parses the sectioned text format:
    ///
    /// ```text
    /// [objects]
    /// ship
    /// dock
    /// [relations]
    /// parallelly_docked_at
    /// [interactions]
    /// ship parallelly_docked_at dock
    /// ```
    ///
    /// Blank lines and `#` comments are ignored.
    pub fn from_text(text: &str) -> Result<Self, VocabError> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Objects,
            Relations,
            Interactions,
        }
        let mut section = Section::None;
        let mut objects = Vec::new();
        let mut relations = Vec::new();
        let mut interactions = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line {
                "[objects]" => section = Section::Objects,
                "[relations]" => section = Section::Relations,
                "[interactions]" => section = Section::Interactions,
                _ if line.starts_with('[') => {
                    return Err(VocabError::Syntax { line: line_no, msg: format!("unknown section {line}") })
                }
                _ => match section {
                    Section::None => {
                        return Err(VocabError::Syntax { line: line_no, msg: "entry before any section header".into() })
                    }
                    Section::Objects | Section::Relations => {
                        if line.split_whitespace().count() != 1 {
                            return Err(VocabError::Syntax { line: line_no, msg: "class names must be single tokens".into() });
                        }
                        if section == Section::Objects {
                            objects.push(line.to_string());
                        } else {
                            relations.push(line.to_string());
                        }
                    }
                    Section::Interactions => {
                        let parts: Vec<&str> = line.split_whitespace().collect();
                        if parts.len() != 3 {
                            return Err(VocabError::Syntax {
                                line: line_no,
                                msg: "interaction lines are `subject relation object`".into(),
                            });
                        }
                        interactions.push((line_no, parts[0].to_string(), parts[1].to_string(), parts[2].to_string()));
                    }
                },
            }
        }
        let mut vocab = Self::new(objects, relations)?;
        for (line, s, r, o) in interactions {
            vocab.allow(&s, &r, &o).map_err(|e| match e {
                VocabError::Undeclared { kind, name, .. } => VocabError::Undeclared { line, kind, name },
                other => other,
            })?;
        }
        Ok(vocab)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("[objects]\n");
        for n in &self.object_classes {
            let _ = writeln!(out, "{n}");
        }
        out.push_str("[relations]\n");
        for n in &self.relation_classes {
            let _ = writeln!(out, "{n}");
        }
        out.push_str("[interactions]\n");
        for &(s, r, o) in &self.interactions {
            let _ = writeln!(out, "{} {} {}", self.object_classes[s], self.relation_classes[r], self.object_classes[o]);
        }
        out
    }

    /// Vocabulary of the bundled synthetic scenario families.
    pub fn toy() -> Self {
        Self::from_text(include_str!("../../assets/toy_vocabulary.txt")).expect("bundled toy vocabulary is valid")
    }

    /// Class names of the full-size benchmark that are recoverable from its
    /// published text. See `assets/star_vocabulary.txt`.
    pub fn star_partial() -> Self {
        Self::from_text(include_str!("../../assets/star_vocabulary.txt")).expect("bundled benchmark vocabulary is valid")
    }
}
