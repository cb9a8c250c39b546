//! Dataset schema, tokenization, JSONL loading and the synthetic generator.

mod jsonl;
mod synth;
mod vocab;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use jsonl::{load_jsonl, parse_jsonl, write_jsonl, DebugInfo, Record};
pub use synth::{generate_dataset, synth_generate, GeneratedSplit, SynthSpec, CONCEPT_WEIGHTS};
pub use vocab::{split_words, tokenize, Vocabulary, PAD, UNK};

use crate::error::{Error, Result};

pub const DEFAULT_CLASS_NAMES: [&str; 3] = ["Negative", "Positive", "unknown"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    pub concept_names: Vec<String>,
    pub concept_class_names: Vec<String>,
    pub task_class_count: usize,
    pub max_len: usize,
}

impl DatasetSchema {
    /// The restaurant-review layout: Food, Ambiance, Service, Noise with
    /// three-way concept labels and five task classes.
    pub fn cebab_like() -> Self {
        Self {
            concept_names: ["Food", "Ambiance", "Service", "Noise"]
                .map(String::from)
                .to_vec(),
            concept_class_names: DEFAULT_CLASS_NAMES.map(String::from).to_vec(),
            task_class_count: 5,
            max_len: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.concept_names.is_empty() {
            return Err(Error::config("schema needs at least one concept"));
        }
        if self.concept_class_names.len() < 2 {
            return Err(Error::config("schema needs at least two concept classes"));
        }
        if self.task_class_count < 2 {
            return Err(Error::config("schema needs at least two task classes"));
        }
        if self.max_len < 1 {
            return Err(Error::config("max_len must be at least 1"));
        }
        Ok(())
    }

    pub fn num_concepts(&self) -> usize {
        self.concept_names.len()
    }

    pub fn concept_classes(&self) -> usize {
        self.concept_class_names.len()
    }

    pub fn concept_index(&self, name: &str) -> Option<usize> {
        self.concept_names.iter().position(|n| n == name)
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.concept_class_names.iter().position(|n| n == name)
    }
}

/// One unit of supervision: token ids, `K` concept classes and a task class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: usize,
    pub token_ids: Vec<usize>,
    pub concept_labels: Vec<usize>,
    pub task_label: usize,
}

/// Parsed records with their tokenized examples, index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub records: Vec<Record>,
    pub examples: Vec<Example>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// A dataset directory: `train.jsonl`, `dev.jsonl`, `test.jsonl`,
/// `vocab.json` and `schema.json`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: DatasetSchema,
    pub vocab: Vocabulary,
    pub train: Split,
    pub dev: Split,
    pub test: Split,
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "dev", "test"];

impl Dataset {
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let schema_path = dir.join("schema.json");
        let schema: DatasetSchema = read_json(&schema_path)?;
        schema.validate()?;
        let vocab = Vocabulary::load(&dir.join("vocab.json"))?;
        let load = |name: &str| load_jsonl(&dir.join(format!("{name}.jsonl")), &schema, &vocab);
        Ok(Self {
            train: load("train")?,
            dev: load("dev")?,
            test: load("test")?,
            schema,
            vocab,
        })
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("schema.json"), &self.schema)?;
        self.vocab.save(&dir.join("vocab.json"))?;
        for (name, split) in SPLIT_NAMES.iter().zip([&self.train, &self.dev, &self.test]) {
            write_jsonl(&dir.join(format!("{name}.jsonl")), &split.records)?;
        }
        Ok(())
    }

    pub fn split(&self, name: &str) -> Result<&Split> {
        match name {
            "train" => Ok(&self.train),
            "dev" => Ok(&self.dev),
            "test" => Ok(&self.test),
            other => Err(Error::config(format!("unknown split {other:?}"))),
        }
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data {
        path: Some(path.to_path_buf()),
        line: Some(e.line()),
        message: e.to_string(),
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
