use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tokenize, DatasetSchema, Example, Split, Vocabulary};
use crate::error::{Error, Result};

/// Generator bookkeeping carried alongside synthetic records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebugInfo {
    /// Label implied by the concept values before noise.
    pub clean_label: usize,
    pub noise_flip: bool,
    /// How many concept phrases came from the shifted template pool.
    pub shifted_phrases: usize,
}

/// One JSONL line: `{"text", "concepts": {name: class}, "label"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub text: String,
    pub concepts: BTreeMap<String, String>,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub debug: Option<DebugInfo>,
}

impl Record {
    pub fn to_example(
        &self,
        id: usize,
        schema: &DatasetSchema,
        vocab: &Vocabulary,
    ) -> std::result::Result<Example, String> {
        for name in self.concepts.keys() {
            if schema.concept_index(name).is_none() {
                return Err(format!("unknown concept {name:?}"));
            }
        }
        let concept_labels = schema
            .concept_names
            .iter()
            .map(|name| {
                let class = self
                    .concepts
                    .get(name)
                    .ok_or_else(|| format!("missing concept {name:?}"))?;
                schema
                    .class_index(class)
                    .ok_or_else(|| format!("unknown class {class:?} for concept {name:?}"))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if self.label >= schema.task_class_count {
            return Err(format!(
                "label {} outside 0..{}",
                self.label, schema.task_class_count
            ));
        }
        Ok(Example {
            id,
            token_ids: tokenize(&self.text, vocab, schema.max_len),
            concept_labels,
            task_label: self.label,
        })
    }
}

/// Parses JSONL text; `source` is only used in error messages.
pub fn parse_jsonl(
    text: &str,
    source: Option<&Path>,
    schema: &DatasetSchema,
    vocab: &Vocabulary,
) -> Result<Split> {
    let mut records = Vec::new();
    let mut examples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| Error::Data {
            path: source.map(Path::to_path_buf),
            line: Some(lineno + 1),
            message,
        };
        let record: Record = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        let example = record
            .to_example(examples.len(), schema, vocab)
            .map_err(fail)?;
        records.push(record);
        examples.push(example);
    }
    Ok(Split { records, examples })
}

pub fn load_jsonl(path: &Path, schema: &DatasetSchema, vocab: &Vocabulary) -> Result<Split> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, Some(path), schema, vocab)
}

pub fn write_jsonl(path: &Path, records: &[Record]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(["good", "food"])
    }

    #[test]
    fn schema_demonstration_line() {
        let line = r#"{"text":"good food","concepts":{"Food":"Positive","Ambiance":"unknown","Service":"unknown","Noise":"unknown"},"label":3}"#;
        let schema = DatasetSchema::cebab_like();
        let v = vocab();
        let split = parse_jsonl(line, None, &schema, &v).unwrap();
        assert_eq!(split.len(), 1);
        let ex = &split.examples[0];
        assert_eq!(ex.concept_labels, vec![1, 2, 2, 2]);
        assert_eq!(ex.task_label, 3);
        assert_eq!(ex.token_ids, vec![v.id("good").unwrap(), v.id("food").unwrap()]);
    }

    #[test]
    fn missing_label_names_the_line() {
        let text = concat!(
            r#"{"text":"a","concepts":{"Food":"Positive","Ambiance":"unknown","Service":"unknown","Noise":"unknown"},"label":1}"#,
            "\n",
            r#"{"text":"b","concepts":{"Food":"Positive","Ambiance":"unknown","Service":"unknown","Noise":"unknown"}}"#,
        );
        let err = parse_jsonl(text, None, &DatasetSchema::cebab_like(), &vocab()).unwrap_err();
        match err {
            Error::Data { line, message, .. } => {
                assert_eq!(line, Some(2));
                assert!(message.contains("label"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(
            Error::data("x").exit_code(),
            2,
            "data errors map to exit code 2"
        );
    }

    #[test]
    fn unknown_concept_and_class_rejected() {
        let schema = DatasetSchema::cebab_like();
        let bad_concept = r#"{"text":"a","concepts":{"Flavor":"Positive","Food":"Positive","Ambiance":"unknown","Service":"unknown","Noise":"unknown"},"label":1}"#;
        assert!(parse_jsonl(bad_concept, None, &schema, &vocab()).is_err());
        let bad_class = r#"{"text":"a","concepts":{"Food":"Great","Ambiance":"unknown","Service":"unknown","Noise":"unknown"},"label":1}"#;
        let err = parse_jsonl(bad_class, None, &schema, &vocab()).unwrap_err();
        assert!(err.to_string().contains("Great"));
        let bad_label = r#"{"text":"a","concepts":{"Food":"Positive","Ambiance":"unknown","Service":"unknown","Noise":"unknown"},"label":5}"#;
        assert!(parse_jsonl(bad_label, None, &schema, &vocab()).is_err());
        assert!(parse_jsonl("{not json", None, &schema, &vocab()).is_err());
    }
}
