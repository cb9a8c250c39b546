//! Seeded restaurant-review generator.
//!
//! Each concept with a non-"unknown" value contributes one templated phrase
//! whose adjectives are specific to that concept and polarity, so a
//! bag-of-words encoder can in principle recover every concept. The task label
//! is `clamp(round((C-1)/2 + sum_k w_k * polarity_k))`, with 2% of labels then
//! moved by one class.

use std::collections::BTreeMap;

use rand::Rng as _;

use super::{DatasetSchema, DebugInfo, Example, Record, Split, Vocabulary, DEFAULT_CLASS_NAMES};
use crate::error::{Error, Result};
use crate::rng;

/// Label-rule weight of each concept, in lexicon order.
pub const CONCEPT_WEIGHTS: [f64; 6] = [1.0, 0.5, 0.75, 0.25, 0.6, 0.4];

struct ConceptLexicon {
    name: &'static str,
    positive: [&'static str; 4],
    negative: [&'static str; 4],
    shifted_positive: [&'static str; 4],
    shifted_negative: [&'static str; 4],
}

const LEXICON: [ConceptLexicon; 6] = [
    ConceptLexicon {
        name: "Food",
        positive: [
            "the food was delicious",
            "every dish tasted fresh and flavorful",
            "the meals were tasty",
            "we loved the savory entrees",
        ],
        negative: [
            "the food was bland",
            "every dish tasted stale and greasy",
            "the meals were inedible",
            "we hated the soggy entrees",
        ],
        shifted_positive: [
            "the food was exquisite",
            "every dish seemed scrumptious",
            "the meals felt heavenly",
            "the entrees were superb",
        ],
        shifted_negative: [
            "the food was dreadful",
            "every dish seemed tasteless",
            "the meals felt revolting",
            "the entrees were burnt",
        ],
    },
    ConceptLexicon {
        name: "Ambiance",
        positive: [
            "the ambiance was cozy",
            "the decor felt warm and charming",
            "the interior was inviting",
            "we enjoyed the elegant atmosphere",
        ],
        negative: [
            "the ambiance was dingy",
            "the decor felt cold and shabby",
            "the interior was gloomy",
            "we disliked the drab atmosphere",
        ],
        shifted_positive: [
            "the ambiance was enchanting",
            "the decor looked stylish",
            "the interior seemed romantic",
            "the atmosphere was delightful",
        ],
        shifted_negative: [
            "the ambiance was depressing",
            "the decor looked tacky",
            "the interior seemed sterile",
            "the atmosphere was bleak",
        ],
    },
    ConceptLexicon {
        name: "Service",
        positive: [
            "the service was attentive",
            "our waiter was friendly and prompt",
            "the staff were helpful",
            "we appreciated the courteous servers",
        ],
        negative: [
            "the service was rude",
            "our waiter was careless and slow",
            "the staff were unhelpful",
            "we resented the dismissive servers",
        ],
        shifted_positive: [
            "the service was gracious",
            "our waiter seemed welcoming",
            "the staff felt accommodating",
            "the servers were professional",
        ],
        shifted_negative: [
            "the service was sloppy",
            "our waiter seemed hostile",
            "the staff felt indifferent",
            "the servers were negligent",
        ],
    },
    ConceptLexicon {
        name: "Noise",
        positive: [
            "the noise was minimal",
            "the place stayed calm and peaceful",
            "it was quiet enough to talk",
            "we liked the hushed setting",
        ],
        negative: [
            "the noise was deafening",
            "the place stayed loud and chaotic",
            "it was too noisy to talk",
            "we hated the rowdy setting",
        ],
        shifted_positive: [
            "the noise was unobtrusive",
            "the noise stayed gentle",
            "the place sounded serene",
            "the noise felt muted",
        ],
        shifted_negative: [
            "the noise was unbearable",
            "the noise stayed thunderous",
            "the place sounded raucous",
            "the noise felt piercing",
        ],
    },
    ConceptLexicon {
        name: "Price",
        positive: [
            "the prices were reasonable",
            "the bill felt cheap and fair",
            "it was affordable",
            "we found the value excellent",
        ],
        negative: [
            "the prices were outrageous",
            "the bill felt steep and unfair",
            "it was overpriced",
            "we found the value terrible",
        ],
        shifted_positive: [
            "the prices seemed modest",
            "the bill was a bargain",
            "the cost was economical",
            "the prices felt generous",
        ],
        shifted_negative: [
            "the prices seemed exorbitant",
            "the bill was a ripoff",
            "the cost was excessive",
            "the prices felt greedy",
        ],
    },
    ConceptLexicon {
        name: "Location",
        positive: [
            "the location was convenient",
            "parking was easy and close",
            "it was centrally located",
            "we liked the accessible neighborhood",
        ],
        negative: [
            "the location was remote",
            "parking was hard and far",
            "it was poorly located",
            "we disliked the sketchy neighborhood",
        ],
        shifted_positive: [
            "the location seemed ideal",
            "the location felt walkable",
            "the spot was handy",
            "the location looked scenic",
        ],
        shifted_negative: [
            "the location seemed isolated",
            "the location felt unsafe",
            "the spot was inconvenient",
            "the location looked desolate",
        ],
    },
];

const FILLERS: [&str; 8] = [
    "we visited on a friday",
    "i came here with friends",
    "this was our second time",
    "we stopped by after work",
    "my partner chose this place",
    "it was a birthday dinner",
    "we had a reservation",
    "overall it was an experience",
];

pub const MAX_SYNTH_CONCEPTS: usize = LEXICON.len();

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    /// Independent random stream under the same seed (one per split).
    pub stream: u64,
    pub n: usize,
    pub num_concepts: usize,
    pub concept_classes: usize,
    pub task_classes: usize,
    /// Draw half of the concept phrases from the held-out template pool.
    pub shift: bool,
    pub noise_rate: f64,
}

impl SynthSpec {
    pub fn new(seed: u64, n: usize) -> Self {
        Self {
            seed,
            stream: 0,
            n,
            num_concepts: 4,
            concept_classes: 3,
            task_classes: 5,
            shift: false,
            noise_rate: 0.02,
        }
    }

    pub fn schema(&self) -> DatasetSchema {
        let concept_class_names = match self.concept_classes {
            2 => vec!["Negative".to_string(), "Positive".to_string()],
            _ => DEFAULT_CLASS_NAMES.map(String::from).to_vec(),
        };
        DatasetSchema {
            concept_names: LEXICON[..self.num_concepts]
                .iter()
                .map(|c| c.name.to_string())
                .collect(),
            concept_class_names,
            task_class_count: self.task_classes,
            max_len: 512,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("synthetic split needs n >= 1"));
        }
        if self.num_concepts == 0 || self.num_concepts > MAX_SYNTH_CONCEPTS {
            return Err(Error::config(format!(
                "generator supports 1..={MAX_SYNTH_CONCEPTS} concepts, got {}",
                self.num_concepts
            )));
        }
        if !(2..=3).contains(&self.concept_classes) {
            return Err(Error::config(format!(
                "generator supports 2 or 3 concept classes, got {}",
                self.concept_classes
            )));
        }
        if self.task_classes < 2 {
            return Err(Error::config("need at least two task classes"));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::config("noise rate must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// The vocabulary covering every template, filler and the sentence separator.
pub fn synth_vocabulary() -> Vocabulary {
    let mut words: Vec<String> = vec![".".to_string()];
    let all_phrases = LEXICON
        .iter()
        .flat_map(|c| {
            c.positive
                .iter()
                .chain(&c.negative)
                .chain(&c.shifted_positive)
                .chain(&c.shifted_negative)
        })
        .chain(FILLERS.iter());
    for p in all_phrases {
        words.extend(super::split_words(p));
    }
    Vocabulary::from_tokens(words)
}

/// Polarity of a concept class: Negative -1, Positive +1, unknown 0.
pub fn class_polarity(class: usize, concept_classes: usize) -> i32 {
    match (concept_classes, class) {
        (_, 0) => -1,
        (_, 1) => 1,
        _ => 0,
    }
}

/// Task label implied by concept classes, before noise.
pub fn label_rule(concepts: &[usize], concept_classes: usize, task_classes: usize) -> usize {
    let mid = (task_classes as f64 - 1.0) / 2.0;
    let score: f64 = concepts
        .iter()
        .enumerate()
        .map(|(k, &c)| CONCEPT_WEIGHTS[k] * class_polarity(c, concept_classes) as f64)
        .sum();
    (mid + score).round().clamp(0.0, task_classes as f64 - 1.0) as usize
}

#[derive(Debug, Clone)]
pub struct GeneratedSplit {
    pub split: Split,
    pub vocab: Vocabulary,
    pub schema: DatasetSchema,
}

pub fn synth_generate(spec: &SynthSpec) -> Result<GeneratedSplit> {
    spec.validate()?;
    let schema = spec.schema();
    let vocab = synth_vocabulary();
    let mut rng = rng::derived(spec.seed, spec.stream);
    let mut records = Vec::with_capacity(spec.n);
    let mut examples = Vec::with_capacity(spec.n);
    for id in 0..spec.n {
        let concepts: Vec<usize> = (0..spec.num_concepts)
            .map(|_| rng.random_range(0..spec.concept_classes))
            .collect();
        let mut phrases: Vec<&str> = Vec::new();
        let mut shifted_phrases = 0;
        for (k, &c) in concepts.iter().enumerate() {
            // Draw every coin regardless of the value so that shifted and
            // unshifted splits with the same seed share their labels.
            let use_shift = rng.random_bool(0.5);
            let template = rng.random_range(0..4);
            let lex = &LEXICON[k];
            let pool = match (class_polarity(c, spec.concept_classes), spec.shift && use_shift) {
                (0, _) => continue,
                (1, false) => &lex.positive,
                (1, true) => &lex.shifted_positive,
                (_, false) => &lex.negative,
                (_, true) => &lex.shifted_negative,
            };
            if spec.shift && use_shift {
                shifted_phrases += 1;
            }
            phrases.push(pool[template]);
        }
        let n_fillers = rng.random_range(0..=2);
        for _ in 0..n_fillers {
            phrases.push(FILLERS[rng.random_range(0..FILLERS.len())]);
        }
        // Fisher-Yates with the same stream keeps phrase order seed-determined.
        for i in (1..phrases.len()).rev() {
            let j = rng.random_range(0..=i);
            phrases.swap(i, j);
        }
        let text = if phrases.is_empty() {
            String::new()
        } else {
            format!("{} .", phrases.join(" . "))
        };

        let clean_label = label_rule(&concepts, spec.concept_classes, spec.task_classes);
        let noise_flip = rng.random_bool(spec.noise_rate);
        let up = rng.random_bool(0.5);
        let label = if noise_flip {
            let top = spec.task_classes - 1;
            match (up, clean_label) {
                (true, l) if l < top => l + 1,
                (true, l) => l - 1,
                (false, 0) => 1,
                (false, l) => l - 1,
            }
        } else {
            clean_label
        };

        let concept_map: BTreeMap<String, String> = concepts
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                (
                    schema.concept_names[k].clone(),
                    schema.concept_class_names[c].clone(),
                )
            })
            .collect();
        let record = Record {
            text,
            concepts: concept_map,
            label,
            debug: Some(DebugInfo {
                clean_label,
                noise_flip,
                shifted_phrases,
            }),
        };
        examples.push(Example {
            id,
            token_ids: super::tokenize(&record.text, &vocab, schema.max_len),
            concept_labels: concepts,
            task_label: label,
        });
        records.push(record);
    }
    Ok(GeneratedSplit {
        split: Split { records, examples },
        vocab,
        schema,
    })
}

/// Train/dev/test splits from one seed; `shift` applies to the test split only.
pub fn generate_dataset(
    seed: u64,
    sizes: [usize; 3],
    num_concepts: usize,
    concept_classes: usize,
    task_classes: usize,
    shift: bool,
) -> Result<super::Dataset> {
    let mut splits = Vec::with_capacity(3);
    let mut meta = None;
    for (i, &n) in sizes.iter().enumerate() {
        let spec = SynthSpec {
            seed,
            stream: 10 + i as u64,
            n,
            num_concepts,
            concept_classes,
            task_classes,
            shift: shift && i == 2,
            noise_rate: 0.02,
        };
        let g = synth_generate(&spec)?;
        meta = Some((g.vocab, g.schema));
        splits.push(g.split);
    }
    let (vocab, schema) = meta.expect("three splits");
    let test = splits.pop().expect("test");
    let dev = splits.pop().expect("dev");
    let train = splits.pop().expect("train");
    Ok(super::Dataset {
        schema,
        vocab,
        train,
        dev,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_unknown_is_midpoint() {
        assert_eq!(label_rule(&[2, 2, 2, 2], 3, 5), 2);
        assert_eq!(label_rule(&[2, 2, 2, 2], 3, 4), 2); // round(1.5)
        assert_eq!(label_rule(&[1, 1, 1, 1], 3, 5), 4);
        assert_eq!(label_rule(&[0, 0, 0, 0], 3, 5), 0);
    }

    #[test]
    fn same_seed_identical() {
        let spec = SynthSpec::new(3, 50);
        let a = synth_generate(&spec).unwrap();
        let b = synth_generate(&spec).unwrap();
        assert_eq!(a.split, b.split);
        let c = synth_generate(&SynthSpec { seed: 4, ..spec }).unwrap();
        assert_ne!(a.split, c.split);
    }

    #[test]
    fn shift_keeps_labels() {
        let plain = synth_generate(&SynthSpec::new(9, 200)).unwrap();
        let shifted = synth_generate(&SynthSpec {
            shift: true,
            ..SynthSpec::new(9, 200)
        })
        .unwrap();
        let mut any_shifted = 0;
        for (a, b) in plain.split.examples.iter().zip(&shifted.split.examples) {
            assert_eq!(a.concept_labels, b.concept_labels);
            assert_eq!(a.task_label, b.task_label);
        }
        for r in &shifted.split.records {
            any_shifted += r.debug.as_ref().unwrap().shifted_phrases;
        }
        assert!(any_shifted > 100);
    }

    #[test]
    fn all_tokens_in_vocabulary() {
        let g = synth_generate(&SynthSpec {
            shift: true,
            num_concepts: 6,
            ..SynthSpec::new(1, 300)
        })
        .unwrap();
        for ex in &g.split.examples {
            assert!(ex.token_ids.iter().all(|&t| t != super::super::UNK));
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(synth_generate(&SynthSpec::new(1, 0)).is_err());
        assert!(synth_generate(&SynthSpec {
            concept_classes: 4,
            ..SynthSpec::new(1, 5)
        })
        .is_err());
        assert!(synth_generate(&SynthSpec {
            num_concepts: 7,
            ..SynthSpec::new(1, 5)
        })
        .is_err());
    }
}
