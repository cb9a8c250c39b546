use sparsecbm::data::{generate_dataset, synth_generate, Dataset, SynthSpec};

/// Label rule in quarter units: weights (1, 0.5, 0.75, 0.25) become
/// (4, 2, 3, 1) and the midpoint of five classes is 8 quarters.
fn replay_label(concepts: &[(&str, &str)]) -> usize {
    let weights = [("Food", 4), ("Ambiance", 2), ("Service", 3), ("Noise", 1)];
    let mut quarters = 8i32;
    for (name, class) in concepts {
        let w = weights.iter().find(|(n, _)| n == name).unwrap().1;
        quarters += w * match *class {
            "Positive" => 1,
            "Negative" => -1,
            _ => 0,
        };
    }
    (quarters + 2).div_euclid(4).clamp(0, 4) as usize
}

#[test]
fn label_histogram_matches_an_independent_replay() {
    let g = synth_generate(&SynthSpec::new(7, 2000)).unwrap();
    let mut replayed = [0usize; 5];
    let mut recorded = [0usize; 5];
    let mut flips = 0;
    for rec in &g.split.records {
        let pairs: Vec<(&str, &str)> =
            rec.concepts.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        let clean = replay_label(&pairs);
        let debug = rec.debug.as_ref().unwrap();
        assert_eq!(clean, debug.clean_label);
        if debug.noise_flip {
            flips += 1;
            assert_eq!(clean.abs_diff(rec.label), 1);
        } else {
            assert_eq!(clean, rec.label);
        }
        replayed[clean] += 1;
        recorded[debug.clean_label] += 1;
    }
    assert_eq!(replayed, recorded);
    assert!(replayed.iter().all(|&n| n > 0), "{replayed:?}");
    assert!((10..=80).contains(&flips), "{flips} flips");
}

#[test]
fn splits_round_trip_through_disk() {
    let ds = generate_dataset(3, [40, 10, 10], 4, 3, 5, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.write_dir(dir.path()).unwrap();
    let back = Dataset::load_dir(dir.path()).unwrap();
    assert_eq!(back.schema, ds.schema);
    assert_eq!(back.vocab, ds.vocab);
    assert_eq!(back.train.examples, ds.train.examples);
    assert_eq!(back.test.examples, ds.test.examples);
    let again = tempfile::tempdir().unwrap();
    back.write_dir(again.path()).unwrap();
    for name in ["train.jsonl", "dev.jsonl", "test.jsonl", "vocab.json", "schema.json"] {
        let a = std::fs::read(dir.path().join(name)).unwrap();
        let b = std::fs::read(again.path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn shift_changes_phrasing_not_labels() {
    let plain = generate_dataset(5, [20, 20, 200], 4, 3, 5, false).unwrap();
    let shifted = generate_dataset(5, [20, 20, 200], 4, 3, 5, true).unwrap();
    assert_eq!(plain.train.examples, shifted.train.examples);
    let differing = plain
        .test
        .records
        .iter()
        .zip(&shifted.test.records)
        .filter(|(a, b)| a.text != b.text)
        .count();
    assert!(differing > 50);
    for (a, b) in plain.test.examples.iter().zip(&shifted.test.examples) {
        assert_eq!(a.concept_labels, b.concept_labels);
        assert_eq!(a.task_label, b.task_label);
    }
}
