//! Oracle and mask-level intervention on a shifted test split.

use std::collections::BTreeMap;

use sparsecbm::data::generate_dataset;
use sparsecbm::intervention::{
    evaluate_intervention, mispredicted, sparsity_intervene, InterventionConfig, InterventionMode,
};
use sparsecbm::model::{predict, MaskSet, ModelConfig, ModelParams};
use sparsecbm::pruning::{prune_to_sparsity, PruneConfig};
use sparsecbm::training::{train, TrainConfig};

fn main() -> sparsecbm::Result<()> {
    let ds = generate_dataset(7, [600, 100, 200], 4, 3, 5, true)?;
    let mut cfg = ModelConfig::for_schema(&ds.schema, ds.vocab.len(), 7);
    cfg.hidden_dims = vec![32];
    cfg.latent_dim = 32;
    let mut params = ModelParams::init(&cfg)?;
    let mut masks = MaskSet::all_ones(cfg.num_concepts, params.prunable_len());
    let tcfg = TrainConfig { epochs: 10, seed: 7, ..TrainConfig::default() };
    train(&ds.train.examples, None, &tcfg, &mut params, &masks)?;
    let pcfg = PruneConfig { seed: 7, ..PruneConfig::for_concepts(4) };
    prune_to_sparsity(&ds.train.examples, &mut params, &mut masks, &pcfg, &tcfg)?;

    let test = &ds.test.examples;
    let oracle = InterventionConfig { mode: InterventionMode::Oracle, ..InterventionConfig::default() };
    let (table, _) = evaluate_intervention(test, &params, &masks, &[], &oracle)?;
    print!("{}", table.to_text());
    let (table, log) = evaluate_intervention(test, &params, &masks, &[0.0, 0.005, 0.01], &InterventionConfig::default())?;
    print!("{}", table.to_text());
    println!("{} drop/grow edits logged", log.events.len());

    // A single hand-made correction on the first mispredicted example.
    let Some(ex) = test.iter().find(|e| !mispredicted(&predict(e, &params, &masks).unwrap(), e).is_empty()) else {
        return Ok(());
    };
    let before = predict(ex, &params, &masks)?;
    let fix: BTreeMap<usize, usize> = mispredicted(&before, ex);
    let mut edited = masks.clone();
    let cfg = InterventionConfig { rounds: 3, ..InterventionConfig::default() };
    let events = sparsity_intervene(ex, &fix, &params, &mut edited, &cfg)?;
    let after = predict(ex, &params, &edited)?;
    println!(
        "example {}: concepts {:?} -> {:?} (gold {:?}) after {} edits",
        ex.id,
        before.concepts,
        after.concepts,
        ex.concept_labels,
        events.len()
    );
    Ok(())
}
