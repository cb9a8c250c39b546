//! Carves one sparse subnetwork per concept out of a trained encoder.

use sparsecbm::data::generate_dataset;
use sparsecbm::evaluation::evaluate_split;
use sparsecbm::explain::mask_overlap;
use sparsecbm::model::{MaskSet, ModelConfig, ModelParams};
use sparsecbm::pruning::{prune_to_sparsity, PruneConfig};
use sparsecbm::training::{train, TrainConfig};

fn main() -> sparsecbm::Result<()> {
    let ds = generate_dataset(7, [600, 100, 200], 4, 3, 5, false)?;
    let mut cfg = ModelConfig::for_schema(&ds.schema, ds.vocab.len(), 7);
    cfg.hidden_dims = vec![32];
    cfg.latent_dim = 32;
    let mut params = ModelParams::init(&cfg)?;
    let mut masks = MaskSet::all_ones(cfg.num_concepts, params.prunable_len());
    let tcfg = TrainConfig { epochs: 10, seed: 7, ..TrainConfig::default() };
    train(&ds.train.examples, None, &tcfg, &mut params, &masks)?;
    let dense = evaluate_split(&ds.test.examples, &params, &masks, &ds.schema.concept_names)?;

    let pcfg = PruneConfig { seed: 7, ..PruneConfig::for_concepts(cfg.num_concepts) };
    let report = prune_to_sparsity(&ds.train.examples, &mut params, &mut masks, &pcfg, &tcfg)?;
    for step in &report.steps {
        let pruned: Vec<usize> = step.concepts.iter().map(|c| c.outcome.pruned).collect();
        println!("step {}: pruned {:?}, fine-tune loss {:?}", step.step, pruned, step.finetune_losses);
    }
    let sparse = evaluate_split(&ds.test.examples, &params, &masks, &ds.schema.concept_names)?;
    println!(
        "task accuracy dense {:.1}% -> sparse {:.1}%",
        dense.task.accuracy * 100.0,
        sparse.task.accuracy * 100.0
    );

    let stats = mask_overlap(&masks, &params);
    println!("sparsity per concept: {:?}", stats.sparsity);
    for (name, row) in ds.schema.concept_names.iter().zip(&stats.overlap) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.2}")).collect();
        println!("{name:>10} {}", cells.join(" "));
    }
    Ok(())
}
