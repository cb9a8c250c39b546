//! Traces one sentence through the concept subnetworks and writes the report.

use sparsecbm::data::{generate_dataset, tokenize};
use sparsecbm::explain::{explain, render_report};
use sparsecbm::model::{MaskSet, ModelConfig, ModelParams};
use sparsecbm::pruning::{prune_to_sparsity, PruneConfig};
use sparsecbm::training::{train, TrainConfig};

fn main() -> sparsecbm::Result<()> {
    let ds = generate_dataset(7, [600, 50, 50], 4, 3, 5, false)?;
    let mut cfg = ModelConfig::for_schema(&ds.schema, ds.vocab.len(), 7);
    cfg.hidden_dims = vec![32];
    cfg.latent_dim = 32;
    let mut params = ModelParams::init(&cfg)?;
    let mut masks = MaskSet::all_ones(cfg.num_concepts, params.prunable_len());
    let tcfg = TrainConfig { epochs: 10, seed: 7, ..TrainConfig::default() };
    train(&ds.train.examples, None, &tcfg, &mut params, &masks)?;
    prune_to_sparsity(&ds.train.examples, &mut params, &mut masks, &PruneConfig::for_concepts(4), &tcfg)?;

    let text = "the food was delicious . the waiter was rude";
    let tokens = tokenize(text, &ds.vocab, ds.schema.max_len);
    let trace = explain(&tokens, &ds.vocab, &ds.schema, &params, &masks)?;
    println!("{text:?} -> task class {}", trace.task);
    for &k in &trace.ranking {
        let c = &trace.concepts[k];
        println!("  {:<9} {:<9} {:+.3}", c.name, c.class_name, c.contribution[trace.task]);
    }
    // Mean pooling gives every token the same gradient norm; the signed
    // gradient-times-input row is the one that tells tokens apart.
    let food = &trace.token_attribution[0];
    for (tok, a) in trace.tokens.iter().zip(food) {
        println!("  Food <- {tok:<10} {a:+.4}");
    }

    let dir = std::env::temp_dir().join("sparsecbm-example-explain");
    let files = render_report(&trace, &trace.mask_stats, &dir)?;
    println!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}
