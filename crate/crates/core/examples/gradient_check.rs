// Analytic gradients of the masked pathway against central differences.

use sparsecbm::data::Example;
use sparsecbm::diffcore::{finite_difference_check, CompiledPathway};
use sparsecbm::model::{Mask, MaskSet, ModelConfig, ModelParams};
use sparsecbm::training::{objective_upstream, Objective, TaskTerm};

fn main() -> sparsecbm::Result<()> {
    let cfg = ModelConfig {
        vocab_size: 10,
        emb_dim: 3,
        hidden_dims: vec![4],
        latent_dim: 3,
        num_concepts: 2,
        concept_classes: 3,
        task_classes: 4,
        seed: 1,
    };
    let params = ModelParams::init(&cfg)?;
    let len = params.prunable_len();
    let masks = MaskSet::new(vec![
        Mask::from_bits((0..len).map(|i| i % 3 != 0).collect()),
        Mask::from_bits((0..len).map(|i| i % 2 == 0).collect()),
    ])?;
    let ex = Example { id: 0, token_ids: vec![2, 5, 5, 9], concept_labels: vec![1, 2], task_label: 3 };
    let objective = Objective::Joint { gamma: 5.0, task_term: TaskTerm::Single };

    let compiled = CompiledPathway::new(&params, &masks)?;
    let trace = compiled.forward(&ex.token_ids)?;
    let (loss, up) = objective_upstream(&trace, &ex, objective)?;
    let grads = compiled.backward(&trace, &up, false)?.grads;
    let report = finite_difference_check(&params, &grads, 1e-6, |p| {
        let c = CompiledPathway::new(p, &masks)?;
        Ok(objective_upstream(&c.forward(&ex.token_ids)?, &ex, objective)?.0)
    })?;
    println!("loss {loss:.6} over {} parameters", params.num_values());
    println!("max relative error {:.2e}, worst at {:?}", report.max_rel_error, report.worst);
    Ok(())
}
