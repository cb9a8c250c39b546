use super::*;
use crate::model::{Mask, MaskSet, ModelParams};
use crate::testutil::{random_examples, random_masks, tiny_config, tiny_model};
use crate::training::{objective_upstream, Objective, TaskTerm};

fn joint(gamma: f64) -> Objective {
    Objective::Joint {
        gamma,
        task_term: TaskTerm::Single,
    }
}

fn loss_of(
    params: &ModelParams,
    masks: &MaskSet,
    ex: &crate::data::Example,
    objective: Objective,
) -> crate::Result<f64> {
    let compiled = CompiledPathway::new(params, masks)?;
    let trace = compiled.forward(&ex.token_ids)?;
    Ok(objective_upstream(&trace, ex, objective)?.0)
}

fn analytic(
    params: &ModelParams,
    masks: &MaskSet,
    ex: &crate::data::Example,
    objective: Objective,
) -> GradRecord {
    let compiled = CompiledPathway::new(params, masks).unwrap();
    let trace = compiled.forward(&ex.token_ids).unwrap();
    let (_, up) = objective_upstream(&trace, ex, objective).unwrap();
    compiled.backward(&trace, &up, true).unwrap()
}

#[test]
fn sigmoid_gradient_at_zero_is_a_quarter() {
    let cfg = tiny_config(2, 3, 2, 0);
    let mut p = tiny_model(&cfg);
    for m in &mut p.projector {
        m.data.iter_mut().for_each(|v| *v = 0.0);
    }
    for b in &mut p.projector_bias {
        b.iter_mut().for_each(|v| *v = 0.0);
    }
    for c in &mut p.classifier {
        c.data.iter_mut().for_each(|v| *v = 0.0);
        (0..3).for_each(|j| c.set(0, j, 1.0));
    }
    let masks = MaskSet::all_ones(2, p.prunable_len());
    let compiled = CompiledPathway::new(&p, &masks).unwrap();
    let trace = compiled.forward(&[1, 2]).unwrap();
    // Task logit 0 is the sum of sigmoid(logits) with logits = 0.
    let rec = compiled.backward(&trace, &Upstream::task(2, &[1.0, 0.0]), false).unwrap();
    for b in &rec.grads.projector_bias {
        assert_eq!(b, &vec![0.25; 3]);
    }
}

#[test]
fn unrelated_blocks_get_zero_gradient() {
    let cfg = tiny_config(2, 3, 4, 1);
    let p = tiny_model(&cfg);
    let ex = &random_examples(&cfg, 1, 1)[0];
    let masks = MaskSet::all_ones(2, p.prunable_len());
    let obj = Objective::Branch {
        concept: 0,
        concept_weight: 1.0,
        task_weight: 0.0,
    };
    let rec = analytic(&p, &masks, ex, obj);
    assert!(rec.grads.projector[1].data.iter().all(|&g| g == 0.0));
    assert!(rec.grads.projector_bias[1].iter().all(|&g| g == 0.0));
    for c in &rec.grads.classifier {
        assert!(c.data.iter().all(|&g| g == 0.0));
    }
    assert!(rec.grads.projector[0].data.iter().any(|&g| g != 0.0));
}

#[test]
fn backward_is_deterministic() {
    let cfg = tiny_config(3, 3, 5, 2);
    let p = tiny_model(&cfg);
    let masks = random_masks(3, p.prunable_len(), 0.6, 2);
    let ex = &random_examples(&cfg, 1, 2)[0];
    assert_eq!(analytic(&p, &masks, ex, joint(5.0)), analytic(&p, &masks, ex, joint(5.0)));
}

#[test]
fn quadratic_loss_is_checked_exactly() {
    let cfg = tiny_config(1, 2, 2, 3);
    let p = tiny_model(&cfg);
    let loss = |q: &ModelParams| -> crate::Result<f64> {
        Ok(q.tensors().iter().flat_map(|t| t.data.iter()).map(|v| 0.5 * v * v + v).sum())
    };
    let mut grad = p.clone();
    for t in grad.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v += 1.0);
    }
    let report = finite_difference_check(&p, &grad, 1e-4, loss).unwrap();
    assert!(report.max_abs_error <= 1e-9, "{report:?}");
}

#[test]
fn zero_step_is_rejected() {
    let cfg = tiny_config(1, 2, 2, 3);
    let p = tiny_model(&cfg);
    assert!(central_difference(&p, 0.0, |_| Ok(0.0)).is_err());
    assert!(central_difference(&p, -1e-6, |_| Ok(0.0)).is_err());
}

/// Full graph with distinct masks, a direct head and the joint objective,
/// against central differences.
#[test]
fn gradients_match_finite_differences_over_seeds() {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let cfg = tiny_config(3, 3, 4, seed);
        let mut p = tiny_model(&cfg);
        p.attach_head(seed);
        let masks = random_masks(3, p.prunable_len(), 0.7, seed);
        let ex = &random_examples(&cfg, 1, seed)[0];
        assert!(p.num_values() <= 500);
        for objective in [joint(5.0), Objective::Head] {
            let rec = analytic(&p, &masks, ex, objective);
            let report = finite_difference_check(&p, &rec.grads, 1e-6, |q| {
                loss_of(q, &masks, ex, objective)
            })
            .unwrap();
            worst = worst.max(report.max_rel_error);
            assert!(
                report.max_rel_error <= 1e-5,
                "seed {seed}: {report:?}"
            );
        }
    }
    assert!(worst <= 1e-5);
}

#[test]
fn raw_gradient_at_pruned_position_matches_unmasked_zero_weight() {
    let cfg = tiny_config(2, 3, 4, 5);
    let p = tiny_model(&cfg);
    let masks = random_masks(2, p.prunable_len(), 0.5, 5);
    let ex = &random_examples(&cfg, 1, 5)[0];
    let obj = Objective::Branch {
        concept: 1,
        concept_weight: 1.0,
        task_weight: 0.0,
    };
    let rec = analytic(&p, &masks, ex, obj);
    let raw = rec.raw_for_concept(1).unwrap().to_vec();
    // Unmasking a pruned position after zeroing its weight leaves the
    // forward pass unchanged; its ordinary gradient is the raw one.
    for i in masks.get(1).pruned_indices().take(8).collect::<Vec<_>>() {
        let mut q = p.clone();
        q.theta.values[i] = 0.0;
        let mut m = masks.clone();
        m.get_mut(1).set(i, true);
        // Keep concept 0 from seeing the change.
        if m.get(0).get(i) {
            m.get_mut(0).set(i, false);
            q.theta.values[i] = 0.0;
        }
        let r2 = analytic(&q, &m, ex, obj);
        assert!((r2.grads.theta.values[i] - raw[i]).abs() <= 1e-12);
    }
    // Masked gradient is zero exactly where the mask is.
    for i in masks.get(1).pruned_indices() {
        if !masks.get(0).get(i) {
            assert_eq!(rec.grads.theta.values[i], 0.0);
        }
    }
}

#[test]
fn input_gradients_are_shared_by_mean_pooling() {
    let cfg = tiny_config(2, 3, 4, 6);
    let p = tiny_model(&cfg);
    let masks = MaskSet::all_ones(2, p.prunable_len());
    let compiled = CompiledPathway::new(&p, &masks).unwrap();
    let trace = compiled.forward(&[3, 4, 3]).unwrap();
    let rec = compiled
        .backward(&trace, &Upstream::task(2, &[1.0, 0.0, -1.0, 0.5]), false)
        .unwrap();
    assert_eq!(rec.input_grads.len(), 3);
    assert_eq!(rec.input_grads[0], rec.input_grads[2]);
    // Embedding row gradient sums the per-position gradients.
    let row3 = &rec.grads.embeddings.data[9..12];
    for (g, d) in row3.iter().zip(&rec.input_grads[0]) {
        assert!((g - 2.0 * d).abs() < 1e-15);
    }
}

#[test]
fn shared_branches_when_masks_coincide() {
    let cfg = tiny_config(3, 3, 4, 7);
    let p = tiny_model(&cfg);
    let ones = MaskSet::all_ones(3, p.prunable_len());
    assert_eq!(CompiledPathway::new(&p, &ones).unwrap().num_branches(), 1);
    let mut m = ones.clone();
    m.get_mut(2).set(0, false);
    assert_eq!(CompiledPathway::new(&p, &m).unwrap().num_branches(), 2);
    let wrong = MaskSet::new(vec![Mask::ones(p.prunable_len()); 2]).unwrap();
    assert!(CompiledPathway::new(&p, &wrong).is_err());
}

#[test]
fn twenty_parameter_model_matches_finite_differences() {
    let cfg = crate::model::ModelConfig {
        vocab_size: 2,
        emb_dim: 1,
        hidden_dims: vec![2],
        latent_dim: 1,
        num_concepts: 1,
        concept_classes: 2,
        task_classes: 2,
        seed: 0,
    };
    for seed in 0..5 {
        let p = tiny_model(&crate::model::ModelConfig { seed, ..cfg.clone() });
        assert!((15..=20).contains(&p.num_values()));
        let masks = MaskSet::all_ones(1, p.prunable_len());
        let ex = crate::data::Example {
            id: 0,
            token_ids: vec![1, 0, 1],
            concept_labels: vec![1],
            task_label: 0,
        };
        let rec = analytic(&p, &masks, &ex, joint(5.0));
        let report =
            finite_difference_check(&p, &rec.grads, 1e-6, |q| loss_of(q, &masks, &ex, joint(5.0)))
                .unwrap();
        assert!(report.max_rel_error <= 1e-5, "seed {seed}: {report:?}");
    }
}
