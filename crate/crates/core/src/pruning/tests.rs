use super::*;
use crate::diffcore::Matrix;
use crate::model::ModelConfig;
use crate::testutil::{random_examples, random_masks, tiny_config, tiny_model};
use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, Strategy as PropStrategy};

/// Plain Gaussian elimination with partial pivoting.
fn gauss_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, &v)| r.iter().copied().chain([v]).collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..=n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

/// Minimizes `½ δᵀFδ` subject to `δ_Q = −θ_Q` by eliminating the free
/// coordinates: `δ_R = −F_RR⁻¹ F_RQ δ_Q`.
fn constrained_qp(f: &[Vec<f64>], theta: &[f64], q: &[usize]) -> (f64, Vec<f64>) {
    let n = theta.len();
    let free: Vec<usize> = (0..n).filter(|i| !q.contains(i)).collect();
    let mut delta = vec![0.0; n];
    for &i in q {
        delta[i] = -theta[i];
    }
    if !free.is_empty() {
        let frr: Vec<Vec<f64>> = free.iter().map(|&r| free.iter().map(|&c| f[r][c]).collect()).collect();
        let rhs: Vec<f64> = free
            .iter()
            .map(|&r| -q.iter().map(|&c| f[r][c] * delta[c]).sum::<f64>())
            .collect();
        for (&r, v) in free.iter().zip(gauss_solve(&frr, &rhs)) {
            delta[r] = v;
        }
    }
    let quad: f64 = (0..n).map(|r| (0..n).map(|c| delta[r] * f[r][c] * delta[c]).sum::<f64>()).sum();
    (0.5 * quad, delta)
}

fn spd_strategy() -> impl PropStrategy<Value = (Vec<Vec<f64>>, Vec<f64>, Vec<usize>)> {
    (1usize..=20).prop_flat_map(|n| {
        (
            prop::collection::vec(-1.0f64..1.0, n * n),
            prop::collection::vec(-2.0f64..2.0, n),
            prop::sample::subsequence((0..n).collect::<Vec<_>>(), 1..=n.min(3)),
        )
            .prop_map(move |(m, theta, q)| {
                let f = (0..n)
                    .map(|r| {
                        (0..n)
                            .map(|c| {
                                let s: f64 = (0..n).map(|k| m[r * n + k] * m[c * n + k]).sum();
                                s + if r == c { 0.1 } else { 0.0 }
                            })
                            .collect()
                    })
                    .collect();
                (f, theta, q)
            })
    })
}

proptest! {
    #[test]
    fn obs_matches_the_reduced_system((f, theta, q) in spd_strategy()) {
        let fm = Matrix::from_rows(&f.iter().map(Vec::as_slice).collect::<Vec<_>>()).unwrap();
        let (rho, delta) = constrained_qp(&f, &theta, &q);
        let got = obs_score(&q, &theta, &fm).unwrap();
        let upd = obs_update(&q, &theta, &fm).unwrap();
        let tol = if q.len() == 1 { 1e-10 } else { 1e-8 };
        prop_assert!((got - rho).abs() <= tol * rho.abs().max(1.0), "{got} vs {rho}");
        for (a, b) in upd.iter().zip(&delta) {
            prop_assert!((a - b).abs() <= tol * b.abs().max(1.0), "{a} vs {b}");
        }
        for &i in &q {
            prop_assert_eq!(theta[i] + upd[i], 0.0);
        }
    }
}

#[test]
fn exact_prune_counts() {
    assert_eq!(pruned_target(0.25, 100), 25);
    assert_eq!(pruned_target(0.0, 100), 0);
    assert_eq!(pruned_target(0.75, 10240), 7680);
    assert_eq!(pruned_target(0.255, 100), 26);
    let cfg = PruneConfig::for_concepts(4);
    for p in 1..=4 {
        assert_eq!(pruned_target(cfg.scheduled(p), 10240), 1920 * p);
    }
    assert_eq!(pruned_target(1.0 / 3.0, 3), 1);
}

fn fisher_for(params: &ModelParams, masks: &MaskSet, k: usize, block: usize, seed: u64) -> FisherEstimate {
    let mc = ModelConfig {
        seed,
        ..tiny_config(masks.len(), params.concept_classes(), params.task_classes(), seed)
    };
    let data = random_examples(&ModelConfig { vocab_size: params.vocab_size(), ..mc }, 16, seed);
    let refs: Vec<&Example> = data.iter().collect();
    estimate_fisher(&refs, params, masks, k, block, 1e-4, FisherObjective::default()).unwrap()
}

#[test]
fn target_at_current_sparsity_is_a_no_op() {
    let mc = tiny_config(2, 3, 4, 1);
    let mut p = tiny_model(&mc);
    let mut masks = MaskSet::all_ones(2, p.prunable_len());
    let cfg = PruneConfig::for_concepts(2);
    let f = fisher_for(&p, &masks, 0, 8, 1);
    let out = prune_step(&mut p, &mut masks, 0, 0.25, &f, &cfg).unwrap();
    assert_eq!(out.pruned, 6);
    let snapshot = masks.clone();
    let out = prune_step(&mut p, &mut masks, 0, 0.25, &f, &cfg).unwrap();
    assert_eq!(out.pruned, 0);
    assert!(out.rho.is_none());
    assert_eq!(masks, snapshot);
    assert!(prune_step(&mut p, &mut masks, 0, 0.1, &f, &cfg).is_err());
    assert!(prune_step(&mut p, &mut masks, 2, 0.5, &f, &cfg).is_err());
    assert!(prune_step(&mut p, &mut masks, 0, 1.0, &f, &cfg).is_err());
}

#[test]
fn masks_only_lose_bits_over_steps() {
    let mc = tiny_config(3, 3, 4, 2);
    let mut p = tiny_model(&mc);
    let mut masks = MaskSet::all_ones(3, p.prunable_len());
    let cfg = PruneConfig::for_concepts(3);
    for step in 1..=4 {
        for k in 0..3 {
            let before = masks.get(k).clone();
            let f = fisher_for(&p, &masks, k, 5, step as u64);
            let out = prune_step(&mut p, &mut masks, k, cfg.scheduled(step), &f, &cfg).unwrap();
            let after = masks.get(k);
            assert!((0..after.len()).all(|i| !after.get(i) || before.get(i)));
            assert_eq!(after.pruned_count(), pruned_target(cfg.scheduled(step), after.len()));
            assert_eq!(out.pruned, after.pruned_count() - before.pruned_count());
        }
    }
}

#[test]
fn zero_sparsity_leaves_the_model_alone() {
    let mc = tiny_config(2, 3, 4, 3);
    let mut p = tiny_model(&mc);
    let before = p.clone();
    let mut masks = MaskSet::all_ones(2, p.prunable_len());
    let data = random_examples(&mc, 10, 3);
    let cfg = PruneConfig { target_sparsity: 0.0, steps: 1, ..PruneConfig::for_concepts(2) };
    let r = prune_to_sparsity(&data, &mut p, &mut masks, &cfg, &TrainConfig::default()).unwrap();
    assert_eq!(p, before);
    assert_eq!(masks, MaskSet::all_ones(2, p.prunable_len()));
    assert!(r.steps[0].finetune_losses.is_empty());
    assert_eq!(r.final_sparsity, vec![0.0, 0.0]);
}

#[test]
fn defaults_reach_one_minus_one_over_k() {
    let mc = tiny_config(4, 3, 4, 4);
    let mut p = tiny_model(&mc);
    let mut masks = MaskSet::all_ones(4, p.prunable_len());
    let data = random_examples(&mc, 20, 4);
    let cfg = PruneConfig { fisher_samples: 16, block_size: 8, ..PruneConfig::for_concepts(4) };
    let ft = TrainConfig { lr: 1e-2, ..TrainConfig::default() };
    let r = prune_to_sparsity(&data, &mut p, &mut masks, &cfg, &ft).unwrap();
    let len = p.prunable_len();
    for m in masks.iter() {
        assert!(m.popcount() as f64 <= 0.25 * len as f64);
        assert_eq!(m.pruned_count(), pruned_target(0.75, len));
    }
    assert_eq!(r.steps.len(), 4);
    assert!(r.steps.iter().all(|s| s.finetune_losses.len() == 1));
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(json["prunable_len"], len);
    assert!(json["steps"][0]["concepts"][0]["loss_before"].is_number());
}

#[test]
fn diagonal_blocks_match_exhaustive_search() {
    let mc = ModelConfig {
        emb_dim: 2,
        hidden_dims: vec![3],
        latent_dim: 2,
        ..tiny_config(1, 2, 2, 5)
    };
    let mut p = tiny_model(&mc);
    assert_eq!(p.prunable_len(), 12);
    let grads: Vec<Vec<f64>> = (0..5)
        .map(|i| (0..12).map(|j| ((3 * i + 7 * j) as f64).cos()).collect())
        .collect();
    let f = FisherEstimate::from_gradients(0, &grads, 12, 1, 1e-4).unwrap();
    let cost: Vec<f64> = (0..12)
        .map(|i| 0.5 * p.theta.values[i].powi(2) * f.blocks[i].get(0, 0))
        .collect();
    for count in [1usize, 4, 6, 9] {
        let mut best = (f64::INFINITY, 0u32);
        for subset in 0u32..(1 << 12) {
            if subset.count_ones() as usize != count {
                continue;
            }
            let c: f64 = (0..12).filter(|i| subset >> i & 1 == 1).map(|i| cost[i]).sum();
            if c < best.0 {
                best = (c, subset);
            }
        }
        let mut masks = MaskSet::all_ones(1, 12);
        let cfg = PruneConfig { block_size: 1, ..PruneConfig::for_concepts(1) };
        prune_step(&mut p, &mut masks, 0, count as f64 / 12.0, &f, &cfg).unwrap();
        let chosen: u32 = masks.get(0).pruned_indices().map(|i| 1u32 << i).sum();
        assert_eq!(chosen, best.1, "count {count}");
    }
}

#[test]
fn compensation_zeroes_pruned_weights_inside_the_concept() {
    let mc = tiny_config(2, 3, 4, 6);
    let mut p = tiny_model(&mc);
    let mut masks = MaskSet::all_ones(2, p.prunable_len());
    let cfg = PruneConfig {
        compensation: Compensation::PerConceptDelta,
        ..PruneConfig::for_concepts(2)
    };
    let f = fisher_for(&p, &masks, 1, 6, 6);
    prune_step(&mut p, &mut masks, 1, 0.25, &f, &cfg).unwrap();
    let delta = &p.compensation[1];
    assert!(p.compensation[0].iter().all(|&d| d == 0.0));
    let pruned: Vec<usize> = masks.get(1).pruned_indices().collect();
    for &i in &pruned {
        assert_eq!(p.theta.values[i] + delta[i], 0.0);
    }
    // blocks without a pruned index stay untouched
    for b in 0..f.blocks.len() {
        let range = f.block_range(b);
        if !pruned.iter().any(|i| range.contains(i)) {
            assert!(range.clone().all(|i| delta[i] == 0.0));
        } else {
            assert!(range.clone().any(|i| !pruned.contains(&i) && delta[i] != 0.0));
        }
    }
    // second step composes on top of the first delta
    let f = fisher_for(&p, &masks, 1, 6, 7);
    prune_step(&mut p, &mut masks, 1, 0.5, &f, &cfg).unwrap();
    for i in masks.get(1).pruned_indices().filter(|i| !pruned.contains(i)) {
        assert!((p.theta.values[i] + p.compensation[1][i]).abs() < 1e-12);
    }
}

#[test]
fn grouped_pruning_hits_the_exact_count() {
    let mc = tiny_config(1, 3, 4, 8);
    let mut p = tiny_model(&mc);
    let masks0 = random_masks(1, p.prunable_len(), 0.9, 8);
    let f = fisher_for(&p, &masks0, 0, 7, 8);
    for group in [2, 3, 5] {
        let mut masks = masks0.clone();
        let cfg = PruneConfig { group_size: group, ..PruneConfig::for_concepts(1) };
        let target = 0.3;
        prune_step(&mut p, &mut masks, 0, target, &f, &cfg).unwrap();
        assert_eq!(masks.get(0).pruned_count(), pruned_target(target, p.prunable_len()));
        let before: Vec<usize> = masks0.get(0).pruned_indices().collect();
        assert!(before.iter().all(|&i| !masks.get(0).get(i)));
    }
}

#[test]
fn config_validation_and_parsing() {
    let good = PruneConfig::for_concepts(4);
    assert_eq!(good.target_sparsity, 0.75);
    assert!(good.validate().is_ok());
    for bad in [
        PruneConfig { target_sparsity: 1.0, ..good.clone() },
        PruneConfig { steps: 0, ..good.clone() },
        PruneConfig { zeta: 0.0, ..good.clone() },
        PruneConfig { block_size: 0, ..good.clone() },
        PruneConfig { group_size: 0, ..good.clone() },
        PruneConfig { fisher_samples: 0, ..good.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
    }
    assert_eq!("per_concept_delta".parse::<Compensation>().unwrap(), Compensation::PerConceptDelta);
    assert!("some".parse::<Compensation>().is_err());
}
