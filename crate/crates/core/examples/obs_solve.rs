// Closed-form optimal brain surgeon scores on a 2x2 Fisher block.

use sparsecbm::diffcore::Matrix;
use sparsecbm::pruning::{obs_score, obs_update, singleton_score};

fn main() -> sparsecbm::Result<()> {
    let fisher = Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]])?;
    let theta = [1.0, 1.0];

    let rho = obs_score(&[0], &theta, &fisher)?;
    let delta = obs_update(&[0], &theta, &fisher)?;
    println!("prune w0: rho = {rho}, update = {delta:?}");
    println!(
        "new weights = {:?}",
        theta.iter().zip(&delta).map(|(t, d)| t + d).collect::<Vec<_>>()
    );
    // inverse Fisher diagonal is 2/3 here
    println!("singleton formula: {}", singleton_score(1.0, 2.0 / 3.0));
    println!("prune both: rho = {}", obs_score(&[0, 1], &theta, &fisher)?);
    Ok(())
}
