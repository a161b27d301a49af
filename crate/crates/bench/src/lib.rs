//! Fixtures shared by the criterion benches.

use vespo_core::policy::{ContextOrder, SoftmaxPolicy, Trajectory};
use vespo_core::rng::substream;
use vespo_core::Result;

/// A behavior batch of `count` trajectories from a uniform bigram policy and a slightly
/// shifted current policy, so the weights are non-trivial.
pub fn stale_batch(vocab: usize, length: usize, count: usize, seed: u64) -> Result<(SoftmaxPolicy, Vec<Trajectory>, Vec<f64>)> {
    let behavior = SoftmaxPolicy::uniform(vocab, length, ContextOrder::Bigram, 1)?;
    let direction: Vec<f64> = (0..behavior.num_params()).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
    let policy = behavior.perturbed(&direction, 0.2)?;
    let batch = (0..count)
        .map(|i| behavior.sample(0, length, &mut substream(seed, &[i as u64])))
        .collect::<Result<Vec<_>>>()?;
    let advantages = (0..count).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
    Ok((policy, batch, advantages))
}
