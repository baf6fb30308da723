use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::HarnessError;

/// Train, validation and test parts.
pub type Splits<T> = (Vec<T>, Vec<T>, Vec<T>);

/// Smallest corpus [`split_corpus`] accepts.
pub const MIN_SPLIT_SIZE: usize = 10;

/// Deterministically shuffles `corpus` with `seed` and cuts it into train,
/// validation and test parts whose sizes are within one of `ratios`.
pub fn split_corpus<T: Clone>(
    corpus: &[T],
    ratios: [f64; 3],
    seed: u64,
) -> Result<Splits<T>, HarnessError> {
    if corpus.len() < MIN_SPLIT_SIZE {
        return Err(HarnessError::TooSmall {
            size: corpus.len(),
            min: MIN_SPLIT_SIZE,
        });
    }
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| *r < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(HarnessError::Config(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = corpus.len() as f64;
    let n_train = (ratios[0] * n).round() as usize;
    let n_valid = ((ratios[0] + ratios[1]) * n).round() as usize - n_train;
    let pick = |range: &[usize]| range.iter().map(|&i| corpus[i].clone()).collect::<Vec<T>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_valid]),
        pick(&order[n_train + n_valid..]),
    ))
}
