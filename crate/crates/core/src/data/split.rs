use crate::error::{Error, Result};
use crate::rng::Rng;

/// Seeded shuffle, then the first `floor(ratio * N)` items train and the rest
/// validate. The cut is clamped to `1..=N-1` so neither side is empty.
pub fn split_train_valid<T>(items: Vec<T>, ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.len() < 2 {
        return Err(Error::InvalidData(format!("need at least 2 cases to split, got {}", items.len())));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let cut = ((ratio * n as f64).floor() as usize).clamp(1, n - 1);
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut take = |i: usize| slots[i].take().expect("each index used once");
    let train: Vec<T> = order[..cut].iter().map(|&i| take(i)).collect();
    let valid: Vec<T> = order[cut..].iter().map(|&i| take(i)).collect();
    Ok((train, valid))
}
