use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Instance;
use crate::error::{Error, Result};

/// Keeps every positive and each negative with probability `keep_rate`.
///
/// One uniform draw is consumed per negative, so the output is a pure
/// function of `(input order, keep_rate, seed)`.
pub fn downsample_negatives<I>(
    stream: I,
    keep_rate: f64,
    seed: u64,
) -> Result<impl Iterator<Item = Instance>>
where
    I: IntoIterator<Item = Instance>,
{
    if !(keep_rate > 0.0 && keep_rate <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep_rate must lie in (0, 1], got {keep_rate}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(stream
        .into_iter()
        .filter(move |inst| inst.label == 1 || rng.random::<f64>() < keep_rate))
}

/// Last `valid_len` instances become the validation set.
pub fn split_tail(mut instances: Vec<Instance>, valid_len: usize) -> (Vec<Instance>, Vec<Instance>) {
    let cut = instances.len().saturating_sub(valid_len);
    let valid = instances.split_off(cut);
    (instances, valid)
}

fn valid_len(n: usize, fraction: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction must lie in [0, 1), got {fraction}"
        )));
    }
    Ok((n as f64 * fraction).round() as usize)
}

/// Time-ordered split: the trailing `fraction` of rows is validation.
pub fn split_chronological(
    instances: Vec<Instance>,
    fraction: f64,
) -> Result<(Vec<Instance>, Vec<Instance>)> {
    let k = valid_len(instances.len(), fraction)?;
    Ok(split_tail(instances, k))
}

/// Seeded random split; both halves keep their original relative order.
pub fn split_random(
    instances: Vec<Instance>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<Instance>, Vec<Instance>)> {
    let k = valid_len(instances.len(), fraction)?;
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_valid = vec![false; instances.len()];
    for &i in &order[..k] {
        is_valid[i] = true;
    }
    let (mut train, mut valid) = (Vec::new(), Vec::with_capacity(k));
    for (inst, v) in instances.into_iter().zip(is_valid) {
        if v {
            valid.push(inst);
        } else {
            train.push(inst);
        }
    }
    Ok((train, valid))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(labels: &[u8]) -> Vec<Instance> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| Instance {
                ids: vec![i as u32],
                label,
            })
            .collect()
    }

    #[test]
    fn keep_rate_one_is_identity() {
        let s = stream(&[0, 1, 0, 0, 1]);
        let out: Vec<_> = downsample_negatives(s.clone(), 1.0, 3).unwrap().collect();
        assert_eq!(out, s);
    }

    #[test]
    fn positives_always_kept() {
        let s = stream(&[1; 50]);
        let out: Vec<_> = downsample_negatives(s.clone(), 0.01, 3).unwrap().collect();
        assert_eq!(out, s);
    }

    #[test]
    fn bad_rate_rejected() {
        assert!(downsample_negatives(stream(&[0]), 0.0, 1).is_err());
        assert!(downsample_negatives(stream(&[0]), -0.5, 1).is_err());
        assert!(downsample_negatives(stream(&[0]), 1.5, 1).is_err());
    }

    #[test]
    fn negative_keep_count_is_binomial_and_replayable() {
        let s = stream(&[0; 10_000]);
        let kept: Vec<_> = downsample_negatives(s.clone(), 0.25, 2024).unwrap().collect();
        // mean 2500, sd sqrt(10000 * 0.25 * 0.75) ~= 43.3
        assert!((kept.len() as f64 - 2500.0).abs() <= 3.0 * 43.3);
        // golden value for the ChaCha8 stream at this seed
        assert_eq!(kept.len(), 2513);
        let again: Vec<_> = downsample_negatives(s, 0.25, 2024).unwrap().collect();
        assert_eq!(kept, again);
    }

    #[test]
    fn splits() {
        let s = stream(&[0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
        let (train, valid) = split_chronological(s.clone(), 0.2).unwrap();
        assert_eq!(train, s[..8].to_vec());
        assert_eq!(valid, s[8..].to_vec());
        let (train, valid) = split_random(s.clone(), 0.3, 5).unwrap();
        assert_eq!((train.len(), valid.len()), (7, 3));
        let mut all: Vec<_> = train.iter().chain(&valid).map(|i| i.ids[0]).collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<u32>>());
        assert_eq!(split_random(s.clone(), 0.3, 5).unwrap(), (train, valid));
        assert!(split_chronological(s, 1.0).is_err());
    }
}
