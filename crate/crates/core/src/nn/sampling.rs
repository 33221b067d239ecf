use rand::Rng;

use crate::envsim::Action;
use crate::error::{Error, Result};

/// Gumbel-max draw: `argmax_i (ln p_i + G_i)` with standard Gumbel noise.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = probs.iter().sum();
    if probs.is_empty() || !(total > 0.0) || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Numerical(format!("not a probability vector: {probs:?}")));
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        // u in (0, 1) so both logarithms stay finite
        let u: f64 = 1.0 - rng.random::<f64>();
        let g = -(-u.ln()).ln();
        let score = p.ln() + g;
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    Ok(best)
}

pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<Action> {
    let i = sample_index(probs, rng)?;
    Action::from_index(i).ok_or_else(|| Error::Shape(format!("no action with index {i}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(sample_action(&[1.0, 0.0, 0.0], &mut rng).unwrap(), Action::Terminate);
        }
        assert!(sample_index(&[0.0, 0.0], &mut rng).is_err());
        assert!(sample_index(&[], &mut rng).is_err());
    }
}
