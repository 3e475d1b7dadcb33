use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    /// 80 / 10 / 10.
    fn default() -> Self {
        Self { train_frac: 0.8, val_frac: 0.1, test_frac: 0.1, seed: 0 }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.train_frac, self.val_frac, self.test_frac];
        if f.iter().any(|v| !(0.0..=1.0).contains(v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must lie in [0, 1] and sum to 1, got {f:?}")));
        }
        Ok(())
    }

    /// `(floor(train·n), floor(val·n), remainder)`.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // tiny slack so that e.g. 0.8 · 10 is not floored to 7 by rounding
        let floor = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
        let train = floor(self.train_frac).min(n);
        let val = floor(self.val_frac).min(n - train);
        (train, val, n - train - val)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split<I> {
    pub train: Vec<I>,
    pub val: Vec<I>,
    pub test: Vec<I>,
}

/// Seeded shuffle followed by a floor-rule partition.
pub fn split_dataset<I: Clone>(ids: &[I], spec: &SplitSpec) -> Result<Split<I>> {
    spec.validate()?;
    if ids.is_empty() {
        return Err(Error::Usage("cannot split an empty dataset".into()));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (train, val, _) = spec.sizes(ids.len());
    let test = shuffled.split_off(train + val);
    let val = shuffled.split_off(train);
    Ok(Split { train: shuffled, val, test })
}
