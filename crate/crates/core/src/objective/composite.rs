use super::perceptual::{perceptual_loss, FeatureExtractor};
use super::ssim::ssim_loss;
use crate::diffcore::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mixing weights `(α, β, γ)` for MSE, SSIM and perceptual terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl Default for LossWeights {
    /// Equal weighting.
    fn default() -> Self {
        Self { alpha: 1.0 / 3.0, beta: 1.0 / 3.0, gamma: 1.0 / 3.0 }
    }
}

impl LossWeights {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("loss weight {name} must be a finite value >= 0, got {v}")));
            }
        }
        let sum = alpha + beta + gamma;
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::Config(format!(
                "loss weights must sum to 1, got alpha+beta+gamma = {alpha}+{beta}+{gamma} = {sum}"
            )));
        }
        Ok(Self { alpha, beta, gamma })
    }

    /// `(1, 0, 0)`: plain MSE training.
    pub fn mse_only() -> Self {
        Self { alpha: 1.0, beta: 0.0, gamma: 0.0 }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Mean squared elementwise difference.
pub fn mse_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    if g.value(pred).shape() != g.value(target).shape() {
        return Err(Error::shape(
            "mse_loss",
            format!("shapes differ: {:?} vs {:?}", g.value(pred).shape(), g.value(target).shape()),
        ));
    }
    let d = g.sub(pred, target)?;
    let sq = g.square(d)?;
    g.mean(sq)
}

/// Unweighted value of every term, for logging.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub mse: T,
    pub ssim: T,
    pub perceptual: T,
}

#[derive(Clone, Copy, Debug)]
pub struct CompositeLoss<T> {
    /// Differentiable weighted sum.
    pub total: Var,
    pub breakdown: LossBreakdown<T>,
}

/// `α·MSE + β·(1 − SSIM) + γ·perceptual`.
///
/// Terms with zero weight are still reported, but they are evaluated on a
/// detached copy and never enter the differentiable sum.
pub fn composite_loss<T: Scalar>(
    g: &mut Graph<T>,
    pred: Var,
    target: Var,
    weights: &LossWeights,
    extractor: &FeatureExtractor<T>,
) -> Result<CompositeLoss<T>> {
    type TermFn<T> = fn(&mut Graph<T>, Var, Var, &FeatureExtractor<T>) -> Result<Var>;
    let terms: [(f64, TermFn<T>); 3] = [
        (weights.alpha, |g, p, t, _| mse_loss(g, p, t)),
        (weights.beta, |g, p, t, _| ssim_loss(g, p, t)),
        (weights.gamma, perceptual_loss),
    ];

    let mut detached: Option<(Graph<T>, Var, Var)> = None;
    let mut values = [T::zero(); 3];
    let mut total: Option<Var> = None;
    for (i, (w, term)) in terms.into_iter().enumerate() {
        if w == 0.0 {
            let (dg, dp, dt) = detached.get_or_insert_with(|| {
                let mut dg = Graph::new();
                let dp = dg.constant(g.value(pred).clone());
                let dt = dg.constant(g.value(target).clone());
                (dg, dp, dt)
            });
            let v = term(dg, *dp, *dt, extractor)?;
            values[i] = dg.value(v).item()?;
            continue;
        }
        let v = term(g, pred, target, extractor)?;
        values[i] = g.value(v).item()?;
        let weighted = g.mul_scalar(v, T::lit(w))?;
        total = Some(match total {
            Some(acc) => g.add(acc, weighted)?,
            None => weighted,
        });
    }
    let total = total.ok_or_else(|| Error::Config("all loss weights are zero".into()))?;
    let breakdown = LossBreakdown { total: g.value(total).item()?, mse: values[0], ssim: values[1], perceptual: values[2] };
    Ok(CompositeLoss { total, breakdown })
}
