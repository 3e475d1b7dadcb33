use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{Conv2dSpec, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::netblocks::ParamStore;
use crate::scalar::Scalar;

/// One frozen `conv → relu` stage.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorStage<T> {
    /// `[Cout, Cin, k, k]`, odd `k`, same padding.
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
}

/// Fixed convolutional feature stack; features are read after stage `tap`.
///
/// The weights never enter a parameter store, so they are bound as graph
/// constants and receive no gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor<T> {
    stages: Vec<ExtractorStage<T>>,
    tap: usize,
}

/// `(Cin, Cout, stride)` of the shipped default stack.
const DEFAULT_LAYOUT: [(usize, usize, usize); 4] = [(3, 16, 1), (16, 32, 2), (32, 64, 1), (64, 64, 2)];
pub(crate) const DEFAULT_SEED: u64 = 0x5EED_F00D;

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(stages: Vec<ExtractorStage<T>>, tap: usize) -> Result<Self> {
        const OP: &str = "feature_extractor";
        if tap >= stages.len() {
            return Err(Error::Config(format!("tap index {tap} out of range for {} stages", stages.len())));
        }
        let mut prev: Option<usize> = None;
        for (i, s) in stages.iter().enumerate() {
            let (cout, cin, kh, kw) = s.weight.dims4(OP)?;
            if kh != kw || kh % 2 == 0 {
                return Err(Error::shape(OP, format!("stage {i}: kernel must be square and odd, got {kh}x{kw}")));
            }
            if s.stride == 0 {
                return Err(Error::Config(format!("stage {i}: stride must be >= 1")));
            }
            if let Some(p) = prev {
                if p != cin {
                    return Err(Error::shape(OP, format!("Cin: stage {i} expects {cin} channels, previous stage gives {p}")));
                }
            }
            if let Some(b) = &s.bias {
                if b.shape() != [cout] {
                    return Err(Error::shape(OP, format!("stage {i}: bias shape {:?}, expected [{cout}]", b.shape())));
                }
            }
            prev = Some(cout);
        }
        Ok(Self { stages, tap })
    }

    /// Default stack (3→16→32→64→64, stride 2 at the second and fourth
    /// stage) with seeded orthogonal weights, tapped after the second stage.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages = DEFAULT_LAYOUT
            .iter()
            .map(|&(cin, cout, stride)| ExtractorStage {
                weight: orthogonal_weight(&mut rng, cout, cin, 3),
                bias: None,
                stride,
            })
            .collect();
        Self::new(stages, 1).expect("default layout is consistent")
    }

    pub fn stages(&self) -> &[ExtractorStage<T>] {
        &self.stages
    }

    pub fn tap(&self) -> usize {
        self.tap
    }

    pub fn in_channels(&self) -> usize {
        self.stages[0].weight.shape()[1]
    }

    /// Runs stages `0..=tap` on `x`.
    pub fn features(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (_, c, _, _) = g.value(x).dims4("feature_extractor")?;
        if c != self.in_channels() {
            return Err(Error::shape(
                "feature_extractor",
                format!("C: input has {c} channels, extractor expects {}", self.in_channels()),
            ));
        }
        let mut cur = x;
        for s in &self.stages[..=self.tap] {
            let w = g.constant(s.weight.clone());
            let b = s.bias.as_ref().map(|b| g.constant(b.clone()));
            let y = g.conv2d(cur, w, b, Conv2dSpec::same().stride(s.stride))?;
            cur = g.relu(y)?;
        }
        Ok(cur)
    }

    pub fn cast<U: Scalar>(&self) -> FeatureExtractor<U> {
        FeatureExtractor {
            stages: self
                .stages
                .iter()
                .map(|s| ExtractorStage { weight: s.weight.cast(), bias: s.bias.as_ref().map(Tensor::cast), stride: s.stride })
                .collect(),
            tap: self.tap,
        }
    }

    /// Flattens into named tensors plus a `key=value` description of the
    /// non-tensor fields, as stored in a checkpoint container.
    pub fn to_store(&self) -> Result<(String, ParamStore<T>)> {
        let mut store = ParamStore::new();
        for (i, s) in self.stages.iter().enumerate() {
            store.insert(format!("stage{i}.weight"), s.weight.clone())?;
            if let Some(b) = &s.bias {
                store.insert(format!("stage{i}.bias"), b.clone())?;
            }
        }
        let strides: Vec<String> = self.stages.iter().map(|s| s.stride.to_string()).collect();
        let config = format!("kind=extractor\ntap={}\nstrides={}\n", self.tap, strides.join(","));
        Ok((config, store))
    }

    /// Inverse of [`FeatureExtractor::to_store`].
    pub fn from_store(config: &str, store: &ParamStore<T>) -> Result<Self> {
        let mut tap = None;
        let mut strides = None;
        for line in config.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("bad extractor config line `{line}`")))?;
            match k {
                "tap" => tap = Some(v.parse::<usize>().map_err(|e| Error::Config(format!("extractor tap: {e}")))?),
                "strides" => {
                    strides = Some(
                        v.split(',')
                            .map(|s| s.trim().parse::<usize>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|e| Error::Config(format!("extractor strides: {e}")))?,
                    )
                }
                _ => {}
            }
        }
        let tap = tap.ok_or_else(|| Error::Config("extractor config lacks `tap`".into()))?;
        let strides: Vec<usize> = strides.ok_or_else(|| Error::Config("extractor config lacks `strides`".into()))?;
        let mut stages = Vec::with_capacity(strides.len());
        for (i, stride) in strides.into_iter().enumerate() {
            let weight = store
                .get(&format!("stage{i}.weight"))
                .ok_or_else(|| Error::Config(format!("extractor weights lack `stage{i}.weight`")))?
                .clone();
            let bias = store.get(&format!("stage{i}.bias")).cloned();
            stages.push(ExtractorStage { weight, bias, stride });
        }
        Self::new(stages, tap)
    }
}

impl<T: Scalar> Default for FeatureExtractor<T> {
    fn default() -> Self {
        Self::seeded(DEFAULT_SEED)
    }
}

/// `[Cout, Cin, k, k]` whose flattened rows are orthonormal (when
/// `Cout ≤ Cin·k²`), scaled by the ReLU gain `√2`.
fn orthogonal_weight<T: Scalar>(rng: &mut ChaCha8Rng, cout: usize, cin: usize, k: usize) -> Tensor<T> {
    let cols = cin * k * k;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(cout);
    for _ in 0..cout {
        let mut v: Vec<f64> = (0..cols).map(|_| StandardNormal.sample(rng)).collect();
        // modified Gram-Schmidt against earlier rows, while they still span a subspace
        if rows.len() < cols {
            for r in &rows {
                let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        rows.push(v);
    }
    let gain = std::f64::consts::SQRT_2;
    Tensor::from_fn(&[cout, cin, k, k], |i| T::lit(gain * rows[i / cols][i % cols]))
}

/// Mean squared difference of the tapped activations.
pub fn perceptual_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var, extractor: &FeatureExtractor<T>) -> Result<Var> {
    if g.value(pred).shape() != g.value(target).shape() {
        return Err(Error::shape(
            "perceptual_loss",
            format!("shapes differ: {:?} vs {:?}", g.value(pred).shape(), g.value(target).shape()),
        ));
    }
    let fp = extractor.features(g, pred)?;
    let ft = extractor.features(g, target)?;
    let d = g.sub(fp, ft)?;
    let sq = g.square(d)?;
    g.mean(sq)
}
