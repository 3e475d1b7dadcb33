use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{Adam, AdamConfig};
use super::checkpoint::{load_extractor, model_config_text, save_checkpoint, Checkpoint};
use crate::datakit::{load_pairs, ImagePair};
use crate::diffcore::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::netblocks::{ModelConfig, ParamStore, Preset, UNetConfig, UlwModel};
use crate::objective::{composite_loss, FeatureExtractor, LossBreakdown, LossWeights};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub preset: Preset,
    pub unet: UNetConfig,
    /// Requested `(α, β, γ)`; validated before anything else runs.
    pub weights: (f64, f64, f64),
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Training images are resized to `image_size × image_size` when needed.
    pub image_size: usize,
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    /// Also write the checkpoint every this many steps; 0 writes only at the end.
    pub checkpoint_every: usize,
    /// Extractor container; the seeded default stack when `None`.
    pub extractor: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(preset: Preset, data: impl Into<PathBuf>, checkpoint: impl Into<PathBuf>) -> Self {
        let d = LossWeights::default();
        Self {
            preset,
            unet: UNetConfig::default(),
            weights: (d.alpha(), d.beta(), d.gamma()),
            adam: AdamConfig::default(),
            batch_size: 2,
            steps: 300,
            seed: 0,
            image_size: 64,
            data: data.into(),
            checkpoint: checkpoint.into(),
            checkpoint_every: 0,
            extractor: None,
        }
    }

    /// Validated weights; the base preset trains on MSE alone.
    pub fn effective_weights(&self) -> Result<LossWeights> {
        let (a, b, g) = self.weights;
        let w = LossWeights::new(a, b, g)?;
        Ok(match self.preset {
            Preset::Base => LossWeights::mse_only(),
            Preset::Ulw => w,
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::new(self.preset, self.unet)
    }

    fn validate(&self) -> Result<LossWeights> {
        let w = self.effective_weights()?;
        self.adam.validate()?;
        self.unet.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.image_size == 0 || self.image_size % self.unet.divisor() != 0 {
            return Err(Error::Config(format!(
                "image size {} must be a positive multiple of {} (2^depth)",
                self.image_size,
                self.unet.divisor()
            )));
        }
        Ok(w)
    }

    fn config_text(&self, w: &LossWeights) -> String {
        let a = &self.adam;
        format!(
            "{}alpha={}\nbeta={}\ngamma={}\nlr={}\nbeta1={}\nbeta2={}\neps={}\nbatch_size={}\nsteps={}\nseed={}\nimage_size={}\n",
            model_config_text(&self.model_config()),
            w.alpha(),
            w.beta(),
            w.gamma(),
            a.lr,
            a.beta1,
            a.beta2,
            a.eps,
            self.batch_size,
            self.steps,
            self.seed,
            self.image_size
        )
    }
}

/// Loss of one optimisation step, measured before the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: LossBreakdown<f32>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore<f32>,
    pub checkpoint: Checkpoint,
    /// Whole-training-set loss before the first update.
    pub initial: LossBreakdown<f32>,
    /// Whole-training-set loss after the last update.
    pub last: LossBreakdown<f32>,
    pub rows: Vec<LogRow>,
    pub wiener_calls: usize,
}

fn fmt_loss(l: &LossBreakdown<f32>) -> String {
    format!("total={} mse={} ssim={} perceptual={}", l.total, l.mse, l.ssim, l.perceptual)
}

fn batch_tensors(pairs: &[ImagePair], idx: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let smoky: Vec<&Tensor<f32>> = idx.iter().map(|&i| &pairs[i].smoky).collect();
    let clean: Vec<&Tensor<f32>> = idx.iter().map(|&i| &pairs[i].clean).collect();
    Ok((Tensor::stack_batch(&smoky)?, Tensor::stack_batch(&clean)?))
}

/// Dataset-wide loss, averaged over pairs, without recording gradients.
pub fn evaluate_loss(
    model: &UlwModel,
    params: &ParamStore<f32>,
    pairs: &[ImagePair],
    weights: &LossWeights,
    extractor: &FeatureExtractor<f32>,
    batch_size: usize,
) -> Result<LossBreakdown<f32>> {
    if pairs.is_empty() {
        return Err(Error::Usage("no pairs to evaluate".into()));
    }
    let mut acc = [0.0f64; 4];
    let idx: Vec<usize> = (0..pairs.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = batch_tensors(pairs, chunk)?;
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let xv = g.constant(x);
        let yv = g.constant(y);
        let out = model.forward(&mut g, xv, &bound)?;
        let b = composite_loss(&mut g, out, yv, weights, extractor)?.breakdown;
        let n = chunk.len() as f64;
        for (a, v) in acc.iter_mut().zip([b.total, b.mse, b.ssim, b.perceptual]) {
            *a += f64::from(v) * n;
        }
    }
    let n = pairs.len() as f64;
    Ok(LossBreakdown {
        total: (acc[0] / n) as f32,
        mse: (acc[1] / n) as f32,
        ssim: (acc[2] / n) as f32,
        perceptual: (acc[3] / n) as f32,
    })
}

/// Endless stream of indices: a fresh seeded permutation per epoch.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xBA7C_4E5);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn optimisation_step(
    model: &UlwModel,
    params: &mut ParamStore<f32>,
    adam: &mut Adam<f32>,
    pairs: &[ImagePair],
    idx: &[usize],
    weights: &LossWeights,
    extractor: &FeatureExtractor<f32>,
) -> Result<LossBreakdown<f32>> {
    let (x, y) = batch_tensors(pairs, idx)?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let xv = g.constant(x);
    let yv = g.constant(y);
    let out = model.forward(&mut g, xv, &bound)?;
    let loss = composite_loss(&mut g, out, yv, weights, extractor)?;
    let b = loss.breakdown;
    if !b.total.is_finite() {
        return Err(Error::NonFinite { op: "training loss".into(), trace: fmt_loss(&b) });
    }
    g.backward(loss.total)?;
    let grads = bound.grads(&g)?;
    adam.step(params, &grads)?;
    Ok(b)
}

/// Trains from scratch, writing `key=value` log rows to `log` and the final
/// checkpoint to `cfg.checkpoint`.
pub fn train(cfg: &TrainConfig, log: &mut dyn Write) -> Result<TrainOutcome> {
    // weights first: a bad configuration must fail before any work is done
    let weights = cfg.validate()?;
    let pairs = load_pairs(&cfg.data, Some(cfg.image_size))?;
    let extractor = match &cfg.extractor {
        Some(p) => load_extractor(p)?,
        None => FeatureExtractor::default(),
    };
    let model = UlwModel::new(cfg.model_config())?;
    let mut params = model.init_params::<f32>(cfg.seed)?;
    let mut adam = Adam::new(cfg.adam)?;
    let config_text = cfg.config_text(&weights);
    let batch = cfg.batch_size.min(pairs.len());

    let emit = |log: &mut dyn Write, line: String| log.write_all(line.as_bytes()).and_then(|_| log.write_all(b"\n"));
    let io_err = |e: std::io::Error| Error::io("<log>", e);
    emit(
        log,
        format!(
            "event=config preset={} depth={} base_channels={} alpha={} beta={} gamma={} lr={} batch={} steps={} seed={} image_size={} pairs={} params={}",
            cfg.preset,
            cfg.unet.depth,
            cfg.unet.base_channels,
            weights.alpha(),
            weights.beta(),
            weights.gamma(),
            cfg.adam.lr,
            batch,
            cfg.steps,
            cfg.seed,
            cfg.image_size,
            pairs.len(),
            params.numel()
        ),
    )
    .map_err(io_err)?;

    let initial = evaluate_loss(&model, &params, &pairs, &weights, &extractor, batch)?;
    emit(log, format!("event=eval step=0 {}", fmt_loss(&initial))).map_err(io_err)?;

    let mut sampler = Sampler::new(pairs.len(), cfg.seed);
    let mut rows = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = sampler.next_batch(batch);
        let b = optimisation_step(&model, &mut params, &mut adam, &pairs, &idx, &weights, &extractor).map_err(|e| match e {
            Error::NonFinite { op, trace } => Error::NonFinite { op: format!("{op} at training step {step}"), trace },
            e => e,
        })?;
        emit(log, format!("event=step step={step} {}", fmt_loss(&b))).map_err(io_err)?;
        rows.push(LogRow { step, loss: b });

        let done = step + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.steps {
            save_checkpoint(&Checkpoint::new(config_text.clone(), params.clone()), &cfg.checkpoint)?;
            emit(log, format!("event=checkpoint step={done} path={}", cfg.checkpoint.display())).map_err(io_err)?;
        }
    }

    let last = evaluate_loss(&model, &params, &pairs, &weights, &extractor, batch)?;
    emit(log, format!("event=eval step={} {}", cfg.steps, fmt_loss(&last))).map_err(io_err)?;
    let checkpoint = Checkpoint::new(config_text, params.clone());
    save_checkpoint(&checkpoint, &cfg.checkpoint)?;
    emit(
        log,
        format!("event=checkpoint step={} path={} wiener_calls={}", cfg.steps, cfg.checkpoint.display(), model.wiener_calls()),
    )
    .map_err(io_err)?;
    Ok(TrainOutcome { params, checkpoint, initial, last, rows, wiener_calls: model.wiener_calls() })
}
