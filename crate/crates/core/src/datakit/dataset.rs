use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image_io::{load_image, resize_bilinear, save_image};
use super::noise::{gen_fractal_noise, sub_seed};
use super::smoke::{synth_smoke, SmokeRecipe};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";

/// Smoky input and its smoke-free target, both `[3, H, W]` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub smoky: Tensor<f32>,
    pub clean: Tensor<f32>,
}

impl ImagePair {
    pub fn new(id: impl Into<String>, smoky: Tensor<f32>, clean: Tensor<f32>) -> Result<Self> {
        let id = id.into();
        if smoky.shape() != clean.shape() || smoky.rank() != 3 || smoky.shape()[0] != 3 {
            return Err(Error::shape(
                "image_pair",
                format!("pair `{id}`: smoky {:?} and clean {:?} must both be [3, H, W]", smoky.shape(), clean.shape()),
            ));
        }
        let in_range = |t: &Tensor<f32>| t.data().iter().all(|v| (0.0..=1.0).contains(v));
        if !in_range(&smoky) || !in_range(&clean) {
            return Err(Error::NumericDomain { op: "image_pair", detail: format!("pair `{id}` has values outside [0, 1]") });
        }
        Ok(Self { id, smoky, clean })
    }

    pub fn height(&self) -> usize {
        self.clean.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.clean.shape()[2]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub density: f64,
    pub seed: u64,
}

/// `id<TAB>density<TAB>seed` rows, one per generated pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{}", r.id, r.density, r.seed);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Config(format!("manifest line {}: expected `id<TAB>density<TAB>seed`, got `{line}`", n + 1));
            let mut f = line.split('\t');
            let (Some(id), Some(d), Some(s), None) = (f.next(), f.next(), f.next(), f.next()) else {
                return Err(bad());
            };
            rows.push(ManifestRow {
                id: id.to_string(),
                density: d.parse().map_err(|_| bad())?,
                seed: s.parse().map_err(|_| bad())?,
            });
        }
        Ok(Self { rows })
    }
}

/// Settings for [`build_synthetic_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Source of clean frames; procedural textures when `None`.
    pub clean_dir: Option<PathBuf>,
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    /// Each pair draws its density uniformly from this range.
    pub density: (f64, f64),
    /// Index of the first generated pair; ids and sub-seeds follow from it.
    pub start_index: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { clean_dir: None, count: 8, size: 64, seed: 7, density: (0.3, 0.7), start_index: 0 }
    }
}

/// Reddish, vessel-streaked texture standing in for a clean frame.
fn procedural_tissue(size: usize, seed: u64) -> Tensor<f32> {
    let scale = (size as f64 / 3.0).max(4.0);
    let base = gen_fractal_noise(size, size, 4, scale, sub_seed(seed, 1));
    let veins = gen_fractal_noise(size, size, 3, scale / 1.5, sub_seed(seed, 2));
    let gloss = gen_fractal_noise(size, size, 2, scale / 2.0, sub_seed(seed, 3));
    let light = [0.80, 0.42, 0.40];
    let dark = [0.52, 0.16, 0.18];
    let plane = size * size;
    Tensor::from_fn(&[3, size, size], |i| {
        let (c, p) = (i / plane, i % plane);
        let t = base[p];
        let ridge = 1.0 - ((veins[p] - 0.5).abs() * 10.0).min(1.0);
        let spec = ((gloss[p] - 0.7) * 2.0).max(0.0);
        let v = (light[c] * t + dark[c] * (1.0 - t)) * (1.0 - 0.35 * ridge) + spec * 0.25;
        v.clamp(0.0, 0.9) as f32
    })
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

fn fit(img: Tensor<f32>, size: usize) -> Result<Tensor<f32>> {
    resize_bilinear(&img, size, size)
}

/// Writes `count` pairs as `<id>_clean.png` / `<id>_smoky.png` plus
/// `manifest.tsv`. Every pair derives its own sub-seed from `(seed, index)`,
/// so output does not depend on generation order.
pub fn build_synthetic_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    let (lo, hi) = cfg.density;
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(Error::Config(format!("density range must satisfy 0 <= lo <= hi <= 1, got {lo}:{hi}")));
    }
    if cfg.size == 0 || cfg.count == 0 {
        return Err(Error::Config("count and size must be >= 1".into()));
    }
    let sources = match &cfg.clean_dir {
        Some(dir) => {
            let files = png_files(dir)?;
            if files.is_empty() {
                return Err(Error::io(dir, "no PNG images in clean directory"));
            }
            Some(files)
        }
        None => None,
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut manifest = Manifest::default();
    for index in cfg.start_index..cfg.start_index + cfg.count {
        let id = format!("{index:04}");
        let seed = sub_seed(cfg.seed, index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let density = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let clean = match &sources {
            Some(files) => fit(load_image(&files[index % files.len()])?, cfg.size)?,
            None => procedural_tissue(cfg.size, seed),
        };
        let recipe = SmokeRecipe { density, noise_scale: cfg.size as f64 / 2.5, seed: sub_seed(seed, 0), ..SmokeRecipe::default() };
        let smoky = synth_smoke(&clean, &recipe)?;
        save_image(&clean, &out_dir.join(format!("{id}_clean.png")))?;
        save_image(&smoky, &out_dir.join(format!("{id}_smoky.png")))?;
        manifest.rows.push(ManifestRow { id, density, seed });
    }
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_tsv()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Loads paired images from `dir`, sorted by id.
///
/// Two layouts are understood: `<id>_smoky.png` next to `<id>_clean.png`, or
/// `smoky/` and `clean/` sub-directories holding same-named files. With
/// `size`, both members are resized to `size × size`.
pub fn load_pairs(dir: &Path, size: Option<usize>) -> Result<Vec<ImagePair>> {
    let (smoky_dir, clean_dir) = (dir.join("smoky"), dir.join("clean"));
    let mut found: Vec<(String, PathBuf, PathBuf)> = Vec::new();
    if smoky_dir.is_dir() && clean_dir.is_dir() {
        for s in png_files(&smoky_dir)? {
            let name = s.file_name().expect("listed file has a name");
            let c = clean_dir.join(name);
            if !c.is_file() {
                return Err(Error::io(&c, "missing clean counterpart"));
            }
            let id = s.file_stem().expect("listed file has a stem").to_string_lossy().into_owned();
            found.push((id, s, c));
        }
    } else {
        for s in png_files(dir)? {
            let stem = s.file_stem().expect("listed file has a stem").to_string_lossy().into_owned();
            let Some(id) = stem.strip_suffix("_smoky") else { continue };
            let c = dir.join(format!("{id}_clean.png"));
            if !c.is_file() {
                return Err(Error::io(&c, "missing clean counterpart"));
            }
            found.push((id.to_string(), s, c));
        }
    }
    if found.is_empty() {
        return Err(Error::io(dir, "no image pairs found (expected <id>_smoky.png/<id>_clean.png or smoky/ + clean/)"));
    }
    found
        .into_iter()
        .map(|(id, s, c)| {
            let (mut smoky, mut clean) = (load_image(&s)?, load_image(&c)?);
            if let Some(n) = size {
                smoky = fit(smoky, n)?;
                clean = fit(clean, n)?;
            }
            ImagePair::new(id, smoky, clean)
        })
        .collect()
}
