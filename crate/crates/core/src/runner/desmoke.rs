use std::io::Write;
use std::path::{Path, PathBuf};

use super::checkpoint::load_checkpoint;
use crate::datakit::{load_image, resize_bilinear, save_image};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DesmokeOptions {
    /// Resample inputs whose size is not a multiple of `2^depth` (and the
    /// output back to the input size) instead of failing.
    pub resize: bool,
    /// Side-by-side smoky / output / clean comparison image.
    pub dump_grid: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DesmokeSummary {
    pub written: Vec<PathBuf>,
}

fn inputs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        // targets living next to their smoky inputs are not inputs themselves
        .filter(|p| !p.file_stem().is_some_and(|s| s.to_string_lossy().ends_with("_clean")))
        .collect();
    files.sort();
    Ok(files)
}

fn nearest_multiple(n: usize, d: usize) -> usize {
    ((n + d / 2) / d).max(1) * d
}

/// Runs the checkpointed model on every PNG in `input`, writing one
/// same-sized output per input. `<id>_smoky.png` is written as `<id>.png`.
pub fn desmoke(ckpt: &Path, input: &Path, output: &Path, opts: &DesmokeOptions, log: &mut dyn Write) -> Result<DesmokeSummary> {
    let checkpoint = load_checkpoint(ckpt)?;
    let model = checkpoint.model()?;
    let unet = model.config().unet;
    let d = unet.divisor();
    let files = inputs(input)?;
    if files.is_empty() {
        return Err(Error::io(input, "no PNG inputs"));
    }
    std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;

    let mut summary = DesmokeSummary::default();
    let mut grid_rows = Vec::new();
    for path in files {
        let img = load_image(&path)?;
        let (h, w) = (img.shape()[1], img.shape()[2]);
        let fits = h % d == 0 && w % d == 0;
        if !fits && !opts.resize {
            return Err(Error::shape(
                "desmoke",
                format!("{}: H/W {h}x{w} must be divisible by {d} (2^depth); pass --resize to resample", path.display()),
            ));
        }
        let net_in = if fits { img.clone() } else { resize_bilinear(&img, nearest_multiple(h, d), nearest_multiple(w, d))? };
        let (nh, nw) = (net_in.shape()[1], net_in.shape()[2]);
        let batch = net_in.reshape(&[1, 3, nh, nw])?;
        let pred = model.predict(&batch, &checkpoint.params)?.reshape(&[3, nh, nw])?;
        let pred = if fits { pred } else { resize_bilinear(&pred, h, w)? };

        let stem = path.file_stem().expect("listed file has a stem").to_string_lossy().into_owned();
        let id = stem.strip_suffix("_smoky").unwrap_or(&stem).to_string();
        let out_path = output.join(format!("{id}.png"));
        save_image(&pred, &out_path)?;
        writeln!(log, "event=desmoke input={} output={} height={h} width={w}", path.display(), out_path.display())
            .map_err(|e| Error::io("<log>", e))?;
        if opts.dump_grid.is_some() {
            let clean_path = input.join(format!("{id}_clean.png"));
            let clean = if clean_path.is_file() { Some(load_image(&clean_path)?) } else { None };
            grid_rows.push((img, pred.clone(), clean));
        }
        summary.written.push(out_path);
    }
    if let Some(grid_path) = &opts.dump_grid {
        save_image(&comparison_grid(&grid_rows)?, grid_path)?;
        writeln!(log, "event=grid path={} rows={}", grid_path.display(), grid_rows.len()).map_err(|e| Error::io("<log>", e))?;
    }
    Ok(summary)
}

/// One row per image: smoky, output and (when present) clean, each cell
/// resampled to the first image's size. Missing cells stay black.
fn comparison_grid(rows: &[(Tensor<f32>, Tensor<f32>, Option<Tensor<f32>>)]) -> Result<Tensor<f32>> {
    let (ch, cw) = match rows.first() {
        Some((img, _, _)) => (img.shape()[1], img.shape()[2]),
        None => return Err(Error::Usage("empty comparison grid".into())),
    };
    let (gh, gw) = (ch * rows.len(), cw * 3);
    let mut grid = Tensor::<f32>::zeros(&[3, gh, gw]);
    for (r, (smoky, out, clean)) in rows.iter().enumerate() {
        for (col, cell) in [Some(smoky), Some(out), clean.as_ref()].into_iter().enumerate() {
            let Some(cell) = cell else { continue };
            let cell = resize_bilinear(cell, ch, cw)?;
            for c in 0..3 {
                for y in 0..ch {
                    let src = &cell.data()[(c * ch + y) * cw..(c * ch + y + 1) * cw];
                    let at = (c * gh + r * ch + y) * gw + col * cw;
                    grid.data_mut()[at..at + cw].copy_from_slice(src);
                }
            }
        }
    }
    Ok(grid)
}
