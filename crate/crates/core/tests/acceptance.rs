//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ulw::datakit::{build_synthetic_dataset, load_image, load_pairs, split_dataset, SplitSpec, SynthConfig};
use ulw::diffcore::{grad_check, Conv2dSpec, GradCheckOptions, Graph, Padding, Tensor, Var};
use ulw::netblocks::wiener::inverse_softplus;
use ulw::netblocks::{wiener_apply, wiener_forward, Preset, UNetConfig, WienerConfig, WienerParams};
use ulw::objective::{mse_loss, perceptual_loss, ssim_loss, FeatureExtractor};
use ulw::quality::{ciede2000, evaluate_pairs, mse, psnr, srgb_to_lab, ssim_metric, LabColor, MetricsReport};
use ulw::runner::{desmoke, load_checkpoint, save_checkpoint, train, Checkpoint, DesmokeOptions, TrainConfig};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).expect("scratch directory");
    dir
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

// ---------------------------------------------------------------- gradient

type Forward = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> ulw::Result<Var>>;

struct GradCase {
    name: &'static str,
    inputs: Vec<(Vec<usize>, f64, f64)>,
    tol: f64,
    f: Forward,
}

fn case(name: &'static str, inputs: &[(&[usize], f64, f64)], tol: f64, f: Forward) -> GradCase {
    GradCase { name, inputs: inputs.iter().map(|(s, lo, hi)| (s.to_vec(), *lo, *hi)).collect(), tol, f }
}

fn grad_cases() -> Vec<GradCase> {
    const X: f64 = -1.0;
    let img: &[usize] = &[1, 3, 12, 12];
    let ext = FeatureExtractor::<f64>::default();
    vec![
        case("conv2d same+bias", &[(&[2, 3, 6, 6], X, 1.0), (&[4, 3, 3, 3], X, 1.0), (&[4], X, 1.0)], 1e-4,
            Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec::same()))),
        case("conv2d valid stride 2", &[(&[1, 2, 7, 7], X, 1.0), (&[3, 2, 3, 3], X, 1.0)], 1e-4,
            Box::new(|g, v| g.conv2d(v[0], v[1], None, Conv2dSpec::valid().stride(2)))),
        case("conv2d grouped replicate", &[(&[1, 4, 6, 6], X, 1.0), (&[4, 2, 3, 3], X, 1.0), (&[4], X, 1.0)], 1e-4,
            Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec::same().groups(2).padding(Padding::Replicate)))),
        case("conv_transpose2d s2 k2", &[(&[1, 3, 4, 4], X, 1.0), (&[3, 2, 2, 2], X, 1.0), (&[2], X, 1.0)], 1e-4,
            Box::new(|g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), 2))),
        case("conv_transpose2d s1 k3", &[(&[1, 2, 5, 5], X, 1.0), (&[2, 3, 3, 3], X, 1.0)], 1e-4,
            Box::new(|g, v| g.conv_transpose2d(v[0], v[1], None, 1))),
        case("max_pool2d", &[(&[1, 2, 6, 6], X, 1.0)], 1e-3, Box::new(|g, v| g.max_pool2d(v[0]))),
        case("relu", &[(&[2, 3, 4, 4], X, 1.0)], 1e-3, Box::new(|g, v| g.relu(v[0]))),
        case("sigmoid", &[(&[2, 3, 4, 4], -4.0, 4.0)], 1e-4, Box::new(|g, v| g.sigmoid(v[0]))),
        case("softplus", &[(&[2, 3, 4, 4], -4.0, 4.0)], 1e-4, Box::new(|g, v| g.softplus(v[0]))),
        case("square", &[(&[2, 3, 4, 4], X, 1.0)], 1e-4, Box::new(|g, v| g.square(v[0]))),
        case("add_scalar", &[(&[3, 5], X, 1.0)], 1e-4, Box::new(|g, v| g.add_scalar(v[0], 0.7))),
        case("mul_scalar", &[(&[3, 5], X, 1.0)], 1e-4, Box::new(|g, v| g.mul_scalar(v[0], -1.3))),
        case("add", &[(&[3, 5], X, 1.0), (&[3, 5], X, 1.0)], 1e-4, Box::new(|g, v| g.add(v[0], v[1]))),
        case("sub", &[(&[3, 5], X, 1.0), (&[3, 5], X, 1.0)], 1e-4, Box::new(|g, v| g.sub(v[0], v[1]))),
        case("mul", &[(&[3, 5], X, 1.0), (&[3, 5], X, 1.0)], 1e-4, Box::new(|g, v| g.mul(v[0], v[1]))),
        case("mul broadcast", &[(&[3, 5], X, 1.0), (&[1], X, 1.0)], 1e-4, Box::new(|g, v| g.mul(v[0], v[1]))),
        case("div", &[(&[3, 5], X, 1.0), (&[3, 5], 0.5, 1.5)], 1e-4, Box::new(|g, v| g.div(v[0], v[1]))),
        case("add_channel", &[(&[2, 3, 4, 4], X, 1.0), (&[3], X, 1.0)], 1e-4, Box::new(|g, v| g.add_channel(v[0], v[1]))),
        case("concat_channels", &[(&[2, 2, 3, 3], X, 1.0), (&[2, 3, 3, 3], X, 1.0)], 1e-4,
            Box::new(|g, v| g.concat_channels(v[0], v[1]))),
        case("mean", &[(&[2, 3, 4], X, 1.0)], 1e-4, Box::new(|g, v| g.mean(v[0]))),
        case("wiener layer", &[(&[1, 3, 8, 8], 0.0, 1.0), (&[3, 1, 5, 5], 0.0, 0.08), (&[3], -5.0, -1.0)], 1e-4,
            Box::new(|g, v| wiener_forward(g, v[0], v[1], v[2], 1e-6))),
        case("mse loss", &[(img, 0.0, 1.0)], 1e-3, Box::new(|g, v| {
            let t = g.constant(target(g.value(v[0]).shape()));
            mse_loss(g, v[0], t)
        })),
        case("ssim loss", &[(img, 0.0, 1.0)], 1e-3, Box::new(|g, v| {
            let t = g.constant(target(g.value(v[0]).shape()));
            ssim_loss(g, v[0], t)
        })),
        case("perceptual loss", &[(img, 0.0, 1.0)], 1e-3, Box::new(move |g, v| {
            let t = g.constant(target(g.value(v[0]).shape()));
            perceptual_loss(g, v[0], t, &ext)
        })),
    ]
}

fn target(shape: &[usize]) -> Tensor<f64> {
    uniform(shape, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(4242))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let (mut checks, mut worst) = (0usize, 0.0f64);
    for c in grad_cases() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 * seed + c.name.len() as u64);
            let inputs: Vec<Tensor<f64>> = c.inputs.iter().map(|(s, lo, hi)| uniform(s, *lo, *hi, &mut rng)).collect();
            let f = &c.f;
            // contract the output with fixed random weights so every element matters
            let rep = grad_check(
                |g, v| {
                    let y = f(g, v)?;
                    let mut r = ChaCha8Rng::seed_from_u64(seed + 77);
                    let w = g.constant(uniform(g.value(y).shape(), -1.0, 1.0, &mut r));
                    let p = g.mul(y, w)?;
                    g.mean(p)
                },
                &inputs,
                GradCheckOptions { tol: c.tol, ..Default::default() },
            )
            .map_err(|e| format!("{} seed {seed}: {e}", c.name))?;
            worst = worst.max(rep.max_rel_err() / c.tol);
            ensure(rep.passed(), || format!("{} seed {seed}: max rel err {:.3e} > {:.0e}", c.name, rep.max_rel_err(), c.tol))?;
            checks += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("suite took {secs:.1}s (limit 120s)"))?;
    Ok(format!("{checks} op×seed checks, worst err/tol {worst:.3}, {secs:.1}s"))
}

// ------------------------------------------------------------------ metric

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
    let s = ssim_metric(&a, &a).map_err(|e| e.to_string())?;
    ensure((s - 1.0).abs() <= 1e-6, || format!("SSIM(a,a) = {s}"))?;

    let lo = Tensor::full(&[3, 16, 16], 0.4);
    let hi = lo.map(|v| v + 0.1);
    let p = psnr(&lo, &hi, 1.0).map_err(|e| e.to_string())?;
    ensure((p - 20.0).abs() <= 1e-9, || format!("uniform 0.1 PSNR = {p}"))?;

    let b = uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
    let (m, p) = (mse(&a, &b).map_err(|e| e.to_string())?, psnr(&a, &b, 1.0).map_err(|e| e.to_string())?);
    ensure((p - 10.0 * (1.0 / m).log10()).abs() <= 1e-9, || format!("PSNR/MSE identity broken: {p} vs mse {m}"))?;

    let mut worst = 0.0f64;
    for (i, &(l1, a1, b1, l2, a2, b2, want)) in common::SHARMA.iter().enumerate() {
        let oracle = common::de00_oracle(l1, a1, b1, l2, a2, b2);
        let got = ciede2000(LabColor::new(l1, a1, b1), LabColor::new(l2, a2, b2));
        worst = worst.max((got - want).abs());
        ensure((oracle - want).abs() <= 1e-4 && (got - oracle).abs() <= 1e-4 && (got - want).abs() <= 1e-4, || {
            format!("CIEDE-2000 pair {}: got {got}, oracle {oracle}, table {want}", i + 1)
        })?;
    }
    let w = srgb_to_lab([1.0, 1.0, 1.0]);
    ensure((w.l - 100.0).abs() <= 0.01, || format!("white L = {}", w.l))?;
    Ok(format!("SSIM(a,a)-1 = {:.1e}, 34/34 CIEDE-2000 pairs (max |Δ| {worst:.1e}), white L = {:.4}", s - 1.0, w.l))
}

// ------------------------------------------------------------------ wiener

fn wiener_behaviour() -> Outcome {
    let base = WienerParams::<f64>::init(&WienerConfig::default()).map_err(|e| e.to_string())?;
    let filtered = |x: &Tensor<f64>, p: &WienerParams<f64>| -> Tensor<f64> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let kv = g.constant(p.kernels.clone());
        let s = g.conv2d(xv, kv, None, Conv2dSpec::same().groups(3).padding(Padding::Replicate)).unwrap();
        g.value(s).clone()
    };
    let with_var = |var: f64| {
        let mut p = base.clone();
        p.theta = Tensor::full(&[3], inverse_softplus(var));
        p
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut gains = 0usize;
    for var in [1e-4, 1e-2, 0.1, 1.0, 1e6] {
        let p = with_var(var);
        for _ in 0..5 {
            let x = uniform(&[1, 3, 16, 16], 0.0, 1.0, &mut rng);
            let s = filtered(&x, &p);
            let y = wiener_apply(&x, &p).map_err(|e| e.to_string())?;
            for (&sv, &yv) in s.data().iter().zip(y.data()) {
                let pw = sv * sv;
                let gain = pw / (pw + var + 1e-6);
                ensure((0.0..1.0).contains(&gain), || format!("gain {gain} outside [0,1)"))?;
                ensure(yv.abs() <= sv.abs(), || format!("|out| {yv} > |s| {sv}"))?;
                gains += 1;
            }
        }
    }
    let x = uniform(&[1, 3, 16, 16], 0.0, 1.0, &mut rng);
    let suppressed = wiener_apply(&x, &with_var(1e6)).map_err(|e| e.to_string())?;
    let max_out = suppressed.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure(max_out <= 1e-5, || format!("max |x̂| = {max_out} at σ² = 1e6"))?;

    let var = base.noise_variance()[0];
    let mut worst = 0.0f64;
    for c in [0.05, 0.3, 0.7, 1.0] {
        let y = wiener_apply(&Tensor::full(&[1, 3, 9, 9], c), &base).map_err(|e| e.to_string())?;
        let expect = c * c * c / (c * c + var + 1e-6);
        worst = y.data().iter().fold(worst, |m, v| m.max((v - expect).abs()));
    }
    ensure(worst <= 1e-6, || format!("constant-input closed form off by {worst}"))?;
    Ok(format!("{gains} gains in [0,1), max |x̂| = {max_out:.2e} at σ²=1e6, closed-form err {worst:.1e}"))
}

// ----------------------------------------------------------------- overfit

/// Depth 2, base 8, 64 px; every other training flag keeps its default.
fn overfit_config(preset: Preset, data: &Path, ckpt: &Path, steps: usize) -> TrainConfig {
    let mut c = TrainConfig::new(preset, data, ckpt);
    c.unet = UNetConfig { depth: 2, base_channels: 8, ..UNetConfig::default() };
    c.image_size = 64;
    c.steps = steps;
    c
}

fn overfit_reproduction() -> Outcome {
    let start = Instant::now();
    let dir = scratch("overfit");
    let data = dir.join("data");
    build_synthetic_dataset(&SynthConfig { count: 8, size: 64, seed: 7, ..SynthConfig::default() }, &data).map_err(|e| e.to_string())?;
    let ckpt = dir.join("model.ulwk");
    let mut log = Vec::new();
    let out = train(&overfit_config(Preset::Ulw, &data, &ckpt, 300), &mut log).map_err(|e| e.to_string())?;
    fs::write(dir.join("train.log"), &log).map_err(|e| e.to_string())?;
    let (l0, l1) = (out.initial.total, out.last.total);
    ensure(l1 < 0.2 * l0, || format!("final loss {l1} not < 0.2 × initial {l0}"))?;

    let opts = DesmokeOptions { resize: false, dump_grid: Some(dir.join("grid.png")) };
    desmoke(&ckpt, &data, &dir.join("out"), &opts, &mut Vec::new()).map_err(|e| e.to_string())?;
    let pairs = load_pairs(&data, None).map_err(|e| e.to_string())?;
    let mut margins = Vec::new();
    for p in &pairs {
        let restored = load_image(&dir.join("out").join(format!("{}.png", p.id))).map_err(|e| e.to_string())?;
        let before = ssim_metric(&p.smoky, &p.clean).map_err(|e| e.to_string())?;
        let after = ssim_metric(&restored, &p.clean).map_err(|e| e.to_string())?;
        ensure(after > before, || format!("pair {}: SSIM(out,clean) {after:.4} <= SSIM(smoky,clean) {before:.4}", p.id))?;
        margins.push(after - before);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 600.0, || format!("took {secs:.0}s (limit 600s)"))?;
    let min = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(format!("loss {l0:.4} -> {l1:.4} (ratio {:.3}), SSIM gain on {}/8 pairs (min +{min:.4}), {secs:.0}s", l1 / l0, margins.len()))
}

// ---------------------------------------------------------------- ablation

fn ablation_direction() -> Outcome {
    let dir = scratch("ablation");
    let (train_dir, test_dir) = (dir.join("train"), dir.join("test"));
    let synth = SynthConfig { count: 32, size: 64, seed: 11, ..SynthConfig::default() };
    build_synthetic_dataset(&synth, &train_dir).map_err(|e| e.to_string())?;
    build_synthetic_dataset(&SynthConfig { count: 8, start_index: 32, ..synth }, &test_dir).map_err(|e| e.to_string())?;

    let mut means = Vec::new();
    for preset in [Preset::Base, Preset::Ulw] {
        let ckpt = dir.join(format!("{preset}.ulwk"));
        let mut cfg = overfit_config(preset, &train_dir, &ckpt, 500);
        cfg.seed = 11;
        train(&cfg, &mut Vec::new()).map_err(|e| e.to_string())?;
        let out = dir.join(format!("out_{preset}"));
        desmoke(&ckpt, &test_dir, &out, &DesmokeOptions::default(), &mut Vec::new()).map_err(|e| e.to_string())?;
        let report: MetricsReport = evaluate_pairs(&out, &test_dir).map_err(|e| e.to_string())?;
        ensure(report.rows.len() == 8 && report.skipped.is_empty(), || format!("{preset}: report has {} rows", report.rows.len()))?;
        let csv = dir.join(format!("ablation_{preset}.csv"));
        report.write_csv(&csv).map_err(|e| e.to_string())?;
        means.push(report.mean().expect("rows")[0]);
    }
    let (base, ulw) = (means[0], means[1]);
    ensure(ulw >= base - 0.005, || format!("ulw test SSIM {ulw:.4} < base {base:.4} - 0.005"))?;
    Ok(format!("test SSIM ulw {ulw:.4} vs base {base:.4} (Δ {:+.4}); CSVs in {}", ulw - base, dir.display()))
}

// ------------------------------------------------------------- determinism

fn determinism_and_formats() -> Outcome {
    let dir = scratch("determinism");
    let data = dir.join("data");
    build_synthetic_dataset(&SynthConfig { count: 4, size: 32, seed: 7, ..SynthConfig::default() }, &data).map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let ckpt = dir.join(format!("{name}.ulwk"));
        let mut cfg = overfit_config(Preset::Ulw, &data, &ckpt, 12);
        cfg.image_size = 32;
        cfg.seed = 7;
        let mut log = Vec::new();
        train(&cfg, &mut log).map_err(|e| e.to_string())?;
        let out = dir.join(format!("out_{name}"));
        let s = desmoke(&ckpt, &data, &out, &DesmokeOptions::default(), &mut Vec::new()).map_err(|e| e.to_string())?;
        let images: Vec<Vec<u8>> = s.written.iter().map(|p| fs::read(p).unwrap()).collect();
        let log = String::from_utf8(log).unwrap().replace(&format!("{name}.ulwk"), "CKPT");
        runs.push((fs::read(&ckpt).map_err(|e| e.to_string())?, log, images));
    }
    ensure(runs[0].0 == runs[1].0, || "checkpoints differ between same-seed runs".into())?;
    ensure(runs[0].1 == runs[1].1, || "logs differ between same-seed runs".into())?;
    ensure(runs[0].2 == runs[1].2, || "output PNGs differ between same-seed runs".into())?;

    let ckpt = load_checkpoint(&dir.join("a.ulwk")).map_err(|e| e.to_string())?;
    let again = dir.join("again.ulwk");
    save_checkpoint(&ckpt, &again).map_err(|e| e.to_string())?;
    ensure(fs::read(&again).unwrap() == runs[0].0, || "checkpoint save/load/save not bitwise stable".into())?;

    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_v1.ulwk");
    let g: Checkpoint = load_checkpoint(&golden).map_err(|e| e.to_string())?;
    ensure(g.params.get("gamma").map(|t| t.data().to_vec()) == Some(vec![42.0]), || "golden checkpoint content".into())?;
    let future = load_checkpoint(&golden.with_file_name("future_v2.ulwk"));
    ensure(matches!(future, Err(ulw::Error::Version { .. })), || "future version not rejected explicitly".into())?;

    let ids: Vec<usize> = (0..961).collect();
    let s = split_dataset(&ids, &SplitSpec::default()).map_err(|e| e.to_string())?;
    let sizes = (s.train.len(), s.val.len(), s.test.len());
    ensure(sizes == (768, 96, 97), || format!("961 split into {sizes:?}"))?;
    Ok(format!("2 runs bitwise identical ({} B checkpoint, {} PNGs), golden v1 loads, split 961 -> {sizes:?}", runs[0].0.len(), runs[0].2.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 6] = [
        ("gradient suite", gradient_suite),
        ("metric oracles", metric_oracles),
        ("wiener layer behaviour", wiener_behaviour),
        ("overfit reproduction", overfit_reproduction),
        ("ablation direction", ablation_direction),
        ("determinism & formats", determinism_and_formats),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        match result {
            Ok(detail) => println!("acceptance: {name:<24} PASS  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("acceptance: {name:<24} FAIL  {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 6 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
