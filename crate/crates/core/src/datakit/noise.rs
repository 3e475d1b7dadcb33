/// SplitMix64 finaliser; used for lattice hashing and per-item sub-seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for item `index` of a run seeded with `seed`.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    mix(mix(seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

fn lattice(seed: u64, octave: u32, x: i64, y: i64) -> f64 {
    let h = mix(seed ^ mix(u64::from(octave) ^ mix((x as u64) ^ mix(y as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Multi-octave value noise on an `h × w` grid, row-major, in `[0, 1]`.
///
/// `scale` is the lattice spacing of the first octave in pixels; each further
/// octave halves the spacing and the amplitude.
pub fn gen_fractal_noise(h: usize, w: usize, octaves: u32, scale: f64, seed: u64) -> Vec<f64> {
    let octaves = octaves.max(1);
    let scale = scale.max(1e-6);
    let norm: f64 = (0..octaves).map(|o| 0.5f64.powi(o as i32)).sum();
    let mut field = vec![0.0; h * w];
    for o in 0..octaves {
        let amp = 0.5f64.powi(o as i32) / norm;
        let spacing = scale / f64::from(1u32 << o.min(31));
        for y in 0..h {
            let fy = y as f64 / spacing;
            let (y0, ty) = (fy.floor() as i64, smoothstep(fy - fy.floor()));
            for x in 0..w {
                let fx = x as f64 / spacing;
                let (x0, tx) = (fx.floor() as i64, smoothstep(fx - fx.floor()));
                let v = |dx: i64, dy: i64| lattice(seed, o, x0 + dx, y0 + dy);
                let top = v(0, 0) + (v(1, 0) - v(0, 0)) * tx;
                let bot = v(0, 1) + (v(1, 1) - v(0, 1)) * tx;
                field[y * w + x] += amp * (top + (bot - top) * ty);
            }
        }
    }
    field.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    field
}
