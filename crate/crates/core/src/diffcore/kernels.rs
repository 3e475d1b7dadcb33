//! Raw numeric kernels behind the graph operations.
//!
//! Every convolution is expressed as a padding step followed by a "valid"
//! strided correlation, so forward, input-gradient and weight-gradient
//! passes share one loop structure. Accumulation order is fixed, which makes
//! results bitwise reproducible.

use crate::scalar::Scalar;

/// Border handling for a convolution input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding; output shrinks by `k - 1`.
    Valid,
    /// "Same" padding of `(k - 1) / 2` zeros on every side.
    Zero,
    /// "Same" padding that repeats the nearest edge pixel.
    Replicate,
}

impl Padding {
    pub fn amount(self, k: usize) -> usize {
        match self {
            Padding::Valid => 0,
            Padding::Zero | Padding::Replicate => (k - 1) / 2,
        }
    }
}

/// Geometry of a valid correlation over pre-padded planes.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub groups: usize,
    pub k: usize,
    pub stride: usize,
    /// Padded input height/width.
    pub hp: usize,
    pub wp: usize,
    /// Output height/width.
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(batch: usize, cin: usize, cout: usize, groups: usize, k: usize, stride: usize, hp: usize, wp: usize) -> Self {
        Self {
            batch,
            cin,
            cout,
            groups,
            k,
            stride,
            hp,
            wp,
            ho: (hp - k) / stride + 1,
            wo: (wp - k) / stride + 1,
        }
    }
}

/// Pads each of `planes` `h×w` planes by `p` on every side.
pub(crate) fn pad_planes<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, p: usize, mode: Padding) -> Vec<T> {
    if p == 0 {
        return x.to_vec();
    }
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![T::zero(); planes * hp * wp];
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        let dst = &mut out[pl * hp * wp..(pl + 1) * hp * wp];
        for y in 0..hp {
            let sy = match mode {
                Padding::Replicate => y.saturating_sub(p).min(h - 1),
                _ => {
                    if y < p || y >= h + p {
                        continue;
                    }
                    y - p
                }
            };
            let row = &src[sy * w..(sy + 1) * w];
            let drow = &mut dst[y * wp..(y + 1) * wp];
            drow[p..p + w].copy_from_slice(row);
            if mode == Padding::Replicate {
                for v in &mut drow[..p] {
                    *v = row[0];
                }
                for v in &mut drow[p + w..] {
                    *v = row[w - 1];
                }
            }
        }
    }
    out
}

/// Adjoint of [`pad_planes`]: folds a gradient over padded planes back onto
/// the unpadded planes.
pub(crate) fn fold_padded_grad<T: Scalar>(gp: &[T], planes: usize, h: usize, w: usize, p: usize, mode: Padding) -> Vec<T> {
    if p == 0 {
        return gp.to_vec();
    }
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![T::zero(); planes * h * w];
    for pl in 0..planes {
        let src = &gp[pl * hp * wp..(pl + 1) * hp * wp];
        let dst = &mut out[pl * h * w..(pl + 1) * h * w];
        match mode {
            Padding::Replicate => {
                for y in 0..hp {
                    let dy = y.saturating_sub(p).min(h - 1);
                    for x in 0..wp {
                        let dx = x.saturating_sub(p).min(w - 1);
                        dst[dy * w + dx] += src[y * wp + x];
                    }
                }
            }
            _ => {
                for y in 0..h {
                    dst[y * w..(y + 1) * w].copy_from_slice(&src[(y + p) * wp + p..(y + p) * wp + p + w]);
                }
            }
        }
    }
    out
}

#[inline]
fn dot_strided<T: Scalar>(a: &[T], b: &[T], stride: usize) -> T {
    if stride == 1 {
        let n = a.len();
        let (mut s0, mut s1, mut s2, mut s3) = (T::zero(), T::zero(), T::zero(), T::zero());
        let chunks = n / 4;
        for i in 0..chunks {
            let j = i * 4;
            s0 += a[j] * b[j];
            s1 += a[j + 1] * b[j + 1];
            s2 += a[j + 2] * b[j + 2];
            s3 += a[j + 3] * b[j + 3];
        }
        let mut tail = T::zero();
        for j in chunks * 4..n {
            tail += a[j] * b[j];
        }
        (s0 + s1) + (s2 + s3) + tail
    } else {
        let mut s = T::zero();
        for (i, &av) in a.iter().enumerate() {
            s += av * b[i * stride];
        }
        s
    }
}

/// `out[b, co] += Σ w[co, ci, ky, kx] · xp[b, ci, oy·s + ky, ox·s + kx]`.
///
/// `out` must already hold the bias (or zeros).
pub(crate) fn correlate<T: Scalar>(xp: &[T], w: &[T], g: &ConvGeom, out: &mut [T]) {
    let cin_g = g.cin / g.groups;
    let cout_g = g.cout / g.groups;
    let (k, s) = (g.k, g.stride);
    let in_plane = g.hp * g.wp;
    let out_plane = g.ho * g.wo;
    for b in 0..g.batch {
        for co in 0..g.cout {
            let grp = co / cout_g;
            let oplane = &mut out[(b * g.cout + co) * out_plane..][..out_plane];
            for cl in 0..cin_g {
                let ci = grp * cin_g + cl;
                let iplane = &xp[(b * g.cin + ci) * in_plane..][..in_plane];
                let wbase = (co * cin_g + cl) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w[wbase + ky * k + kx];
                        for oy in 0..g.ho {
                            let orow = &mut oplane[oy * g.wo..(oy + 1) * g.wo];
                            let start = (oy * s + ky) * g.wp + kx;
                            if s == 1 {
                                let irow = &iplane[start..start + g.wo];
                                for (o, &i) in orow.iter_mut().zip(irow) {
                                    *o += wv * i;
                                }
                            } else {
                                for (ox, o) in orow.iter_mut().enumerate() {
                                    *o += wv * iplane[start + ox * s];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`correlate`] with respect to its input: scatters `gy` back
/// onto padded planes `gxp` (accumulating).
pub(crate) fn correlate_adjoint_input<T: Scalar>(gy: &[T], w: &[T], g: &ConvGeom, gxp: &mut [T]) {
    let cin_g = g.cin / g.groups;
    let cout_g = g.cout / g.groups;
    let (k, s) = (g.k, g.stride);
    let in_plane = g.hp * g.wp;
    let out_plane = g.ho * g.wo;
    for b in 0..g.batch {
        for co in 0..g.cout {
            let grp = co / cout_g;
            let gplane = &gy[(b * g.cout + co) * out_plane..][..out_plane];
            for cl in 0..cin_g {
                let ci = grp * cin_g + cl;
                let iplane = &mut gxp[(b * g.cin + ci) * in_plane..][..in_plane];
                let wbase = (co * cin_g + cl) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w[wbase + ky * k + kx];
                        for oy in 0..g.ho {
                            let grow = &gplane[oy * g.wo..(oy + 1) * g.wo];
                            let start = (oy * s + ky) * g.wp + kx;
                            if s == 1 {
                                let irow = &mut iplane[start..start + g.wo];
                                for (i, &gv) in irow.iter_mut().zip(grow) {
                                    *i += wv * gv;
                                }
                            } else {
                                for (ox, &gv) in grow.iter().enumerate() {
                                    iplane[start + ox * s] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`correlate`] with respect to its weights (accumulating into `gw`).
pub(crate) fn correlate_adjoint_weight<T: Scalar>(gy: &[T], xp: &[T], g: &ConvGeom, gw: &mut [T]) {
    let cin_g = g.cin / g.groups;
    let cout_g = g.cout / g.groups;
    let (k, s) = (g.k, g.stride);
    let in_plane = g.hp * g.wp;
    let out_plane = g.ho * g.wo;
    let span = (g.wo - 1) * s + 1;
    for co in 0..g.cout {
        let grp = co / cout_g;
        for cl in 0..cin_g {
            let ci = grp * cin_g + cl;
            let wbase = (co * cin_g + cl) * k * k;
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = T::zero();
                    for b in 0..g.batch {
                        let gplane = &gy[(b * g.cout + co) * out_plane..][..out_plane];
                        let iplane = &xp[(b * g.cin + ci) * in_plane..][..in_plane];
                        for oy in 0..g.ho {
                            let start = (oy * s + ky) * g.wp + kx;
                            acc += dot_strided(&gplane[oy * g.wo..(oy + 1) * g.wo], &iplane[start..start + span], s);
                        }
                    }
                    gw[wbase + ky * k + kx] += acc;
                }
            }
        }
    }
}

/// Sum of each channel plane over batch and space: the bias gradient.
pub(crate) fn channel_sums<T: Scalar>(gy: &[T], batch: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); channels];
    for b in 0..batch {
        for (c, o) in out.iter_mut().enumerate() {
            let p = &gy[(b * channels + c) * plane..][..plane];
            *o += p.iter().copied().sum::<T>();
        }
    }
    out
}

/// Writes `bias[c]` into every element of channel `c`.
pub(crate) fn broadcast_bias<T: Scalar>(bias: Option<&[T]>, batch: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); batch * channels * plane];
    if let Some(bias) = bias {
        for b in 0..batch {
            for c in 0..channels {
                out[(b * channels + c) * plane..][..plane].fill(bias[c]);
            }
        }
    }
    out
}
