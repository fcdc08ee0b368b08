//! Truncated 2-D Fourier transforms used by spectral convolution layers.
//!
//! Fields are channel-last, `[batch, n1, n2, channels]`. Only the retained
//! modes are ever formed: rows `[0, k)` and `[n1 - k, n1)` of the first axis
//! crossed with columns `[0, k)` of the half spectrum along the second axis.
//! Where the two row blocks overlap, the upper block owns the row.
//!
//! With few retained modes the transforms are cheapest as dense products
//! against precomputed cosine/sine tables, one small matrix product per grid
//! row and per batch entry.

use num_complex::Complex64;

use super::gemm::{gemm, View};
use crate::error::{Error, Result};

/// Which weight block a retained row belongs to and its index inside the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetainedRow {
    pub row: usize,
    pub block: usize,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct SpectralPlan {
    n1: usize,
    n2: usize,
    k: usize,
    rows: Vec<RetainedRow>,
    /// `2k x n2`: `cos` rows then `-sin` rows of the second-axis analysis.
    fwd2: Vec<f64>,
    /// `n2 x 2k`: weighted, normalized synthesis along the second axis.
    inv2: Vec<f64>,
    /// `nr x n1` cosines and sines of the retained first-axis modes.
    cos1: Vec<f64>,
    sin1: Vec<f64>,
    neg_sin1: Vec<f64>,
}

impl SpectralPlan {
    pub fn new(n1: usize, n2: usize, k: usize) -> Result<Self> {
        if k == 0 || k > n1 / 2 + 1 || k > n2 / 2 + 1 {
            return Err(Error::invalid(format!(
                "{k} Fourier modes exceed the Nyquist bound of a {n1}x{n2} grid"
            )));
        }
        let mut rows = Vec::new();
        for r in 0..n1 {
            if r + k >= n1 {
                rows.push(RetainedRow { row: r, block: 1, index: r + k - n1 });
            } else if r < k {
                rows.push(RetainedRow { row: r, block: 0, index: r });
            }
        }
        let tau = 2.0 * std::f64::consts::PI;
        // Reduce the phase index modulo n so large products stay accurate.
        let angle = |a: usize, b: usize, n: usize| tau * ((a * b) % n) as f64 / n as f64;
        let mut fwd2 = vec![0.0; 2 * k * n2];
        let mut inv2 = vec![0.0; n2 * 2 * k];
        let norm = 1.0 / (n1 * n2) as f64;
        for ky in 0..k {
            let wt = column_weight(n2, ky) * norm;
            for q in 0..n2 {
                let (s, c) = angle(ky, q, n2).sin_cos();
                fwd2[ky * n2 + q] = c;
                fwd2[(k + ky) * n2 + q] = -s;
                inv2[q * 2 * k + ky] = wt * c;
                inv2[q * 2 * k + k + ky] = -wt * s;
            }
        }
        let nr = rows.len();
        let (mut cos1, mut sin1) = (vec![0.0; nr * n1], vec![0.0; nr * n1]);
        for (ri, rr) in rows.iter().enumerate() {
            for p in 0..n1 {
                let (s, c) = angle(rr.row, p, n1).sin_cos();
                cos1[ri * n1 + p] = c;
                sin1[ri * n1 + p] = s;
            }
        }
        let neg_sin1 = sin1.iter().map(|v| -v).collect();
        Ok(Self { n1, n2, k, rows, fwd2, inv2, cos1, sin1, neg_sin1 })
    }

    pub fn n1(&self) -> usize {
        self.n1
    }
    pub fn n2(&self) -> usize {
        self.n2
    }
    pub fn modes(&self) -> usize {
        self.k
    }
    pub fn rows(&self) -> &[RetainedRow] {
        &self.rows
    }

    /// Weight of column `ky` when folding the half spectrum back to a real field.
    pub fn column_weight(&self, ky: usize) -> f64 {
        column_weight(self.n2, ky)
    }

    /// Number of retained coefficients per batch entry and channel.
    pub fn coeff_len(&self) -> usize {
        self.rows.len() * self.k
    }

    /// Retained DFT coefficients `Σ x e^{-iθ}`, laid out `[batch, row, ky, channel]`.
    pub fn analyze(&self, x: &[f64], batch: usize, channels: usize) -> Vec<Complex64> {
        let (n1, n2, k, c) = (self.n1, self.n2, self.k, channels);
        let nr = self.rows.len();
        let kc = k * c;
        // Second axis: per grid row, [re; im] stacked as a 2k x C block.
        let mut half = vec![0.0; batch * n1 * 2 * kc];
        for bp in 0..batch * n1 {
            let slab = View::row_major(&x[bp * n2 * c..(bp + 1) * n2 * c], n2, c);
            gemm(View::row_major(&self.fwd2, 2 * k, n2), slab, 0.0, &mut half[bp * 2 * kc..(bp + 1) * 2 * kc], c);
        }
        // First axis at the retained rows: O = (cos - i sin)(R_re + i R_im).
        let mut out = vec![Complex64::new(0.0, 0.0); batch * nr * kc];
        let (mut re, mut im) = (vec![0.0; nr * kc], vec![0.0; nr * kc]);
        let cos = View::row_major(&self.cos1, nr, n1);
        let sin = View::row_major(&self.sin1, nr, n1);
        let nsin = View::row_major(&self.neg_sin1, nr, n1);
        for b in 0..batch {
            let base = &half[b * n1 * 2 * kc..(b + 1) * n1 * 2 * kc];
            let r_re = View { data: base, rows: n1, cols: kc, rs: 2 * kc, cs: 1 };
            let r_im = View { data: &base[kc..], rows: n1, cols: kc, rs: 2 * kc, cs: 1 };
            gemm(cos, r_re, 0.0, &mut re, kc);
            gemm(sin, r_im, 1.0, &mut re, kc);
            gemm(cos, r_im, 0.0, &mut im, kc);
            gemm(nsin, r_re, 1.0, &mut im, kc);
            for (o, (a, b)) in out[b * nr * kc..(b + 1) * nr * kc].iter_mut().zip(re.iter().zip(&im)) {
                *o = Complex64::new(*a, *b);
            }
        }
        out
    }

    /// Real field `Σ w_ky Re(O e^{iθ}) / (n1 n2)` from retained coefficients,
    /// i.e. the inverse real transform of the zero-padded half spectrum.
    pub fn synthesize(&self, coeffs: &[Complex64], batch: usize, channels: usize) -> Vec<f64> {
        let (n1, n2, k, c) = (self.n1, self.n2, self.k, channels);
        let nr = self.rows.len();
        let kc = k * c;
        let mut out = vec![0.0; batch * n1 * n2 * c];
        let (mut re, mut im) = (vec![0.0; nr * kc], vec![0.0; nr * kc]);
        let mut half = vec![0.0; n1 * 2 * kc];
        let cos_t = View::row_major(&self.cos1, nr, n1).t();
        let sin_t = View::row_major(&self.sin1, nr, n1).t();
        let nsin_t = View::row_major(&self.neg_sin1, nr, n1).t();
        for b in 0..batch {
            for (i, z) in coeffs[b * nr * kc..(b + 1) * nr * kc].iter().enumerate() {
                re[i] = z.re;
                im[i] = z.im;
            }
            // First axis: P = (cos + i sin)^T O.
            let o_re = View::row_major(&re, nr, kc);
            let o_im = View::row_major(&im, nr, kc);
            gemm(cos_t, o_re, 0.0, &mut half, 2 * kc);
            gemm(nsin_t, o_im, 1.0, &mut half, 2 * kc);
            gemm(cos_t, o_im, 0.0, &mut half[kc..], 2 * kc);
            gemm(sin_t, o_re, 1.0, &mut half[kc..], 2 * kc);
            // Second axis: weighted real part, one n2 x C slab per grid row.
            for p in 0..n1 {
                let dst = &mut out[(b * n1 + p) * n2 * c..(b * n1 + p + 1) * n2 * c];
                let src = View::row_major(&half[p * 2 * kc..(p + 1) * 2 * kc], 2 * k, c);
                gemm(View::row_major(&self.inv2, n2, 2 * k), src, 0.0, dst, c);
            }
        }
        out
    }
}

fn column_weight(n2: usize, ky: usize) -> f64 {
    if ky == 0 || (n2 % 2 == 0 && ky == n2 / 2) {
        1.0
    } else {
        2.0
    }
}

/// Complex weights of one spectral layer as separate real/imaginary arrays,
/// each `[block][in][out][kx][ky]` flattened per block.
pub struct SpectralWeights<'a> {
    pub re: [&'a [f64]; 2],
    pub im: [&'a [f64]; 2],
}

fn split(z: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    z.iter().map(|v| (v.re, v.im)).unzip()
}

fn join(re: &[f64], im: &[f64]) -> Vec<Complex64> {
    re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect()
}

/// Per-mode views: the `batch x c` coefficient block of mode `m`, and the
/// `c x c` weight block of retained row `rr`, column `ky`.
struct ModeViews {
    batch: usize,
    c: usize,
    k: usize,
    stride: usize,
}

impl ModeViews {
    fn coeffs<'a>(&self, data: &'a [f64], m: usize) -> View<'a> {
        View { data: &data[m * self.c..], rows: self.batch, cols: self.c, rs: self.stride, cs: 1 }
    }
    fn weight<'a>(&self, data: &'a [f64], rr: &RetainedRow, ky: usize) -> View<'a> {
        let kk = self.k * self.k;
        View { data: &data[rr.index * self.k + ky..], rows: self.c, cols: self.c, rs: self.c * kk, cs: kk }
    }
}

/// Channel mixing `O_o = Σ_i X_i W_io` on the retained modes.
pub fn mix(plan: &SpectralPlan, xhat: &[Complex64], w: &SpectralWeights, batch: usize, c: usize) -> Vec<Complex64> {
    let k = plan.k;
    let mv = ModeViews { batch, c, k, stride: plan.rows.len() * k * c };
    let (xr, xi) = split(xhat);
    let nxi: Vec<f64> = xi.iter().map(|v| -v).collect();
    let (mut or, mut oi) = (vec![0.0; xhat.len()], vec![0.0; xhat.len()]);
    for (ri, rr) in plan.rows.iter().enumerate() {
        let (wr, wi) = (w.re[rr.block], w.im[rr.block]);
        for ky in 0..k {
            let m = ri * k + ky;
            let (wr, wi) = (mv.weight(wr, rr, ky), mv.weight(wi, rr, ky));
            gemm(mv.coeffs(&xr, m), wr, 0.0, &mut or[m * c..], mv.stride);
            gemm(mv.coeffs(&nxi, m), wi, 1.0, &mut or[m * c..], mv.stride);
            gemm(mv.coeffs(&xr, m), wi, 0.0, &mut oi[m * c..], mv.stride);
            gemm(mv.coeffs(&xi, m), wr, 1.0, &mut oi[m * c..], mv.stride);
        }
    }
    join(&or, &oi)
}

/// Gradients of the mixing step. `g` holds `∂L/∂Re O + i ∂L/∂Im O`.
/// Returns the same encoding for the input coefficients and accumulates
/// weight gradients into `gw_re` / `gw_im`.
pub fn mix_backward(
    plan: &SpectralPlan,
    xhat: &[Complex64],
    g: &[Complex64],
    w: &SpectralWeights,
    batch: usize,
    c: usize,
    gw_re: &mut [Vec<f64>; 2],
    gw_im: &mut [Vec<f64>; 2],
) -> Vec<Complex64> {
    let k = plan.k;
    let kk = k * k;
    let mv = ModeViews { batch, c, k, stride: plan.rows.len() * k * c };
    let (xr, xi) = split(xhat);
    let (gr, gi) = split(g);
    let ngr: Vec<f64> = gr.iter().map(|v| -v).collect();
    let nxi: Vec<f64> = xi.iter().map(|v| -v).collect();
    let (mut hr, mut hi) = (vec![0.0; xhat.len()], vec![0.0; xhat.len()]);
    let (mut tr, mut ti) = (vec![0.0; c * c], vec![0.0; c * c]);
    for (ri, rr) in plan.rows.iter().enumerate() {
        let b = rr.block;
        for ky in 0..k {
            let m = ri * k + ky;
            let (wr, wi) = (mv.weight(w.re[b], rr, ky).t(), mv.weight(w.im[b], rr, ky).t());
            // g conj(W)^T
            gemm(mv.coeffs(&gr, m), wr, 0.0, &mut hr[m * c..], mv.stride);
            gemm(mv.coeffs(&gi, m), wi, 1.0, &mut hr[m * c..], mv.stride);
            gemm(mv.coeffs(&gi, m), wr, 0.0, &mut hi[m * c..], mv.stride);
            gemm(mv.coeffs(&ngr, m), wi, 1.0, &mut hi[m * c..], mv.stride);
            // conj(X)^T g
            let (xrt, xit) = (mv.coeffs(&xr, m).t(), mv.coeffs(&xi, m).t());
            gemm(xrt, mv.coeffs(&gr, m), 0.0, &mut tr, c);
            gemm(xit, mv.coeffs(&gi, m), 1.0, &mut tr, c);
            gemm(xrt, mv.coeffs(&gi, m), 0.0, &mut ti, c);
            gemm(mv.coeffs(&nxi, m).t(), mv.coeffs(&gr, m), 1.0, &mut ti, c);
            let off = rr.index * k + ky;
            for (io, (a, bb)) in tr.iter().zip(&ti).enumerate() {
                gw_re[b][off + io * kk] += a;
                gw_im[b][off + io * kk] += bb;
            }
        }
    }
    join(&hr, &hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct double-sum DFT at a single mode.
    fn dft(x: &[f64], n1: usize, n2: usize, kx: usize, ky: usize) -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        for p in 0..n1 {
            for q in 0..n2 {
                let th = -2.0 * std::f64::consts::PI * (kx as f64 * p as f64 / n1 as f64 + ky as f64 * q as f64 / n2 as f64);
                s += x[p * n2 + q] * Complex64::new(th.cos(), th.sin());
            }
        }
        s
    }

    #[test]
    fn analyze_matches_direct_dft() {
        let (n1, n2, k) = (7, 6, 3);
        let plan = SpectralPlan::new(n1, n2, k).unwrap();
        let x: Vec<f64> = (0..n1 * n2).map(|i| ((i * 37 % 11) as f64).sin()).collect();
        let xh = plan.analyze(&x, 1, 1);
        for (ri, rr) in plan.rows().iter().enumerate() {
            for ky in 0..k {
                let d = dft(&x, n1, n2, rr.row, ky);
                assert!((xh[ri * k + ky] - d).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn row_ownership_with_overlap() {
        let plan = SpectralPlan::new(4, 4, 3).unwrap();
        let owners: Vec<(usize, usize)> = plan.rows().iter().map(|r| (r.row, r.block)).collect();
        assert_eq!(owners, vec![(0, 0), (1, 1), (2, 1), (3, 1)]);
        assert!(SpectralPlan::new(8, 8, 6).is_err());
        assert!(SpectralPlan::new(8, 8, 0).is_err());
    }

    #[test]
    fn synthesize_inverts_band_limited_fields() {
        for (n1, n2, k) in [(8, 8, 5), (9, 7, 4), (6, 10, 4)] {
            let plan = SpectralPlan::new(n1, n2, k).unwrap();
            // Build a real field from a few retained modes.
            let mut x = vec![0.0; n1 * n2];
            for p in 0..n1 {
                for q in 0..n2 {
                    let t1 = 2.0 * std::f64::consts::PI * p as f64 / n1 as f64;
                    let t2 = 2.0 * std::f64::consts::PI * q as f64 / n2 as f64;
                    x[p * n2 + q] = 0.3 + (t1 + 2.0 * t2).cos() - 0.5 * (2.0 * t1 - t2).sin() + t2.cos();
                }
            }
            let back = plan.synthesize(&plan.analyze(&x, 1, 1), 1, 1);
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-10, "{n1}x{n2}: {a} vs {b}");
            }
        }
    }
}
