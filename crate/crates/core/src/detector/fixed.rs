//! Bit-accurate fixed-point datapath.
//!
//! Stage formats come from [`WidthLedger`]. Each PE output is quantized once:
//! accumulator-mode products (`Λa`, `Φ` and `c`) add into the accumulator
//! format in column order, rank-one updates subtract one quantized product
//! per entry, and inner products go through the balanced adder tree. The
//! score module evaluates `N` and `D` exactly from its inputs and rounds
//! each once.

use super::{CVec, Datapath, DetectorConfig, FixedScore, IndexScore, Mitigation, SyncSequence, Threshold};
use crate::fxp::{
    fx_cadd, fx_cmac, fx_cmul_conj, fx_cshift, fx_csub, fx_mul, fx_norm_sqr, FxComplex, FxReal, WidthLedger,
};
use crate::kernels::{
    inv_sqrt, prng_vector, pseudonorm_apply, pseudonorm_exponent, tree_reduce, tree_reduce_complex, InvSqrtLut,
    XorshiftPair,
};
use crate::{B, I_MAX, K};

pub type FxVec = [FxComplex; B];
/// Row-major `B × B` matrix.
pub type FxMat = [[FxComplex; B]; B];

/// RMS per complex receive entry after the block AGC.
pub const AGC_TARGET_RMS: f64 = 0.5;

/// `log2(K)`: `‖s‖² Φ` is a left shift.
const K_SHIFT: i32 = K.trailing_zeros() as i32;

/// `1 − |b̃|²` below `2^-16` drops the second column.
const COLLINEAR_SHIFT: u32 = 16;

/// Gain that brings the stream's mean power per complex entry to
/// `target_rms²`. Zero streams get unit gain.
pub fn block_agc_gain(stream: &[CVec], target_rms: f64) -> f64 {
    let n = stream.len() * B;
    if n == 0 {
        return 1.0;
    }
    let p: f64 = stream.iter().flat_map(|y| y.iter()).map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
    if p > 0.0 {
        target_rms / p.sqrt()
    } else {
        1.0
    }
}

fn zero_vec(w: &WidthLedger) -> FxVec {
    [FxComplex::zero(w.acc); B]
}

fn zero_mat(w: &WidthLedger) -> FxMat {
    [zero_vec(w); B]
}

fn mirror_upper(m: &mut FxMat) {
    for i in 0..B {
        let d = m[i][i];
        m[i][i] = FxComplex::new(d.re, d.re.fmt().zero());
        for j in i + 1..B {
            m[j][i] = m[i][j].conj();
        }
    }
}

pub fn is_hermitian(m: &FxMat) -> bool {
    (0..B).all(|i| (0..B).all(|j| m[i][j] == m[j][i].conj()))
}

pub fn ingest(y: &CVec, gain: f64, w: &WidthLedger) -> FxVec {
    y.map(|z| FxComplex::quantize(z * gain, w.input))
}

/// `Φ = Σ_k y_k y_kᴴ`, products accumulated in sample order.
pub fn phi_init(window: &[FxVec], w: &WidthLedger) -> FxMat {
    assert_eq!(window.len(), K, "Gram window must hold K samples");
    let mut phi = zero_mat(w);
    for i in 0..B {
        for j in i..B {
            phi[i][j] = window
                .iter()
                .fold(FxComplex::zero(w.acc), |acc, y| fx_cadd(acc, fx_cmul_conj(y[i], y[j], w.acc), w.acc));
        }
    }
    mirror_upper(&mut phi);
    phi
}

/// Downdate with the leaving sample, then update with the entering one.
pub fn phi_slide(phi: &mut FxMat, leaving: &FxVec, entering: &FxVec, w: &WidthLedger) {
    for i in 0..B {
        for j in i..B {
            let down = fx_csub(phi[i][j], fx_cmul_conj(leaving[i], leaving[j], w.acc), w.acc);
            phi[i][j] = fx_cadd(down, fx_cmul_conj(entering[i], entering[j], w.acc), w.acc);
        }
    }
    mirror_upper(phi);
}

/// `c = Y s*` without multipliers: each column is added or subtracted.
pub fn correlate(window: &[FxVec], seq: &SyncSequence, w: &WidthLedger) -> FxVec {
    let mut c = zero_vec(w);
    for (y, &s) in window.iter().zip(seq.symbols()) {
        for (ci, yi) in c.iter_mut().zip(y) {
            *ci = if s > 0 { fx_cadd(*ci, *yi, w.acc) } else { fx_csub(*ci, *yi, w.acc) };
        }
    }
    c
}

/// `Λ = (Φ << log2 K) − c cᴴ`.
pub fn lambda_build(phi: &FxMat, c: &FxVec, w: &WidthLedger) -> FxMat {
    let mut l = zero_mat(w);
    for i in 0..B {
        for j in i..B {
            l[i][j] = fx_csub(fx_cshift(phi[i][j], K_SHIFT), fx_cmul_conj(c[i], c[j], w.acc), w.acc);
        }
    }
    mirror_upper(&mut l);
    l
}

/// Accumulator configuration: `Σ_k λ_k a_k`, one column per cycle.
pub fn matvec(m: &FxMat, a: &FxVec, w: &WidthLedger) -> FxVec {
    std::array::from_fn(|i| (0..B).fold(FxComplex::zero(w.acc), |acc, k| fx_cmac(acc, m[i][k], a[k], w.acc)))
}

/// Adder-tree inner product `xᴴ y`, products quantized to `acc`.
pub fn inner(x: &FxVec, y: &FxVec, w: &WidthLedger) -> FxComplex {
    let p: FxVec = std::array::from_fn(|k| fx_cmul_conj(y[k], x[k], w.acc));
    tree_reduce_complex(&p, w.acc)
}

/// Pseudonormalize, then multiply by the inverse square root of the
/// tree-reduced squared norm. `None` for an all-zero vector.
pub fn normalize(v: &FxVec, w: &WidthLedger, lut: &InvSqrtLut) -> Option<FxVec> {
    let n = pseudonorm_exponent(v).ok()?;
    let pn = pseudonorm_apply(v, n, w.vec);
    let sq: [FxReal; B] = std::array::from_fn(|k| fx_norm_sqr(pn[k], w.acc));
    let nsq = tree_reduce(&sq, w.acc);
    let r = inv_sqrt(nsq, w.inv_sqrt, lut).ok()?;
    Some(pn.map(|z| FxComplex::new(fx_mul(z.re, r, w.vec), fx_mul(z.im, r, w.vec))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubspaceEstimate {
    /// Normalized columns in the vector format.
    pub a: [FxVec; I_MAX],
    /// Last `a' = Λa` in the accumulator format.
    pub a_raw: [FxVec; I_MAX],
    pub active: [bool; I_MAX],
    pub b_tilde: FxComplex,
}

impl SubspaceEstimate {
    pub fn inactive(w: &WidthLedger) -> Self {
        SubspaceEstimate {
            a: [[FxComplex::zero(w.vec); B]; I_MAX],
            a_raw: [zero_vec(w); I_MAX],
            active: [false; I_MAX],
            b_tilde: FxComplex::zero(w.vec),
        }
    }

    pub fn active_count(&self) -> u8 {
        self.active.iter().filter(|&&a| a).count() as u8
    }
}

pub fn power_subspace(
    lambda: &FxMat,
    prng: &mut XorshiftPair,
    t_max: usize,
    w: &WidthLedger,
    lut: &InvSqrtLut,
) -> SubspaceEstimate {
    let mut lam = *lambda;
    let mut est = SubspaceEstimate::inactive(w);
    for col in 0..I_MAX {
        let start = prng_vector::<B>(prng, w.vec);
        let mut a = normalize(&start.map(|z| z.convert(w.acc)), w, lut).unwrap_or(start);
        let mut a_raw = zero_vec(w);
        let mut ok = true;
        for _ in 0..t_max {
            a_raw = matvec(&lam, &a, w);
            match normalize(&a_raw, w, lut) {
                Some(n) => a = n,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        est.a[col] = a;
        if !ok {
            continue;
        }
        est.a_raw[col] = a_raw;
        est.active[col] = true;
        // multiply-subtract configuration
        for i in 0..B {
            for j in i..B {
                lam[i][j] = fx_csub(lam[i][j], fx_cmul_conj(a_raw[i], a[j], w.acc), w.acc);
            }
        }
        mirror_upper(&mut lam);
    }
    if est.active[0] && est.active[1] {
        let b = inner(&est.a[0], &est.a[1], w).convert(w.vec);
        let f = 2 * w.vec.frac_bits();
        let mag = (b.re.raw() as i128).pow(2) + (b.im.raw() as i128).pow(2);
        if (1i128 << f) - mag < 1i128 << (f - COLLINEAR_SHIFT) {
            est.active[1] = false;
        } else {
            est.b_tilde = b;
        }
    }
    est
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreTerms {
    pub c: FxVec,
    pub v: [FxComplex; I_MAX],
    pub w: [FxVec; I_MAX],
    pub n: FxReal,
    pub d: FxReal,
}

fn widen(x: FxReal, to_frac: u32) -> i128 {
    (x.raw() as i128) << (to_frac - x.fmt().frac_bits())
}

/// `Re(x · y)` or `Re(conj(x) · y)` at `frac_x + frac_y`.
fn re_mul(x: FxComplex, y: FxComplex, conj_x: bool) -> i128 {
    let (xr, xi) = (x.re.raw() as i128, x.im.raw() as i128);
    let (yr, yi) = (y.re.raw() as i128, y.im.raw() as i128);
    if conj_x {
        xr * yr + xi * yi
    } else {
        xr * yr - xi * yi
    }
}

pub fn score_terms(sub: &SubspaceEstimate, phi: &FxMat, c: &FxVec, w: &WidthLedger) -> ScoreTerms {
    let zero_col = [FxComplex::zero(w.vec); B];
    let a = [0, 1].map(|i| if sub.active[i] { sub.a[i] } else { zero_col });
    let b = sub.b_tilde;

    let v = [inner(&a[0], c, w), inner(&a[1], c, w)];
    // W_i[n] = Σ_k conj(a_ik) Φ_kn
    let wm = [0, 1].map(|i| {
        let row: FxVec = std::array::from_fn(|n| {
            let col: FxVec = std::array::from_fn(|k| phi[k][n]);
            inner(&a[i], &col, w)
        });
        row
    });
    // M_ij = Σ_n W_i[n] a_j[n]
    let m = |i: usize, j: usize| {
        let p: FxVec = std::array::from_fn(|n| crate::fxp::fx_cmul(wm[i][n], a[j][n], w.acc));
        tree_reduce_complex(&p, w.acc)
    };
    let (m11, m22, m12, m21) = (m(0, 0), m(1, 1), m(0, 1), m(1, 0));

    let cc = tree_reduce(&c.map(|z| fx_norm_sqr(z, w.score)), w.score);
    let diag: [FxReal; B] = std::array::from_fn(|k| phi[k][k].re.convert(w.score));
    let tr = tree_reduce(&diag, w.score);

    let (bf, af, sf) = (w.vec.frac_bits(), w.acc.frac_bits(), w.score.frac_bits());
    let g = (1i128 << (2 * bf)) - (b.re.raw() as i128).pow(2) - (b.im.raw() as i128).pow(2);

    let fn_ = (2 * bf + sf).max(2 * af).max(bf + 2 * af);
    let vv = (v[0].re.raw() as i128).pow(2)
        + (v[0].im.raw() as i128).pow(2)
        + (v[1].re.raw() as i128).pow(2)
        + (v[1].im.raw() as i128).pow(2);
    let p = crate::fxp::fx_cmul_conj(v[1], v[0], crate::fxp::FxFormat::q(64, 2 * af));
    let cross = re_mul(b, p, false);
    let n_exact = (g * cc.raw() as i128) << (fn_ - 2 * bf - sf);
    let n_exact = n_exact - (vv << (fn_ - 2 * af)) + ((2 * cross) << (fn_ - bf - 2 * af));

    let fd = (2 * bf + sf).max(af).max(bf + af);
    let diag_m = widen(m11.re, fd) + widen(m22.re, fd);
    let off = (re_mul(b, m21, false) + re_mul(b, m12, true)) << (fd - bf - af);
    let d_exact = ((g * tr.raw() as i128) << (fd - 2 * bf - sf)) - diag_m + off;

    ScoreTerms {
        c: *c,
        v,
        w: wm,
        n: w.score.fit(n_exact, fn_),
        d: w.score.fit(d_exact, fd),
    }
}

pub fn decide(terms: &ScoreTerms, tau: &Threshold) -> bool {
    let s = IndexScore {
        ell: 0,
        n: terms.n.to_f64(),
        d: terms.d.to_f64(),
        exact: Some(FixedScore { n: terms.n, d: terms.d }),
        active: 0,
    };
    s.accepts(tau)
}

#[derive(Debug, Clone)]
pub struct FixedDatapath {
    widths: WidthLedger,
    lut: InvSqrtLut,
    gain: f64,
    t_max: usize,
}

impl FixedDatapath {
    pub fn new(cfg: &DetectorConfig, gain: f64) -> Self {
        FixedDatapath {
            widths: cfg.widths,
            lut: InvSqrtLut::new(cfg.widths.lut),
            gain,
            t_max: cfg.t_max,
        }
    }

    /// Uses the configured input gain, or a block AGC over `stream`.
    pub fn for_stream(cfg: &DetectorConfig, stream: &[CVec]) -> Self {
        let gain = cfg.input_gain.unwrap_or_else(|| block_agc_gain(stream, AGC_TARGET_RMS));
        Self::new(cfg, gain)
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn widths(&self) -> &WidthLedger {
        &self.widths
    }

    pub fn lut(&self) -> &InvSqrtLut {
        &self.lut
    }

    pub fn evaluate_terms(
        &self,
        window: &[FxVec],
        phi: &FxMat,
        seq: &SyncSequence,
        prng: &mut XorshiftPair,
        mitigation: Mitigation,
    ) -> (SubspaceEstimate, ScoreTerms) {
        let w = &self.widths;
        let c = correlate(window, seq, w);
        let sub = match mitigation {
            Mitigation::Jass => power_subspace(&lambda_build(phi, &c, w), prng, self.t_max, w, &self.lut),
            Mitigation::Unmitigated => SubspaceEstimate::inactive(w),
        };
        let terms = score_terms(&sub, phi, &c, w);
        (sub, terms)
    }
}

impl Datapath for FixedDatapath {
    type Sample = FxVec;
    type Gram = FxMat;

    fn ingest(&self, y: &CVec) -> FxVec {
        ingest(y, self.gain, &self.widths)
    }

    fn phi_init(&self, window: &[FxVec]) -> FxMat {
        phi_init(window, &self.widths)
    }

    fn phi_slide(&self, phi: &mut FxMat, leaving: &FxVec, entering: &FxVec) {
        phi_slide(phi, leaving, entering, &self.widths)
    }

    fn evaluate(
        &self,
        window: &[FxVec],
        phi: &FxMat,
        seq: &SyncSequence,
        prng: &mut XorshiftPair,
        mitigation: Mitigation,
    ) -> IndexScore {
        let (sub, t) = self.evaluate_terms(window, phi, seq, prng, mitigation);
        IndexScore {
            ell: 0,
            n: t.n.to_f64(),
            d: t.d.to_f64(),
            exact: Some(FixedScore { n: t.n, d: t.d }),
            active: sub.active_count(),
        }
    }

    fn threshold(&self, tau: f64) -> Threshold {
        Threshold::new(tau, self.widths.tau)
    }
}
