//! `f64` reference datapath.

use super::{CVec, Datapath, DetectorConfig, IndexScore, Mitigation, SyncSequence, Threshold};
use crate::fxp::FxFormat;
use crate::kernels::{prng_vector, XorshiftPair};
use crate::{B, I_MAX, K};
use num_complex::Complex64;

/// Row-major `B × B` complex matrix.
pub type CMat = [[Complex64; B]; B];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// `1 − |b̃|²` below this drops the second column.
pub const COLLINEAR_LIMIT: f64 = 1.0 / 65536.0;
/// Relative size of `‖a'‖` (against `tr Λ`) treated as a vanishing direction.
pub const DEGENERATE_REL: f64 = 1e-12;

fn zero_mat() -> CMat {
    [[ZERO; B]; B]
}

/// Fill the strict lower triangle from the upper one and drop the
/// imaginary part of the diagonal, so storage is Hermitian by construction.
fn mirror_upper(m: &mut CMat) {
    for i in 0..B {
        m[i][i].im = 0.0;
        for j in i + 1..B {
            m[j][i] = m[i][j].conj();
        }
    }
}

pub fn is_hermitian(m: &CMat) -> bool {
    (0..B).all(|i| (0..B).all(|j| m[i][j] == m[j][i].conj()))
}

/// `Φ = Y Yᴴ` over exactly `K` samples.
pub fn phi_init(window: &[CVec]) -> CMat {
    assert_eq!(window.len(), K, "Gram window must hold K samples");
    let mut phi = zero_mat();
    for i in 0..B {
        for j in i..B {
            phi[i][j] = window.iter().map(|y| y[i] * y[j].conj()).fold(ZERO, |a, b| a + b);
        }
    }
    mirror_upper(&mut phi);
    phi
}

/// `Φ ← Φ − y_out y_outᴴ + y_in y_inᴴ`.
pub fn phi_slide(phi: &mut CMat, leaving: &CVec, entering: &CVec) {
    for i in 0..B {
        for j in i..B {
            phi[i][j] = phi[i][j] - leaving[i] * leaving[j].conj() + entering[i] * entering[j].conj();
        }
    }
    mirror_upper(phi);
}

/// `c = Y s*`: sign-adjusted accumulation of the window columns.
pub fn correlate(window: &[CVec], seq: &SyncSequence) -> CVec {
    let mut c = [ZERO; B];
    for (y, &s) in window.iter().zip(seq.symbols()) {
        for (ci, yi) in c.iter_mut().zip(y) {
            if s > 0 {
                *ci += yi;
            } else {
                *ci -= yi;
            }
        }
    }
    c
}

/// `Λ = ‖s‖² Φ − c cᴴ`.
pub fn lambda_build(phi: &CMat, c: &CVec) -> CMat {
    let k = K as f64;
    let mut l = zero_mat();
    for i in 0..B {
        for j in i..B {
            l[i][j] = phi[i][j] * k - c[i] * c[j].conj();
        }
    }
    mirror_upper(&mut l);
    l
}

pub fn matvec(m: &CMat, a: &CVec) -> CVec {
    std::array::from_fn(|i| m[i].iter().zip(a).map(|(x, y)| x * y).fold(ZERO, |s, t| s + t))
}

/// `xᴴ y`.
pub fn inner(x: &CVec, y: &CVec) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).fold(ZERO, |s, t| s + t)
}

pub fn norm_sqr(x: &CVec) -> f64 {
    x.iter().map(|z| z.norm_sqr()).fold(0.0, |a, b| a + b)
}

fn scale(x: &CVec, r: f64) -> CVec {
    x.map(|z| z * r)
}

pub fn trace(m: &CMat) -> f64 {
    (0..B).map(|i| m[i][i].re).fold(0.0, |a, b| a + b)
}

/// Estimated jammer subspace `A = [a1, a2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceEstimate {
    /// Unit-norm columns.
    pub a: [CVec; I_MAX],
    /// Last unnormalized iterate `a' = Λ a` per column.
    pub a_raw: [CVec; I_MAX],
    /// Inactive columns are treated as zero in the score.
    pub active: [bool; I_MAX],
    /// `a1ᴴ a2` (zero unless both columns are active).
    pub b_tilde: Complex64,
}

impl SubspaceEstimate {
    pub fn inactive() -> Self {
        SubspaceEstimate {
            a: [[ZERO; B]; I_MAX],
            a_raw: [[ZERO; B]; I_MAX],
            active: [false; I_MAX],
            b_tilde: ZERO,
        }
    }

    pub fn active_count(&self) -> u8 {
        self.active.iter().filter(|&&a| a).count() as u8
    }
}

/// Power iteration with deflation: `I_MAX` directions, `t_max` iterations
/// each, starting vectors from the hardware PRNG (drawn in `prng_fmt`).
pub fn power_subspace(
    lambda: &CMat,
    prng: &mut XorshiftPair,
    t_max: usize,
    prng_fmt: FxFormat,
) -> SubspaceEstimate {
    let mut lam = *lambda;
    let floor = DEGENERATE_REL * trace(lambda).max(0.0);
    let mut est = SubspaceEstimate::inactive();
    for col in 0..I_MAX {
        let start: CVec = prng_vector::<B>(prng, prng_fmt).map(|z| z.to_c64());
        let n0 = norm_sqr(&start);
        let mut a = if n0 > 0.0 { scale(&start, n0.sqrt().recip()) } else { start };
        let mut a_raw = [ZERO; B];
        let mut ok = true;
        for _ in 0..t_max {
            a_raw = matvec(&lam, &a);
            let nrm = norm_sqr(&a_raw).sqrt();
            if nrm <= floor || nrm == 0.0 {
                ok = false;
                break;
            }
            a = scale(&a_raw, nrm.recip());
        }
        est.a[col] = a;
        if !ok {
            continue;
        }
        est.a_raw[col] = a_raw;
        est.active[col] = true;
        for i in 0..B {
            for j in i..B {
                lam[i][j] -= a_raw[i] * a[j].conj();
            }
        }
        mirror_upper(&mut lam);
    }
    if est.active[0] && est.active[1] {
        let b = inner(&est.a[0], &est.a[1]);
        if 1.0 - b.norm_sqr() < COLLINEAR_LIMIT {
            est.active[1] = false;
        } else {
            est.b_tilde = b;
        }
    }
    est
}

/// Intermediate and final score quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreTerms {
    pub c: CVec,
    /// `Aᴴ c`.
    pub v: [Complex64; I_MAX],
    /// `Aᴴ Φ`, one row per column of `A`.
    pub w: [CVec; I_MAX],
    pub n: f64,
    pub d: f64,
}

/// `N = (1−|b̃|²)‖c‖² − vᴴB̃v`, `D = (1−|b̃|²) tr Φ − tr(B̃WA)` with
/// `B̃ = [[1, −b̃], [−b̃*, 1]]`. Inactive columns contribute nothing.
pub fn score_terms(sub: &SubspaceEstimate, phi: &CMat, c: &CVec) -> ScoreTerms {
    let col = |i: usize| if sub.active[i] { sub.a[i] } else { [ZERO; B] };
    let a = [col(0), col(1)];
    let b = sub.b_tilde;
    let v = [inner(&a[0], c), inner(&a[1], c)];
    // W_i = a_iᴴ Φ as a row: (Φᴴ a_i)ᴴ = (Φ a_i)ᴴ since Φ is Hermitian.
    let w = [0, 1].map(|i| {
        let r: CVec = std::array::from_fn(|n| (0..B).map(|k| a[i][k].conj() * phi[k][n]).fold(ZERO, |s, t| s + t));
        r
    });
    let m = |i: usize, j: usize| w[i].iter().zip(&a[j]).map(|(x, y)| x * y).fold(ZERO, |s, t| s + t);
    let g = 1.0 - b.norm_sqr();
    let quad = v[0].norm_sqr() + v[1].norm_sqr() - 2.0 * (b * v[0].conj() * v[1]).re;
    let n = g * norm_sqr(c) - quad;
    let tr_bwa = m(0, 0).re + m(1, 1).re - (b * m(1, 0)).re - (b.conj() * m(0, 1)).re;
    let d = g * trace(phi) - tr_bwa;
    ScoreTerms { c: *c, v, w, n, d }
}

/// `N − Dτ ≥ 0`.
pub fn decide(terms: &ScoreTerms, tau: f64) -> bool {
    terms.n - terms.d * tau >= 0.0
}

#[derive(Debug, Clone)]
pub struct FloatDatapath {
    t_max: usize,
    prng_fmt: FxFormat,
    tau_fmt: FxFormat,
}

impl FloatDatapath {
    pub fn new(cfg: &DetectorConfig) -> Self {
        FloatDatapath {
            t_max: cfg.t_max,
            prng_fmt: cfg.widths.vec,
            tau_fmt: cfg.widths.tau,
        }
    }

    /// Evaluation of one window returning every intermediate.
    pub fn evaluate_terms(
        &self,
        window: &[CVec],
        phi: &CMat,
        seq: &SyncSequence,
        prng: &mut XorshiftPair,
        mitigation: Mitigation,
    ) -> (SubspaceEstimate, ScoreTerms) {
        let c = correlate(window, seq);
        let sub = match mitigation {
            Mitigation::Jass => power_subspace(&lambda_build(phi, &c), prng, self.t_max, self.prng_fmt),
            Mitigation::Unmitigated => SubspaceEstimate::inactive(),
        };
        let terms = score_terms(&sub, phi, &c);
        (sub, terms)
    }
}

impl Datapath for FloatDatapath {
    type Sample = CVec;
    type Gram = CMat;

    fn ingest(&self, y: &CVec) -> CVec {
        *y
    }

    fn phi_init(&self, window: &[CVec]) -> CMat {
        phi_init(window)
    }

    fn phi_slide(&self, phi: &mut CMat, leaving: &CVec, entering: &CVec) {
        phi_slide(phi, leaving, entering)
    }

    fn evaluate(
        &self,
        window: &[CVec],
        phi: &CMat,
        seq: &SyncSequence,
        prng: &mut XorshiftPair,
        mitigation: Mitigation,
    ) -> IndexScore {
        let (sub, t) = self.evaluate_terms(window, phi, seq, prng, mitigation);
        IndexScore {
            ell: 0,
            n: t.n,
            d: t.d,
            exact: None,
            active: sub.active_count(),
        }
    }

    fn threshold(&self, tau: f64) -> Threshold {
        Threshold::new(tau, self.tau_fmt)
    }
}
