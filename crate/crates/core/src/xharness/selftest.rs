//! Quick oracle-equivalence and invariant checks behind `jass selftest`.

use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::airlink::cn;
use crate::detector::{fixed, float, CVec, CycleModel, DetectorConfig, Mitigation, SyncSequence};
use crate::fxp::{quantize, FxComplex, WidthLedger};
use crate::kernels::{inv_sqrt, pseudonorm_apply, pseudonorm_exponent, InvSqrtLut, XorshiftPair};
use crate::{B, K};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {:<20} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

/// Random receive window: a rank-two interference component over noise,
/// with a random power scale.
pub fn random_window<R: Rng>(rng: &mut R, seq: &SyncSequence) -> Vec<CVec> {
    let scale = 10f64.powf(rng.random_range(-1.0..1.0));
    let h: CVec = std::array::from_fn(|_| cn(rng, 1.0));
    let j: [CVec; 2] = std::array::from_fn(|_| std::array::from_fn(|_| cn(rng, 1.0)));
    let jam = 10f64.powf(rng.random_range(-1.0..3.0)).sqrt();
    (0..K)
        .map(|k| {
            let s = seq.symbols()[k] as f64 * f64::from(rng.random_bool(0.5));
            let w = [cn(rng, 0.5), cn(rng, 0.5)];
            std::array::from_fn(|b| (h[b] * s + (j[0][b] * w[0] + j[1][b] * w[1]) * jam + cn(rng, 0.1)) * scale)
        })
        .collect()
}

/// `‖P̃ Y s*‖² / ‖P̃ Y‖_F²` with `P̃ = I − A (AᴴA)⁻¹ Aᴴ` built explicitly.
pub fn projected_score(window: &[CVec], seq: &SyncSequence, a: &[CVec]) -> f64 {
    let r = a.len();
    let gram = |i: usize, j: usize| -> Complex64 { (0..B).map(|k| a[i][k].conj() * a[j][k]).sum() };
    let ginv: Vec<Vec<Complex64>> = match r {
        0 => vec![],
        1 => vec![vec![gram(0, 0).inv()]],
        _ => {
            let (g00, g01, g10, g11) = (gram(0, 0), gram(0, 1), gram(1, 0), gram(1, 1));
            let det = g00 * g11 - g01 * g10;
            vec![vec![g11 / det, -g01 / det], vec![-g10 / det, g00 / det]]
        }
    };
    let project = |x: &CVec| -> CVec {
        let ahx: Vec<Complex64> = (0..r).map(|i| (0..B).map(|k| a[i][k].conj() * x[k]).sum()).collect();
        let coef: Vec<Complex64> = (0..r).map(|i| (0..r).map(|j| ginv[i][j] * ahx[j]).sum()).collect();
        std::array::from_fn(|b| x[b] - (0..r).map(|i| a[i][b] * coef[i]).sum::<Complex64>())
    };
    let mut c = [Complex64::new(0.0, 0.0); B];
    for (y, &s) in window.iter().zip(seq.symbols()) {
        for b in 0..B {
            c[b] += y[b] * s as f64;
        }
    }
    let num: f64 = project(&c).iter().map(|z| z.norm_sqr()).sum();
    let den: f64 = window.iter().map(|y| project(y).iter().map(|z| z.norm_sqr()).sum::<f64>()).sum();
    num / den
}

fn check_score_identity(rng: &mut ChaCha8Rng, n: usize) -> Check {
    let seq = SyncSequence::default();
    let dp = float::FloatDatapath::new(&DetectorConfig::default());
    let mut prng = XorshiftPair::DEFAULT;
    let mut worst = 0.0f64;
    for _ in 0..n {
        let win = random_window(rng, &seq);
        let phi = float::phi_init(&win);
        let (sub, t) = dp.evaluate_terms(&win, &phi, &seq, &mut prng, Mitigation::Jass);
        let a: Vec<CVec> = (0..2).filter(|&i| sub.active[i]).map(|i| sub.a[i]).collect();
        let oracle = projected_score(&win, &seq, &a);
        worst = worst.max(((t.n / t.d) - oracle).abs() / oracle.abs());
    }
    Check { name: "score-identity", passed: worst <= 1e-9, detail: format!("max rel err {worst:.3e} over {n} windows") }
}

fn check_slide(rng: &mut ChaCha8Rng, n: usize) -> Vec<Check> {
    let seq = SyncSequence::default();
    let w = WidthLedger::DEFAULT;
    let stream: Vec<CVec> = (0..n + K).flat_map(|_| random_window(rng, &seq).into_iter().take(1)).collect();
    let fx: Vec<fixed::FxVec> = stream.iter().map(|y| fixed::ingest(y, 0.25, &w)).collect();
    let mut phi = float::phi_init(&stream[..K]);
    let mut phx = fixed::phi_init(&fx[..K], &w);
    let (mut worst, mut exact) = (0.0f64, true);
    for l in 1..n {
        float::phi_slide(&mut phi, &stream[l - 1], &stream[l + K - 1]);
        fixed::phi_slide(&mut phx, &fx[l - 1], &fx[l + K - 1], &w);
        let fresh = float::phi_init(&stream[l..l + K]);
        let num: f64 = (0..B).flat_map(|i| (0..B).map(move |j| (i, j))).map(|(i, j)| (phi[i][j] - fresh[i][j]).norm_sqr()).sum();
        let den: f64 = fresh.iter().flatten().map(|z| z.norm_sqr()).sum();
        worst = worst.max((num / den).sqrt());
        exact &= phx == fixed::phi_init(&fx[l..l + K], &w);
    }
    vec![
        Check { name: "slide-float", passed: worst <= 1e-10, detail: format!("max rel err {worst:.3e} over {n} slides") },
        Check { name: "slide-fixed", passed: exact, detail: format!("bit-exact over {n} slides: {exact}") },
    ]
}

fn check_bound(rng: &mut ChaCha8Rng, n: usize) -> Check {
    let seq = SyncSequence::default();
    let cfg = DetectorConfig::default();
    let w = cfg.widths;
    let fdp = float::FloatDatapath::new(&cfg);
    let xdp = fixed::FixedDatapath::new(&cfg, 1.0);
    let mut prng = XorshiftPair::DEFAULT;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..n {
        let win = random_window(rng, &seq);
        let phi = float::phi_init(&win);
        let (_, t) = fdp.evaluate_terms(&win, &phi, &seq, &mut prng, Mitigation::Jass);
        let gain = fixed::block_agc_gain(&win, fixed::AGC_TARGET_RMS);
        let fx: Vec<fixed::FxVec> = win.iter().map(|y| fixed::ingest(y, gain, &w)).collect();
        let (_, tx) = xdp.evaluate_terms(&fx, &fixed::phi_init(&fx, &w), &seq, &mut prng, Mitigation::Jass);
        for r in [t.n / t.d, tx.n.to_f64() / tx.d.to_f64()] {
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    Check {
        name: "score-bound",
        passed: lo >= 0.0 && hi <= K as f64 + 1e-6,
        detail: format!("N/D in [{lo:.6}, {hi:.6}] over {n} windows, both backends"),
    }
}

fn check_cycles() -> Check {
    let t = CycleModel::default().total();
    Check { name: "cycles", passed: t == 268, detail: format!("{t} cycles per delay index") }
}

fn check_inv_sqrt(points: usize) -> Check {
    let w = WidthLedger::DEFAULT;
    let lut = InvSqrtLut::new(w.lut);
    let fmt = w.acc;
    let mut worst = 0.0f64;
    for i in 0..points {
        // six octaves: [1, 64)
        let x = quantize(2f64.powf(6.0 * i as f64 / points as f64), fmt);
        let y = inv_sqrt(x, w.inv_sqrt, &lut).expect("positive input").to_f64();
        let want = x.to_f64().sqrt().recip();
        worst = worst.max((y - want).abs() / want);
    }
    Check {
        name: "inv-sqrt",
        passed: worst <= 2f64.powi(-12),
        detail: format!("max rel err {worst:.3e} (2^{:.2}) over {points} points", worst.log2()),
    }
}

fn check_pseudonorm(rng: &mut ChaCha8Rng, n: usize) -> Check {
    let w = WidthLedger::DEFAULT;
    let mut ok = true;
    let mut at_two = 0;
    for _ in 0..n {
        let bits = rng.random_range(1..=w.acc.total_bits() - 1);
        let r = 1i64 << bits;
        let v: [FxComplex; B] = std::array::from_fn(|_| {
            FxComplex::from_raw(rng.random_range(-r..r), rng.random_range(-r..r), w.acc).expect("in range")
        });
        let Ok(e) = pseudonorm_exponent(&v) else { continue };
        let out = pseudonorm_apply(&v, e, w.vec);
        let parts = out.iter().flat_map(|z| [z.re.to_f64(), z.im.to_f64()]);
        let m = parts.clone().fold(0.0f64, |m, x| m.max(x.abs()));
        ok &= parts.clone().all(|x| (-2.0..2.0).contains(&x)) && (1.0..=2.0).contains(&m);
        at_two += usize::from(m == 2.0);
    }
    Check {
        name: "pseudonorm",
        passed: ok,
        detail: format!("{n} vectors in [-2, 2), peak magnitude in [1, 2]; {at_two} hit -2 exactly"),
    }
}

pub fn run(seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = vec![check_score_identity(&mut rng, 500)];
    checks.extend(check_slide(&mut rng, 300));
    checks.push(check_bound(&mut rng, 500));
    checks.push(check_cycles());
    checks.push(check_inv_sqrt(1 << 14));
    checks.push(check_pseudonorm(&mut rng, 2000));
    Report { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        let r = run(3);
        assert!(r.passed(), "{r}");
        assert_eq!(r.to_string().lines().count(), r.checks.len());
    }

    #[test]
    fn projector_oracle_unmitigated() {
        let seq = SyncSequence::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let win = random_window(&mut rng, &seq);
        let phi = float::phi_init(&win);
        let t = float::score_terms(&float::SubspaceEstimate::inactive(), &phi, &float::correlate(&win, &seq));
        assert!((t.n / t.d - projected_score(&win, &seq, &[])).abs() < 1e-12 * K as f64);
    }
}
