#![allow(dead_code)]

use jass_core::airlink::{cn, derive_seed, synthesize, JammerKind, JammerSpec, TrialScenario};
use jass_core::detector::{CVec, SyncSequence};
use jass_core::K;
use num_complex::Complex64;
use rand::Rng;

pub const JAMMERS: [JammerKind; 4] =
    [JammerKind::Barrage, JammerKind::Erratic, JammerKind::AntennaSwitching, JammerKind::DelayedSpoofing];

/// A K-sample window cut from a synthesized stream: random jammer kind,
/// ρ in [-10, 40] dB, SNR in [-5, 20] dB, random offset relative to L and a
/// random overall scale.
pub fn jammed_window<R: Rng>(rng: &mut R, seq: &SyncSequence) -> Vec<CVec> {
    let kind = JAMMERS[rng.random_range(0..JAMMERS.len())];
    let spec = JammerSpec { antennas: rng.random_range(1..=2), ..JammerSpec::new(kind, rng.random_range(-10.0..40.0)) };
    let l = 20;
    let sc = TrialScenario::new(l, rng.random_range(-5.0..20.0), rng.random(), 2 * K + l).unwrap();
    let (_, y) = synthesize(&sc, &spec, seq);
    let start = rng.random_range(l - K / 2..=l + K / 2);
    let scale = 10f64.powf(rng.random_range(-2.0..2.0));
    y[start..start + K].iter().map(|v| v.map(|z| z * scale)).collect()
}

/// Unstructured complex Gaussian window with a random scale.
pub fn gaussian_window<R: Rng>(rng: &mut R) -> Vec<CVec> {
    let var = 10f64.powf(rng.random_range(-3.0..3.0));
    (0..K).map(|_| std::array::from_fn(|_| cn(rng, var))).collect()
}

pub fn mixed_window<R: Rng>(rng: &mut R, seq: &SyncSequence) -> Vec<CVec> {
    if rng.random_bool(0.8) {
        jammed_window(rng, seq)
    } else {
        gaussian_window(rng)
    }
}

pub fn seed_for(tag: u64, i: u64) -> u64 {
    derive_seed(tag, i)
}

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}
