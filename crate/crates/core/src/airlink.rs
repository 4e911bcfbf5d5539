//! Receive-stream synthesis: `y[k] = h s[k] + J w[k] + n[k]`.
//!
//! Channels are i.i.d. Rayleigh. SNR and ρ are calibrated against ensemble
//! channel power, so `E‖h s‖² = B` and the jammer waveform carries total
//! power `ρ` across its antennas.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{CVec, SyncSequence};
use crate::{I_MAX, K};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AirlinkError {
    #[error("jammer antenna count {0} outside 0..={max}", max = I_MAX)]
    Antennas(usize),
    #[error("duty {0} outside [0, 1]")]
    Duty(f64),
    #[error("switch probability {0} outside [0, 1]")]
    SwitchProb(f64),
    #[error("spoof delay must be at least 1")]
    SpoofDelay,
    #[error("start index {l} does not fit a stream of {length} samples")]
    Start { l: usize, length: usize },
    #[error("{0} out of range")]
    NotFinite(&'static str),
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream)
}

const CHANNEL_STREAM: u64 = 1;
const JAMMER_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

/// Circularly-symmetric complex Gaussian with variance `var`.
pub fn cn<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: CVec,
    /// Jammer channel, one column per jammer antenna.
    pub j: Vec<CVec>,
}

pub fn draw_channel(seed: u64, antennas: usize) -> ChannelRealization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = std::array::from_fn(|_| cn(&mut rng, 1.0));
    let j = (0..antennas).map(|_| std::array::from_fn(|_| cn(&mut rng, 1.0))).collect();
    ChannelRealization { h, j }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum JammerKind {
    #[default]
    None,
    Barrage,
    Erratic,
    AntennaSwitching,
    DelayedSpoofing,
}

impl std::fmt::Display for JammerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            JammerKind::None => "none",
            JammerKind::Barrage => "barrage",
            JammerKind::Erratic => "erratic",
            JammerKind::AntennaSwitching => "antenna-switching",
            JammerKind::DelayedSpoofing => "delayed-spoofing",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JammerSpec {
    pub kind: JammerKind,
    pub antennas: usize,
    pub rho_db: f64,
    pub duty: f64,
    pub switch_prob: f64,
    pub spoof_delay: usize,
}

impl Default for JammerSpec {
    fn default() -> Self {
        JammerSpec {
            kind: JammerKind::None,
            antennas: 2,
            rho_db: 0.0,
            duty: 0.5,
            switch_prob: 0.1,
            spoof_delay: 1,
        }
    }
}

impl JammerSpec {
    pub fn new(kind: JammerKind, rho_db: f64) -> Self {
        JammerSpec { kind, rho_db, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), AirlinkError> {
        if self.antennas > I_MAX {
            return Err(AirlinkError::Antennas(self.antennas));
        }
        if !(0.0..=1.0).contains(&self.duty) {
            return Err(AirlinkError::Duty(self.duty));
        }
        if !(0.0..=1.0).contains(&self.switch_prob) {
            return Err(AirlinkError::SwitchProb(self.switch_prob));
        }
        if self.spoof_delay < 1 {
            return Err(AirlinkError::SpoofDelay);
        }
        if self.rho_db.is_nan() || self.rho_db == f64::INFINITY {
            return Err(AirlinkError::NotFinite("rho_db"));
        }
        Ok(())
    }

    pub fn is_silent(&self) -> bool {
        self.kind == JammerKind::None || self.antennas == 0 || self.rho_db == f64::NEG_INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialScenario {
    pub l: usize,
    pub snr_db: f64,
    pub n0: f64,
    pub seed: u64,
    pub length: usize,
}

impl TrialScenario {
    pub fn new(l: usize, snr_db: f64, seed: u64, length: usize) -> Result<Self, AirlinkError> {
        if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
            return Err(AirlinkError::NotFinite("snr_db"));
        }
        let s = TrialScenario { l, snr_db, n0: calibrate(snr_db, f64::NEG_INFINITY).n0, seed, length };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), AirlinkError> {
        if self.length < K + 1 || self.l > self.length - K - 1 {
            return Err(AirlinkError::Start { l: self.l, length: self.length });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub signal_scale: f64,
    pub jammer_scale: f64,
    pub n0: f64,
}

/// `SNR = E‖hs‖² / (B N0)` and `ρ = E‖Jw‖² / E‖hs‖²` with unit-variance
/// channels and symbols and a unit-power jammer waveform.
pub fn calibrate(snr_db: f64, rho_db: f64) -> Calibration {
    let rho = if rho_db == f64::NEG_INFINITY { 0.0 } else { 10f64.powf(rho_db / 10.0) };
    Calibration {
        signal_scale: 1.0,
        jammer_scale: rho.sqrt(),
        n0: 10f64.powf(-snr_db / 10.0),
    }
}

/// Transmitted legitimate symbols: the sequence on `[l, l + K)`, zero
/// elsewhere.
pub fn legit_symbols(seq: &SyncSequence, l: usize, length: usize) -> Vec<f64> {
    let mut s = vec![0.0; length];
    for (i, &x) in seq.symbols().iter().enumerate() {
        if let Some(v) = s.get_mut(l + i) {
            *v = x as f64;
        }
    }
    s
}

/// Scaled jammer samples `w[k]`, one `antennas`-vector per sample.
pub fn jammer_waveform(spec: &JammerSpec, seq: &SyncSequence, scenario: &TrialScenario) -> Vec<Vec<Complex64>> {
    let n_ant = spec.antennas;
    let mut w = vec![vec![Complex64::new(0.0, 0.0); n_ant]; scenario.length];
    if spec.is_silent() {
        return w;
    }
    let scale = calibrate(scenario.snr_db, spec.rho_db).jammer_scale;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, JAMMER_STREAM));
    let per_ant = 1.0 / n_ant as f64;
    match spec.kind {
        JammerKind::None => {}
        JammerKind::Barrage => {
            for wk in &mut w {
                wk.iter_mut().for_each(|x| *x = cn(&mut rng, per_ant) * scale);
            }
        }
        JammerKind::Erratic => {
            for wk in &mut w {
                if rng.random_bool(spec.duty) {
                    wk.iter_mut().for_each(|x| *x = cn(&mut rng, per_ant) * scale);
                }
            }
        }
        JammerKind::AntennaSwitching => {
            let mut active = rng.random_range(0..n_ant);
            for wk in &mut w {
                if n_ant > 1 && rng.random_bool(spec.switch_prob) {
                    active = (active + rng.random_range(1..n_ant)) % n_ant;
                }
                wk[active] = cn(&mut rng, 1.0) * scale;
            }
        }
        JammerKind::DelayedSpoofing => {
            let s = legit_symbols(seq, scenario.l, scenario.length);
            let amp = scale * per_ant.sqrt();
            for (k, wk) in w.iter_mut().enumerate().skip(spec.spoof_delay) {
                let src = k - spec.spoof_delay;
                // only symbols already on the air
                debug_assert!(src < k);
                wk.iter_mut().for_each(|x| *x = Complex64::new(s[src] * amp, 0.0));
            }
        }
    }
    w
}

pub fn noise(scenario: &TrialScenario) -> Vec<CVec> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, NOISE_STREAM));
    (0..scenario.length)
        .map(|_| std::array::from_fn(|_| if scenario.n0 > 0.0 { cn(&mut rng, scenario.n0) } else { Complex64::new(0.0, 0.0) }))
        .collect()
}

pub fn synth_receive(
    scenario: &TrialScenario,
    channel: &ChannelRealization,
    spec: &JammerSpec,
    seq: &SyncSequence,
) -> Vec<CVec> {
    let s = legit_symbols(seq, scenario.l, scenario.length);
    let w = jammer_waveform(spec, seq, scenario);
    let n = noise(scenario);
    (0..scenario.length)
        .map(|k| {
            std::array::from_fn(|b| {
                let jw: Complex64 = channel.j.iter().zip(&w[k]).map(|(col, wi)| col[b] * wi).sum();
                channel.h[b] * s[k] + jw + n[k][b]
            })
        })
        .collect()
}

/// Draws the scenario's channel and synthesizes its stream.
pub fn synthesize(scenario: &TrialScenario, spec: &JammerSpec, seq: &SyncSequence) -> (ChannelRealization, Vec<CVec>) {
    let ch = draw_channel(derive_seed(scenario.seed, CHANNEL_STREAM), spec.antennas);
    let y = synth_receive(scenario, &ch, spec, seq);
    (ch, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::B;

    fn scen(l: usize, n0: f64, seed: u64) -> TrialScenario {
        TrialScenario { l, snr_db: 0.0, n0, seed, length: 64 }
    }

    #[test]
    fn channel_determinism_and_shape() {
        assert_eq!(draw_channel(5, 2), draw_channel(5, 2));
        assert_ne!(draw_channel(5, 2), draw_channel(6, 2));
        assert!(draw_channel(5, 0).j.is_empty());
        assert_eq!(draw_channel(5, 2).j.len(), 2);
    }

    #[test]
    fn channel_entry_variance() {
        let mut acc = 0.0;
        let n = 10_000;
        for s in 0..n {
            acc += draw_channel(s, 0).h[0].norm_sqr();
        }
        let var = acc / n as f64;
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn calibration_examples() {
        assert_eq!(calibrate(10.0, f64::NEG_INFINITY).jammer_scale, 0.0);
        assert!((calibrate(0.0, 0.0).n0 - 1.0).abs() < 1e-15);
        let c = calibrate(5.0, 30.0);
        assert!((c.jammer_scale.powi(2) / c.signal_scale.powi(2) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn silent_jammer() {
        let seq = SyncSequence::default();
        let w = jammer_waveform(&JammerSpec::default(), &seq, &scen(10, 1.0, 1));
        assert!(w.iter().flatten().all(|x| x.norm_sqr() == 0.0));
    }

    #[test]
    fn spoofer_is_delayed_copy() {
        let seq = SyncSequence::default();
        let sc = scen(20, 1.0, 2);
        let spec = JammerSpec::new(JammerKind::DelayedSpoofing, 0.0);
        let w = jammer_waveform(&spec, &seq, &sc);
        let s = legit_symbols(&seq, sc.l, sc.length);
        for (k, wk) in w.iter().enumerate() {
            if k < sc.l + 1 {
                assert!(wk.iter().all(|x| x.norm_sqr() == 0.0));
            }
            let want = if k >= 1 { s[k - 1] / 2f64.sqrt() } else { 0.0 };
            assert!(wk.iter().all(|x| (x.re - want).abs() < 1e-15 && x.im == 0.0));
        }
    }

    #[test]
    fn antenna_switching_uses_one_antenna() {
        let seq = SyncSequence::default();
        let spec = JammerSpec::new(JammerKind::AntennaSwitching, 10.0);
        let w = jammer_waveform(&spec, &seq, &TrialScenario { length: 2000, ..scen(0, 1.0, 3) });
        let mut switches = 0;
        let mut prev = None;
        for wk in &w {
            let on: Vec<_> = (0..2).filter(|&i| wk[i].norm_sqr() > 0.0).collect();
            assert_eq!(on.len(), 1);
            if prev.is_some_and(|p| p != on[0]) {
                switches += 1;
            }
            prev = Some(on[0]);
        }
        let rate = switches as f64 / 1999.0;
        assert!((rate - 0.1).abs() < 0.03, "{rate}");
    }

    #[test]
    fn erratic_duty() {
        let seq = SyncSequence::default();
        let spec = JammerSpec::new(JammerKind::Erratic, 20.0);
        let w = jammer_waveform(&spec, &seq, &TrialScenario { length: 10_000, ..scen(0, 1.0, 4) });
        let active: Vec<f64> = w.iter().map(|wk| wk.iter().map(|x| x.norm_sqr()).sum::<f64>()).filter(|&p| p > 0.0).collect();
        let duty = active.len() as f64 / 10_000.0;
        assert!((duty - 0.5).abs() < 0.02, "{duty}");
        // power over active samples meets rho
        let p = active.iter().sum::<f64>() / active.len() as f64;
        assert!((p / 100.0 - 1.0).abs() < 0.1, "{p}");
    }

    #[test]
    fn barrage_power_ratio() {
        let seq = SyncSequence::default();
        let spec = JammerSpec::new(JammerKind::Barrage, 30.0);
        let (mut pj, mut ps) = (0.0, 0.0);
        for seed in 0..1000u64 {
            let sc = TrialScenario { l: 0, snr_db: 5.0, n0: 0.0, seed, length: K + 1 };
            let ch = draw_channel(derive_seed(seed, CHANNEL_STREAM), 2);
            let w = jammer_waveform(&spec, &seq, &sc);
            let s = legit_symbols(&seq, 0, sc.length);
            for k in 0..10 {
                for b in 0..B {
                    pj += (ch.j[0][b] * w[k][0] + ch.j[1][b] * w[k][1]).norm_sqr();
                    ps += (ch.h[b] * s[k]).norm_sqr();
                }
            }
        }
        let rho = pj / ps;
        assert!((rho / 1000.0 - 1.0).abs() < 0.1, "{rho}");
    }

    #[test]
    fn noise_free_stream_structure() {
        let seq = SyncSequence::default();
        let sc = scen(12, 0.0, 7);
        let (ch, y) = synthesize(&sc, &JammerSpec::default(), &seq);
        for yk in &y[..12] {
            assert!(yk.iter().all(|z| z.norm_sqr() == 0.0));
        }
        for (i, &s) in seq.symbols().iter().enumerate() {
            for b in 0..B {
                assert_eq!(y[12 + i][b], ch.h[b] * s as f64);
            }
        }
    }

    #[test]
    fn scenario_validation() {
        assert!(TrialScenario::new(64 - K - 1, 5.0, 0, 64).is_ok());
        assert!(TrialScenario::new(64 - K, 5.0, 0, 64).is_err());
        assert!(TrialScenario::new(0, 5.0, 0, K).is_err());
        let bad = JammerSpec { duty: 1.5, ..Default::default() };
        assert_eq!(bad.validate(), Err(AirlinkError::Duty(1.5)));
        assert!(JammerSpec { spoof_delay: 0, ..Default::default() }.validate().is_err());
        assert!(JammerSpec { antennas: 3, ..Default::default() }.validate().is_err());
    }
}
