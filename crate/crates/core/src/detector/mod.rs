//! Streaming jammer-aware synchronization.
//!
//! For each candidate delay `ℓ` the detector:
//!
//! 1. correlates the current window `Y_ℓ` with the sequence, `c = Y_ℓ s*`;
//! 2. forms `Λ = ‖s‖² Φ − c cᴴ` from the running Gram matrix `Φ = Y_ℓ Y_ℓᴴ`;
//! 3. estimates two dominant directions of `Λ` with a short power iteration
//!    and deflation (the jammer subspace `A`);
//! 4. evaluates the projected score as a numerator/denominator pair
//!    `(N, D)` without forming the projector, and accepts `ℓ` on `N − Dτ ≥ 0`;
//! 5. otherwise slides `Φ` by one sample with a rank-one downdate and update.
//!
//! The arithmetic lives behind [`Datapath`]: [`float::FloatDatapath`] is the
//! `f64` reference and [`fixed::FixedDatapath`] models the quantized hardware
//! datapath bit for bit.

pub mod cycles;
pub mod fixed;
pub mod float;

use crate::fxp::{quantize, FxFormat, FxReal, WidthLedger};
use crate::kernels::{reseed_chain, XorshiftPair};
use crate::{B, K};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use thiserror::Error;

pub use cycles::{cycles_per_index, CycleModel, OpKind, ScheduleEntry};

/// One receive vector across all antennas.
pub type CVec = [Complex64; B];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("invalid detector configuration: {0}")]
    Config(String),
    #[error("expected {expected} samples, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid synchronization sequence: {0}")]
    Sequence(String),
}

/// The ±1 synchronization sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SyncSequence([i8; K]);

impl SyncSequence {
    pub fn new(symbols: &[i8]) -> Result<Self, DetectorError> {
        if symbols.len() != K {
            return Err(DetectorError::Sequence(format!(
                "need {K} symbols, got {}",
                symbols.len()
            )));
        }
        if let Some(bad) = symbols.iter().find(|&&s| s != 1 && s != -1) {
            return Err(DetectorError::Sequence(format!("symbol {bad} is not ±1")));
        }
        let mut s = [0; K];
        s.copy_from_slice(symbols);
        Ok(SyncSequence(s))
    }

    /// Bit `k` set means symbol `k` is −1.
    pub fn from_bits(bits: u16) -> Self {
        SyncSequence(std::array::from_fn(|k| if bits >> k & 1 == 1 { -1 } else { 1 }))
    }

    pub fn symbols(&self) -> &[i8; K] {
        &self.0
    }

    /// `‖s‖²`, always `K`.
    pub fn energy(&self) -> usize {
        K
    }
}

impl Default for SyncSequence {
    fn default() -> Self {
        // Fixed pseudo-random pattern with low lag-one autocorrelation.
        SyncSequence::from_bits(0b1011_0011_1000_1101)
    }
}

impl FromStr for SyncSequence {
    type Err = DetectorError;

    /// Accepts comma or whitespace separated `+1`/`-1`/`1` entries.
    fn from_str(s: &str) -> Result<Self, DetectorError> {
        let symbols = s
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<i8>()
                    .map_err(|_| DetectorError::Sequence(format!("cannot parse {t:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        SyncSequence::new(&symbols)
    }
}

impl fmt::Display for SyncSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|s| format!("{s:+}")).collect();
        f.write_str(&parts.join(","))
    }
}

impl Serialize for SyncSequence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SyncSequence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<i8>::deserialize(d)?;
        SyncSequence::new(&v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    #[default]
    Float,
    Fixed,
}

impl FromStr for Backend {
    type Err = DetectorError;

    fn from_str(s: &str) -> Result<Self, DetectorError> {
        match s {
            "float" => Ok(Backend::Float),
            "fixed" => Ok(Backend::Fixed),
            other => Err(DetectorError::Config(format!("unknown backend {other:?}"))),
        }
    }
}

/// Whether the jammer subspace is estimated and projected out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mitigation {
    #[default]
    Jass,
    /// `A` forced to zero: plain normalized correlation.
    Unmitigated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Detection threshold τ.
    pub tau: f64,
    /// Last candidate index; `None` runs as far as the stream allows.
    pub ell_max: Option<usize>,
    /// Power iterations per eigenvector.
    pub t_max: usize,
    pub backend: Backend,
    pub mitigation: Mitigation,
    pub prng_seed: XorshiftPair,
    pub widths: WidthLedger,
    /// Fixed backend input gain; `None` selects a block AGC over the stream.
    pub input_gain: Option<f64>,
    /// Receive sample buffer size.
    pub ring_capacity: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            tau: 8.0,
            ell_max: None,
            t_max: 2,
            backend: Backend::Float,
            mitigation: Mitigation::Jass,
            prng_seed: XorshiftPair::DEFAULT,
            widths: WidthLedger::DEFAULT,
            input_gain: None,
            ring_capacity: 1024,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(DetectorError::Config(format!("tau must be >= 0, got {}", self.tau)));
        }
        if self.t_max == 0 {
            return Err(DetectorError::Config("t_max must be >= 1".into()));
        }
        if self.ring_capacity < K + 1 {
            return Err(DetectorError::Config(format!(
                "ring capacity {} below K + 1",
                self.ring_capacity
            )));
        }
        if let Some(g) = self.input_gain {
            if !(g.is_finite() && g > 0.0) {
                return Err(DetectorError::Config(format!("input gain {g} must be positive")));
            }
        }
        Ok(())
    }
}

/// Threshold in both representations; the fixed datapath compares against
/// the quantized value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub value: f64,
    pub quantized: FxReal,
}

impl Threshold {
    pub fn new(tau: f64, fmt: FxFormat) -> Self {
        Threshold {
            value: tau,
            quantized: quantize(tau, fmt),
        }
    }
}

/// Score numerator and denominator in the score-module format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedScore {
    pub n: FxReal,
    pub d: FxReal,
}

/// Score of one candidate delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexScore {
    pub ell: usize,
    pub n: f64,
    pub d: f64,
    /// Bit-exact terms when produced by the fixed datapath.
    pub exact: Option<FixedScore>,
    /// Subspace columns that survived (0..=2).
    pub active: u8,
}

impl IndexScore {
    pub fn ratio(&self) -> f64 {
        self.n / self.d
    }

    /// `N − Dτ ≥ 0`; equality accepts.
    pub fn accepts(&self, tau: &Threshold) -> bool {
        match self.exact {
            Some(FixedScore { n, d }) => {
                debug_assert_eq!(n.fmt(), d.fmt());
                let tf = tau.quantized.fmt().frac_bits();
                ((n.raw() as i128) << tf) - d.raw() as i128 * tau.quantized.raw() as i128 >= 0
            }
            None => self.n - self.d * tau.value >= 0.0,
        }
    }
}

/// Outcome of a detector run.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub declared: Option<usize>,
    pub scores: Vec<IndexScore>,
}

/// First index whose score passes `tau`.
pub fn first_acceptance(scores: &[IndexScore], tau: &Threshold) -> Option<usize> {
    scores.iter().find(|s| s.accepts(tau)).map(|s| s.ell)
}

/// Arithmetic backend of the detector.
pub trait Datapath {
    type Sample: Clone;
    type Gram: Clone;

    fn ingest(&self, y: &CVec) -> Self::Sample;

    /// Gram matrix of exactly `K` samples.
    fn phi_init(&self, window: &[Self::Sample]) -> Self::Gram;

    fn phi_slide(&self, phi: &mut Self::Gram, leaving: &Self::Sample, entering: &Self::Sample);

    /// Score one window of `K` samples. Draws the power-method starting
    /// vectors from `prng`.
    fn evaluate(
        &self,
        window: &[Self::Sample],
        phi: &Self::Gram,
        seq: &SyncSequence,
        prng: &mut XorshiftPair,
        mitigation: Mitigation,
    ) -> IndexScore;

    fn threshold(&self, tau: f64) -> Threshold;
}

/// Sliding receive window plus the running Gram matrix.
#[derive(Debug, Clone)]
pub struct WindowState<S, G> {
    ring: VecDeque<S>,
    capacity: usize,
    phi: Option<G>,
    ell: usize,
}

impl<S, G> WindowState<S, G> {
    pub fn new(capacity: usize) -> Self {
        WindowState {
            ring: VecDeque::with_capacity(capacity.min(K + 1)),
            capacity,
            phi: None,
            ell: 0,
        }
    }

    /// Candidate index evaluated next.
    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn phi(&self) -> Option<&G> {
        self.phi.as_ref()
    }

    pub fn buffered(&self) -> usize {
        self.ring.len()
    }
}

/// Single-stream detector fed one receive vector at a time.
#[derive(Debug, Clone)]
pub struct SyncDetector<D: Datapath> {
    dp: D,
    seq: SyncSequence,
    mitigation: Mitigation,
    ell_max: Option<usize>,
    prng: XorshiftPair,
    state: WindowState<D::Sample, D::Gram>,
}

impl<D: Datapath> SyncDetector<D> {
    pub fn new(dp: D, seq: SyncSequence, cfg: &DetectorConfig) -> Self {
        SyncDetector {
            dp,
            seq,
            mitigation: cfg.mitigation,
            ell_max: cfg.ell_max,
            prng: cfg.prng_seed,
            state: WindowState::new(cfg.ring_capacity),
        }
    }

    pub fn datapath(&self) -> &D {
        &self.dp
    }

    pub fn state(&self) -> &WindowState<D::Sample, D::Gram> {
        &self.state
    }

    /// True once every index up to `ell_max` has been scored.
    pub fn exhausted(&self) -> bool {
        self.ell_max.is_some_and(|m| self.state.ell > m)
    }

    /// Buffers `y`; when it completes the lookahead for the oldest pending
    /// index, scores that index and slides the window.
    pub fn push(&mut self, y: &CVec) -> Option<IndexScore> {
        if self.exhausted() {
            return None;
        }
        let st = &mut self.state;
        st.ring.push_back(self.dp.ingest(y));
        debug_assert!(st.ring.len() <= st.capacity);
        if st.phi.is_none() && st.ring.len() == K {
            let win = st.ring.make_contiguous();
            st.phi = Some(self.dp.phi_init(win));
        }
        if st.ring.len() <= K {
            return None;
        }
        if st.ell > 0 {
            self.prng = reseed_chain(self.prng);
        }
        let win = st.ring.make_contiguous();
        let phi = st.phi.as_mut().expect("Gram matrix initialized");
        let mut score = self
            .dp
            .evaluate(&win[..K], phi, &self.seq, &mut self.prng, self.mitigation);
        score.ell = st.ell;
        let leaving = st.ring.pop_front().expect("window is full");
        let entering = st.ring.back().expect("lookahead present");
        self.dp.phi_slide(phi, &leaving, entering);
        st.ell += 1;
        Some(score)
    }

    /// Runs until the first acceptance, the end of the stream or `ell_max`.
    pub fn run(&mut self, stream: &[CVec], tau: f64) -> Decision {
        let tau = self.dp.threshold(tau);
        let mut scores = Vec::new();
        for y in stream {
            if let Some(s) = self.push(y) {
                scores.push(s);
                if s.accepts(&tau) {
                    return Decision {
                        declared: Some(s.ell),
                        scores,
                    };
                }
            }
            if self.exhausted() {
                break;
            }
        }
        Decision {
            declared: None,
            scores,
        }
    }

    /// Scores every reachable index without stopping.
    pub fn trace(&mut self, stream: &[CVec]) -> Vec<IndexScore> {
        let mut scores = Vec::new();
        for y in stream {
            if let Some(s) = self.push(y) {
                scores.push(s);
            }
            if self.exhausted() {
                break;
            }
        }
        scores
    }
}

/// Full score trace of one stream; decisions for any τ follow from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub scores: Vec<IndexScore>,
    tau_fmt: FxFormat,
}

impl Trace {
    pub fn threshold(&self, tau: f64) -> Threshold {
        Threshold::new(tau, self.tau_fmt)
    }

    pub fn declared(&self, tau: f64) -> Option<usize> {
        first_acceptance(&self.scores, &self.threshold(tau))
    }

    pub fn decision(&self, tau: f64) -> Decision {
        let declared = self.declared(tau);
        let end = declared.map_or(self.scores.len(), |d| d + 1);
        Decision {
            declared,
            scores: self.scores[..end].to_vec(),
        }
    }
}

/// Runs the configured backend over a whole stream and stops at the first
/// acceptance.
pub fn detect(stream: &[CVec], seq: &SyncSequence, cfg: &DetectorConfig) -> Result<Decision, DetectorError> {
    cfg.validate()?;
    Ok(match cfg.backend {
        Backend::Float => SyncDetector::new(float::FloatDatapath::new(cfg), *seq, cfg).run(stream, cfg.tau),
        Backend::Fixed => {
            SyncDetector::new(fixed::FixedDatapath::for_stream(cfg, stream), *seq, cfg).run(stream, cfg.tau)
        }
    })
}

/// Scores every index up to `ell_max` (τ-independent).
pub fn trace(stream: &[CVec], seq: &SyncSequence, cfg: &DetectorConfig) -> Result<Trace, DetectorError> {
    cfg.validate()?;
    let scores = match cfg.backend {
        Backend::Float => SyncDetector::new(float::FloatDatapath::new(cfg), *seq, cfg).trace(stream),
        Backend::Fixed => SyncDetector::new(fixed::FixedDatapath::for_stream(cfg, stream), *seq, cfg).trace(stream),
    };
    Ok(Trace {
        scores,
        tau_fmt: cfg.widths.tau,
    })
}

/// Per-index diagnostic rows `ell,N,D,N/D,declared`.
pub fn write_trace_csv<W: Write>(mut w: W, scores: &[IndexScore], declared: Option<usize>) -> io::Result<()> {
    writeln!(w, "ell,N,D,N/D,declared")?;
    for s in scores {
        writeln!(
            w,
            "{},{:.9e},{:.9e},{:.9},{}",
            s.ell,
            s.n,
            s.d,
            s.ratio(),
            u8::from(declared == Some(s.ell))
        )?;
    }
    Ok(())
}
