//! Monte Carlo experiment runner: trials, threshold sweeps and CSV output.
//!
//! Every trial draws its own seed from `(master_seed, index)`, so results do
//! not depend on execution order. A trial's score trace does not depend on
//! τ, so a sweep scores each stream once and replays every threshold over
//! the stored trace.

pub mod selftest;

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::airlink::{derive_seed, synthesize, AirlinkError, JammerSpec, TrialScenario};
use crate::detector::{self, CVec, DetectorConfig, DetectorError, SyncSequence, Trace};
use crate::K;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Airlink(#[from] AirlinkError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioTemplate {
    pub length: usize,
    pub snr_db: f64,
    /// `L` is drawn uniformly from `[margin, length − K − margin]`.
    pub margin: usize,
    /// Fixed start index instead of a random one.
    pub l: Option<usize>,
}

impl Default for ScenarioTemplate {
    fn default() -> Self {
        ScenarioTemplate { length: 64, snr_db: 5.0, margin: 8, l: None }
    }
}

impl ScenarioTemplate {
    fn l_range(&self) -> Result<(usize, usize), HarnessError> {
        let last = self.length.checked_sub(K + 1).ok_or_else(|| {
            HarnessError::Config(format!("stream length {} below K + 1", self.length))
        })?;
        if let Some(l) = self.l {
            if l > last {
                return Err(HarnessError::Config(format!("L = {l} exceeds {last}")));
            }
            return Ok((l, l));
        }
        let hi = (self.length - K).checked_sub(self.margin).filter(|&h| h >= self.margin && h <= last);
        hi.map(|h| (self.margin, h)).ok_or_else(|| {
            HarnessError::Config(format!("margin {} leaves no start index in {} samples", self.margin, self.length))
        })
    }
}

pub fn default_tau_grid() -> Vec<f64> {
    (1..=K).map(|t| t as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub detector: DetectorConfig,
    pub sequence: SyncSequence,
    pub scenario: ScenarioTemplate,
    pub jammer: JammerSpec,
    pub trials: u64,
    pub tau_grid: Vec<f64>,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            detector: DetectorConfig::default(),
            sequence: SyncSequence::default(),
            scenario: ScenarioTemplate::default(),
            jammer: JammerSpec::default(),
            trials: 2000,
            tau_grid: default_tau_grid(),
            master_seed: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let p = path.as_ref();
        let s = fs::read_to_string(p).map_err(|source| HarnessError::Io { path: p.into(), source })?;
        Self::from_toml(&s)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials < 1 {
            return Err(HarnessError::Config("trials must be >= 1".into()));
        }
        if self.tau_grid.is_empty() {
            return Err(HarnessError::Config("tau grid is empty".into()));
        }
        if self.tau_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(HarnessError::Config("tau grid values must be finite and >= 0".into()));
        }
        if self.tau_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HarnessError::Config("tau grid must be strictly increasing".into()));
        }
        self.scenario.l_range()?;
        self.detector.validate()?;
        self.jammer.validate()?;
        TrialScenario::new(0, self.scenario.snr_db, 0, self.scenario.length)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Success,
    FalseAlarm,
    Miss,
}

pub fn classify(l: usize, declared: Option<usize>) -> Outcome {
    match declared {
        Some(d) if d == l => Outcome::Success,
        Some(_) => Outcome::FalseAlarm,
        None => Outcome::Miss,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialOutcome {
    pub trial: u64,
    pub l: usize,
    pub declared: Option<usize>,
    pub class: Outcome,
}

pub fn trial_seed(master_seed: u64, trial: u64) -> u64 {
    derive_seed(master_seed, trial)
}

pub fn trial_scenario(cfg: &ExperimentConfig, trial: u64) -> Result<TrialScenario, HarnessError> {
    let (lo, hi) = cfg.scenario.l_range()?;
    let seed = trial_seed(cfg.master_seed, trial);
    let l = ChaCha8Rng::seed_from_u64(seed).random_range(lo..=hi);
    Ok(TrialScenario::new(l, cfg.scenario.snr_db, seed, cfg.scenario.length)?)
}

pub fn trial_stream(cfg: &ExperimentConfig, trial: u64) -> Result<(TrialScenario, Vec<CVec>), HarnessError> {
    let sc = trial_scenario(cfg, trial)?;
    let (_, y) = synthesize(&sc, &cfg.jammer, &cfg.sequence);
    Ok((sc, y))
}

/// Streams one trial through the detector at `cfg.detector.tau`.
pub fn run_trial(cfg: &ExperimentConfig, trial: u64) -> Result<TrialOutcome, HarnessError> {
    let (sc, y) = trial_stream(cfg, trial)?;
    let d = detector::detect(&y, &cfg.sequence, &cfg.detector)?;
    Ok(TrialOutcome { trial, l: sc.l, declared: d.declared, class: classify(sc.l, d.declared) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialTrace {
    pub trial: u64,
    pub l: usize,
    pub trace: Trace,
}

impl TrialTrace {
    pub fn outcome(&self, tau: f64) -> TrialOutcome {
        let declared = self.trace.declared(tau);
        TrialOutcome { trial: self.trial, l: self.l, declared, class: classify(self.l, declared) }
    }
}

pub fn trial_trace(cfg: &ExperimentConfig, trial: u64) -> Result<TrialTrace, HarnessError> {
    let (sc, y) = trial_stream(cfg, trial)?;
    Ok(TrialTrace { trial, l: sc.l, trace: detector::trace(&y, &cfg.sequence, &cfg.detector)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon work-stealing over trials; sequential without the `parallel`
    /// feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// `f(0..n)` in index order.
pub fn map_trials<T, F>(n: u64, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

pub fn run_traces(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<TrialTrace>, HarnessError> {
    cfg.validate()?;
    map_trials(cfg.trials, exec, |t| trial_trace(cfg, t)).into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SerPoint {
    pub tau: f64,
    pub ser: f64,
    pub fa_rate: f64,
    pub miss_rate: f64,
    /// Wald 95% half-width on `ser`.
    pub ci95: f64,
}

pub fn ser_point(tau: f64, outcomes: &[TrialOutcome]) -> SerPoint {
    let n = outcomes.len() as f64;
    let fa = outcomes.iter().filter(|o| o.class == Outcome::FalseAlarm).count() as f64;
    let miss = outcomes.iter().filter(|o| o.class == Outcome::Miss).count() as f64;
    let ser = (fa + miss) / n;
    SerPoint { tau, ser, fa_rate: fa / n, miss_rate: miss / n, ci95: 1.96 * (ser * (1.0 - ser) / n).sqrt() }
}

pub fn outcomes_at(traces: &[TrialTrace], tau: f64) -> Vec<TrialOutcome> {
    traces.iter().map(|t| t.outcome(tau)).collect()
}

pub fn aggregate(traces: &[TrialTrace], tau_grid: &[f64]) -> Vec<SerPoint> {
    tau_grid.iter().map(|&tau| ser_point(tau, &outcomes_at(traces, tau))).collect()
}

pub fn run_sweep_with(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<SerPoint>, HarnessError> {
    Ok(aggregate(&run_traces(cfg, exec)?, &cfg.tau_grid))
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SerPoint>, HarnessError> {
    run_sweep_with(cfg, Execution::default())
}

pub const CSV_HEADER: &str = "tau,ser,fa_rate,miss_rate,ci95";

pub fn write_csv<W: Write>(mut w: W, points: &[SerPoint]) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for p in points {
        writeln!(w, "{:.6},{:.6},{:.6},{:.6},{:.6}", p.tau, p.ser, p.fa_rate, p.miss_rate, p.ci95)?;
    }
    w.flush()
}

pub fn emit_csv(points: &[SerPoint], path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let p = path.as_ref();
    let io_err = |source| HarnessError::Io { path: p.into(), source };
    let f = fs::File::create(p).map_err(io_err)?;
    write_csv(io::BufWriter::new(f), points).map_err(io_err)
}

pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<SerPoint>, HarnessError> {
    let mut lines = r.lines().enumerate();
    let bad = |line, msg: String| HarnessError::Csv { line: line + 1, msg };
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == CSV_HEADER => {}
        _ => return Err(bad(0, "missing header".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| bad(i, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|e| bad(i, e.to_string())))
            .collect::<Result<_, _>>()?;
        let [tau, ser, fa_rate, miss_rate, ci95] = v[..] else {
            return Err(bad(i, format!("expected 5 fields, got {}", v.len())));
        };
        out.push(SerPoint { tau, ser, fa_rate, miss_rate, ci95 });
    }
    Ok(out)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<SerPoint>, HarnessError> {
    let p = path.as_ref();
    let f = fs::File::open(p).map_err(|source| HarnessError::Io { path: p.into(), source })?;
    read_csv(io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airlink::JammerKind;
    use crate::detector::Backend;

    fn small(trials: u64) -> ExperimentConfig {
        ExperimentConfig { trials, ..Default::default() }
    }

    #[test]
    fn classification_partition() {
        assert_eq!(classify(10, Some(10)), Outcome::Success);
        assert_eq!(classify(10, Some(3)), Outcome::FalseAlarm);
        assert_eq!(classify(10, Some(11)), Outcome::FalseAlarm);
        assert_eq!(classify(10, None), Outcome::Miss);
    }

    #[test]
    fn config_validation() {
        assert!(small(1).validate().is_ok());
        assert!(small(0).validate().is_err());
        let mut c = small(1);
        c.tau_grid = vec![1.0, 1.0];
        assert!(c.validate().is_err());
        c.tau_grid.clear();
        assert!(c.validate().is_err());
        let mut c = small(1);
        c.scenario.length = K;
        assert!(c.validate().is_err());
        c.scenario = ScenarioTemplate { length: 30, margin: 8, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_from_toml() {
        let c = ExperimentConfig::from_toml(
            r#"
            trials = 10
            tau_grid = [2.0, 4.0]
            master_seed = 99
            [scenario]
            snr_db = 5.0
            [jammer]
            kind = "barrage"
            rho_db = 30.0
            [detector]
            backend = "fixed"
            "#,
        )
        .unwrap();
        assert_eq!(c.trials, 10);
        assert_eq!(c.jammer.kind, JammerKind::Barrage);
        assert_eq!(c.detector.backend, Backend::Fixed);
        assert_eq!(c.scenario.length, 64);
        assert!(ExperimentConfig::from_toml("trials = 0").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn start_index_within_range() {
        let c = small(200);
        for t in 0..200 {
            let s = trial_scenario(&c, t).unwrap();
            assert!((8..=40).contains(&s.l));
        }
    }

    #[test]
    fn tau_zero_declares_first_index() {
        let mut c = small(20);
        c.detector.tau = 0.0;
        for t in 0..20 {
            let o = run_trial(&c, t).unwrap();
            assert_eq!(o.declared, Some(0));
            assert_eq!(o.class, Outcome::FalseAlarm);
        }
    }

    #[test]
    fn trace_replay_matches_streaming() {
        let mut c = small(12);
        c.jammer = JammerSpec::new(JammerKind::Barrage, 30.0);
        for backend in [Backend::Float, Backend::Fixed] {
            c.detector.backend = backend;
            for t in 0..c.trials {
                let tr = trial_trace(&c, t).unwrap();
                for tau in [0.5, 4.0, 9.0, 15.0] {
                    c.detector.tau = tau;
                    assert_eq!(run_trial(&c, t).unwrap(), tr.outcome(tau));
                }
            }
        }
    }

    #[test]
    fn single_trial_ser_is_binary() {
        for p in run_sweep(&small(1)).unwrap() {
            assert!(p.ser == 0.0 || p.ser == 1.0);
        }
    }

    #[test]
    fn seeding_is_prefix_stable_and_order_free() {
        let a = run_traces(&small(8), Execution::Sequential).unwrap();
        let b = run_traces(&small(16), Execution::Parallel).unwrap();
        assert_eq!(a[..], b[..8]);
    }

    #[test]
    fn csv_roundtrip() {
        let pts = vec![
            SerPoint { tau: 1.0, ser: 0.5, fa_rate: 0.25, miss_rate: 0.25, ci95: 0.1 },
            SerPoint { tau: 2.5, ser: 0.0, fa_rate: 0.0, miss_rate: 0.0, ci95: 0.0 },
        ];
        let mut buf = Vec::new();
        write_csv(&mut buf, &pts).unwrap();
        let s = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(s.lines().nth(1).unwrap(), "1.000000,0.500000,0.250000,0.250000,0.100000");
        assert_eq!(read_csv(&buf[..]).unwrap(), pts);

        let mut buf = Vec::new();
        write_csv(&mut buf, &[]).unwrap();
        assert_eq!(buf, b"tau,ser,fa_rate,miss_rate,ci95\n");
        assert!(read_csv(&b"a,b\n"[..]).is_err());
    }

    #[test]
    fn emit_csv_reports_path() {
        let e = emit_csv(&[], "/nonexistent-dir/x.csv").unwrap_err();
        assert!(e.to_string().contains("/nonexistent-dir/x.csv"));
    }
}
