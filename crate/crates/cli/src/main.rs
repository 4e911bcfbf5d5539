use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use jass_core::airlink::{synthesize, JammerKind, JammerSpec, TrialScenario};
use jass_core::detector::{self, Backend, CycleModel, DetectorConfig, Mitigation, SyncSequence};
use jass_core::kernels::InvSqrtLut;
use jass_core::xharness::{self, selftest, ExperimentConfig, Execution};
use jass_core::iq;

/// Jammer-resilient multi-antenna time synchronization: detector, simulator
/// and experiment runner.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Master seed; overrides `master_seed` from a sweep config and seeds
    /// synthesis and self-tests.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Threshold sweep; writes `tau,ser,fa_rate,miss_rate,ci95`.
    Sweep {
        /// TOML experiment config. Defaults: 2000 trials, tau 1..=16, 64-sample
        /// streams at 5 dB SNR, L uniform in [8, 40], no jammer.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Run trials on one thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Run the detector on an IQ file; prints the declared index or MISS.
    Detect {
        #[arg(long)]
        iq: PathBuf,
        /// Sequence as a ±1 list ("+1,-1,...") or a file containing one.
        /// Defaults to the built-in sequence.
        #[arg(long)]
        seq: Option<String>,
        #[arg(long, default_value_t = 8.0)]
        tau: f64,
        #[arg(long, default_value = "float")]
        backend: Backend,
        /// Disable jammer mitigation.
        #[arg(long)]
        unmitigated: bool,
        /// Write the per-index score trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Synthesize one receive stream into an IQ file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// none, barrage, erratic, antenna-switching or delayed-spoofing.
        #[arg(long, default_value = "none")]
        jammer: String,
        #[arg(long, default_value_t = 0.0)]
        rho_db: f64,
        #[arg(long, default_value_t = 5.0)]
        snr_db: f64,
        /// True start index of the sequence.
        #[arg(long, default_value_t = 20)]
        l: usize,
        #[arg(long, default_value_t = 64)]
        length: usize,
    },
    /// Oracle-equivalence and invariant checks; exit code 0 on pass.
    Selftest,
    /// Per-operation cycle schedule and the per-index total.
    Cycles,
    /// Export the inverse-square-root table as CSV.
    Lut {
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_sequence(arg: Option<&str>) -> Result<SyncSequence> {
    let Some(s) = arg else { return Ok(SyncSequence::default()) };
    if let Ok(seq) = s.parse() {
        return Ok(seq);
    }
    let text = fs::read_to_string(s).with_context(|| format!("--seq {s:?} is neither a ±1 list nor a readable file"))?;
    text.trim().parse().with_context(|| format!("parsing sequence file {s}"))
}

fn parse_jammer(s: &str) -> Result<JammerKind> {
    Ok(match s {
        "none" => JammerKind::None,
        "barrage" => JammerKind::Barrage,
        "erratic" => JammerKind::Erratic,
        "antenna-switching" => JammerKind::AntennaSwitching,
        "delayed-spoofing" => JammerKind::DelayedSpoofing,
        _ => bail!("unknown jammer {s:?}"),
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Sweep { config, out, sequential } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.master_seed = s;
            }
            let exec = if sequential { Execution::Sequential } else { Execution::default() };
            let points = xharness::run_sweep_with(&cfg, exec)?;
            xharness::emit_csv(&points, &out)?;
            let best = points.iter().min_by(|a, b| a.ser.total_cmp(&b.ser)).expect("non-empty grid");
            println!("{} points -> {} (min SER {:.4} at tau {})", points.len(), out.display(), best.ser, best.tau);
        }
        Cmd::Detect { iq: path, seq, tau, backend, unmitigated, trace } => {
            let stream = iq::load(&path).with_context(|| format!("reading {}", path.display()))?;
            let seq = parse_sequence(seq.as_deref())?;
            let cfg = DetectorConfig {
                tau,
                backend,
                mitigation: if unmitigated { Mitigation::Unmitigated } else { Mitigation::Jass },
                ..Default::default()
            };
            let d = detector::detect(&stream, &seq, &cfg)?;
            match d.declared {
                Some(l) => println!("{l}"),
                None => println!("MISS"),
            }
            if let Some(t) = trace {
                let f = fs::File::create(&t).with_context(|| format!("creating {}", t.display()))?;
                detector::write_trace_csv(std::io::BufWriter::new(f), &d.scores, d.declared)?;
            }
        }
        Cmd::Synth { out, jammer, rho_db, snr_db, l, length } => {
            let spec = JammerSpec::new(parse_jammer(&jammer)?, rho_db);
            spec.validate()?;
            let sc = TrialScenario::new(l, snr_db, cli.seed.unwrap_or(1), length)?;
            let (_, y) = synthesize(&sc, &spec, &SyncSequence::default());
            iq::save(&out, &y)?;
            println!("{} samples, L = {l} -> {}", y.len(), out.display());
        }
        Cmd::Selftest => {
            let report = selftest::run(cli.seed.unwrap_or(1));
            print!("{report}");
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Cycles => println!("{}", CycleModel::default()),
        Cmd::Lut { out } => {
            let f = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            InvSqrtLut::default().write_csv(std::io::BufWriter::new(f))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
