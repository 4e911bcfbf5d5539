//! Clock-cycle bookkeeping for one delay index.
//!
//! Only three latencies are fixed by the hardware description: 19 cycles for
//! a `Λa` product in accumulator configuration, 19 cycles for a rank-one
//! update in multiply-subtract configuration and 5 cycles for an adder-tree
//! inner product. The rest of the table is an explicit schedule whose total
//! matches the 268 cycles per index of the reference design.

use std::fmt;

pub const MATVEC_CYCLES: u32 = 19;
pub const RANK_ONE_CYCLES: u32 = 19;
pub const INNER_PRODUCT_CYCLES: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    /// `c = Y s*`, sign-adjusted accumulation.
    Correlate,
    /// `Λ = ‖s‖²Φ − ccᴴ`.
    LambdaBuild,
    PrngDraw,
    /// `a' = Λa`.
    PowerMatvec,
    NormSquared,
    Pseudonormalize,
    InvSqrt,
    /// `Λ ← Λ − a'aᴴ`.
    Deflate,
    BTilde,
    /// `v = Aᴴc`.
    ProjectCorrelation,
    /// `W = AᴴΦ`.
    ProjectGram,
    /// `tr(B̃WA)` inner products.
    GramTrace,
    /// `‖c‖²` and `tr Φ` on the shared tree.
    Energies,
    /// `N`, `D` and `N − Dτ` in the score module.
    Score,
    /// `Φ ← Φ − y yᴴ + y' y'ᴴ`.
    Slide,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OpKind::Correlate => "correlate",
            OpKind::LambdaBuild => "lambda-build",
            OpKind::PrngDraw => "prng-draw",
            OpKind::PowerMatvec => "power-matvec",
            OpKind::NormSquared => "norm-squared",
            OpKind::Pseudonormalize => "pseudonormalize",
            OpKind::InvSqrt => "inv-sqrt",
            OpKind::Deflate => "deflate",
            OpKind::BTilde => "b-tilde",
            OpKind::ProjectCorrelation => "project-correlation",
            OpKind::ProjectGram => "project-gram",
            OpKind::GramTrace => "gram-trace",
            OpKind::Energies => "energies",
            OpKind::Score => "score",
            OpKind::Slide => "slide",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleEntry {
    pub op: OpKind,
    pub count: u32,
    pub cycles_each: u32,
}

impl ScheduleEntry {
    pub const fn new(op: OpKind, count: u32, cycles_each: u32) -> Self {
        ScheduleEntry { op, count, cycles_each }
    }

    pub fn total(&self) -> u32 {
        self.count * self.cycles_each
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleModel {
    pub schedule: Vec<ScheduleEntry>,
}

impl CycleModel {
    pub fn empty() -> Self {
        CycleModel { schedule: Vec::new() }
    }

    pub fn total(&self) -> u32 {
        cycles_per_index(self)
    }

    pub fn cycles_for(&self, op: OpKind) -> u32 {
        self.schedule.iter().filter(|e| e.op == op).map(ScheduleEntry::total).sum()
    }
}

impl Default for CycleModel {
    fn default() -> Self {
        use OpKind::*;
        let i = crate::I_MAX as u32;
        let t = 2u32;
        CycleModel {
            schedule: vec![
                ScheduleEntry::new(Correlate, 1, MATVEC_CYCLES),
                ScheduleEntry::new(LambdaBuild, 1, RANK_ONE_CYCLES),
                ScheduleEntry::new(PrngDraw, i, 1),
                ScheduleEntry::new(PowerMatvec, i * t, MATVEC_CYCLES),
                ScheduleEntry::new(NormSquared, i * t, INNER_PRODUCT_CYCLES),
                ScheduleEntry::new(Pseudonormalize, i * t, 1),
                ScheduleEntry::new(InvSqrt, i * t, 2),
                ScheduleEntry::new(Deflate, i, RANK_ONE_CYCLES),
                ScheduleEntry::new(BTilde, 1, INNER_PRODUCT_CYCLES),
                ScheduleEntry::new(ProjectCorrelation, i, INNER_PRODUCT_CYCLES),
                ScheduleEntry::new(ProjectGram, i, INNER_PRODUCT_CYCLES),
                ScheduleEntry::new(GramTrace, i, INNER_PRODUCT_CYCLES),
                ScheduleEntry::new(Energies, 1, INNER_PRODUCT_CYCLES),
                ScheduleEntry::new(Score, 1, 4),
                ScheduleEntry::new(Slide, 2, RANK_ONE_CYCLES),
            ],
        }
    }
}

impl fmt::Display for CycleModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<22}{:>6}{:>8}{:>8}", "operation", "count", "cycles", "total")?;
        for e in &self.schedule {
            writeln!(f, "{:<22}{:>6}{:>8}{:>8}", e.op.to_string(), e.count, e.cycles_each, e.total())?;
        }
        write!(f, "{:<22}{:>22}", "per delay index", self.total())
    }
}

pub fn cycles_per_index(model: &CycleModel) -> u32 {
    model.schedule.iter().map(ScheduleEntry::total).sum()
}
