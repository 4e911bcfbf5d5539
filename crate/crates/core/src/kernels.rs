//! Special-function blocks of the datapath: the complex xorshift PRNG, the
//! power-of-two pseudonormalization, the LUT + Newton–Raphson inverse square
//! root and fixed-order adder-tree reductions.

use crate::fxp::{fx_add, fx_cadd, FxComplex, FxError, FxFormat, FxReal, Rounding};
use serde::{Deserialize, Serialize};
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("xorshift state must be nonzero")]
    ZeroSeed,
    #[error("pseudonormalization of an all-zero vector")]
    DegenerateVector,
    #[error("inverse square root of non-positive value {0}")]
    Domain(f64),
    #[error(transparent)]
    Format(#[from] FxError),
}

/// One 32-bit xorshift step with the (13, 17, 5) triple.
///
/// Zero is a fixed point; callers hold states in [`XorshiftPair`], which
/// rejects it.
#[inline]
pub fn xorshift32_step(mut s: u32) -> u32 {
    s ^= s << 13;
    s ^= s >> 17;
    s ^= s << 5;
    s
}

/// State of the two cascaded xorshift blocks.
///
/// `s1` is the register feeding block 1; `s2` holds the last block-2 output.
/// Per draw, block 2 consumes block 1's fresh output and its result is fed
/// back into `s1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 2]", into = "[u32; 2]")]
pub struct XorshiftPair {
    s1: u32,
    s2: u32,
}

impl XorshiftPair {
    pub const DEFAULT: XorshiftPair = XorshiftPair {
        s1: 0x2545_F491,
        s2: 0x9E37_79B9,
    };

    pub fn new(s1: u32, s2: u32) -> Result<Self, KernelError> {
        if s1 == 0 || s2 == 0 {
            return Err(KernelError::ZeroSeed);
        }
        Ok(XorshiftPair { s1, s2 })
    }

    pub fn s1(self) -> u32 {
        self.s1
    }

    pub fn s2(self) -> u32 {
        self.s2
    }
}

impl Default for XorshiftPair {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<[u32; 2]> for XorshiftPair {
    type Error = KernelError;

    fn try_from(v: [u32; 2]) -> Result<Self, KernelError> {
        XorshiftPair::new(v[0], v[1])
    }
}

impl From<XorshiftPair> for [u32; 2] {
    fn from(p: XorshiftPair) -> Self {
        [p.s1, p.s2]
    }
}

/// Top bits of a 32-bit word as a signed fraction in [-1, 1).
fn word_to_fraction(w: u32, fmt: FxFormat) -> FxReal {
    let bits = fmt.frac_bits() + 1;
    let signed = w as i32 as i64;
    let raw = if bits <= 32 {
        signed >> (32 - bits)
    } else {
        signed << (bits - 32)
    };
    // |raw| <= 2^frac, always inside a format with at least one integer bit;
    // for a pure-fraction format the top code saturates.
    fmt.fit(raw as i128, fmt.frac_bits())
}

/// One complex draw: real part from block 1, imaginary part from block 2.
pub fn prng_complex(p: XorshiftPair, fmt: FxFormat) -> (FxComplex, XorshiftPair) {
    let r1 = xorshift32_step(p.s1);
    let r2 = xorshift32_step(r1);
    let z = FxComplex::new(word_to_fraction(r1, fmt), word_to_fraction(r2, fmt));
    (z, XorshiftPair { s1: r2, s2: r2 })
}

/// Fill a vector with consecutive draws.
pub fn prng_vector<const N: usize>(
    p: &mut XorshiftPair,
    fmt: FxFormat,
) -> [FxComplex; N] {
    std::array::from_fn(|_| {
        let (z, next) = prng_complex(*p, fmt);
        *p = next;
        z
    })
}

/// Delay-index boundary: block 2's output state becomes block 1's input.
pub fn reseed_chain(p: XorshiftPair) -> XorshiftPair {
    XorshiftPair { s1: p.s2, s2: p.s2 }
}

/// Base-2 leading-one position of a nonzero magnitude.
#[inline]
fn lod2(m: u64) -> u32 {
    63 - m.leading_zeros()
}

/// Base-4 leading-one detector: index of the most significant nonzero bit pair.
#[inline]
fn lod4(m: u64) -> u32 {
    lod2(m) / 2
}

/// `n = floor(log2(max |Re|, |Im|))` over the whole vector, from an OR of all
/// magnitudes followed by a leading-one detector.
pub fn pseudonorm_exponent(v: &[FxComplex]) -> Result<i32, KernelError> {
    let Some(first) = v.first() else {
        return Err(KernelError::DegenerateVector);
    };
    let frac = first.fmt().frac_bits() as i32;
    let or = v
        .iter()
        .fold(0u64, |acc, z| acc | z.re.raw().unsigned_abs() | z.im.raw().unsigned_abs());
    if or == 0 {
        return Err(KernelError::DegenerateVector);
    }
    Ok(lod2(or) as i32 - frac)
}

/// Scale by `2^-n` with an arithmetic right shift into `out`.
///
/// With `n` from [`pseudonorm_exponent`] every part lands in [-2, 2).
pub fn pseudonorm_apply<const N: usize>(
    v: &[FxComplex; N],
    n: i32,
    out: FxFormat,
) -> [FxComplex; N] {
    let out = out.with_rounding(Rounding::Floor);
    v.map(|z| {
        let src = z.fmt().frac_bits() as i64 + n as i64;
        let fit = |r: FxReal| {
            if src >= 0 {
                out.fit(r.raw() as i128, src as u32)
            } else {
                out.fit((r.raw() as i128) << (-src), 0)
            }
        };
        FxComplex::new(fit(z.re), fit(z.im))
    })
}

const XP_FRAC: u32 = 30;
const NR_FRAC: u32 = 30;

/// Initial-estimate table for 1/sqrt(x') on [0.25, 1): 32 bins per octave,
/// addressed by the octave bit and the five bits below the leading one.
#[derive(Debug, Clone, PartialEq)]
pub struct InvSqrtLut {
    entries: Vec<FxReal>,
    addr_bits: u32,
    entry_fmt: FxFormat,
}

impl InvSqrtLut {
    pub const ADDR_BITS: u32 = 6;

    pub fn new(entry_fmt: FxFormat) -> Self {
        let fmt = entry_fmt.with_rounding(Rounding::NearestEven);
        let per_octave = 1usize << (Self::ADDR_BITS - 1);
        let entries = (0..1usize << Self::ADDR_BITS)
            .map(|idx| {
                let (lo, width) = Self::bin(idx, per_octave);
                crate::fxp::quantize(1.0 / (lo + 0.5 * width).sqrt(), fmt)
            })
            .collect();
        InvSqrtLut {
            entries,
            addr_bits: Self::ADDR_BITS,
            entry_fmt: fmt,
        }
    }

    fn bin(idx: usize, per_octave: usize) -> (f64, f64) {
        let base = if idx >= per_octave { 0.5 } else { 0.25 };
        let width = base / per_octave as f64;
        (base + (idx % per_octave) as f64 * width, width)
    }

    /// Input interval `[lo, hi)` of x' covered by entry `idx`.
    pub fn bin_range(&self, idx: usize) -> (f64, f64) {
        let (lo, w) = Self::bin(idx, self.entries.len() / 2);
        (lo, lo + w)
    }

    pub fn entries(&self) -> &[FxReal] {
        &self.entries
    }

    pub fn addr_bits(&self) -> u32 {
        self.addr_bits
    }

    pub fn entry_fmt(&self) -> FxFormat {
        self.entry_fmt
    }

    /// Table address for `x'` given as a mantissa at [`XP_FRAC`] fractional bits.
    fn address(&self, xp: i64) -> usize {
        let half = self.addr_bits - 1;
        let lead = lod2(xp as u64);
        let octave = (lead == XP_FRAC - 1) as usize;
        let low = ((xp >> (lead - half)) as usize) & ((1 << half) - 1);
        (octave << half) | low
    }

    /// Writes `index,entry` rows with the raw entry mantissas.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "index,entry")?;
        for (i, e) in self.entries.iter().enumerate() {
            writeln!(w, "{},{}", i, e.raw())?;
        }
        Ok(())
    }
}

impl Default for InvSqrtLut {
    fn default() -> Self {
        InvSqrtLut::new(crate::fxp::WidthLedger::DEFAULT.lut)
    }
}

/// Range reduction `x = x' · 4^alpha` with `x' ∈ [0.25, 1)`; returns `alpha`
/// and the mantissa of `x'` at 30 fractional bits.
pub fn inv_sqrt_decompose(x: FxReal) -> Result<(i32, i64), KernelError> {
    if x.raw() <= 0 {
        return Err(KernelError::Domain(x.to_f64()));
    }
    let f = x.fmt().frac_bits();
    // Pad odd fractional widths so the base-4 detector sees whole bit pairs.
    let odd = f & 1;
    let m = (x.raw() as u64) << odd;
    let half_frac = (f + odd) / 2;
    let q = lod4(m);
    let alpha = q as i32 + 1 - half_frac as i32;
    let shift = XP_FRAC as i32 - 2 * (q as i32 + 1);
    let xp = if shift >= 0 {
        (m as i128) << shift
    } else {
        (m as i128) >> (-shift)
    };
    Ok((alpha, xp as i64))
}

/// `1/sqrt(x)`: base-4 range reduction, LUT seed, one Newton–Raphson step
/// `y = y0 (3 - y0² x') / 2`, rescale by `2^-alpha`.
pub fn inv_sqrt(x: FxReal, out: FxFormat, lut: &InvSqrtLut) -> Result<FxReal, KernelError> {
    let (alpha, xp) = inv_sqrt_decompose(x)?;
    let y0 = lut.entries[lut.address(xp)].raw() as i128;
    let ef = lut.entry_fmt.frac_bits();
    // y0² x' at 2·ef + 30 bits, then the subtractor output at NR_FRAC bits.
    let prod_frac = 2 * ef + XP_FRAC;
    let t = (3i128 << prod_frac) - y0 * y0 * xp as i128;
    let t = t >> (prod_frac - NR_FRAC);
    // y0 · t / 2 · 2^-alpha
    let src_frac = ef as i32 + NR_FRAC as i32 + 1 + alpha;
    debug_assert!(src_frac >= 0);
    Ok(out.fit(y0 * t, src_frac as u32))
}

/// Balanced adder tree: ((v0+v1)+(v2+v3))+... with every adder output
/// renormalized to `out`. The length must be a power of two.
pub fn tree_reduce(v: &[FxReal], out: FxFormat) -> FxReal {
    assert!(v.len().is_power_of_two(), "adder tree needs 2^k inputs");
    let mut level: Vec<FxReal> = v.to_vec();
    if level.len() == 1 {
        return level[0].convert(out);
    }
    while level.len() > 1 {
        level = level.chunks(2).map(|p| fx_add(p[0], p[1], out)).collect();
    }
    level[0]
}

/// Complex adder tree, same order as [`tree_reduce`].
pub fn tree_reduce_complex(v: &[FxComplex], out: FxFormat) -> FxComplex {
    assert!(v.len().is_power_of_two(), "adder tree needs 2^k inputs");
    let mut level: Vec<FxComplex> = v.to_vec();
    if level.len() == 1 {
        return level[0].convert(out);
    }
    while level.len() > 1 {
        level = level.chunks(2).map(|p| fx_cadd(p[0], p[1], out)).collect();
    }
    level[0]
}

/// Floating-point reduction; the float backend sums sequentially.
pub fn tree_reduce_f64(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc + x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fxp::{quantize, WidthLedger};
    use num_complex::Complex64;
    use std::collections::HashSet;

    const W: WidthLedger = WidthLedger::DEFAULT;

    #[test]
    fn xorshift_known_step() {
        assert_eq!(xorshift32_step(0), 0);
        // 1 ^ 1<<13 = 8193; >>17 is 0; 8193 ^ 8193<<5 = 8193 ^ 262176 = 270369
        assert_eq!(xorshift32_step(1), 270369);
    }

    #[test]
    fn xorshift_no_short_cycle() {
        let mut seen = HashSet::with_capacity(1_000_000);
        let mut s = 0xDEAD_BEEF;
        for _ in 0..1_000_000 {
            assert!(seen.insert(s), "orbit repeated");
            s = xorshift32_step(s);
            assert_ne!(s, 0);
        }
    }

    #[test]
    fn zero_seed_rejected() {
        assert_eq!(XorshiftPair::new(0, 1), Err(KernelError::ZeroSeed));
        assert_eq!(XorshiftPair::new(1, 0), Err(KernelError::ZeroSeed));
        assert!(toml::from_str::<toml::Value>("s = [0, 1]").is_ok());
        #[derive(serde::Deserialize)]
        struct S {
            #[allow(dead_code)]
            s: XorshiftPair,
        }
        assert!(toml::from_str::<S>("s = [0, 1]").is_err());
        assert!(toml::from_str::<S>("s = [7, 1]").is_ok());
    }

    #[test]
    fn prng_is_reproducible_and_bounded() {
        let p = XorshiftPair::new(12345, 678).unwrap();
        let (a, pa) = prng_complex(p, W.vec);
        let (b, pb) = prng_complex(p, W.vec);
        assert_eq!((a, pa), (b, pb));
        let mut q = p;
        for _ in 0..10_000 {
            let (z, n) = prng_complex(q, W.vec);
            q = n;
            for part in [z.re.to_f64(), z.im.to_f64()] {
                assert!((-1.0..1.0).contains(&part));
            }
        }
    }

    #[test]
    fn reseed_feeds_block_two_back() {
        let p = XorshiftPair::new(5, 9).unwrap();
        let r = reseed_chain(p);
        assert_eq!((r.s1(), r.s2()), (9, 9));
        let (_, after) = prng_complex(p, W.vec);
        assert_eq!(reseed_chain(after), after);
    }

    #[test]
    fn pseudonorm_exponent_examples() {
        let f = W.acc;
        let vec_with = |x: f64| {
            let mut v = [FxComplex::zero(f); 16];
            v[3] = FxComplex::quantize(Complex64::new(0.1, x), f);
            v
        };
        assert_eq!(pseudonorm_exponent(&vec_with(1.0)), Ok(0));
        assert_eq!(pseudonorm_exponent(&vec_with(5.5)), Ok(2));
        assert_eq!(pseudonorm_exponent(&vec_with(0.25)), Ok(-2));
        assert_eq!(pseudonorm_exponent(&vec_with(-0.25)), Ok(-2));
        assert_eq!(
            pseudonorm_exponent(&[FxComplex::zero(f); 16]),
            Err(KernelError::DegenerateVector)
        );
    }

    #[test]
    fn pseudonorm_apply_unit_max_is_identity() {
        let mut v = [FxComplex::zero(W.acc); 16];
        v[0] = FxComplex::quantize(Complex64::new(1.0, -0.5), W.acc);
        v[7] = FxComplex::quantize(Complex64::new(0.75, 0.125), W.acc);
        let n = pseudonorm_exponent(&v).unwrap();
        let out = pseudonorm_apply(&v, n, W.vec);
        for (a, b) in v.iter().zip(out.iter()) {
            assert_eq!(a.to_c64(), b.to_c64());
            assert_eq!(b.fmt(), W.vec);
        }
    }

    #[test]
    fn pseudonorm_negative_floor_corner() {
        // A dominant negative part that is not on the output grid floors onto -2.
        let mut v = [FxComplex::zero(W.acc); 16];
        let raw = -(1i64 << 30) + 1;
        v[0] = FxComplex::from_raw(raw, 0, W.acc).unwrap();
        let n = pseudonorm_exponent(&v).unwrap();
        let out = pseudonorm_apply(&v, n, W.vec);
        assert_eq!(out[0].re.to_f64(), -2.0);
    }

    #[test]
    fn lut_entries_within_half_lsb_of_bin_midpoint() {
        let lut = InvSqrtLut::default();
        assert_eq!(lut.entries().len(), 64);
        let lsb = lut.entry_fmt().lsb();
        for (i, e) in lut.entries().iter().enumerate() {
            let (lo, hi) = lut.bin_range(i);
            let exact = 1.0 / (0.5 * (lo + hi)).sqrt();
            assert!((e.to_f64() - exact).abs() <= 0.5 * lsb, "entry {i}");
        }
    }

    #[test]
    fn lut_addressing_matches_bins() {
        let lut = InvSqrtLut::default();
        for i in 0..64 {
            let (lo, hi) = lut.bin_range(i);
            for x in [lo, 0.5 * (lo + hi), hi - 1e-9] {
                let xp = (x * (1u64 << XP_FRAC) as f64) as i64;
                assert_eq!(lut.address(xp), i, "x' = {x}");
            }
        }
    }

    #[test]
    fn inv_sqrt_examples() {
        let lut = InvSqrtLut::default();
        let tol = 2f64.powi(-12);
        for (x, want) in [(0.25, 2.0), (1.0, 1.0), (2.0, std::f64::consts::FRAC_1_SQRT_2)] {
            let y = inv_sqrt(quantize(x, W.acc), W.inv_sqrt, &lut).unwrap().to_f64();
            assert!(((y - want) / want).abs() <= tol, "inv_sqrt({x}) = {y}");
        }
        assert!(matches!(
            inv_sqrt(quantize(0.0, W.acc), W.inv_sqrt, &lut),
            Err(KernelError::Domain(_))
        ));
        assert!(inv_sqrt(quantize(-3.0, W.acc), W.inv_sqrt, &lut).is_err());
    }

    #[test]
    fn inv_sqrt_decomposition_scaling() {
        for x in [0.3, 1.0, 1.7, 5.0, 100.0, 1e-3] {
            for f in [W.acc, FxFormat::q(40, 21)] {
                let a = quantize(x, f);
                let b = FxReal::from_raw(a.raw() * 4, f).unwrap();
                let (alpha_a, xa) = inv_sqrt_decompose(a).unwrap();
                let (alpha_b, xb) = inv_sqrt_decompose(b).unwrap();
                assert_eq!(alpha_b, alpha_a + 1);
                assert_eq!(xa, xb);
                let xpv = xa as f64 / (1u64 << XP_FRAC) as f64;
                assert!((0.25..1.0).contains(&xpv));
                assert!((a.to_f64() - xpv * 4f64.powi(alpha_a)).abs() < 1e-9 * a.to_f64());
            }
        }
    }

    #[test]
    fn lut_csv_export() {
        let mut buf = Vec::new();
        InvSqrtLut::default().write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines[0], "index,entry");
        assert_eq!(lines.len(), 65);
        // bin 0 midpoint 0.25 + 1/256, entry ≈ 1.9846 at 16 fractional bits
        assert_eq!(lines[1], format!("0,{}", InvSqrtLut::default().entries()[0].raw()));
    }

    #[test]
    fn tree_reduce_examples() {
        let f = W.acc;
        assert_eq!(tree_reduce(&[f.zero(); 16], f).raw(), 0);
        let mut v = [f.zero(); 16];
        v[11] = quantize(3.5, f);
        assert_eq!(tree_reduce(&v, f).to_f64(), 3.5);
    }

    #[test]
    fn tree_order_matters_under_saturation() {
        let f = FxFormat::q(8, 0);
        let v: Vec<FxReal> = [100.0, 100.0, -100.0, -100.0]
            .iter()
            .map(|&x| quantize(x, f))
            .collect();
        // (100+100) saturates to 127, (-100-100) to -128.
        assert_eq!(tree_reduce(&v, f).raw(), -1);
    }

    #[test]
    fn float_reduction_is_sequential() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(tree_reduce_f64(&v), v.iter().fold(0.0, |a, b| a + b));
    }
}
