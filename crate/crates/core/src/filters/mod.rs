//! One-dimensional wavelet filter pairs and their 3D tensor products.

mod tables;

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::transform::{analyze_line, synthesize_line};

/// Wavelet names accepted by [`FilterBank::builtin`].
pub const BUILTIN_WAVELETS: [&str; 6] = ["haar", "db2", "db3", "db4", "ch2.2", "ch4.4"];

/// Tolerance used by [`validate_bank`] for every invariant.
pub const BANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FilterError {
    #[error("unknown wavelet `{0}` (valid: haar, db2, db3, db4, ch2.2, ch4.4)")]
    UnknownWavelet(String),
}

/// One of the eight 3D DWT components. The first tag letter names the
/// filter applied along z, the second along y and the third along x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subband {
    Lll,
    Llh,
    Lhl,
    Lhh,
    Hll,
    Hlh,
    Hhl,
    Hhh,
}

impl Subband {
    pub const ALL: [Subband; 8] = [
        Subband::Lll,
        Subband::Llh,
        Subband::Lhl,
        Subband::Lhh,
        Subband::Hll,
        Subband::Hlh,
        Subband::Hhl,
        Subband::Hhh,
    ];

    pub const HIGH: [Subband; 7] = [
        Subband::Llh,
        Subband::Lhl,
        Subband::Lhh,
        Subband::Hll,
        Subband::Hlh,
        Subband::Hhl,
        Subband::Hhh,
    ];

    /// Position in tag order; bit 2 is the z pass, bit 0 the x pass
    /// (0 = low, 1 = high).
    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn tag(self) -> &'static str {
        ["lll", "llh", "lhl", "lhh", "hll", "hlh", "hhl", "hhh"][self.index()]
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|s| s.tag() == tag)
    }

    /// `true` per axis (z, y, x) where the high-pass filter applies.
    #[inline]
    pub fn high_axes(self) -> [bool; 3] {
        let i = self.index();
        [i & 4 != 0, i & 2 != 0, i & 1 != 0]
    }
}

impl fmt::Display for Subband {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Decomposition,
    Reconstruction,
}

/// A named low/high-pass analysis pair with its synthesis duals.
///
/// Analysis filters are applied as `a[k] = sum_i f[i] * s[2k + i]` with
/// periodic indexing; synthesis filters scatter `s[2k + i] += f[i] * a[k]`.
/// With this alignment the Haar pair reproduces the printed 3D Haar filters
/// entry for entry and a unit impulse at the origin lands on `f[0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    name: String,
    lo_dec: Vec<f64>,
    hi_dec: Vec<f64>,
    lo_rec: Vec<f64>,
    hi_rec: Vec<f64>,
    orthogonal: bool,
}

impl FilterBank {
    /// Builds an arbitrary bank. No invariants are enforced here; run
    /// [`validate_bank`] to check them.
    pub fn new(
        name: impl Into<String>,
        lo_dec: Vec<f64>,
        hi_dec: Vec<f64>,
        lo_rec: Vec<f64>,
        hi_rec: Vec<f64>,
        orthogonal: bool,
    ) -> Self {
        Self {
            name: name.into(),
            lo_dec,
            hi_dec,
            lo_rec,
            hi_rec,
            orthogonal,
        }
    }

    pub fn builtin(name: &str) -> Result<Self, FilterError> {
        use tables::*;
        let (lo_dec, hi_dec, lo_rec, hi_rec, orthogonal): (&[f64], &[f64], &[f64], &[f64], bool) = match name {
            "haar" => (&HAAR_LO_DEC, &HAAR_HI_DEC, &HAAR_LO_REC, &HAAR_HI_REC, true),
            "db2" => (&DB2_LO_DEC, &DB2_HI_DEC, &DB2_LO_REC, &DB2_HI_REC, true),
            "db3" => (&DB3_LO_DEC, &DB3_HI_DEC, &DB3_LO_REC, &DB3_HI_REC, true),
            "db4" => (&DB4_LO_DEC, &DB4_HI_DEC, &DB4_LO_REC, &DB4_HI_REC, true),
            "ch2.2" => (&CH2_2_LO_DEC, &CH2_2_HI_DEC, &CH2_2_LO_REC, &CH2_2_HI_REC, false),
            "ch4.4" => (&CH4_4_LO_DEC, &CH4_4_HI_DEC, &CH4_4_LO_REC, &CH4_4_HI_REC, false),
            _ => return Err(FilterError::UnknownWavelet(name.to_string())),
        };
        Ok(Self::new(
            name,
            lo_dec.to_vec(),
            hi_dec.to_vec(),
            lo_rec.to_vec(),
            hi_rec.to_vec(),
            orthogonal,
        ))
    }

    pub fn haar() -> Self {
        Self::builtin("haar").expect("haar is built in")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lo_dec(&self) -> &[f64] {
        &self.lo_dec
    }

    pub fn hi_dec(&self) -> &[f64] {
        &self.hi_dec
    }

    pub fn lo_rec(&self) -> &[f64] {
        &self.lo_rec
    }

    pub fn hi_rec(&self) -> &[f64] {
        &self.hi_rec
    }

    pub fn is_orthogonal(&self) -> bool {
        self.orthogonal
    }

    /// Length of the 1D filters.
    pub fn len(&self) -> usize {
        self.lo_dec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo_dec.is_empty()
    }

    /// `(low, high)` for the requested role.
    pub fn pair(&self, role: Role) -> (&[f64], &[f64]) {
        match role {
            Role::Decomposition => (&self.lo_dec, &self.hi_dec),
            Role::Reconstruction => (&self.lo_rec, &self.hi_rec),
        }
    }
}

/// A 3D filter `f_z (x) f_y (x) f_x` stored as an `L x L x L` z-y-x block.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter3D {
    tag: Subband,
    len: usize,
    coefficients: Vec<f64>,
}

impl Filter3D {
    pub fn tag(&self) -> Subband {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.coefficients[(i * self.len + j) * self.len + k]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }
}

/// The eight tensor-product filters in tag order `lll .. hhh`.
pub fn tensor_filters(bank: &FilterBank, role: Role) -> Vec<Filter3D> {
    let (lo, hi) = bank.pair(role);
    let len = lo.len();
    Subband::ALL
        .iter()
        .map(|&tag| {
            let [hz, hy, hx] = tag.high_axes();
            let pick = |high: bool| if high { hi } else { lo };
            let (fz, fy, fx) = (pick(hz), pick(hy), pick(hx));
            let mut coefficients = vec![0.0; len * len * len];
            for i in 0..len {
                for j in 0..len {
                    for k in 0..len {
                        coefficients[(i * len + j) * len + k] = fz[i] * fy[j] * fx[k];
                    }
                }
            }
            Filter3D {
                tag,
                len,
                coefficients,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankCheck {
    pub name: &'static str,
    pub passed: bool,
    pub residual: f64,
}

/// Outcome of [`validate_bank`]; failures are reported, never raised.
#[derive(Debug, Clone, PartialEq)]
pub struct BankReport {
    pub wavelet: String,
    pub orthogonal: bool,
    pub checks: Vec<BankCheck>,
}

impl BankReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&BankCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for BankReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "wavelet {} (orthogonal: {})", self.wavelet, self.orthogonal)?;
        for c in &self.checks {
            writeln!(
                f,
                "  {:<24} {}  residual {:.3e}",
                c.name,
                if c.passed { "pass" } else { "FAIL" },
                c.residual
            )?;
        }
        Ok(())
    }
}

pub fn validate_bank(bank: &FilterBank) -> BankReport {
    let mut checks = Vec::new();
    let mut push = |name, residual: f64, passed: bool| checks.push(BankCheck { name, passed, residual });

    let l = bank.lo_dec.len();
    let lengths_ok = l > 0
        && l % 2 == 0
        && bank.hi_dec.len() == l
        && bank.lo_rec.len() == l
        && bank.hi_rec.len() == l;
    push("even_equal_length", if lengths_ok { 0.0 } else { 1.0 }, lengths_ok);

    let dual = if bank.orthogonal && lengths_ok {
        max_abs_diff(&bank.lo_dec, &bank.lo_rec).max(max_abs_diff(&bank.hi_dec, &bank.hi_rec))
    } else {
        0.0
    };
    push("orthogonal_duals", dual, dual <= BANK_TOLERANCE);

    let lo_sum = (bank.lo_dec.iter().sum::<f64>() - core::f64::consts::SQRT_2).abs();
    push("lo_dec_sum_sqrt2", lo_sum, lo_sum <= BANK_TOLERANCE);
    let hi_sum = bank.hi_dec.iter().sum::<f64>().abs();
    push("hi_dec_sum_zero", hi_sum, hi_sum <= BANK_TOLERANCE);

    let pr = if lengths_ok { reconstruction_residual(bank) } else { f64::INFINITY };
    push("perfect_reconstruction", pr, pr <= BANK_TOLERANCE);

    BankReport {
        wavelet: bank.name.clone(),
        orthogonal: bank.orthogonal,
        checks,
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Max error of a periodic 1D decompose/reconstruct cycle on a seeded
/// random signal of length `max(2L, 8)`.
fn reconstruction_residual(bank: &FilterBank) -> f64 {
    let n = (2 * bank.len()).max(8);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_ba4c);
    let signal: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut coeffs = vec![0.0; n];
    analyze_line(&signal, &bank.lo_dec, &bank.hi_dec, &mut coeffs);
    let mut back = vec![0.0; n];
    synthesize_line(&coeffs, &bank.lo_rec, &bank.hi_rec, &mut back);
    max_abs_diff(&signal, &back)
}
