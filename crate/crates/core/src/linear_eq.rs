//! Exact linear equalizers computed by solving the `U × U` Gram system.
//!
//! L-MMSE uses `x̂ = (HᴴH + (N0/Es)·I)⁻¹ Hᴴ y`; ZF is the unregularized
//! solve and MRC is the matched filter `Hᴴ y`. The Gram matrix is factored
//! with a Cholesky decomposition, never inverted explicitly.

use std::fmt;

use nalgebra::{Cholesky, Dyn};

use crate::{C64, CMatrix, CVector, Error, Result};

/// Hermitian residual allowed before a Gram system is factored.
const HERMITIAN_TOL: f64 = 1e-12;

/// Smallest squared Cholesky pivot, relative to the largest Gram diagonal
/// entry, accepted for an unregularized (ZF) solve.
const RANK_TOL: f64 = 1e-13;

/// Linear equalizer selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EqualizerKind {
    Mrc,
    Zf,
    Lmmse,
    /// L-MMSE that assumes signal power `Es′` instead of the true `Es`.
    LmmseMismatched(f64),
}

impl EqualizerKind {
    pub fn validate(self) -> Result<Self> {
        match self {
            EqualizerKind::LmmseMismatched(es) if !(es > 0.0 && es.is_finite()) => Err(
                Error::invalid(format!("mismatched signal power must be positive, got {es}")),
            ),
            k => Ok(k),
        }
    }
}

impl fmt::Display for EqualizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EqualizerKind::Mrc => f.write_str("mrc"),
            EqualizerKind::Zf => f.write_str("zf"),
            EqualizerKind::Lmmse => f.write_str("lmmse"),
            EqualizerKind::LmmseMismatched(es) => write!(f, "lmmse_mismatched({es})"),
        }
    }
}

/// Gram matrix `HᴴH` of one channel, reusable across noise levels.
#[derive(Debug, Clone)]
pub struct GramSystem {
    gram: CMatrix,
    bs_antennas: usize,
}

/// Cholesky factor of `HᴴH + λI`.
#[derive(Debug, Clone)]
pub struct GramFactor {
    chol: Cholesky<C64, Dyn>,
    regularization: f64,
}

impl GramSystem {
    pub fn new(h: &CMatrix) -> Self {
        let u = h.ncols();
        let mut gram = CMatrix::zeros(u, u);
        for j in 0..u {
            let cj = h.column(j);
            for i in 0..=j {
                let v = h.column(i).dotc(&cj);
                gram[(i, j)] = v;
                gram[(j, i)] = v.conj();
            }
            gram[(j, j)].im = 0.0;
        }
        GramSystem {
            gram,
            bs_antennas: h.nrows(),
        }
    }

    pub fn gram(&self) -> &CMatrix {
        &self.gram
    }

    pub fn users(&self) -> usize {
        self.gram.nrows()
    }

    /// Factors `HᴴH + λI`.
    ///
    /// With `λ = 0` the channel must have full column rank (`U ≤ B` and a
    /// well-conditioned Gram matrix); otherwise [`Error::RankDeficient`].
    pub fn factor(&self, regularization: f64) -> Result<GramFactor> {
        if !(regularization >= 0.0 && regularization.is_finite()) {
            return Err(Error::invalid(format!(
                "regularization must be finite and nonnegative, got {regularization}"
            )));
        }
        let u = self.users();
        if regularization == 0.0 && u > self.bs_antennas {
            return Err(Error::RankDeficient(format!(
                "HᴴH is singular with U = {u} > B = {}",
                self.bs_antennas
            )));
        }
        let mut a = self.gram.clone();
        for i in 0..u {
            a[(i, i)] += C64::new(regularization, 0.0);
        }
        let residual = hermitian_residual(&a);
        assert!(
            residual < HERMITIAN_TOL,
            "Gram system is not Hermitian (residual {residual:e})"
        );
        let max_diag = (0..u).map(|i| a[(i, i)].re).fold(0.0, f64::max);
        let chol = Cholesky::new(a).ok_or_else(|| {
            Error::RankDeficient(format!(
                "Gram system with regularization {regularization} is not positive definite"
            ))
        })?;
        if regularization == 0.0 {
            let l = chol.l_dirty();
            let min_pivot = (0..u).map(|i| l[(i, i)].norm_sqr()).fold(f64::INFINITY, f64::min);
            if !(min_pivot > RANK_TOL * max_diag) {
                return Err(Error::RankDeficient(format!(
                    "HᴴH is numerically singular (pivot {min_pivot:e})"
                )));
            }
        }
        Ok(GramFactor {
            chol,
            regularization,
        })
    }
}

impl GramFactor {
    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    /// Solves `(HᴴH + λI) x = rhs`.
    pub fn solve(&self, rhs: &CVector) -> CVector {
        self.chol.solve(rhs)
    }

    /// Diagonal of `W H` for `W = (HᴴH + λI)⁻¹Hᴴ`, i.e. `1 − λ·[(HᴴH + λI)⁻¹]_{uu}`.
    ///
    /// Dividing the equalizer output by these gains removes the per-user bias.
    pub fn effective_gains(&self) -> Vec<f64> {
        if self.regularization == 0.0 {
            return vec![1.0; self.chol.l_dirty().nrows()];
        }
        let inv = self.chol.inverse();
        (0..inv.nrows())
            .map(|i| 1.0 - self.regularization * inv[(i, i)].re)
            .collect()
    }
}

fn hermitian_residual(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

fn check_dims(h: &CMatrix, y: &CVector) -> Result<()> {
    if h.nrows() != y.len() {
        return Err(Error::invalid(format!(
            "channel has {} rows but y has {} entries",
            h.nrows(),
            y.len()
        )));
    }
    if h.ncols() == 0 {
        return Err(Error::invalid("channel has no columns"));
    }
    Ok(())
}

fn check_powers(es: f64, n0: f64) -> Result<()> {
    if !(es > 0.0 && es.is_finite()) {
        return Err(Error::invalid(format!("signal power must be positive, got {es}")));
    }
    if !(n0 >= 0.0 && n0.is_finite()) {
        return Err(Error::invalid(format!("noise power must be nonnegative, got {n0}")));
    }
    Ok(())
}

/// L-MMSE output `(HᴴH + (N0/Es)I)⁻¹Hᴴy`.
///
/// With `N0 = 0` this is the ZF solve, including its rank check.
pub fn mmse_equalize(h: &CMatrix, y: &CVector, es: f64, n0: f64) -> Result<CVector> {
    check_dims(h, y)?;
    check_powers(es, n0)?;
    let sys = GramSystem::new(h);
    let factor = sys.factor(n0 / es)?;
    Ok(factor.solve(&h.ad_mul(y)))
}

/// ZF output `(HᴴH)⁻¹Hᴴy`.
pub fn zf_equalize(h: &CMatrix, y: &CVector) -> Result<CVector> {
    check_dims(h, y)?;
    let sys = GramSystem::new(h);
    let factor = sys.factor(0.0)?;
    Ok(factor.solve(&h.ad_mul(y)))
}

/// Matched filter `Hᴴy`.
pub fn mrc_equalize(h: &CMatrix, y: &CVector) -> Result<CVector> {
    check_dims(h, y)?;
    Ok(h.ad_mul(y))
}

/// L-MMSE built with the assumed signal power `es_assumed` in place of `Es`.
pub fn mismatched_mmse_equalize(
    h: &CMatrix,
    y: &CVector,
    es_assumed: f64,
    n0: f64,
) -> Result<CVector> {
    mmse_equalize(h, y, es_assumed, n0)
}

/// Regularization `λ` of the Gram system used by `kind`, or `None` for MRC.
pub fn regularization(kind: EqualizerKind, es: f64, n0: f64) -> Option<f64> {
    match kind {
        EqualizerKind::Mrc => None,
        EqualizerKind::Zf => Some(0.0),
        EqualizerKind::Lmmse => Some(n0 / es),
        EqualizerKind::LmmseMismatched(es_assumed) => Some(n0 / es_assumed),
    }
}

/// Dispatches on `kind`.
pub fn equalize(
    kind: EqualizerKind,
    h: &CMatrix,
    y: &CVector,
    es: f64,
    n0: f64,
) -> Result<CVector> {
    match kind.validate()? {
        EqualizerKind::Mrc => mrc_equalize(h, y),
        EqualizerKind::Zf => zf_equalize(h, y),
        EqualizerKind::Lmmse => mmse_equalize(h, y, es, n0),
        EqualizerKind::LmmseMismatched(es_assumed) => {
            mismatched_mmse_equalize(h, y, es_assumed, n0)
        }
    }
}
