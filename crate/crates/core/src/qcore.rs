//! Dense complex linear algebra over small labeled Hilbert spaces.
//!
//! Every vector and matrix carries the [`LevelBasis`] it is expressed in, so
//! that mixing operators of different models is caught at the call site
//! instead of producing silently wrong numbers. Dimensions stay below ten,
//! which is why everything is a plain dense `nalgebra` container.

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Slack on the squared norm of sub-normalized conditional states.
pub const NORM_SLACK: f64 = 1e-9;

/// Largest entry of `|A - A^dagger|` tolerated for operators declared Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Ordered, uniquely labeled set of levels.
#[derive(Clone, PartialEq, Eq)]
pub struct LevelBasis {
    labels: Arc<[String]>,
}

impl LevelBasis {
    pub fn new<L, S>(labels: L) -> Result<Self>
    where
        L: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::param("labels", "a basis needs at least one level"));
        }
        for (i, label) in labels.iter().enumerate() {
            if labels[..i].contains(label) {
                return Err(Error::DuplicateLabel(label.clone()));
            }
        }
        Ok(Self {
            labels: labels.into(),
        })
    }

    /// Two-level spin basis `(up, down)`.
    pub fn spin() -> Self {
        static SPIN: OnceLock<LevelBasis> = OnceLock::new();
        SPIN.get_or_init(|| Self::new(["up", "down"]).expect("static labels are unique"))
            .clone()
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    pub fn index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    fn ensure_same(&self, other: &LevelBasis) -> Result<()> {
        if Arc::ptr_eq(&self.labels, &other.labels) || self == other {
            Ok(())
        } else if self.dim() != other.dim() {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            })
        } else {
            Err(Error::BasisMismatch)
        }
    }
}

impl fmt::Debug for LevelBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.labels.iter()).finish()
    }
}

/// Amplitude vector over a [`LevelBasis`]. Conditional states are allowed to
/// be sub-normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct QState {
    basis: LevelBasis,
    amps: DVector<C64>,
}

impl QState {
    pub fn new(basis: LevelBasis, amps: DVector<C64>) -> Result<Self> {
        if amps.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                found: amps.len(),
            });
        }
        if amps.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidState("non-finite amplitude".into()));
        }
        Ok(Self { basis, amps })
    }

    pub(crate) fn from_parts_unchecked(basis: LevelBasis, amps: DVector<C64>) -> Self {
        debug_assert_eq!(basis.dim(), amps.len());
        Self { basis, amps }
    }

    pub fn zero(basis: LevelBasis) -> Self {
        let amps = DVector::zeros(basis.dim());
        Self { basis, amps }
    }

    pub fn basis_state(basis: &LevelBasis, label: &str) -> Result<Self> {
        let mut amps = DVector::zeros(basis.dim());
        amps[basis.index(label)?] = ONE;
        Ok(Self {
            basis: basis.clone(),
            amps,
        })
    }

    /// Builds `sum_k c_k |label_k>`; repeated labels accumulate.
    pub fn from_components(basis: &LevelBasis, components: &[(&str, C64)]) -> Result<Self> {
        let mut amps = DVector::zeros(basis.dim());
        for &(label, c) in components {
            amps[basis.index(label)?] += c;
        }
        Self::new(basis.clone(), amps)
    }

    pub fn basis(&self) -> &LevelBasis {
        &self.basis
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amps
    }

    pub fn into_amplitudes(self) -> DVector<C64> {
        self.amps
    }

    pub fn amplitude(&self, label: &str) -> Result<C64> {
        Ok(self.amps[self.basis.index(label)?])
    }

    pub fn population(&self, label: &str) -> Result<f64> {
        Ok(self.amplitude(label)?.norm_sqr())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.norm_squared()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sqr().sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidState("cannot normalize a zero vector".into()));
        }
        Ok(self.scaled(C64::from(1.0 / n)))
    }

    pub fn scaled(&self, c: C64) -> Self {
        Self {
            basis: self.basis.clone(),
            amps: &self.amps * c,
        }
    }

    pub fn plus(&self, other: &QState) -> Result<Self> {
        self.basis.ensure_same(&other.basis)?;
        Ok(Self {
            basis: self.basis.clone(),
            amps: &self.amps + &other.amps,
        })
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &QState) -> Result<C64> {
        self.basis.ensure_same(&other.basis)?;
        Ok(self.amps.dotc(&other.amps))
    }

    /// `|self><self|`.
    pub fn projector(&self) -> QOperator {
        QOperator {
            basis: self.basis.clone(),
            mat: &self.amps * self.amps.adjoint(),
        }
    }
}

/// Dense square operator over a [`LevelBasis`].
#[derive(Clone, Debug, PartialEq)]
pub struct QOperator {
    basis: LevelBasis,
    mat: DMatrix<C64>,
}

impl QOperator {
    pub fn new(basis: LevelBasis, mat: DMatrix<C64>) -> Result<Self> {
        let d = basis.dim();
        if mat.nrows() != d || mat.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: if mat.nrows() != d {
                    mat.nrows()
                } else {
                    mat.ncols()
                },
            });
        }
        if mat.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidState("non-finite operator entry".into()));
        }
        Ok(Self { basis, mat })
    }

    pub(crate) fn from_parts_unchecked(basis: LevelBasis, mat: DMatrix<C64>) -> Self {
        debug_assert_eq!(basis.dim(), mat.nrows());
        Self { basis, mat }
    }

    pub fn zeros(basis: &LevelBasis) -> Self {
        let d = basis.dim();
        Self {
            basis: basis.clone(),
            mat: DMatrix::zeros(d, d),
        }
    }

    pub fn identity(basis: &LevelBasis) -> Self {
        let d = basis.dim();
        Self {
            basis: basis.clone(),
            mat: DMatrix::identity(d, d),
        }
    }

    /// `|to><from|`, written `sigma_{to,from}` in the model Hamiltonians.
    pub fn transition(basis: &LevelBasis, to: &str, from: &str) -> Result<Self> {
        let mut op = Self::zeros(basis);
        op.mat[(basis.index(to)?, basis.index(from)?)] = ONE;
        Ok(op)
    }

    pub fn projector(basis: &LevelBasis, label: &str) -> Result<Self> {
        Self::transition(basis, label, label)
    }

    pub fn diagonal(basis: &LevelBasis, diag: &[C64]) -> Result<Self> {
        if diag.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                found: diag.len(),
            });
        }
        let mat = DMatrix::from_diagonal(&DVector::from_column_slice(diag));
        Self::new(basis.clone(), mat)
    }

    pub fn basis(&self) -> &LevelBasis {
        &self.basis
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn element(&self, row: &str, col: &str) -> Result<C64> {
        Ok(self.mat[(self.basis.index(row)?, self.basis.index(col)?)])
    }

    pub fn adjoint(&self) -> Self {
        Self {
            basis: self.basis.clone(),
            mat: self.mat.adjoint(),
        }
    }

    pub fn apply(&self, state: &QState) -> Result<QState> {
        self.basis.ensure_same(&state.basis)?;
        Ok(QState {
            basis: self.basis.clone(),
            amps: &self.mat * &state.amps,
        })
    }

    /// Operator product `self * other`.
    pub fn compose(&self, other: &QOperator) -> Result<Self> {
        self.basis.ensure_same(&other.basis)?;
        Ok(Self {
            basis: self.basis.clone(),
            mat: &self.mat * &other.mat,
        })
    }

    pub fn plus(&self, other: &QOperator) -> Result<Self> {
        self.basis.ensure_same(&other.basis)?;
        Ok(Self {
            basis: self.basis.clone(),
            mat: &self.mat + &other.mat,
        })
    }

    pub fn minus(&self, other: &QOperator) -> Result<Self> {
        self.basis.ensure_same(&other.basis)?;
        Ok(Self {
            basis: self.basis.clone(),
            mat: &self.mat - &other.mat,
        })
    }

    pub fn scaled(&self, c: C64) -> Self {
        Self {
            basis: self.basis.clone(),
            mat: &self.mat * c,
        }
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    /// Largest entry of `|A - A^dagger|`.
    pub fn hermiticity_defect(&self) -> f64 {
        max_abs_entry(&(&self.mat - self.mat.adjoint()))
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_defect() < HERMITIAN_TOL
    }

    /// `<psi|A|psi>`.
    pub fn expectation(&self, state: &QState) -> Result<C64> {
        let a_psi = self.apply(state)?;
        state.inner(&a_psi)
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let h = (&self.mat + self.mat.adjoint()) * C64::from(0.5);
        let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn max_abs_diff(&self, other: &QOperator) -> Result<f64> {
        self.basis.ensure_same(&other.basis)?;
        Ok(max_abs_entry(&(&self.mat - &other.mat)))
    }

    /// Trace distance `1/2 ||A - B||_1` for Hermitian arguments.
    pub fn trace_distance(&self, other: &QOperator) -> Result<f64> {
        let diff = self.minus(other)?;
        Ok(0.5
            * diff
                .hermitian_eigenvalues()
                .iter()
                .map(|v| v.abs())
                .sum::<f64>())
    }
}

pub(crate) fn max_abs_entry(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Restriction `G[i][j] = <comp_i|U|comp_j>` of an operator to two levels.
pub fn project_gate(op: &QOperator, comp: [&str; 2]) -> Result<Matrix2<C64>> {
    let idx = [op.basis.index(comp[0])?, op.basis.index(comp[1])?];
    Ok(Matrix2::from_fn(|i, j| op.mat[(idx[i], idx[j])]))
}

pub fn sigma_x() -> QOperator {
    let b = LevelBasis::spin();
    let mat = DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]);
    QOperator::from_parts_unchecked(b, mat)
}

pub fn sigma_y() -> QOperator {
    let b = LevelBasis::spin();
    let mat = DMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]);
    QOperator::from_parts_unchecked(b, mat)
}

pub fn sigma_z() -> QOperator {
    let b = LevelBasis::spin();
    let mat = DMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]);
    QOperator::from_parts_unchecked(b, mat)
}

/// Spin lowering operator `|down><up|`.
pub fn sigma_minus() -> QOperator {
    let b = LevelBasis::spin();
    let mat = DMatrix::from_row_slice(2, 2, &[ZERO, ZERO, ONE, ZERO]);
    QOperator::from_parts_unchecked(b, mat)
}
