//! Truncated Fock-space operator algebra.
//!
//! Dense complex matrices on the basis |0⟩..|dim-1⟩: ladder operators,
//! traces, expectation values, and density-matrix validation. All types are
//! immutable after construction; operations are pure functions.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default entrywise tolerance for the Hermiticity check.
pub const DEFAULT_HERMITICITY_TOL: f64 = 1e-12;
/// Default tolerance for the strict unit-trace check.
pub const DEFAULT_STRICT_TRACE_TOL: f64 = 1e-8;
/// Default floor for the smallest admissible eigenvalue. Truncation and
/// rounding produce tiny negative eigenvalues on legitimate states.
pub const DEFAULT_PSD_TOL: f64 = 1e-10;

/// Truncated single-mode Fock space retaining levels |0⟩..|dim-1⟩.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FockSpace {
    dim: usize,
}

impl FockSpace {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension { dim });
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Dense operator on a truncated Fock space.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    space: FockSpace,
    mat: DMatrix<Complex64>,
}

impl Operator {
    pub fn from_matrix(space: FockSpace, mat: DMatrix<Complex64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::NotSquare {
                rows: mat.nrows(),
                cols: mat.ncols(),
            });
        }
        if mat.nrows() != space.dim() {
            return Err(Error::DimensionMismatch {
                left: space.dim(),
                right: mat.nrows(),
            });
        }
        Ok(Self { space, mat })
    }

    pub fn zeros(space: FockSpace) -> Self {
        Self {
            space,
            mat: DMatrix::zeros(space.dim(), space.dim()),
        }
    }

    pub fn identity(space: FockSpace) -> Self {
        Self {
            space,
            mat: DMatrix::identity(space.dim(), space.dim()),
        }
    }

    pub fn space(&self) -> FockSpace {
        self.space
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.mat
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.mat[(row, col)]
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> Operator {
        Operator {
            space: self.space,
            mat: self.mat.adjoint(),
        }
    }
}

impl std::ops::Mul for &Operator {
    type Output = Operator;

    fn mul(self, rhs: &Operator) -> Operator {
        assert_eq!(
            self.space, rhs.space,
            "operator product requires matching spaces"
        );
        Operator {
            space: self.space,
            mat: &self.mat * &rhs.mat,
        }
    }
}

impl std::ops::Sub for &Operator {
    type Output = Operator;

    fn sub(self, rhs: &Operator) -> Operator {
        assert_eq!(
            self.space, rhs.space,
            "operator difference requires matching spaces"
        );
        Operator {
            space: self.space,
            mat: &self.mat - &rhs.mat,
        }
    }
}

/// Annihilation and creation operators (a, a†) with ⟨n-1|a|n⟩ = √n.
///
/// a† is constructed as the conjugate transpose of a, not recomputed, so the
/// pair is adjoint-exact by construction.
pub fn ladder_ops(space: FockSpace) -> (Operator, Operator) {
    let dim = space.dim();
    let mut a = DMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    let adag = a.adjoint();
    (
        Operator { space, mat: a },
        Operator { space, mat: adag },
    )
}

/// Photon-number operator a†a, exact diagonal (0, 1, .., dim-1).
pub fn number_operator(space: FockSpace) -> Operator {
    let dim = space.dim();
    let mut n = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        n[(k, k)] = Complex64::new(k as f64, 0.0);
    }
    Operator { space, mat: n }
}

/// Commutator [x, y] = xy - yx.
pub fn commutator(x: &Operator, y: &Operator) -> Operator {
    &(x * y) - &(y * x)
}

/// Tr(ρ·obs).
pub fn expectation(rho: &DensityMatrix, obs: &Operator) -> Result<Complex64> {
    if rho.space() != obs.space() {
        return Err(Error::DimensionMismatch {
            left: rho.space().dim(),
            right: obs.space().dim(),
        });
    }
    let dim = rho.space().dim();
    let r = rho.matrix();
    let o = obs.matrix();
    let mut tr = Complex64::new(0.0, 0.0);
    for i in 0..dim {
        for j in 0..dim {
            tr += r[(i, j)] * o[(j, i)];
        }
    }
    Ok(tr)
}

/// How the unit-trace invariant is enforced.
///
/// `Strict` is for analytic constructions that must carry trace 1.
/// `RecordDeficit` is for deliberately truncated states: a truncated tail or
/// Kraus sum legitimately leaks trace into discarded levels, and that loss is
/// recorded on the state instead of being renormalized away.
#[derive(Clone, Copy, Debug)]
pub enum TracePolicy {
    Strict { tolerance: f64 },
    RecordDeficit { budget: f64 },
}

/// Tolerance set used by [`validate_density`].
#[derive(Clone, Copy, Debug)]
pub struct ValidationPolicy {
    pub hermiticity_tol: f64,
    pub trace: TracePolicy,
    pub psd_tol: f64,
}

impl ValidationPolicy {
    pub fn strict() -> Self {
        Self {
            hermiticity_tol: DEFAULT_HERMITICITY_TOL,
            trace: TracePolicy::Strict {
                tolerance: DEFAULT_STRICT_TRACE_TOL,
            },
            psd_tol: DEFAULT_PSD_TOL,
        }
    }

    pub fn deficit(budget: f64) -> Self {
        Self {
            hermiticity_tol: DEFAULT_HERMITICITY_TOL,
            trace: TracePolicy::RecordDeficit { budget },
            psd_tol: DEFAULT_PSD_TOL,
        }
    }
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        Self::strict()
    }
}

/// Validated Hermitian, (near-)unit-trace, positive-semidefinite matrix.
///
/// `trace_deficit` records the probability mass lost to truncation at
/// validation time; it is zero up to rounding for strictly validated states.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    space: FockSpace,
    mat: DMatrix<Complex64>,
    trace_deficit: f64,
}

impl DensityMatrix {
    pub fn space(&self) -> FockSpace {
        self.space
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.mat
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.mat[(row, col)]
    }

    /// Real parts of the Fock-basis diagonal (the photon-number distribution).
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.space.dim()).map(|k| self.mat[(k, k)].re).collect()
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace().re
    }

    /// Probability mass lost to truncation, as recorded at validation.
    pub fn trace_deficit(&self) -> f64 {
        self.trace_deficit
    }

    /// Σ n·ρ_nn. Equal to Tr(ρ·a†a) since the number operator is diagonal.
    pub fn mean_photon(&self) -> f64 {
        (0..self.space.dim())
            .map(|k| k as f64 * self.mat[(k, k)].re)
            .sum()
    }

    pub fn max_offdiagonal(&self) -> f64 {
        let dim = self.space.dim();
        let mut max = 0.0_f64;
        for i in 0..dim {
            for j in 0..dim {
                if i != j {
                    max = max.max(self.mat[(i, j)].norm());
                }
            }
        }
        max
    }

    /// Smallest eigenvalue. Exactly diagonal matrices read it off the
    /// diagonal; everything else goes through a Hermitian eigensolve.
    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.mat)
    }

    /// Explicitly renormalize to unit trace. Opt-in: states are constructed
    /// unnormalized-on-truncation because the deficit itself is a test target.
    pub fn renormalized(&self) -> DensityMatrix {
        let tr = self.trace();
        let scale = Complex64::new(1.0 / tr, 0.0);
        DensityMatrix {
            space: self.space,
            mat: &self.mat * scale,
            trace_deficit: 0.0,
        }
    }

    /// Build a diagonal state from nonnegative probabilities, then validate.
    pub fn from_diagonal(space: FockSpace, probs: &[f64], policy: &ValidationPolicy) -> Result<Self> {
        if probs.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                left: space.dim(),
                right: probs.len(),
            });
        }
        let mut mat = DMatrix::zeros(space.dim(), space.dim());
        for (k, &p) in probs.iter().enumerate() {
            mat[(k, k)] = Complex64::new(p, 0.0);
        }
        validate_density(mat, policy)
    }
}

fn min_eigenvalue(mat: &DMatrix<Complex64>) -> f64 {
    let dim = mat.nrows();
    let mut offdiag = 0.0_f64;
    for i in 0..dim {
        for j in 0..dim {
            if i != j {
                offdiag = offdiag.max(mat[(i, j)].norm());
            }
        }
    }
    if offdiag == 0.0 {
        return (0..dim).map(|k| mat[(k, k)].re).fold(f64::INFINITY, f64::min);
    }
    let eig = nalgebra::linalg::SymmetricEigen::new(mat.clone());
    eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Validate a raw matrix as a density matrix, or return the diagnostic
/// naming the violated invariant (hermiticity / trace / positivity) and its
/// magnitude. Checks run in that order.
pub fn validate_density(mat: DMatrix<Complex64>, policy: &ValidationPolicy) -> Result<DensityMatrix> {
    if mat.nrows() != mat.ncols() {
        return Err(Error::NotSquare {
            rows: mat.nrows(),
            cols: mat.ncols(),
        });
    }
    let space = FockSpace::new(mat.nrows())?;
    let dim = space.dim();

    let mut herm_dev = 0.0_f64;
    for i in 0..dim {
        for j in i..dim {
            herm_dev = herm_dev.max((mat[(i, j)] - mat[(j, i)].conj()).norm());
        }
    }
    if herm_dev > policy.hermiticity_tol {
        return Err(Error::NotHermitian {
            max_deviation: herm_dev,
            tolerance: policy.hermiticity_tol,
        });
    }

    let trace = mat.trace().re;
    let deficit = 1.0 - trace;
    match policy.trace {
        TracePolicy::Strict { tolerance } => {
            if deficit.abs() > tolerance {
                return Err(Error::TraceOutOfTolerance {
                    trace,
                    deficit,
                    tolerance,
                });
            }
        }
        TracePolicy::RecordDeficit { budget } => {
            if deficit > budget {
                return Err(Error::TraceDeficitTooLarge { deficit, budget });
            }
        }
    }

    let min_eig = min_eigenvalue(&mat);
    if min_eig < -policy.psd_tol {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: min_eig,
            tolerance: policy.psd_tol,
        });
    }

    Ok(DensityMatrix {
        space,
        mat,
        trace_deficit: deficit.max(0.0),
    })
}
