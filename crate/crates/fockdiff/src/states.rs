//! Constructors for the optical-field states used as channel inputs, plus
//! their analytic photon-number distributions and means.
//!
//! All states here are diagonal in the Fock basis by construction. They are
//! built unnormalized-on-truncation: the trace lost above the cutoff is
//! recorded on the state (see [`crate::fock::TracePolicy`]), never silently
//! renormalized, because that bookkeeping is itself a verification target.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, FockSpace, ValidationPolicy};
use crate::special::log_factorial_table;

/// Default budget for the probability mass a constructor may leave above the
/// truncation cutoff.
pub const DEFAULT_TAIL_BUDGET: f64 = 1e-8;

/// Negative binomial state parameters: `s` photons detected/subtracted from
/// a thermal field with parameter `gamma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NbsParams {
    s: usize,
    gamma: f64,
}

impl NbsParams {
    pub fn new(s: usize, gamma: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma <= 0.0 || gamma >= 1.0 {
            return Err(Error::InvalidParameter {
                name: "gamma",
                value: gamma,
                constraint: "0 < gamma < 1",
            });
        }
        Ok(Self { s, gamma })
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Mean photon number (s+1)(1-γ)/γ.
    pub fn mean_photon(&self) -> f64 {
        (self.s as f64 + 1.0) * (1.0 - self.gamma) / self.gamma
    }
}

/// Chaotic (thermal) field parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChaoticParams {
    gamma: f64,
    n_c: f64,
    f: f64,
}

impl ChaoticParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma <= 0.0 || gamma >= 1.0 {
            return Err(Error::InvalidParameter {
                name: "gamma",
                value: gamma,
                constraint: "0 < gamma < 1",
            });
        }
        Ok(Self {
            gamma,
            n_c: (1.0 - gamma) / gamma,
            f: (1.0 - gamma).ln(),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Mean occupancy n_c = 1/γ - 1.
    pub fn mean_occupancy(&self) -> f64 {
        self.n_c
    }

    /// ln(1-γ), the (negative) exponent of the thermal form e^{f·a†a}.
    pub fn f(&self) -> f64 {
        self.f
    }
}

/// Laguerre-polynomial-weighted chaotic state parameters: the output family
/// of a number state |l⟩⟨l| sent through the diffusion channel, with
/// λ = 1/(1+κt). λ = 1 is the t = 0 limit, i.e. the number state itself.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LwcsParams {
    l: usize,
    lambda: f64,
}

impl LwcsParams {
    pub fn new(l: usize, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 || lambda > 1.0 {
            return Err(Error::InvalidParameter {
                name: "lambda",
                value: lambda,
                constraint: "0 < lambda <= 1",
            });
        }
        Ok(Self { l, lambda })
    }

    /// λ = 1/(1+κt) for the diffusion time κt.
    pub fn from_diffusion_time(l: usize, kt: f64) -> Result<Self> {
        if !kt.is_finite() || kt < 0.0 {
            return Err(Error::InvalidParameter {
                name: "kt",
                value: kt,
                constraint: "kt >= 0",
            });
        }
        Self::new(l, 1.0 / (1.0 + kt))
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Diffusion time κt = 1/λ - 1 this state corresponds to.
    pub fn kt(&self) -> f64 {
        1.0 / self.lambda - 1.0
    }
}

/// Fock diagonal of a normally ordered form C·:e^{K·a†a} P(a†a): with a
/// polynomial P(x) = Σ_l c_l x^l, c_l >= 0.
///
/// The diagonal rule: ⟨n|·|n⟩ = C·Σ_{l<=min(deg,n)} c_l · n!/(n-l)! · (1+K)^{n-l},
/// which follows from :(a†)^l a^l e^{K·a†a}: = (a†)^l (1+K)^{a†a} a^l. This one
/// evaluator covers every diagonal state family in the crate; it is validated
/// against the explicit coefficient constructions before being trusted as an
/// oracle.
#[derive(Clone, Debug)]
pub struct NormallyOrderedDiagonal {
    scale: f64,
    base: f64,
    coeffs: Vec<f64>,
}

impl NormallyOrderedDiagonal {
    /// `exp_coefficient` is K; the polynomial coefficients must be
    /// nonnegative and 1+K must lie in (0, 1) for the tail bounds to hold.
    pub fn new(scale: f64, exp_coefficient: f64, coeffs: Vec<f64>) -> Self {
        let base = 1.0 + exp_coefficient;
        debug_assert!(base > 0.0 && base < 1.0, "need 0 < 1+K < 1, got {base}");
        debug_assert!(coeffs.iter().all(|&c| c >= 0.0));
        debug_assert!(!coeffs.is_empty());
        Self { scale, base, coeffs }
    }

    /// Normally ordered form of the negative binomial state itself:
    /// γ^{s+1}·:e^{-γ·a†a} L_s((γ-1)·a†a):.
    pub fn nbs(p: &NbsParams) -> Self {
        let s = p.s();
        let gamma = p.gamma();
        let table = log_factorial_table(s);
        let coeffs = (0..=s)
            .map(|l| {
                (table[s] - 2.0 * table[l] - table[s - l]).exp() * (1.0 - gamma).powi(l as i32)
            })
            .collect();
        Self::new(gamma.powi(s as i32 + 1), -gamma, coeffs)
    }

    /// λ(1-λ)^l·:L_l(-λ²·a†a/(1-λ)) e^{-λ·a†a}): for λ < 1.
    pub fn lwcs(p: &LwcsParams) -> Self {
        let l = p.l();
        let lambda = p.lambda();
        assert!(lambda < 1.0, "lambda = 1 is the pure number state");
        let arg = lambda * lambda / (1.0 - lambda);
        let table = log_factorial_table(l);
        let coeffs = (0..=l)
            .map(|j| (table[l] - 2.0 * table[j] - table[l - j]).exp() * arg.powi(j as i32))
            .collect();
        Self::new(lambda * (1.0 - lambda).powi(l as i32), -lambda, coeffs)
    }

    pub fn prob(&self, n: usize) -> f64 {
        let deg = self.coeffs.len() - 1;
        let mut acc = 0.0;
        for (l, &c) in self.coeffs.iter().enumerate().take(deg.min(n) + 1) {
            let mut falling = 1.0;
            for j in 0..l {
                falling *= (n - j) as f64;
            }
            acc += c * falling * self.base.powi((n - l) as i32);
        }
        self.scale * acc
    }

    /// Probabilities for levels 0..count.
    pub fn probs(&self, count: usize) -> Vec<f64> {
        (0..count).map(|n| self.prob(n)).collect()
    }

    /// Smallest N with a proven bound Σ_{n>=N} p_n <= eps.
    ///
    /// All terms are nonnegative and p_{n+1}/p_n <= r(n) with
    /// r(n) = base·(n+1)/(n+1-deg) decreasing toward base < 1, so once
    /// r(n) < 1 the tail from n is bounded by p_n/(1-r(n)).
    pub fn required_levels(&self, eps: f64) -> usize {
        let deg = self.coeffs.len() - 1;
        for n in 0.. {
            if n <= deg {
                continue;
            }
            let r = self.base * (n + 1) as f64 / (n + 1 - deg) as f64;
            if r >= 1.0 {
                continue;
            }
            let p = self.prob(n);
            if p / (1.0 - r) <= eps {
                return n;
            }
        }
        unreachable!("geometric majorant always terminates")
    }
}

/// ρ = |l⟩⟨l|.
pub fn number_state(space: FockSpace, l: usize) -> Result<DensityMatrix> {
    if l >= space.dim() {
        return Err(Error::LevelOutOfRange {
            level: l,
            dim: space.dim(),
        });
    }
    let mut mat = DMatrix::zeros(space.dim(), space.dim());
    mat[(l, l)] = Complex64::new(1.0, 0.0);
    crate::fock::validate_density(mat, &ValidationPolicy::strict())
}

/// Shared coefficient path for the negative-binomial family, so the s = 0
/// case coincides with the chaotic field bit for bit.
fn nbs_probs(s: usize, gamma: f64, dim: usize) -> Vec<f64> {
    let table = log_factorial_table(dim + s);
    let ln_gamma_term = (s as f64 + 1.0) * gamma.ln();
    let ln_q = (1.0 - gamma).ln();
    (0..dim)
        .map(|n| (table[n + s] - table[n] - table[s] + ln_gamma_term + n as f64 * ln_q).exp())
        .collect()
}

/// Chaotic (thermal) field: diagonal ρ_nn = γ(1-γ)^n, mean 1/γ - 1.
pub fn chaotic_state(space: FockSpace, p: &ChaoticParams) -> Result<DensityMatrix> {
    chaotic_state_with_budget(space, p, DEFAULT_TAIL_BUDGET)
}

pub fn chaotic_state_with_budget(
    space: FockSpace,
    p: &ChaoticParams,
    budget: f64,
) -> Result<DensityMatrix> {
    let nbs = NbsParams::new(0, p.gamma())?;
    nbs_state_with_budget(space, &nbs, budget)
}

/// Negative binomial state: diagonal ρ_nn = C(n+s, n) γ^{s+1} (1-γ)^n,
/// mean (s+1)(1-γ)/γ.
pub fn nbs_state(space: FockSpace, p: &NbsParams) -> Result<DensityMatrix> {
    nbs_state_with_budget(space, p, DEFAULT_TAIL_BUDGET)
}

pub fn nbs_state_with_budget(
    space: FockSpace,
    p: &NbsParams,
    budget: f64,
) -> Result<DensityMatrix> {
    let dim = space.dim();
    let required = NormallyOrderedDiagonal::nbs(p).required_levels(budget);
    if required > dim {
        let probs = nbs_probs(p.s(), p.gamma(), dim);
        let tail = 1.0 - probs.iter().sum::<f64>();
        return Err(Error::TruncationTooSmall {
            dim,
            required_dim: required,
            tail,
            budget,
        });
    }
    let probs = nbs_probs(p.s(), p.gamma(), dim);
    DensityMatrix::from_diagonal(space, &probs, &ValidationPolicy::deficit(budget))
}

/// Negative binomial state built the other way: s-fold photon subtraction
/// a^s ρ_c a†^s / (s!·n_c^s) from a chaotic field, evaluated by explicit
/// matrix products on a space enlarged by s levels so the subtraction does
/// not clip, then restricted back.
pub fn nbs_via_subtraction(space: FockSpace, p: &NbsParams) -> Result<DensityMatrix> {
    nbs_via_subtraction_with_budget(space, p, DEFAULT_TAIL_BUDGET)
}

pub fn nbs_via_subtraction_with_budget(
    space: FockSpace,
    p: &NbsParams,
    budget: f64,
) -> Result<DensityMatrix> {
    let dim = space.dim();
    let s = p.s();
    let chaotic = ChaoticParams::new(p.gamma())?;
    let enlarged = FockSpace::new(dim + s)?;
    let rho_c = chaotic_state_with_budget(enlarged, &chaotic, budget)?;

    let (a, _) = crate::fock::ladder_ops(enlarged);
    let mut mat = rho_c.matrix().clone();
    for _ in 0..s {
        mat = a.matrix() * mat * a.matrix().adjoint();
    }
    let norm =
        (-(crate::special::log_factorial(s)) - s as f64 * chaotic.mean_occupancy().ln()).exp();
    mat *= Complex64::new(norm, 0.0);

    let restricted = mat.view((0, 0), (dim, dim)).into_owned();
    crate::fock::validate_density(restricted, &ValidationPolicy::deficit(budget))
}

/// Laguerre-polynomial-weighted chaotic state. λ = 1 (t = 0) is the pure
/// number state; the normally ordered form has a removable singularity there.
pub fn lwcs_state(space: FockSpace, p: &LwcsParams) -> Result<DensityMatrix> {
    lwcs_state_with_budget(space, p, DEFAULT_TAIL_BUDGET)
}

pub fn lwcs_state_with_budget(
    space: FockSpace,
    p: &LwcsParams,
    budget: f64,
) -> Result<DensityMatrix> {
    if p.lambda() == 1.0 {
        return number_state(space, p.l());
    }
    let dim = space.dim();
    let rule = NormallyOrderedDiagonal::lwcs(p);
    let required = rule.required_levels(budget);
    if required > dim {
        let tail = 1.0 - rule.probs(dim).iter().sum::<f64>();
        return Err(Error::TruncationTooSmall {
            dim,
            required_dim: required,
            tail,
            budget,
        });
    }
    let probs = rule.probs(dim);
    DensityMatrix::from_diagonal(space, &probs, &ValidationPolicy::deficit(budget))
}

/// Bose-Einstein occupancy 1/(e^{βω} - 1) in natural units (ħ = 1).
pub fn thermal_occupancy(beta: f64, omega: f64) -> Result<f64> {
    let x = beta * omega;
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "beta*omega",
            value: x,
            constraint: "beta*omega > 0",
        });
    }
    Ok(1.0 / x.exp_m1())
}

/// Inverse of the occupancy relation: γ = 1/(1 + n_c).
pub fn gamma_from_occupancy(n_c: f64) -> Result<f64> {
    if !n_c.is_finite() || n_c < 0.0 {
        return Err(Error::InvalidParameter {
            name: "n_c",
            value: n_c,
            constraint: "n_c >= 0",
        });
    }
    Ok(1.0 / (1.0 + n_c))
}
