//! Fixed-grid verification suites.
//!
//! Every claim the crate makes about the channel is pinned here as a check
//! with a measured worst-case residual and a hard tolerance. The CLI `verify`
//! command and the acceptance test suite both run these, so there is exactly
//! one definition of each check and its grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{
    self, apply_channel_kraus, auto_dim, default_ode_step, evolve_ode, evolved_mean_photon,
    evolved_nbs_diagonal, evolved_nbs_required_levels, interior_levels, kraus_completeness_diagonal,
    kraus_terms, ChannelConfig, EvolvedNbsParams,
};
use crate::error::Result;
use crate::fock::{DensityMatrix, FockSpace};
use crate::special::{check_generating_function, check_laguerre_integral, check_negative_binomial_sum};
use crate::states::{
    chaotic_state_with_budget, lwcs_state_with_budget, nbs_state_with_budget, nbs_via_subtraction,
    number_state, ChaoticParams, LwcsParams, NbsParams, NormallyOrderedDiagonal,
};

const DEFICIT_TARGET: f64 = diffusion::DEFAULT_DEFICIT_TARGET;

/// One verified property: worst measured residual over its grid vs the
/// pinned tolerance.
#[derive(Clone, Debug)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub worst_case: String,
    pub residual: f64,
    pub tolerance: f64,
}

impl PropertyCheck {
    pub fn pass(&self) -> bool {
        self.residual <= self.tolerance
    }
}

struct Worst {
    residual: f64,
    case: String,
}

impl Worst {
    fn new() -> Self {
        Self {
            residual: -1.0,
            case: String::new(),
        }
    }

    fn update(&mut self, residual: f64, case: String) {
        if residual > self.residual {
            self.residual = residual;
            self.case = case;
        }
    }

    fn into_check(self, name: &'static str, tolerance: f64) -> PropertyCheck {
        PropertyCheck {
            name,
            worst_case: self.case,
            residual: self.residual.max(0.0),
            tolerance,
        }
    }
}

/// The shared evolution grid: s ∈ {0,1,2,4}, γ ∈ {0.3,0.5,0.7},
/// κt ∈ {0,0.5,1,2}.
pub fn evolution_grid() -> Vec<(NbsParams, f64)> {
    let mut grid = Vec::new();
    for &s in &[0usize, 1, 2, 4] {
        for &gamma in &[0.3, 0.5, 0.7] {
            for &kt in &[0.0, 0.5, 1.0, 2.0] {
                grid.push((NbsParams::new(s, gamma).unwrap(), kt));
            }
        }
    }
    grid
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Summation, integral, and parameter identities.
pub fn identities_suite() -> Result<Vec<PropertyCheck>> {
    let mut checks = Vec::new();

    let mut worst = Worst::new();
    for n in 0..=5 {
        for &x in &[0.1, 0.3, 0.5, 0.7] {
            let r = check_negative_binomial_sum(n, x, 200)?;
            worst.update(r, format!("n={n} x={x}"));
        }
    }
    checks.push(worst.into_check("negative_binomial_sum", 1e-12));

    let mut worst = Worst::new();
    for s in 0..=3 {
        for &lambda in &[-0.5, -0.25, 0.25, 0.5] {
            for &z in &[-5.0, -2.0, 0.0, 2.0, 5.0] {
                let r = check_generating_function(s, lambda, z, 400)?;
                worst.update(r, format!("s={s} lambda={lambda} z={z}"));
            }
        }
    }
    checks.push(worst.into_check("laguerre_generating_function", 1e-9));

    let mut worst = Worst::new();
    for l in 0..=6 {
        for &b in &[1.0, 1.5, 2.0, 4.0] {
            let r = check_laguerre_integral(l, b)?;
            worst.update(r, format!("l={l} b={b}"));
        }
    }
    checks.push(worst.into_check("laguerre_integral", 1e-10));

    let mut worst = Worst::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let gamma = rng.random_range(0.01..0.99);
        let kt = rng.random_range(0.0..10.0);
        let s = rng.random_range(0..8);
        let ev = EvolvedNbsParams::new(&NbsParams::new(s, gamma)?, kt);
        worst.update(
            ev.sum_rule_residual(),
            format!("s={s} gamma={gamma:.4} kt={kt:.4}"),
        );
    }
    checks.push(worst.into_check("evolved_params_sum_rule", 1e-14));

    Ok(checks)
}

/// State-construction properties.
pub fn states_suite() -> Result<Vec<PropertyCheck>> {
    let mut checks = Vec::new();
    let space = FockSpace::new(256)?;

    let mut mean_law = Worst::new();
    for s in 0..=4 {
        for &gamma in &[0.3, 0.5, 0.7] {
            let p = NbsParams::new(s, gamma)?;
            let rho = nbs_state_with_budget(space, &p, 1e-12)?;
            mean_law.update(
                (rho.mean_photon() - p.mean_photon()).abs(),
                format!("s={s} gamma={gamma}"),
            );
        }
    }
    checks.push(mean_law.into_check("nbs_mean_law", 1e-8));

    let mut s0 = Worst::new();
    for &gamma in &[0.3, 0.5, 0.7] {
        let nbs = nbs_state_with_budget(space, &NbsParams::new(0, gamma)?, 1e-8)?;
        let cha = chaotic_state_with_budget(space, &ChaoticParams::new(gamma)?, 1e-8)?;
        let diff = max_abs_diff(&nbs.diagonal(), &cha.diagonal());
        s0.update(diff, format!("gamma={gamma}"));
    }
    checks.push(s0.into_check("nbs_s0_equals_chaotic", 0.0));

    let sub_space = FockSpace::new(128)?;
    let mut sub = Worst::new();
    for s in 0..=4 {
        for &gamma in &[0.3, 0.5, 0.7] {
            let p = NbsParams::new(s, gamma)?;
            let direct = nbs_state_with_budget(sub_space, &p, 1e-8)?;
            let subtracted = nbs_via_subtraction(sub_space, &p)?;
            let mut diff = max_abs_diff(&direct.diagonal(), &subtracted.diagonal());
            diff = diff.max(subtracted.max_offdiagonal());
            sub.update(diff, format!("s={s} gamma={gamma}"));
        }
    }
    checks.push(sub.into_check("photon_subtraction_equivalence", 1e-12));

    let mut rule = Worst::new();
    for s in 0..=4 {
        for &gamma in &[0.3, 0.5, 0.7] {
            let p = NbsParams::new(s, gamma)?;
            let explicit = nbs_state_with_budget(space, &p, 1e-8)?;
            let ordered = NormallyOrderedDiagonal::nbs(&p).probs(space.dim());
            rule.update(
                max_abs_diff(&explicit.diagonal(), &ordered),
                format!("s={s} gamma={gamma}"),
            );
        }
    }
    checks.push(rule.into_check("nbs_normally_ordered_diagonal", 1e-12));

    let mut lwcs_mean = Worst::new();
    let mut lwcs_trace = Worst::new();
    for l in 0..=4 {
        for &lambda in &[0.4, 0.5, 0.8] {
            let p = LwcsParams::new(l, lambda)?;
            let rho = lwcs_state_with_budget(space, &p, 1e-12)?;
            let expect = l as f64 + p.kt();
            lwcs_mean.update(
                (rho.mean_photon() - expect).abs(),
                format!("l={l} lambda={lambda}"),
            );
            lwcs_trace.update((rho.trace() - 1.0).abs(), format!("l={l} lambda={lambda}"));
        }
    }
    checks.push(lwcs_mean.into_check("lwcs_mean_photon", 1e-8));
    checks.push(lwcs_trace.into_check("lwcs_trace", 1e-8));

    let mut occ = Worst::new();
    for &bw in &[0.2, 2.0_f64.ln(), 1.0, 3.0] {
        let n_c = crate::states::thermal_occupancy(bw, 1.0)?;
        let gamma = crate::states::gamma_from_occupancy(n_c)?;
        let back = (1.0 - gamma) / gamma;
        occ.update((back - n_c).abs() / n_c.max(1e-300), format!("beta*omega={bw}"));
    }
    checks.push(occ.into_check("thermal_occupancy_roundtrip", 1e-12));

    Ok(checks)
}

/// Channel properties: trace, completeness, structure, and the agreement of
/// the three evolution routes on the shared grid.
pub fn channel_suite() -> Result<Vec<PropertyCheck>> {
    let mut checks = Vec::new();

    let mut identity = Worst::new();
    {
        let space = FockSpace::new(64)?;
        let rho = nbs_state_with_budget(space, &NbsParams::new(1, 0.5)?, 1e-8)?;
        let out = apply_channel_kraus(&rho, &ChannelConfig::new(1.0, 0.0)?)?;
        let bitwise = if out.matrix() == rho.matrix() { 0.0 } else { 1.0 };
        identity.update(bitwise, "kt=0".into());
    }
    checks.push(identity.into_check("identity_channel_at_zero_time", 0.0));

    let mut completeness = Worst::new();
    for &kt in &[0.5, 1.0, 2.0] {
        let space = FockSpace::new(128)?;
        let cfg = ChannelConfig::new(1.0, kt)?;
        let terms = kraus_terms(space, &cfg)?;
        let cutoff = terms.iter().map(|t| t.m()).max().unwrap();
        let diag = kraus_completeness_diagonal(&terms);
        let interior = interior_levels(space.dim(), cutoff);
        for (k, &d) in diag.iter().enumerate().take(interior) {
            completeness.update((d - 1.0).abs(), format!("kt={kt} cutoff={cutoff} level={k}"));
        }
    }
    checks.push(completeness.into_check("kraus_completeness_interior", 1e-10));

    // one pass over the evolution grid feeds the trace, mean-law, and
    // triple-agreement checks
    let mut kraus_trace = Worst::new();
    let mut analytic_trace = Worst::new();
    let mut kraus_mean = Worst::new();
    let mut ode_mean = Worst::new();
    let mut triple = Worst::new();
    let mut zero_time = Worst::new();
    let mut diagonality = Worst::new();
    let mut positivity = Worst::new();

    for (p, kt) in evolution_grid() {
        let label = format!("s={} gamma={} kt={kt}", p.s(), p.gamma());
        let dim = auto_dim(&p, kt, DEFICIT_TARGET);
        let space = FockSpace::new(dim)?;
        let rho0 = nbs_state_with_budget(space, &p, DEFICIT_TARGET)?;
        let cfg = ChannelConfig::new(1.0, kt)?;
        let expected_mean = evolved_mean_photon(&p, &cfg);

        let kraus = apply_channel_kraus(&rho0, &cfg)?;
        kraus_trace.update((kraus.trace() - 1.0).abs(), label.clone());
        kraus_mean.update((kraus.mean_photon() - expected_mean).abs(), label.clone());
        diagonality.update(kraus.max_offdiagonal(), label.clone());

        let ode = evolve_ode(&rho0, &cfg, default_ode_step(1.0, dim))?;
        ode_mean.update((ode.mean_photon() - expected_mean).abs(), label.clone());

        let analytic = evolved_nbs_diagonal(&p, &cfg, dim - 1);
        triple.update(max_abs_diff(&kraus.diagonal(), &analytic), label.clone());
        triple.update(max_abs_diff(&ode.diagonal(), &analytic), label.clone());
        triple.update(max_abs_diff(&kraus.diagonal(), &ode.diagonal()), label.clone());

        if kt == 0.0 {
            let direct = rho0.diagonal();
            zero_time.update(max_abs_diff(&analytic, &direct), label.clone());
        }

        let n_max = evolved_nbs_required_levels(&p, &cfg, 1e-11);
        let series: f64 = evolved_nbs_diagonal(&p, &cfg, n_max).iter().sum();
        analytic_trace.update((series - 1.0).abs(), label.clone());

        positivity.update((-kraus.min_eigenvalue()).max(0.0), label.clone());
        positivity.update((-ode.min_eigenvalue()).max(0.0), label);
    }
    checks.push(kraus_trace.into_check("kraus_trace_conservation", 1e-8));
    checks.push(analytic_trace.into_check("evolved_diagonal_sums_to_one", 1e-10));
    checks.push(kraus_mean.into_check("kraus_mean_photon_law", 1e-6));
    checks.push(ode_mean.into_check("ode_mean_photon_law", 1e-5));
    checks.push(triple.into_check("triple_method_agreement", 1e-6));
    checks.push(zero_time.into_check("zero_time_reduction", 1e-12));
    checks.push(diagonality.into_check("diagonality_preservation", 1e-14));
    checks.push(positivity.into_check("positivity_preservation", 1e-10));

    // number states map onto the Laguerre-weighted family
    let mut number_diag = Worst::new();
    let mut number_mean = Worst::new();
    let nspace = FockSpace::new(192)?;
    for &l in &[0usize, 1, 2, 4] {
        for &kt in &[0.5, 1.0] {
            let rho0 = number_state(nspace, l)?;
            let cfg = ChannelConfig::new(1.0, kt)?;
            let out = apply_channel_kraus(&rho0, &cfg)?;
            let reference = lwcs_state_with_budget(
                nspace,
                &LwcsParams::from_diffusion_time(l, kt)?,
                DEFICIT_TARGET,
            )?;
            number_diag.update(
                max_abs_diff(&out.diagonal(), &reference.diagonal()),
                format!("l={l} kt={kt}"),
            );
            number_mean.update(
                (out.mean_photon() - (l as f64 + kt)).abs(),
                format!("l={l} kt={kt}"),
            );
        }
    }
    checks.push(number_diag.into_check("number_state_channel_output", 1e-9));
    checks.push(number_mean.into_check("number_state_mean", 1e-8));

    // the mean gain is kt for every input family
    let mut linearity = Worst::new();
    for (label, rho0) in representative_states()? {
        let kt = 1.0;
        let cfg = ChannelConfig::new(1.0, kt)?;
        let out = apply_channel_kraus(&rho0, &cfg)?;
        linearity.update(
            ((out.mean_photon() - rho0.mean_photon()) - kt).abs(),
            label.to_string(),
        );
    }
    checks.push(linearity.into_check("mean_gain_linearity", 1e-6));

    // time-homogeneous semigroup: t1 then t2 equals t1+t2
    let mut semigroup = Worst::new();
    for (label, rho0) in representative_states()? {
        let half = ChannelConfig::new(1.0, 0.5)?;
        let full = ChannelConfig::new(1.0, 1.0)?;
        let two = apply_channel_kraus(&apply_channel_kraus(&rho0, &half)?, &half)?;
        let one = apply_channel_kraus(&rho0, &full)?;
        semigroup.update(max_abs_diff(&two.diagonal(), &one.diagonal()), label.to_string());
    }
    checks.push(semigroup.into_check("semigroup_composition", 1e-6));

    Ok(checks)
}

fn representative_states() -> Result<Vec<(&'static str, DensityMatrix)>> {
    let space = FockSpace::new(160)?;
    Ok(vec![
        (
            "nbs(s=1, gamma=0.5)",
            nbs_state_with_budget(space, &NbsParams::new(1, 0.5)?, DEFICIT_TARGET)?,
        ),
        ("number(l=2)", number_state(space, 2)?),
        (
            "chaotic(gamma=0.5)",
            chaotic_state_with_budget(space, &ChaoticParams::new(0.5)?, DEFICIT_TARGET)?,
        ),
        (
            "lwcs(l=1, lambda=0.8)",
            lwcs_state_with_budget(space, &LwcsParams::new(1, 0.8)?, DEFICIT_TARGET)?,
        ),
    ])
}

pub fn all_suites() -> Result<Vec<PropertyCheck>> {
    let mut checks = identities_suite()?;
    checks.extend(states_suite()?);
    checks.extend(channel_suite()?);
    Ok(checks)
}
