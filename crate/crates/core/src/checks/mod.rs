//! One checker per inequality or identity. Each consumes a
//! [`FunctionalSeries`] (or builds its own auxiliary bridges) and returns a
//! [`CheckReport`] with signed margins, witnesses and hypothesis stamps.
//!
//! A checker whose standing assumptions are not stamped on the input refuses:
//! it reports `hypotheses_ok = false` and never passes.

mod report;

pub use report::*;

use crate::comparison::{
    check_comparison_bounds, check_matrix_ode, concavity_profile, log_bound, random_orthonormal_basis,
    sample_directions, sym_eig, MatrixOdePath,
};
use crate::flows::{heat_density, reverse_trajectory, schrodinger_bridge, sinkhorn, uniform_times, FlowTrajectory, SinkhornOptions};
use crate::functionals::{assemble_series, cost_accumulate, cumulative_integral, FunctionalSeries, SeriesRecord};
use crate::grid::Density;
use crate::sym::SymMatrix;
use crate::{Error, Result};

/// Random directions added to the eigenbasis in the direction-wise checks.
pub const RANDOM_DIRECTIONS: usize = 8;
/// Default seed for random directions.
pub const DEFAULT_SEED: u64 = 0x5eed;
/// Weight of `Δt²` in [`default_tolerance`].
pub const C_FD: f64 = 1.0;
/// Weight of the resolution certificate in [`default_tolerance`].
pub const C_SP: f64 = 10.0;

/// `max(1e-6, C_FD·Δt² + C_SP·certificate)` for a series.
pub fn default_tolerance(series: &FunctionalSeries) -> f64 {
    let dt = series.max_step();
    1e-6f64.max(C_FD * dt * dt + C_SP * series.resolution_certificate())
}

fn resolution_stamp(series: &FunctionalSeries) -> Stamp {
    Stamp::new("functionals resolved", series.under_resolved.is_none())
}

fn theorem_stamps(series: &FunctionalSeries) -> Vec<Stamp> {
    let mut s = series.hypotheses.stamps();
    s.push(resolution_stamp(series));
    s
}

fn refuse_unless(name: &str, tol: f64, stamps: &[Stamp], series: &FunctionalSeries) -> Option<CheckReport> {
    if stamps.iter().all(|s| s.ok) {
        return None;
    }
    let failed: Vec<&str> = stamps.iter().filter(|s| !s.ok).map(|s| s.name.as_str()).collect();
    let mut reason = format!("hypotheses not met: {}", failed.join(", "));
    if let Some(u) = &series.under_resolved {
        reason.push_str(&format!(" ({u})"));
    }
    Some(CheckReport::refused(name, tol, stamps.to_vec(), reason))
}

/// Empty report for a series checker, noting any entropy-slope mismatch.
fn series_report(name: &str, tol: f64, series: &FunctionalSeries) -> CheckReport {
    let mut report = CheckReport::new(name, tol);
    if let Some(m) = &series.slope_mismatch {
        report.note(format!("series is not a consistent flow: {m}"));
    }
    report
}

fn path_of(series: &FunctionalSeries, pick: impl Fn(&SeriesRecord) -> SymMatrix, extra: Option<Vec<SymMatrix>>) -> Result<MatrixOdePath> {
    MatrixOdePath::new(series.times(), series.matrices(pick), extra)
}

/// Matrix inequality `∂tM ⪰ M² + R` plus its consequences for one path.
fn riccati_family(
    report: &mut CheckReport,
    label: &str,
    path: &MatrixOdePath,
    entropy_like: Option<(f64, &[SymMatrix])>,
    tol: f64,
    seed: u64,
) -> Result<()> {
    report.absorb(label, check_matrix_ode(path, tol)?);
    let dirs = sample_directions(&path.matrices[0], RANDOM_DIRECTIONS, seed);
    report.absorb(label, check_comparison_bounds(path, &dirs, entropy_like.map(|e| e.0), tol)?);
    for (name, w) in &dirs {
        let prof = concavity_profile(path, w, entropy_like.map(|e| e.1), tol)?;
        report.absorb(&format!("{label} [{name}]"), prof);
    }
    Ok(())
}

/// `∂t𝓣± ⪰ 𝓣±² + R` and the Riccati, trace, log-trace, concavity and
/// two-sided consequences for both signs.
pub fn check_t_inequality(series: &FunctionalSeries, tol: f64, seed: u64) -> Result<CheckReport> {
    let name = "T_inequality";
    let stamps = theorem_stamps(series);
    if let Some(r) = refuse_unless(name, tol, &stamps, series) {
        return Ok(r);
    }
    let mut report = series_report(name, tol, series).with_seed(seed);
    let rem = series.matrices(|r| r.remainder);
    riccati_family(&mut report, "T+", &path_of(series, |r| r.t_plus, Some(rem.clone()))?, None, tol, seed)?;
    riccati_family(&mut report, "T-", &path_of(series, |r| r.t_minus, Some(rem))?, None, tol, seed)?;
    Ok(report.with_stamps(stamps))
}

/// `∂t𝓢 ⪰ 𝓢² + (σ²/4)𝓘² + R` with consequences; the integrated quantities
/// are the entropy difference and the matrix entropy `𝓔`.
pub fn check_s_inequality(series: &FunctionalSeries, tol: f64, seed: u64) -> Result<CheckReport> {
    let name = "S_inequality";
    let stamps = theorem_stamps(series);
    if let Some(r) = refuse_unless(name, tol, &stamps, series) {
        return Ok(r);
    }
    let s2 = series.sigma * series.sigma;
    let rem: Vec<SymMatrix> = series
        .records
        .iter()
        .map(|r| r.remainder + r.i_mat.square().scale(s2 / 4.0))
        .collect();
    let path = path_of(series, |r| r.s_mat, Some(rem))?;
    let e = series.matrices(|r| r.e_mat);
    let de = series.records[series.len() - 1].entropy - series.records[0].entropy;
    let mut report = series_report(name, tol, series).with_seed(seed);
    riccati_family(&mut report, "S", &path, Some((de, &e)), tol, seed)?;
    Ok(report.with_stamps(stamps))
}

/// `−Σlog(1−τλᵢ(0)) ≤ E(τ)−E(0)`, and `≤ Σlog(1+τλᵢ(τ))` for planning
/// flows, with `λᵢ(t)` the eigenvalues of `𝓢(t)`.
pub fn check_entropy_growth(series: &FunctionalSeries, tol: f64) -> Result<CheckReport> {
    let name = "entropy_growth";
    let stamps = theorem_stamps(series);
    if let Some(r) = refuse_unless(name, tol, &stamps, series) {
        return Ok(r);
    }
    let first = &series.records[0];
    let last = &series.records[series.len() - 1];
    let tau = series.tau();
    let de = last.entropy - first.entropy;
    let mut report = series_report(name, tol, series);
    let lower = log_bound(&first.s_mat, tau);
    report.push(Component {
        name: "lower bound -sum log(1 - tau lambda(0))".into(),
        margin: de - lower.value,
        tolerance: tol,
        witness: Some(Witness {
            time: first.t,
            direction: vec![],
            label: "S(0) eigenvalues".into(),
        }),
    });
    if series.hypotheses.planning_boundary {
        let upper = log_bound(&(-last.s_mat), tau);
        report.push(Component {
            name: "upper bound sum log(1 + tau lambda(tau))".into(),
            margin: -upper.value - de,
            tolerance: tol,
            witness: Some(Witness {
                time: last.t,
                direction: vec![],
                label: "S(tau) eigenvalues".into(),
            }),
        });
    } else {
        report.note("one-sided: the upper bound needs a planning boundary");
    }
    report.note(format!("E(tau) - E(0) = {de:.12e}"));
    Ok(report.with_stamps(stamps))
}

/// `λ_max(𝓘(t) − (1/σ)(1/t + 1/(τ−t))Id) ≤ tol` at interior samples.
pub fn check_turnpike(series: &FunctionalSeries, tol: f64) -> Result<CheckReport> {
    let name = "turnpike";
    let mut stamps = theorem_stamps(series);
    stamps.push(Stamp::new("sigma > 0", series.sigma > 0.0));
    if let Some(r) = refuse_unless(name, tol, &stamps, series) {
        return Ok(r);
    }
    let t0 = series.records[0].t;
    let tau = series.tau();
    let n = series.dim;
    let mut worst = (f64::INFINITY, 0usize, vec![]);
    for (k, r) in series.records.iter().enumerate().take(series.len() - 1).skip(1) {
        let t = r.t - t0;
        let c = (1.0 / t + 1.0 / (tau - t)) / series.sigma;
        let d = r.i_mat - SymMatrix::scalar(n, c);
        let e = sym_eig(&d);
        let margin = -e.eigenvalues[0];
        if margin < worst.0 {
            worst = (margin, k, e.eigenvectors[0].clone());
        }
    }
    let mut report = series_report(name, tol, series);
    if worst.0.is_finite() {
        report.push(Component {
            name: "I(t) <= (1/sigma)(1/t + 1/(tau-t)) Id".into(),
            margin: worst.0,
            tolerance: tol,
            witness: Some(Witness {
                time: series.records[worst.1].t,
                direction: worst.2,
                label: "top eigenvector".into(),
            }),
        });
    }
    Ok(report.with_stamps(stamps))
}

/// `|O(t) − O(0)| ≤ tol (1 + |O(0)|)`; needs `W = 0`.
pub fn check_energy(series: &FunctionalSeries, tol: f64) -> Result<CheckReport> {
    let name = "energy";
    let stamps = vec![
        Stamp::new("W = 0", series.interaction_free),
        Stamp::new("sigma >= 0", series.sigma >= 0.0),
        resolution_stamp(series),
    ];
    if let Some(r) = refuse_unless(name, tol, &stamps, series) {
        return Ok(r);
    }
    let o: Vec<f64> = series
        .records
        .iter()
        .map(|r| r.energy.ok_or_else(|| Error::Unsupported("energy needs W = 0".into())))
        .collect::<Result<_>>()?;
    let scale = 1.0 + o[0].abs();
    let (k, dev) = o
        .iter()
        .enumerate()
        .map(|(k, v)| (k, (v - o[0]).abs()))
        .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let mut report = series_report(name, tol, series);
    report.push(Component {
        name: "max |O(t) - O(0)| / (1 + |O(0)|)".into(),
        margin: -dev / scale,
        tolerance: tol,
        witness: Some(Witness {
            time: series.records[k].t,
            direction: vec![],
            label: "energy".into(),
        }),
    });
    report.note(format!("O(0) = {:.12e}", o[0]));
    Ok(report.with_stamps(stamps))
}

/// `𝓞(t) = ½𝓥 − (σ²/8)𝓘` constant; needs `U = W = f = 0`.
pub fn check_matrix_energy(series: &FunctionalSeries, tol: f64) -> Result<CheckReport> {
    let name = "matrix_energy";
    let stamps = vec![Stamp::new("U = W = f = 0", series.free), resolution_stamp(series)];
    if let Some(r) = refuse_unless(name, tol, &stamps, series) {
        return Ok(r);
    }
    let o0 = series.records[0].o_mat;
    let scale = 1.0 + o0.max_abs();
    let (k, dev) = series
        .records
        .iter()
        .enumerate()
        .map(|(k, r)| (k, (r.o_mat - o0).max_abs()))
        .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let mut report = series_report(name, tol, series);
    report.push(Component {
        name: "max |O(t) - O(0)| / (1 + |O(0)|) (matrix)".into(),
        margin: -dev / scale,
        tolerance: tol,
        witness: Some(Witness {
            time: series.records[k].t,
            direction: vec![],
            label: "matrix energy".into(),
        }),
    });
    Ok(report.with_stamps(stamps))
}

/// The pieces of the cost relation for both signs:
/// `(σ/2)∫Tr𝓣± dt` and `(σ/2)ΔE ± [C_τ − τO] ∓ 2∫∫[F − U] dρ dt`.
struct CostRelation {
    lhs: [f64; 2],
    rhs: [f64; 2],
}

fn cost_relation(series: &FunctionalSeries) -> Result<CostRelation> {
    let times = series.times();
    let half = 0.5 * series.sigma;
    let tau = series.tau();
    let tp = series.scalars(|r| r.t_plus.trace());
    let tm = series.scalars(|r| r.t_minus.trace());
    let int_tp = *cumulative_integral(&times, &tp)?.last().unwrap();
    let int_tm = *cumulative_integral(&times, &tm)?.last().unwrap();
    let fu = series.scalars(|r| r.f_mean - r.u_mean);
    let int_fu = *cumulative_integral(&times, &fu)?.last().unwrap();
    let de = series.records[series.len() - 1].entropy - series.records[0].entropy;
    let c = cost_accumulate(series)?.scalar;
    let o = series.records[0]
        .energy
        .ok_or_else(|| Error::Unsupported("cost relation needs W = 0".into()))?;
    let mid = c - tau * o;
    Ok(CostRelation {
        lhs: [half * int_tp, half * int_tm],
        rhs: [half * de + mid - 2.0 * int_fu, half * de - mid + 2.0 * int_fu],
    })
}

fn cost_stamps(series: &FunctionalSeries) -> Vec<Stamp> {
    vec![
        Stamp::new("W = 0", series.interaction_free),
        Stamp::new("sigma > 0", series.sigma > 0.0),
        resolution_stamp(series),
    ]
}

/// `(σ/2)∫Tr𝓣± dt = (σ/2)[E(τ)−E(0)] ± [C_τ − τO] ∓ 2∫∫[F(ρ)−U]dρ dt`.
pub fn check_cost_identity(series: &FunctionalSeries, tol: f64) -> Result<CheckReport> {
    let name = "cost_identity";
    let stamps = cost_stamps(series);
    if let Some(r) = refuse_unless(name, tol, &stamps, series) {
        return Ok(r);
    }
    let rel = cost_relation(series)?;
    let mut report = series_report(name, tol, series);
    for (i, sign) in ["+", "-"].iter().enumerate() {
        report.push(Component {
            name: format!("(sigma/2) int Tr T{sign} identity"),
            margin: -(rel.lhs[i] - rel.rhs[i]).abs(),
            tolerance: tol,
            witness: Some(Witness {
                time: series.tau(),
                direction: vec![],
                label: format!("T{sign}"),
            }),
        });
    }
    Ok(report.with_stamps(stamps))
}

/// `−(σ/2)Σlog(1−τλᵢ(0)) ≤ (σ/2)ΔE ± [C_τ − τO] ∓ 2∫∫[F−U]` with `λᵢ` the
/// eigenvalues of `𝓣±(0)`; the upper bound `(σ/2)Σlog(1+τλᵢ(τ))` is added
/// for planning flows.
pub fn check_cost_inequality(series: &FunctionalSeries, tol: f64) -> Result<CheckReport> {
    let name = "cost_inequality";
    let mut stamps = cost_stamps(series);
    stamps.extend(series.hypotheses.stamps());
    if let Some(r) = refuse_unless(name, tol, &stamps, series) {
        return Ok(r);
    }
    let rel = cost_relation(series)?;
    let half = 0.5 * series.sigma;
    let tau = series.tau();
    let first = &series.records[0];
    let last = &series.records[series.len() - 1];
    let mut report = series_report(name, tol, series);
    for (i, (sign, m0, m1)) in [("+", first.t_plus, last.t_plus), ("-", first.t_minus, last.t_minus)]
        .into_iter()
        .enumerate()
    {
        let lower = half * log_bound(&m0, tau).value;
        report.push(Component {
            name: format!("lower bound (T{sign})"),
            margin: rel.rhs[i] - lower,
            tolerance: tol,
            witness: Some(Witness {
                time: first.t,
                direction: vec![],
                label: format!("T{sign}(0) eigenvalues"),
            }),
        });
        if series.hypotheses.planning_boundary {
            let upper = -half * log_bound(&(-m1), tau).value;
            report.push(Component {
                name: format!("upper bound (T{sign})"),
                margin: upper - rel.rhs[i],
                tolerance: tol,
                witness: Some(Witness {
                    time: last.t,
                    direction: vec![],
                    label: format!("T{sign}(tau) eigenvalues"),
                }),
            });
        }
    }
    if !series.hypotheses.planning_boundary {
        report.note("one-sided: the upper bound needs a planning boundary");
    }
    Ok(report.with_stamps(stamps))
}

/// Settings for the auxiliary bridges built by the bridge-based checkers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BridgeSettings {
    /// Samples per unit time (at least 64 samples are always used).
    pub samples_per_unit: usize,
    pub sinkhorn: SinkhornOptions,
}

impl Default for BridgeSettings {
    fn default() -> Self {
        BridgeSettings {
            samples_per_unit: 64,
            sinkhorn: SinkhornOptions::default(),
        }
    }
}

impl BridgeSettings {
    fn samples(&self, tau: f64) -> usize {
        ((self.samples_per_unit as f64 * tau).ceil() as usize).max(64) + 1
    }

    fn series(&self, mu_a: &Density, mu_z: &Density, sigma: f64, tau: f64) -> Result<FunctionalSeries> {
        let traj = schrodinger_bridge(mu_a, mu_z, sigma, tau, &uniform_times(tau, self.samples(tau)), self.sinkhorn)?;
        assemble_series(&traj)
    }
}

fn mean_matrix(series: &FunctionalSeries, pick: impl Fn(&SeriesRecord) -> SymMatrix) -> SymMatrix {
    let n = series.len() as f64;
    series
        .records
        .iter()
        .fold(SymMatrix::zeros(series.dim), |a, r| a + pick(r))
        .scale(1.0 / n)
}

/// Relative step of the auxiliary bridges used for `∂τ𝓒_τ`.
pub const ENVELOPE_STEP: f64 = 0.02;
/// Relative accuracy required of the envelope identity `∂τ𝓒_τ = −𝓞_τ`.
pub const ENVELOPE_TOLERANCE: f64 = 0.05;

/// Large-time bounds over a sweep of horizons:
/// `−𝓞_τ ⪯ (σ/2τ)Id`, `𝓒_τ ⪯ 𝓒₁ + (σ/2)log τ Id`, the bound on
/// `∫[∇θ + (σ/2)∇log ρ]⊗² dρ`, and `∂τ𝓒_τ = −𝓞_τ` by central differences
/// with auxiliary bridges at `τ(1 ± δ)`.
pub fn check_longtime(
    mu_a: &Density,
    mu_z: &Density,
    sigma: f64,
    taus: &[f64],
    settings: BridgeSettings,
    tol: f64,
) -> Result<CheckReport> {
    let name = "longtime";
    if taus.len() < 3 || taus.windows(2).any(|w| !(w[1] > w[0])) || !taus.contains(&1.0) {
        return Err(Error::InvalidArgument(
            "tau list must be ascending with at least three values including 1".into(),
        ));
    }
    let n = mu_a.grid().dim();
    let mut runs = Vec::with_capacity(taus.len());
    for &tau in taus {
        let s = settings.series(mu_a, mu_z, sigma, tau)?;
        let c = cost_accumulate(&s)?.matrix;
        runs.push((tau, s, c));
    }
    let stamps: Vec<Stamp> = runs
        .iter()
        .map(|(tau, s, _)| Stamp::new(format!("bridge at tau = {tau} resolved"), s.under_resolved.is_none()))
        .collect();
    let c1 = runs.iter().find(|r| r.0 == 1.0).map(|r| r.2).unwrap();
    let mut report = CheckReport::new(name, tol);
    for (tau, s, c) in &runs {
        let o = mean_matrix(s, |r| r.o_mat);
        let e = sym_eig(&(-o - SymMatrix::scalar(n, sigma / (2.0 * tau))));
        report.push(Component {
            name: format!("-O <= (sigma/2tau) Id at tau = {tau}"),
            margin: -e.eigenvalues[0],
            tolerance: tol,
            witness: Some(Witness {
                time: 0.0,
                direction: e.eigenvectors[0].clone(),
                label: format!("tau = {tau}"),
            }),
        });
        let e = sym_eig(&(*c - c1 - SymMatrix::scalar(n, 0.5 * sigma * tau.ln())));
        report.push(Component {
            name: format!("C_tau <= C_1 + (sigma/2) log tau Id at tau = {tau}"),
            margin: -e.eigenvalues[0],
            tolerance: tol,
            witness: Some(Witness {
                time: 0.0,
                direction: e.eigenvectors[0].clone(),
                label: format!("tau = {tau}"),
            }),
        });
        let e_tau = s.records[s.len() - 1].e_mat;
        let numer = e_tau.scale(sigma) + c1.scale(2.0) + SymMatrix::scalar(n, sigma * tau.ln());
        let mut worst = (f64::INFINITY, 0.0, vec![]);
        for r in &s.records[1..s.len() - 1] {
            let phi = r.v_mat + r.s_mat.scale(sigma) + r.i_mat.scale(sigma * sigma / 4.0);
            let e = sym_eig(&(phi - numer.scale(1.0 / (tau - r.t))));
            if -e.eigenvalues[0] < worst.0 {
                worst = (-e.eigenvalues[0], r.t, e.eigenvectors[0].clone());
            }
        }
        report.push(Component {
            name: format!("phi bound at tau = {tau}"),
            margin: worst.0,
            tolerance: tol,
            witness: Some(Witness {
                time: worst.1,
                direction: worst.2,
                label: format!("tau = {tau}"),
            }),
        });
        // envelope identity
        let lo = settings.series(mu_a, mu_z, sigma, tau * (1.0 - ENVELOPE_STEP))?;
        let hi = settings.series(mu_a, mu_z, sigma, tau * (1.0 + ENVELOPE_STEP))?;
        let d = (cost_accumulate(&hi)?.matrix - cost_accumulate(&lo)?.matrix).scale(1.0 / (2.0 * tau * ENVELOPE_STEP));
        let rel = (d + o).max_abs() / o.max_abs().max(1e-3);
        report.push(Component {
            name: format!("envelope dC/dtau = -O at tau = {tau} (relative error <= {ENVELOPE_TOLERANCE})"),
            margin: ENVELOPE_TOLERANCE - rel,
            tolerance: tol,
            witness: Some(Witness {
                time: 0.0,
                direction: vec![],
                label: format!("tau = {tau}"),
            }),
        });
        report.note(format!("tau = {tau}: envelope relative error {rel:.3e}"));
    }
    Ok(report.with_stamps(stamps))
}

/// Heat semigroup of generator `½Δ` applied to a density.
fn heat_half(mu: &Density, t: f64) -> Result<Density> {
    Ok(heat_density(mu, t, 1.0)?.0)
}

/// Entropic cost `C₁` between two marginals with `σ = √2`.
fn cost_one(mu_a: &Density, mu_z: &Density, settings: &BridgeSettings) -> Result<f64> {
    sinkhorn(mu_a, mu_z, std::f64::consts::SQRT_2, 1.0, settings.sinkhorn)?.static_cost(mu_a, mu_z)
}

/// Matrix entropy `𝓔₁` of the bridge and the error of its trace identity.
fn matrix_entropy_one(mu_a: &Density, mu_z: &Density, settings: &BridgeSettings) -> Result<(SymMatrix, f64, bool)> {
    let s = settings.series(mu_a, mu_z, std::f64::consts::SQRT_2, 1.0)?;
    let e = s.records[s.len() - 1].e_mat;
    let de = s.records[s.len() - 1].entropy - s.records[0].entropy;
    Ok((e, (e.trace() - de).abs(), s.under_resolved.is_none()))
}

/// Largest allowed `|Tr𝓔₁ − ΔE|` in the auxiliary bridges.
pub const TRACE_IDENTITY_TOLERANCE: f64 = 1e-6;

fn basis_sets(n: usize, seed: u64) -> Vec<(String, Vec<Vec<f64>>)> {
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    vec![
        ("axis basis".into(), axes),
        ("random basis".into(), random_orthonormal_basis(n, seed)),
    ]
}

/// `∂tC₁(μ_a, P_tμ_z) ≤ ½Σ[1 − e^{⟨wᵢ,𝓔₁(μ_a,P_tμ_z)wᵢ⟩}]` at each `t`
/// (`σ = √2`, `τ = 1`, `P_t` of generator `½Δ`). The derivative is a
/// second-order difference with step `h`; its error is estimated by
/// Richardson comparison with step `2h` and added to the tolerance.
pub fn check_evi(
    mu_a: &Density,
    mu_z: &Density,
    t_grid: &[f64],
    fd_step: f64,
    settings: BridgeSettings,
    tol: f64,
    seed: u64,
) -> Result<CheckReport> {
    let name = "evi";
    if !(fd_step > 0.0) || t_grid.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidArgument("fd_step must be positive and times non-negative".into()));
    }
    let n = mu_a.grid().dim();
    let c_at = |t: f64| -> Result<f64> { cost_one(mu_a, &heat_half(mu_z, t)?, &settings) };
    let mut report = CheckReport::new(name, tol).with_seed(seed);
    let mut stamps = Vec::new();
    for &t in t_grid {
        let deriv = |h: f64| -> Result<f64> {
            if t >= h {
                Ok((c_at(t + h)? - c_at(t - h)?) / (2.0 * h))
            } else {
                Ok((-3.0 * c_at(t)? + 4.0 * c_at(t + h)? - c_at(t + 2.0 * h)?) / (2.0 * h))
            }
        };
        let d1 = deriv(fd_step)?;
        let d2 = deriv(2.0 * fd_step)?;
        let fd_err = (d1 - d2).abs() / 3.0;
        let d = d1 + (d1 - d2) / 3.0;
        let (e, trace_err, resolved) = matrix_entropy_one(mu_a, &heat_half(mu_z, t)?, &settings)?;
        stamps.push(Stamp::new(format!("bridge at t = {t} resolved"), resolved));
        report.push(Component {
            name: format!("trace identity at t = {t}"),
            margin: -trace_err,
            tolerance: TRACE_IDENTITY_TOLERANCE,
            witness: None,
        });
        for (label, basis) in basis_sets(n, seed) {
            let rhs: f64 = basis.iter().map(|w| 0.5 * (1.0 - e.quad(w).exp())).sum();
            report.push(Component {
                name: format!("EVI at t = {t} ({label})"),
                margin: rhs - d,
                tolerance: tol + fd_err,
                witness: Some(Witness {
                    time: t,
                    direction: basis[0].clone(),
                    label,
                }),
            });
        }
        report.note(format!("t = {t}: dC/dt = {d:.6e} (Richardson error {fd_err:.1e})"));
    }
    Ok(report.with_stamps(stamps))
}

/// `C₁(P_τμ_a, P_τμ_z) ≤ C₁(μ_a, μ_z) − Σ∫₀^τ sinh²(⟨wᵢ,𝓔₁(P_tμ_a,P_tμ_z)wᵢ⟩/2) dt`
/// with the integral by the trapezoid rule on `n_steps` intervals.
pub fn check_contraction(
    mu_a: &Density,
    mu_z: &Density,
    tau_heat: f64,
    n_steps: usize,
    settings: BridgeSettings,
    tol: f64,
) -> Result<CheckReport> {
    let name = "contraction";
    if !(tau_heat >= 0.0) || n_steps == 0 {
        return Err(Error::InvalidArgument("tau_heat must be >= 0 and n_steps >= 1".into()));
    }
    let n = mu_a.grid().dim();
    let axes = &basis_sets(n, 0)[0].1;
    let c0 = cost_one(mu_a, mu_z, &settings)?;
    let mut report = CheckReport::new(name, tol);
    let mut stamps = Vec::new();
    let mut integrand = Vec::with_capacity(n_steps + 1);
    let nodes: Vec<f64> = (0..=n_steps).map(|k| tau_heat * k as f64 / n_steps as f64).collect();
    for &t in &nodes {
        let (a, z) = (heat_half(mu_a, t)?, heat_half(mu_z, t)?);
        let (e, trace_err, resolved) = matrix_entropy_one(&a, &z, &settings)?;
        stamps.push(Stamp::new(format!("bridge at t = {t} resolved"), resolved));
        report.push(Component {
            name: format!("trace identity at t = {t}"),
            margin: -trace_err,
            tolerance: TRACE_IDENTITY_TOLERANCE,
            witness: None,
        });
        integrand.push(axes.iter().map(|w| (0.5 * e.quad(w)).sinh().powi(2)).sum::<f64>());
    }
    let integral = if tau_heat == 0.0 {
        0.0
    } else {
        let h = tau_heat / n_steps as f64;
        h * (integrand.iter().sum::<f64>() - 0.5 * (integrand[0] + integrand[n_steps]))
    };
    let c_tau = if tau_heat == 0.0 {
        c0
    } else {
        cost_one(&heat_half(mu_a, tau_heat)?, &heat_half(mu_z, tau_heat)?, &settings)?
    };
    report.push(Component {
        name: "C1(P mu_a, P mu_z) <= C1(mu_a, mu_z) - sum int sinh^2".into(),
        margin: c0 - integral - c_tau,
        tolerance: tol,
        witness: Some(Witness {
            time: tau_heat,
            direction: axes[0].clone(),
            label: "axis basis".into(),
        }),
    });
    report.note(format!("C1(0) = {c0:.10e}, C1(tau) = {c_tau:.10e}, integral = {integral:.10e}"));
    Ok(report.with_stamps(stamps))
}

/// Largest allowed mismatch in the reversal identities.
pub const REVERSAL_TOLERANCE: f64 = 1e-8;

/// Reverses the trajectory, recomputes its functionals, and checks
/// `𝓢̃(t) = −𝓢(τ−t)`, `𝓘̃(t) = 𝓘(τ−t)`, `𝓣̃±(t) = −𝓣∓(τ−t)`, then the
/// matrix inequality on the reversed `𝓣̃±`.
pub fn check_time_symmetry(traj: &FlowTrajectory, tol: f64) -> Result<CheckReport> {
    let name = "time_symmetry";
    let fwd = assemble_series(traj)?;
    let rev = assemble_series(&reverse_trajectory(traj))?;
    let m = fwd.len();
    let mut report = CheckReport::new(name, tol);
    let mut worst = [(0.0f64, 0usize); 4];
    for k in 0..m {
        let (a, b) = (&rev.records[k], &fwd.records[m - 1 - k]);
        let rel = |x: SymMatrix, y: SymMatrix| (x - y).max_abs() / y.max_abs().max(1.0);
        let errs = [
            rel(a.s_mat, -b.s_mat),
            rel(a.i_mat, b.i_mat),
            rel(a.t_plus, -b.t_minus),
            rel(a.t_minus, -b.t_plus),
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            if e > w.0 {
                *w = (e, k);
            }
        }
    }
    for (label, (e, k)) in ["S~ = -S(tau - t)", "I~ = I(tau - t)", "T+~ = -T-(tau - t)", "T-~ = -T+(tau - t)"]
        .into_iter()
        .zip(worst)
    {
        report.push(Component {
            name: label.into(),
            margin: -e,
            tolerance: REVERSAL_TOLERANCE,
            witness: Some(Witness {
                time: rev.records[k].t,
                direction: vec![],
                label: "relabelling".into(),
            }),
        });
    }
    let stamps = theorem_stamps(&rev);
    if stamps.iter().all(|s| s.ok) {
        let rem = rev.matrices(|r| r.remainder);
        report.absorb("reversed T+", check_matrix_ode(&path_of(&rev, |r| r.t_plus, Some(rem.clone()))?, tol)?);
        report.absorb("reversed T-", check_matrix_ode(&path_of(&rev, |r| r.t_minus, Some(rem))?, tol)?);
    } else {
        report.note("reversed matrix inequality skipped: theorem hypotheses not stamped");
    }
    Ok(report.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{faults::flip_phase_sign, gaussian_density, heat_flow, uniform_times, FlowTrajectory};
    use crate::functionals::assemble_series;
    use crate::grid::Grid;

    fn heat(sigma: f64) -> FlowTrajectory {
        let g = Grid::new(&[20.0], &[256]).unwrap();
        let rho = gaussian_density(&g, &[0.0], &SymMatrix::diag(&[1.0])).unwrap();
        heat_flow(&rho, sigma, &uniform_times(1.0, 33)).unwrap()
    }

    #[test]
    fn default_tolerance_has_a_floor_and_a_step_term() {
        let series = assemble_series(&heat(1.0)).unwrap();
        let tol = default_tolerance(&series);
        let dt = series.max_step();
        assert!(tol >= 1e-6);
        assert!(tol >= C_FD * dt * dt);
    }

    #[test]
    fn heat_passes_its_checks() {
        let traj = heat(1.0);
        let series = assemble_series(&traj).unwrap();
        let tol = default_tolerance(&series);
        for r in [
            check_t_inequality(&series, tol, DEFAULT_SEED).unwrap(),
            check_s_inequality(&series, tol, DEFAULT_SEED).unwrap(),
            check_entropy_growth(&series, tol).unwrap(),
            check_energy(&series, tol).unwrap(),
            check_cost_identity(&series, tol).unwrap(),
            check_time_symmetry(&traj, tol).unwrap(),
        ] {
            assert!(r.pass, "{}: {:?}", r.name, r.notes);
            assert!(r.hypotheses_ok);
        }
    }

    #[test]
    fn missing_hypotheses_refuse() {
        let series = assemble_series(&heat(0.0)).unwrap();
        for r in [
            check_turnpike(&series, 1e-6).unwrap(),
            check_cost_identity(&series, 1e-6).unwrap(),
        ] {
            assert!(!r.hypotheses_ok, "{}", r.name);
            assert!(!r.pass);
            assert_eq!(r.worst_margin, f64::MAX);
            assert!(r.components.is_empty());
        }
    }

    #[test]
    fn flipped_flow_fails_with_a_witness() {
        let traj = flip_phase_sign(&heat(1.0)).unwrap();
        let series = assemble_series(&traj).unwrap();
        let tol = default_tolerance(&series);
        let r = check_time_symmetry(&traj, tol).unwrap();
        assert!(r.hypotheses_ok);
        assert!(!r.pass);
        assert!(r.witness.is_some());
        assert!(r.worst_margin < -tol);
    }
}
