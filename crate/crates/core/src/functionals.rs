//! Scalar and matrix functionals of a snapshot `(ρ, θ)` and their time series.
//!
//! A [`Snapshot`] carries exact derivative tables for `θ` and for `log ρ`, so
//! nothing here differentiates a field that may be kinked at the box seam.
//! Each matrix that admits two integral forms is returned as a [`TwoForm`]:
//! the outer-product form is canonical, and the relative gap to the Hessian
//! form is the resolution certificate.
//!
//! Time integrals (`𝓔`, `𝓒`) use the trapezoid rule with the Euler–Maclaurin
//! end correction `−Δt²/12 [g']`, which makes them fourth-order accurate on
//! uniform samples.

use crate::coeffs::CoefficientSet;
use crate::flows::{FlowFamily, FlowTrajectory, Hypotheses};
use crate::grid::{
    gradient, hessian, integrate, integrate_against, log_derivatives, seam_mass, sum, weighted_sum, Density,
    Grid, ScalarField, SymField, VectorField,
};
use crate::oracles::fd_derivative;
use crate::sym::{packed_len, packed_pairs, SymMatrix};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Relative gap between two integral forms above which a snapshot counts as
/// under-resolved.
pub const FORM_TOLERANCE: f64 = 1e-6;

/// Phase `θ` with its gradient and Hessian tables.
#[derive(Clone, Debug, PartialEq)]
pub struct Phase {
    theta: ScalarField,
    grad: VectorField,
    hess: SymField,
}

impl Phase {
    /// Tables by spectral differentiation; right for periodic `θ`.
    pub fn from_field(theta: ScalarField) -> Phase {
        let grad = gradient(&theta);
        let hess = hessian(&theta);
        Phase { theta, grad, hess }
    }

    /// Phase with caller-supplied tables.
    pub fn from_parts(theta: ScalarField, grad: VectorField, hess: SymField) -> Result<Phase> {
        if theta.grid() != grad.grid() || theta.grid() != hess.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(Phase { theta, grad, hess })
    }

    pub fn zero(grid: &Grid) -> Phase {
        Phase::from_field(ScalarField::constant(grid, 0.0))
    }

    /// `θ(x) = ⟨c, x⟩` with exact tables.
    pub fn linear(grid: &Grid, c: &[f64]) -> Phase {
        let theta = ScalarField::from_fn(grid, |x| (0..grid.dim()).map(|a| c[a] * x[a]).sum());
        Phase {
            theta,
            grad: VectorField::constant(grid, c),
            hess: SymField::constant(grid, &SymMatrix::zeros(grid.dim())),
        }
    }

    pub fn theta(&self) -> &ScalarField {
        &self.theta
    }

    pub fn grad(&self) -> &VectorField {
        &self.grad
    }

    pub fn hess(&self) -> &SymField {
        &self.hess
    }

    pub fn grid(&self) -> &Grid {
        self.theta.grid()
    }

    /// Same phase with the additive constant chosen so that `∫θ dρ = 0`.
    pub fn gauge_fixed(&self, rho: &Density) -> Result<Phase> {
        let c = integrate_against(&self.theta, rho)?;
        Ok(self.shifted(-c))
    }

    /// `θ + c`.
    pub fn shifted(&self, c: f64) -> Phase {
        Phase {
            theta: self.theta.map(|v| v + c),
            grad: self.grad.clone(),
            hess: self.hess.clone(),
        }
    }

    /// `−θ`.
    pub fn negated(&self) -> Phase {
        let g = self.grid();
        Phase {
            theta: self.theta.map(|v| -v),
            grad: VectorField::from_raw(
                g,
                self.grad.components().iter().map(|c| c.iter().map(|v| -v).collect()).collect(),
            ),
            hess: SymField::from_raw(
                g,
                self.hess.components().iter().map(|c| c.iter().map(|v| -v).collect()).collect(),
            ),
        }
    }

    /// `a·θ₁ + b·θ₂` on every table.
    pub fn combine(a: f64, p: &Phase, b: f64, q: &Phase) -> Result<Phase> {
        if p.grid() != q.grid() {
            return Err(Error::GridMismatch);
        }
        let g = p.grid();
        let lin = |x: &[Vec<f64>], y: &[Vec<f64>]| -> Vec<Vec<f64>> {
            x.iter()
                .zip(y)
                .map(|(u, v)| u.iter().zip(v).map(|(s, t)| a * s + b * t).collect())
                .collect()
        };
        Ok(Phase {
            theta: p.theta.zip_map(&q.theta, |s, t| a * s + b * t)?,
            grad: VectorField::from_raw(g, lin(p.grad.components(), q.grad.components())),
            hess: SymField::from_raw(g, lin(p.hess.components(), q.hess.components())),
        })
    }
}

/// One time slice of a flow: density, phase, and the `log ρ` tables.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    density: Density,
    phase: Phase,
    log_grad: VectorField,
    log_hess: SymField,
}

impl Snapshot {
    /// `log ρ` tables from ratio derivatives of `ρ`.
    pub fn new(density: Density, phase: Phase) -> Result<Snapshot> {
        if density.grid() != phase.grid() {
            return Err(Error::GridMismatch);
        }
        let (log_grad, log_hess) = log_derivatives(density.field())?;
        Ok(Snapshot {
            density,
            phase,
            log_grad,
            log_hess,
        })
    }

    /// Snapshot with caller-supplied `log ρ` tables.
    pub fn with_log_tables(density: Density, phase: Phase, log_grad: VectorField, log_hess: SymField) -> Result<Snapshot> {
        if density.grid() != phase.grid() || density.grid() != log_grad.grid() || density.grid() != log_hess.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(Snapshot {
            density,
            phase,
            log_grad,
            log_hess,
        })
    }

    pub fn density(&self) -> &Density {
        &self.density
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn log_grad(&self) -> &VectorField {
        &self.log_grad
    }

    pub fn log_hess(&self) -> &SymField {
        &self.log_hess
    }

    pub fn grid(&self) -> &Grid {
        self.density.grid()
    }

    pub fn with_phase(&self, phase: Phase) -> Result<Snapshot> {
        if phase.grid() != self.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(Snapshot {
            phase,
            ..self.clone()
        })
    }

    /// `(Δ log ρ)` per point.
    pub fn log_laplacian(&self) -> Vec<f64> {
        trace_field(&self.log_hess)
    }
}

/// Trace of a matrix field, per point.
pub(crate) fn trace_field(h: &SymField) -> Vec<f64> {
    let n = h.grid().dim();
    let pairs = packed_pairs(n);
    let mut out = vec![0.0; h.grid().len()];
    for (k, (i, j)) in pairs.into_iter().enumerate() {
        if i == j {
            out.iter_mut().zip(&h.components()[k]).for_each(|(o, v)| *o += v);
        }
    }
    out
}

/// A matrix functional evaluated in its two integral forms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoForm {
    /// Canonical (outer-product) form.
    pub value: SymMatrix,
    /// Hessian form.
    pub alternate: SymMatrix,
    /// `max|value − alternate| / max(1, max|value|)`.
    pub discrepancy: f64,
}

impl TwoForm {
    fn new(value: SymMatrix, alternate: SymMatrix) -> TwoForm {
        let discrepancy = (value - alternate).max_abs() / value.max_abs().max(1.0);
        TwoForm {
            value,
            alternate,
            discrepancy,
        }
    }

    fn certified(self, what: &str) -> Result<TwoForm> {
        if self.discrepancy > FORM_TOLERANCE {
            Err(Error::UnderResolved(format!(
                "{what}: integral forms differ by {:.3e}",
                self.discrepancy
            )))
        } else {
            Ok(self)
        }
    }
}

/// `∫ a ⊗_S b dρ` for two vector fields given as component slices.
fn weighted_sym_outer(a: &VectorField, b: &VectorField, w: &[f64], cell: f64) -> SymMatrix {
    let n = a.grid().dim();
    let mut out = SymMatrix::zeros(n);
    for (i, j) in packed_pairs(n) {
        let vals: Vec<f64> = (0..w.len())
            .map(|k| 0.5 * w[k] * (a.component(i)[k] * b.component(j)[k] + a.component(j)[k] * b.component(i)[k]))
            .collect();
        out.set(i, j, sum(&vals) * cell);
    }
    out
}

fn weighted_tensor(h: &SymField, w: &[f64], cell: f64) -> SymMatrix {
    let n = h.grid().dim();
    let packed: Vec<f64> = h.components().iter().map(|c| weighted_sum(c, w) * cell).collect();
    SymMatrix::from_packed(n, &packed)
}

/// `E = ∫ρ log ρ dx`.
pub fn entropy(rho: &Density) -> Result<f64> {
    let min = rho.field().min();
    if !(min > 0.0) {
        return Err(Error::BelowFloor {
            min,
            floor: rho.floor(),
        });
    }
    let vals: Vec<f64> = rho.values().iter().map(|&r| r * r.ln()).collect();
    Ok(sum(&vals) * rho.grid().cell_volume())
}

fn fisher_forms(rho: &Density, log_grad: &VectorField) -> TwoForm {
    let cell = rho.grid().cell_volume();
    let value = weighted_sym_outer(log_grad, log_grad, rho.values(), cell);
    // −4∫√ρ ∇²√ρ dx, from the square-root field directly
    let sq = rho.field().map(f64::sqrt);
    let h = hessian(&sq);
    let alternate = weighted_tensor(&h, sq.values(), cell).scale(-4.0);
    TwoForm::new(value, alternate)
}

/// `𝓘 = ∫(∇log ρ)⊗² dρ`; fails when the two forms disagree beyond
/// [`FORM_TOLERANCE`].
pub fn fisher_matrix(rho: &Density) -> Result<TwoForm> {
    let (lg, _) = log_derivatives(rho.field())?;
    fisher_forms(rho, &lg).certified("fisher matrix")
}

fn production_forms(rho: &Density, log_grad: &VectorField, phase: &Phase) -> TwoForm {
    let cell = rho.grid().cell_volume();
    let value = weighted_sym_outer(log_grad, phase.grad(), rho.values(), cell);
    let alternate = -weighted_tensor(phase.hess(), rho.values(), cell);
    TwoForm::new(value, alternate)
}

/// `𝓢 = ∫∇ρ ⊗_S ∇θ dx`; fails when the two forms disagree beyond
/// [`FORM_TOLERANCE`].
pub fn entropy_production_matrix(rho: &Density, phase: &Phase) -> Result<TwoForm> {
    let (lg, _) = log_derivatives(rho.field())?;
    production_forms(rho, &lg, phase).certified("entropy production matrix")
}

/// `𝓥 = ∫(∇θ)⊗² dρ`.
pub fn velocity_second_moment(rho: &Density, phase: &Phase) -> Result<SymMatrix> {
    if rho.grid() != phase.grid() {
        return Err(Error::GridMismatch);
    }
    Ok(weighted_sym_outer(phase.grad(), phase.grad(), rho.values(), rho.grid().cell_volume()))
}

/// `𝓣± = 𝓢 ± (σ/2)𝓘`.
pub fn t_matrices(s: &SymMatrix, i: &SymMatrix, sigma: f64) -> (SymMatrix, SymMatrix) {
    (*s + i.scale(0.5 * sigma), *s - i.scale(0.5 * sigma))
}

/// `∫∇²U dρ + ∫(−∇²W)*ρ dρ`.
pub fn convexity_matrix(rho: &Density, coeffs: &CoefficientSet) -> Result<SymMatrix> {
    Ok(coeffs.potential.mean_hessian(rho)? + coeffs.interaction.mean_neg_hessian(rho)?)
}

/// `∫∇²U dρ + ∫(−∇²W)*ρ dρ + ∫f'(ρ)∇ρ⊗∇ρ dx`.
pub fn remainder_matrix(snap: &Snapshot, coeffs: &CoefficientSet) -> Result<SymMatrix> {
    let rho = snap.density();
    let mut r = convexity_matrix(rho, coeffs)?;
    if !coeffs.congestion.is_zero() {
        // f'(ρ)|∇ρ|²/ρ · ρ = f'(ρ) ρ² |∇log ρ|², integrated against dx
        let w: Vec<f64> = rho.values().iter().map(|&p| coeffs.congestion.df(p) * p * p).collect();
        r += weighted_sym_outer(snap.log_grad(), snap.log_grad(), &w, rho.grid().cell_volume());
    }
    Ok(r)
}

/// `O = ½V + ∫U dρ − (σ²/8)I − ∫F(ρ) dρ`; requires `W = 0`.
pub fn scalar_energy(snap: &Snapshot, coeffs: &CoefficientSet) -> Result<f64> {
    if !coeffs.interaction.is_zero() {
        return Err(Error::Unsupported("energy requires W = 0".into()));
    }
    let rho = snap.density();
    let v = velocity_second_moment(rho, snap.phase())?.trace();
    let i = weighted_sym_outer(snap.log_grad(), snap.log_grad(), rho.values(), rho.grid().cell_volume()).trace();
    let (u, f) = potential_and_primitive_means(rho, coeffs)?;
    let s2 = coeffs.sigma * coeffs.sigma;
    Ok(0.5 * v + u - s2 / 8.0 * i - f)
}

/// `(∫U dρ, ∫F(ρ) dρ)`.
pub fn potential_and_primitive_means(rho: &Density, coeffs: &CoefficientSet) -> Result<(f64, f64)> {
    let u = if coeffs.potential.is_zero() {
        0.0
    } else {
        integrate_against(&coeffs.potential.values(rho.grid()), rho)?
    };
    let f = if coeffs.congestion.is_zero() {
        0.0
    } else {
        integrate_against(&rho.field().map(|r| coeffs.congestion.F(r)), rho)?
    };
    Ok((u, f))
}

/// `𝓞 = ½𝓥 − (σ²/8)𝓘`.
pub fn matrix_energy(v: &SymMatrix, i: &SymMatrix, sigma: f64) -> SymMatrix {
    v.scale(0.5) - i.scale(sigma * sigma / 8.0)
}

/// Right-hand side of the `∂t𝓢` formula:
/// `∫(∇²θ)² dρ + (σ²/4)∫(∇²log ρ)² dρ + remainder`.
pub fn production_derivative_rhs(snap: &Snapshot, coeffs: &CoefficientSet) -> Result<SymMatrix> {
    let rho = snap.density();
    let g = rho.grid();
    let cell = g.cell_volume();
    let s2 = coeffs.sigma * coeffs.sigma;
    let n = g.dim();
    let mut acc = vec![vec![0.0; g.len()]; packed_len(n)];
    for k in 0..g.len() {
        let h = snap.phase().hess().at(k);
        let l = snap.log_hess().at(k);
        let m = h.square() + l.square().scale(0.25 * s2);
        for (c, v) in m.packed().iter().enumerate() {
            acc[c][k] = *v;
        }
    }
    let main = weighted_tensor(&SymField::from_raw(g, acc), rho.values(), cell);
    Ok(main + remainder_matrix(snap, coeffs)?)
}

/// Right-hand side of the `∂t𝓘` formula: `∫[∇²θ∇²log ρ + (·)ᵀ] dρ`.
pub fn fisher_derivative_rhs(snap: &Snapshot) -> SymMatrix {
    let g = snap.grid();
    let n = g.dim();
    let mut acc = vec![vec![0.0; g.len()]; packed_len(n)];
    for k in 0..g.len() {
        let m = snap.phase().hess().at(k).mul_sym(&snap.log_hess().at(k)).scale(2.0);
        for (c, v) in m.packed().iter().enumerate() {
            acc[c][k] = *v;
        }
    }
    weighted_tensor(&SymField::from_raw(g, acc), snap.density().values(), g.cell_volume())
}

/// Right-hand side of the `∂t𝓥` formula: `(σ²/4)∂t𝓘` plus the coupling
/// `∫G(∂_i[ρ∂_jθ] + ∂_j[ρ∂_iθ]) dx` with `G = U − W*ρ − f(ρ)`, evaluated
/// after integrating by parts as `−∫(∇G ⊗ ∇θ + ∇θ ⊗ ∇G) dρ`.
pub fn velocity_derivative_rhs(snap: &Snapshot, coeffs: &CoefficientSet) -> Result<SymMatrix> {
    let s2 = coeffs.sigma * coeffs.sigma;
    let mut out = fisher_derivative_rhs(snap).scale(0.25 * s2);
    if !coeffs.is_free() {
        let rho = snap.density();
        let gg = coeffs.forcing_gradient(rho, snap.log_grad())?;
        out += weighted_sym_outer(&gg, snap.phase().grad(), rho.values(), rho.grid().cell_volume()).scale(-2.0);
    }
    Ok(out)
}

/// Functionals at one sample time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub t: f64,
    /// `E(t)`.
    pub entropy: f64,
    pub s_mat: SymMatrix,
    pub i_mat: SymMatrix,
    pub v_mat: SymMatrix,
    pub t_plus: SymMatrix,
    pub t_minus: SymMatrix,
    /// `𝓔(t) = ∫₀ᵗ 𝓢`.
    pub e_mat: SymMatrix,
    /// `O(t)`; absent when `W ≠ 0`.
    pub energy: Option<f64>,
    /// `𝓞(t)`.
    pub o_mat: SymMatrix,
    /// `∫∇²U dρ + ∫(−∇²W)*ρ dρ + ∫f'(ρ)∇ρ⊗∇ρ dx`.
    pub remainder: SymMatrix,
    /// `∫∇²U dρ + ∫(−∇²W)*ρ dρ`.
    pub convexity: SymMatrix,
    /// Right-hand sides of the `∂t𝓢`, `∂t𝓘`, `∂t𝓥` formulas.
    pub ds_rhs: SymMatrix,
    pub di_rhs: SymMatrix,
    pub dv_rhs: SymMatrix,
    pub u_mean: f64,
    pub f_mean: f64,
    pub fisher_discrepancy: f64,
    pub production_discrepancy: f64,
    pub seam_mass: f64,
}

/// Time series of functionals along a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSeries {
    pub dim: usize,
    pub sigma: f64,
    pub family: FlowFamily,
    pub hypotheses: Hypotheses,
    /// `U = W = f = 0`.
    pub free: bool,
    /// `W = 0`.
    pub interaction_free: bool,
    pub records: Vec<SeriesRecord>,
    /// First spatial-resolution failure (two integral forms disagree or
    /// the Fisher matrix is not PSD), if any.
    pub under_resolved: Option<String>,
    /// First time where the entropy slope disagrees with `Tr 𝓢`. Genuine
    /// flows keep this empty; injected faults usually do not.
    pub slope_mismatch: Option<String>,
}

impl FunctionalSeries {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn tau(&self) -> f64 {
        self.records.last().map(|r| r.t).unwrap_or(0.0) - self.records.first().map(|r| r.t).unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Column of a matrix quantity.
    pub fn matrices(&self, pick: impl Fn(&SeriesRecord) -> SymMatrix) -> Vec<SymMatrix> {
        self.records.iter().map(pick).collect()
    }

    pub fn scalars(&self, pick: impl Fn(&SeriesRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(pick).collect()
    }

    /// Largest sample spacing.
    pub fn max_step(&self) -> f64 {
        self.records.windows(2).map(|w| w[1].t - w[0].t).fold(0.0, f64::max)
    }

    /// Largest two-form discrepancy over the series.
    pub fn resolution_certificate(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.fisher_discrepancy.max(r.production_discrepancy))
            .fold(0.0, f64::max)
    }
}

/// Minimum number of samples accepted by [`assemble_series`].
pub const MIN_SERIES_SAMPLES: usize = 9;

fn snapshot_record(snap: &Snapshot, t: f64, coeffs: &CoefficientSet) -> Result<SeriesRecord> {
    let rho = snap.density();
    let sigma = coeffs.sigma;
    let entropy = entropy(rho)?;
    let fisher = fisher_forms(rho, snap.log_grad());
    let prod = production_forms(rho, snap.log_grad(), snap.phase());
    let v_mat = velocity_second_moment(rho, snap.phase())?;
    let (t_plus, t_minus) = t_matrices(&prod.value, &fisher.value, sigma);
    let convexity = convexity_matrix(rho, coeffs)?;
    let remainder = remainder_matrix(snap, coeffs)?;
    let (u_mean, f_mean) = potential_and_primitive_means(rho, coeffs)?;
    let energy = if coeffs.interaction.is_zero() {
        Some(0.5 * v_mat.trace() + u_mean - sigma * sigma / 8.0 * fisher.value.trace() - f_mean)
    } else {
        None
    };
    let rec = SeriesRecord {
        t,
        entropy,
        s_mat: prod.value,
        i_mat: fisher.value,
        v_mat,
        t_plus,
        t_minus,
        e_mat: SymMatrix::zeros(rho.grid().dim()),
        energy,
        o_mat: matrix_energy(&v_mat, &fisher.value, sigma),
        remainder,
        convexity,
        ds_rhs: production_derivative_rhs(snap, coeffs)?,
        di_rhs: fisher_derivative_rhs(snap),
        dv_rhs: velocity_derivative_rhs(snap, coeffs)?,
        u_mean,
        f_mean,
        fisher_discrepancy: fisher.discrepancy,
        production_discrepancy: prod.discrepancy,
        seam_mass: seam_mass(rho),
    };
    let finite = rec.entropy.is_finite()
        && [rec.s_mat, rec.i_mat, rec.v_mat, rec.ds_rhs, rec.di_rhs, rec.dv_rhs, rec.remainder]
            .iter()
            .all(|m| m.is_finite());
    if !finite {
        return Err(Error::NonFinite(format!("functionals at t = {t}")));
    }
    Ok(rec)
}

/// Evaluates every functional along the trajectory. Snapshots are processed
/// in parallel; the result does not depend on the thread count.
pub fn assemble_series(traj: &FlowTrajectory) -> Result<FunctionalSeries> {
    let m = traj.len();
    if m < MIN_SERIES_SAMPLES {
        return Err(Error::TooFewSamples {
            need: MIN_SERIES_SAMPLES,
            got: m,
        });
    }
    let coeffs = traj.coeffs();
    let mut records = traj
        .snapshots()
        .par_iter()
        .zip(traj.times().par_iter())
        .map(|(s, &t)| snapshot_record(s, t, coeffs))
        .collect::<Result<Vec<_>>>()?;
    let times = traj.times().to_vec();
    let s_path: Vec<SymMatrix> = records.iter().map(|r| r.s_mat).collect();
    let e_path = cumulative_matrix_integral(&times, &s_path)?;
    for (r, e) in records.iter_mut().zip(e_path) {
        r.e_mat = e;
    }
    let mut series = FunctionalSeries {
        dim: traj.grid().dim(),
        sigma: coeffs.sigma,
        family: traj.family(),
        hypotheses: traj.hypotheses().clone(),
        free: coeffs.is_free(),
        interaction_free: coeffs.interaction.is_zero(),
        records,
        under_resolved: None,
        slope_mismatch: None,
    };
    series.under_resolved = resolution_failure(&series);
    series.slope_mismatch = slope_mismatch(&series)?;
    Ok(series)
}

/// Names the first snapshot whose functionals are not spatially resolved.
fn resolution_failure(series: &FunctionalSeries) -> Option<String> {
    for r in &series.records {
        if crate::comparison::sym_eig(&r.i_mat).eigenvalues.last().copied().unwrap_or(0.0) < -1e-10 {
            return Some(format!("fisher matrix not PSD at t = {}", r.t));
        }
        if r.fisher_discrepancy > FORM_TOLERANCE || r.production_discrepancy > FORM_TOLERANCE {
            return Some(format!(
                "integral forms differ by {:.3e} at t = {}",
                r.fisher_discrepancy.max(r.production_discrepancy),
                r.t
            ));
        }
    }
    None
}

/// Compares the sampled entropy slope with `Tr 𝓢` away from the ends.
fn slope_mismatch(series: &FunctionalSeries) -> Result<Option<String>> {
    let times = series.times();
    let e = series.scalars(|r| r.entropy);
    let de = fd_derivative(&times, &e)?;
    let dt = series.max_step();
    // the stencil error scales with Δt⁴
    let scale = e.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-5f64.max(10.0 * dt.powi(4) * scale);
    for (k, r) in series.records.iter().enumerate() {
        let gap = (de.values[k] - r.s_mat.trace()).abs();
        if k >= 2 && k + 2 < times.len() && gap > tol.max(de.errors[k]) {
            return Ok(Some(format!("entropy slope differs from Tr S by {gap:.3e} at t = {}", r.t)));
        }
    }
    Ok(None)
}

/// True when the sample times are uniform to round-off.
pub fn is_uniform(times: &[f64]) -> bool {
    if times.len() < 3 {
        return true;
    }
    let h = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    times
        .windows(2)
        .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1e-300))
}

/// `∫_{t₀}^{t_k} g dt` for every `k`: trapezoid with the end correction
/// `−Δt²/12 (g'(t_k) − g'(t₀))` on uniform samples, plain trapezoid
/// otherwise.
pub fn cumulative_integral(times: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    if times.len() != g.len() {
        return Err(Error::InvalidArgument("times and values differ in length".into()));
    }
    let mut out = vec![0.0; g.len()];
    for k in 1..g.len() {
        out[k] = out[k - 1] + 0.5 * (times[k] - times[k - 1]) * (g[k] + g[k - 1]);
    }
    if g.len() >= 5 && is_uniform(times) {
        let h = times[1] - times[0];
        let d = fd_derivative(times, g)?;
        for k in 1..g.len() {
            out[k] -= h * h / 12.0 * (d.values[k] - d.values[0]);
        }
    }
    Ok(out)
}

/// Entrywise [`cumulative_integral`] of a matrix path.
pub fn cumulative_matrix_integral(times: &[f64], path: &[SymMatrix]) -> Result<Vec<SymMatrix>> {
    let n = path.first().map(|m| m.dim()).unwrap_or(1);
    let len = packed_len(n);
    let mut out = vec![SymMatrix::zeros(n); path.len()];
    for c in 0..len {
        let col: Vec<f64> = path.iter().map(|m| m.packed()[c]).collect();
        let cum = cumulative_integral(times, &col)?;
        for (o, v) in out.iter_mut().zip(cum) {
            let mut p = o.packed().to_vec();
            p[c] = v;
            *o = SymMatrix::from_packed(n, &p);
        }
    }
    Ok(out)
}

/// Costs over the whole series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Costs {
    /// `C_τ = ∫[½Tr𝓥 − ∫U dρ + (σ²/8)Tr𝓘 + ∫F dρ] dt`.
    pub scalar: f64,
    /// `𝓒_τ = ∫[½𝓥 + (σ²/8)𝓘] dt`.
    pub matrix: SymMatrix,
}

/// Integrates the cost densities over the series.
pub fn cost_accumulate(series: &FunctionalSeries) -> Result<Costs> {
    let times = series.times();
    let s2 = series.sigma * series.sigma;
    let dens: Vec<f64> = series
        .records
        .iter()
        .map(|r| 0.5 * r.v_mat.trace() - r.u_mean + s2 / 8.0 * r.i_mat.trace() + r.f_mean)
        .collect();
    let mats: Vec<SymMatrix> = series
        .records
        .iter()
        .map(|r| r.v_mat.scale(0.5) + r.i_mat.scale(s2 / 8.0))
        .collect();
    let scalar = *cumulative_integral(&times, &dens)?.last().unwrap_or(&0.0);
    let matrix = cumulative_matrix_integral(&times, &mats)?
        .last()
        .copied()
        .unwrap_or(SymMatrix::zeros(series.dim));
    Ok(Costs { scalar, matrix })
}

/// `∫ f dx` of a scalar field; re-exported for convenience of callers that
/// only import this module.
pub fn total(f: &ScalarField) -> f64 {
    integrate(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn gaussian(g: &Grid, v: f64) -> Density {
        Density::from_fn(g, |x| (-x[0] * x[0] / (2.0 * v)).exp()).unwrap()
    }

    #[test]
    fn uniform_density_functionals() {
        let g = Grid::new(&[4.0], &[32]).unwrap();
        let rho = Density::uniform(&g);
        assert!((entropy(&rho).unwrap() - (1.0f64 / 4.0).ln()).abs() < 1e-14);
        assert_eq!(fisher_matrix(&rho).unwrap().value.max_abs(), 0.0);
        let ph = Phase::zero(&g);
        assert_eq!(entropy_production_matrix(&rho, &ph).unwrap().value.max_abs(), 0.0);
        assert_eq!(velocity_second_moment(&rho, &ph).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn gaussian_entropy_and_fisher() {
        let v = 1.2;
        let g = Grid::new(&[20.0], &[256]).unwrap();
        let rho = gaussian(&g, v);
        let e = entropy(&rho).unwrap();
        assert!((e + 0.5 * (2.0 * PI * std::f64::consts::E * v).ln()).abs() < 1e-6);
        let i = fisher_matrix(&rho).unwrap();
        assert!((i.value.get(0, 0) - 1.0 / v).abs() < 1e-6);
    }

    #[test]
    fn entropy_is_translation_invariant_on_the_lattice() {
        let g = Grid::new(&[2.0 * PI], &[64]).unwrap();
        let raw = ScalarField::from_fn(&g, |x| (x[0].cos() + 0.3 * (2.0 * x[0]).sin()).exp());
        let shifted: Vec<f64> = (0..64).map(|k| raw.values()[(k + 5) % 64]).collect();
        let rho = Density::new(raw, 1e-30).unwrap();
        let rho2 = Density::new(ScalarField::new(&g, shifted).unwrap(), 1e-30).unwrap();
        assert_eq!(entropy(&rho).unwrap().to_bits(), entropy(&rho2).unwrap().to_bits());
    }

    #[test]
    fn product_density_has_diagonal_fisher() {
        let g = Grid::new(&[2.0 * PI, 2.0 * PI], &[64, 64]).unwrap();
        let rho = Density::from_fn(&g, |x| (x[0].cos()).exp() * (2.0 * x[1].sin()).exp()).unwrap();
        let i = fisher_matrix(&rho).unwrap().value;
        let g1 = Grid::new(&[2.0 * PI], &[64]).unwrap();
        let i1 = fisher_matrix(&Density::from_fn(&g1, |x| x[0].cos().exp()).unwrap()).unwrap().value;
        let i2 = fisher_matrix(&Density::from_fn(&g1, |x| (2.0 * x[0].sin()).exp()).unwrap()).unwrap().value;
        assert!(i.get(0, 1).abs() < 1e-8);
        assert!((i.get(0, 0) - i1.get(0, 0)).abs() < 1e-8);
        assert!((i.get(1, 1) - i2.get(0, 0)).abs() < 1e-8);
    }

    #[test]
    fn linear_phase_production_vanishes_and_velocity_is_rank_one() {
        let g = Grid::new(&[2.0 * PI, 2.0 * PI], &[32, 32]).unwrap();
        let rho = Density::from_fn(&g, |x| (x[0].cos() + 0.5 * x[1].sin()).exp()).unwrap();
        let c = [0.7, -0.2];
        let ph = Phase::linear(&g, &c);
        let s = entropy_production_matrix(&rho, &ph).unwrap().value;
        assert!(s.max_abs() < 1e-12);
        let v = velocity_second_moment(&rho, &ph).unwrap();
        assert!((v - SymMatrix::outer(&c)).max_abs() < 1e-12);
    }

    #[test]
    fn heat_phase_relations() {
        let sigma = 0.6;
        let g = Grid::new(&[2.0 * PI], &[128]).unwrap();
        let rho = Density::from_fn(&g, |x| (1.5 * x[0].cos()).exp()).unwrap();
        let ph = Phase::from_field(rho.field().map(|r| -0.5 * sigma * r.ln()));
        let i = fisher_matrix(&rho).unwrap().value;
        let s = entropy_production_matrix(&rho, &ph).unwrap().value;
        let v = velocity_second_moment(&rho, &ph).unwrap();
        assert!((s - i.scale(-0.5 * sigma)).max_abs() < 1e-8);
        assert!((v - i.scale(0.25 * sigma * sigma)).max_abs() < 1e-8);
        let (tp, tm) = t_matrices(&s, &i, sigma);
        assert!(tp.max_abs() < 1e-8);
        assert!((tm + i.scale(sigma)).max_abs() < 1e-8);
        assert!(matrix_energy(&v, &i, sigma).max_abs() < 1e-8);
    }

    #[test]
    fn t_matrix_direct_formula() {
        let (tp, tm) = t_matrices(&SymMatrix::zeros(2), &SymMatrix::identity(2), 2.0);
        assert_eq!(tp, SymMatrix::identity(2));
        assert_eq!(tm, -SymMatrix::identity(2));
        let s = SymMatrix::diag(&[0.3, -0.1]);
        let (a, b) = t_matrices(&s, &SymMatrix::identity(2), 0.0);
        assert_eq!(a, s);
        assert_eq!(b, s);
    }

    #[test]
    fn cumulative_integral_is_fourth_order() {
        let times: Vec<f64> = (0..21).map(|k| k as f64 * 0.05).collect();
        let g: Vec<f64> = times.iter().map(|t| t.exp()).collect();
        let c = cumulative_integral(&times, &g).unwrap();
        for (k, t) in times.iter().enumerate() {
            assert!((c[k] - (t.exp() - 1.0)).abs() < 1e-7, "{k}: {}", c[k] - (t.exp() - 1.0));
        }
    }
}
