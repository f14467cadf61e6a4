//! Schrödinger bridges between two marginals.
//!
//! The potentials solve `μ_a = a · P_τ b`, `μ_z = b · P_τ a` with `P_t` the
//! heat semigroup of generator `(σ/2)Δ`. Sinkhorn runs in the log domain. The
//! flow is then `ρ_t = P_t a · P_{τ−t} b` and
//! `θ_t = (σ/2)(log P_{τ−t} b − log P_t a)`.

use super::{validate_times, Boundary, Diagnostics, FlowFamily, FlowTrajectory};
use crate::coeffs::CoefficientSet;
use crate::functionals::{entropy, Phase, Snapshot};
use crate::grid::{stencil_derivatives, sum, weighted_sum, Density, Grid, ScalarField, SymField, VectorField};
use crate::{Error, Result};

/// Relative size (natural log) of Nyquist ringing tolerated by the spectral
/// propagator, below the smallest value of the propagated function.
const RINGING_MARGIN: f64 = 36.841361487904734; // ln(1e16)

/// Largest dynamic range (natural log) handed to the FFT. Its absolute
/// round-off is about `1e-16` of the maximum, so smaller values would lose
/// all relative accuracy.
const SPECTRAL_RANGE: f64 = 23.025850929940457; // ln(1e10)

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornOptions {
    /// Relative sup-norm marginal error at which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions {
            tol: 1e-12,
            max_iter: 20_000,
        }
    }
}

/// `log P_t(e^ψ)`.
///
/// The Fourier multiplier is used (after removing the maximum) only when
/// `e^{ψ−max}` spans at most ten decades and the damping at the Nyquist mode,
/// `exp(−(σt/2)k_N²)`, is far below its smallest value, so neither round-off
/// nor truncation ringing can reach the propagated values. Otherwise each axis is convolved in log-sum-exp form with the
/// wrapped Gaussian kernel, normalised to unit discrete mass.
pub fn log_heat(grid: &Grid, psi: &[f64], t: f64, sigma: f64) -> Result<Vec<f64>> {
    if t < 0.0 || !t.is_finite() {
        return Err(Error::NegativeTime(t));
    }
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log-domain potential".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma {sigma} must be a finite non-negative number")));
    }
    if t == 0.0 || sigma == 0.0 {
        return Ok(psi.to_vec());
    }
    let m = psi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = psi.iter().cloned().fold(f64::INFINITY, f64::min);
    let var = sigma * t;
    let h = grid.max_spacing();
    let nyquist_damping = 0.5 * var * (std::f64::consts::PI / h).powi(2);
    if m - lo <= SPECTRAL_RANGE && nyquist_damping >= (m - lo) + RINGING_MARGIN {
        let e: Vec<f64> = psi.iter().map(|v| (v - m).exp()).collect();
        let c = 0.5 * var;
        let p = grid.apply_radial_multiplier(&e, |k2| (-c * k2).exp());
        if let Some(bad) = p.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::UnderResolved(format!(
                "heat propagation produced a non-positive value {bad:e}"
            )));
        }
        return Ok(p.into_iter().map(|v| m + v.ln()).collect());
    }
    let mut cur = psi.to_vec();
    for axis in 0..grid.dim() {
        cur = lse_axis(grid, &cur, axis, var);
    }
    Ok(cur)
}

/// Log of `Σ_j h K(x_i − x_j) e^{ψ_j}` along one axis with the periodically
/// wrapped Gaussian kernel of variance `var`.
fn lse_axis(grid: &Grid, psi: &[f64], axis: usize, var: f64) -> Vec<f64> {
    let n = grid.points()[axis];
    let h = grid.spacing()[axis];
    let l = grid.extent()[axis];
    let mut log_kernel: Vec<f64> = (0..n)
        .map(|d| {
            let terms: Vec<f64> = (-3i32..=3)
                .map(|w| {
                    let x = d as f64 * h + w as f64 * l;
                    -x * x / (2.0 * var)
                })
                .collect();
            log_sum_exp(&terms)
        })
        .collect();
    let norm = log_sum_exp(&log_kernel);
    for v in log_kernel.iter_mut() {
        *v -= norm;
    }
    let stride: usize = grid.points()[axis + 1..].iter().product();
    let outer = psi.len() / (n * stride);
    let mut out = vec![0.0; psi.len()];
    let mut line = vec![0.0; n];
    let mut terms = vec![0.0; n];
    for o in 0..outer {
        for s in 0..stride {
            let base = o * n * stride + s;
            for j in 0..n {
                line[j] = psi[base + j * stride];
            }
            for i in 0..n {
                for j in 0..n {
                    terms[j] = line[j] + log_kernel[(i + n - j) % n];
                }
                out[base + i * stride] = log_sum_exp(&terms);
            }
        }
    }
    out
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    m + sum(&e).ln()
}

/// Converged Sinkhorn potentials in log form.
#[derive(Clone, Debug, PartialEq)]
pub struct BridgePotentials {
    pub grid: Grid,
    pub log_a: Vec<f64>,
    pub log_b: Vec<f64>,
    pub sigma: f64,
    pub tau: f64,
    pub iterations: usize,
    /// Relative sup-norm error of the `μ_a` marginal (the `μ_z` marginal is
    /// exact after the last half step).
    pub marginal_error: f64,
}

impl BridgePotentials {
    /// Transport cost `∫θ_τ dμ_z − ∫θ₀ dμ_a` from the potentials:
    /// `(σ/2)[2∫log b dμ_z + 2∫log a dμ_a − E(μ_z) − E(μ_a)]`.
    pub fn static_cost(&self, mu_a: &Density, mu_z: &Density) -> Result<f64> {
        let vol = self.grid.cell_volume();
        let lb = weighted_sum(&self.log_b, mu_z.values()) * vol;
        let la = weighted_sum(&self.log_a, mu_a.values()) * vol;
        Ok(0.5 * self.sigma * (2.0 * lb + 2.0 * la - entropy(mu_z)? - entropy(mu_a)?))
    }
}

fn log_marginal(mu: &Density) -> Result<Vec<f64>> {
    let min = mu.field().min();
    if !(min > 0.0) {
        return Err(Error::DegenerateMarginals(format!("marginal has minimum {min:e}")));
    }
    Ok(mu.values().iter().map(|v| v.ln()).collect())
}

/// Log-domain Sinkhorn iteration.
pub fn sinkhorn(mu_a: &Density, mu_z: &Density, sigma: f64, tau: f64, opts: SinkhornOptions) -> Result<BridgePotentials> {
    if mu_a.grid() != mu_z.grid() {
        return Err(Error::GridMismatch);
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("bridge needs sigma > 0, got {sigma}")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("bridge needs tau > 0, got {tau}")));
    }
    let grid = mu_a.grid().clone();
    let lmu_a = log_marginal(mu_a)?;
    let lmu_z = log_marginal(mu_z)?;
    let scale_a = mu_a.field().max();
    let mut log_b = vec![0.0; grid.len()];
    let mut lpb = log_heat(&grid, &log_b, tau, sigma)?;
    let mut log_a;
    let mut err = f64::INFINITY;
    for it in 1..=opts.max_iter {
        log_a = lmu_a.iter().zip(&lpb).map(|(m, p)| m - p).collect::<Vec<f64>>();
        let lpa = log_heat(&grid, &log_a, tau, sigma)?;
        log_b = lmu_z.iter().zip(&lpa).map(|(m, p)| m - p).collect();
        lpb = log_heat(&grid, &log_b, tau, sigma)?;
        if log_a.iter().chain(&log_b).any(|v| !v.is_finite()) {
            return Err(Error::DegenerateMarginals(format!(
                "potential left the representable range at iteration {it}"
            )));
        }
        err = log_a
            .iter()
            .zip(&lpb)
            .zip(mu_a.values())
            .map(|((a, p), m)| ((a + p).exp() - m).abs())
            .fold(0.0f64, f64::max)
            / scale_a;
        if !err.is_finite() {
            return Err(Error::SinkhornDiverged { iterations: it, error: err });
        }
        if err <= opts.tol {
            return Ok(BridgePotentials {
                grid,
                log_a,
                log_b,
                sigma,
                tau,
                iterations: it,
                marginal_error: err,
            });
        }
    }
    Err(Error::SinkhornDiverged {
        iterations: opts.max_iter,
        error: err,
    })
}

fn lin(x: &[Vec<f64>], y: &[Vec<f64>], a: f64, b: f64) -> Vec<Vec<f64>> {
    x.iter()
        .zip(y)
        .map(|(u, v)| u.iter().zip(v).map(|(s, t)| a * s + b * t).collect())
        .collect()
}

/// Bridge from `μ_a` at `t = 0` to `μ_z` at `t = τ`, sampled at `times`
/// (which must lie in `[0, τ]`).
pub fn schrodinger_bridge(
    mu_a: &Density,
    mu_z: &Density,
    sigma: f64,
    tau: f64,
    times: &[f64],
    opts: SinkhornOptions,
) -> Result<FlowTrajectory> {
    validate_times(times)?;
    if times[0] < 0.0 || times[times.len() - 1] > tau * (1.0 + 1e-14) {
        return Err(Error::InvalidArgument("bridge sample times must lie in [0, tau]".into()));
    }
    let pot = sinkhorn(mu_a, mu_z, sigma, tau, opts)?;
    let static_cost = pot.static_cost(mu_a, mu_z)?;
    // Round-off near the clamped marginal tails may dip just under the floor.
    let floor = (1e-3 * mu_a.field().min().min(mu_z.field().min())).max(f64::MIN_POSITIVE);
    let snaps = bridge_snapshots(&pot, times, floor)?;
    let mut drift = 0.0f64;
    let mut out = Vec::with_capacity(snaps.len());
    for (s, d) in snaps {
        drift = drift.max(d);
        out.push(s);
    }
    let diagnostics = Diagnostics {
        iterations: Some(pot.iterations),
        marginal_error: Some(pot.marginal_error),
        max_mass_drift: drift,
        static_cost: Some(static_cost),
        ..Diagnostics::default()
    };
    FlowTrajectory::new(
        times.to_vec(),
        out,
        CoefficientSet::free(sigma),
        FlowFamily::Bridge,
        Boundary::Planning,
        diagnostics,
    )
}

/// Snapshots of the bridge built from converged potentials.
fn bridge_snapshots(pot: &BridgePotentials, times: &[f64], floor: f64) -> Result<Vec<(Snapshot, f64)>> {
    let grid = &pot.grid;
    let (sigma, tau) = (pot.sigma, pot.tau);
    times
        .iter()
        .map(|&t| {
            let t = t.min(tau);
            let la = log_heat(grid, &pot.log_a, t, sigma)?;
            let lb = log_heat(grid, &pot.log_b, tau - t, sigma)?;
            let (ga, ha) = stencil_derivatives(&ScalarField::new(grid, la.clone())?);
            let (gb, hb) = stencil_derivatives(&ScalarField::new(grid, lb.clone())?);
            let lsum: Vec<f64> = la.iter().zip(&lb).map(|(a, b)| a + b).collect();
            let m = lsum.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let raw = ScalarField::new(grid, lsum.iter().map(|v| (v - m).exp()).collect())?;
            let mass = crate::grid::integrate(&raw);
            let field = raw.map(|v| v / mass);
            let (rho, _) = Density::from_evolved(field, floor)
                .map_err(|e| Error::UnderResolved(format!("bridge density at t = {t}: {e}")))?;
            // the unnormalised mass is exp(m) ∫ Pa Pb, which should be one
            let drift = (m + mass.ln()).exp_m1().abs();
            let c = 0.5 * sigma;
            let theta = ScalarField::new(grid, lb.iter().zip(&la).map(|(b, a)| c * (b - a)).collect())?;
            let grad = VectorField::new(grid, lin(gb.components(), ga.components(), c, -c))?;
            let hess = SymField::new(grid, lin(hb.components(), ha.components(), c, -c))?;
            let lg = VectorField::new(grid, lin(ga.components(), gb.components(), 1.0, 1.0))?;
            let lh = SymField::new(grid, lin(ha.components(), hb.components(), 1.0, 1.0))?;
            let phase = Phase::from_parts(theta, grad, hess)?.gauge_fixed(&rho)?;
            Ok((Snapshot::with_log_tables(rho, phase, lg, lh)?, drift))
        })
        .collect()
}

/// Transport cost of the bridge between two marginals, from the potentials.
pub fn bridge_cost(mu_a: &Density, mu_z: &Density, sigma: f64, tau: f64, opts: SinkhornOptions) -> Result<f64> {
    sinkhorn(mu_a, mu_z, sigma, tau, opts)?.static_cost(mu_a, mu_z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_heat_branches_agree() {
        let g = Grid::new(&[12.0], &[128]).unwrap();
        let psi: Vec<f64> = (0..128).map(|i| -0.5 * g.position(i)[0].powi(2)).collect();
        // range of psi is 18 < ln 1e12: spectral
        let a = log_heat(&g, &psi, 0.7, 1.0).unwrap();
        let b = lse_axis(&g, &psi, 0, 0.7);
        let err = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn log_heat_of_gaussian_matches_closed_form() {
        let g = Grid::new(&[40.0], &[256]).unwrap();
        // wide range: forces the log-sum-exp branch
        let psi: Vec<f64> = (0..256).map(|i| -g.position(i)[0].powi(2) / (2.0 * 0.5)).collect();
        let out = log_heat(&g, &psi, 1.5, 1.0).unwrap();
        for i in 60..196 {
            let x = g.position(i)[0];
            let v = 2.0;
            let exact = -x * x / (2.0 * v) + 0.5 * (0.5f64 / v).ln();
            assert!((out[i] - exact).abs() < 1e-9, "{i}: {} vs {exact}", out[i]);
        }
    }

    #[test]
    fn sinkhorn_same_marginal_heat_relation() {
        let g = Grid::new(&[16.0], &[128]).unwrap();
        let mu = Density::from_fn(&g, |x| (-x[0] * x[0] / 2.0).exp()).unwrap();
        let pot = sinkhorn(&mu, &mu, 1.0, 1.0, SinkhornOptions::default()).unwrap();
        assert!(pot.marginal_error <= 1e-12);
        // symmetric problem: a and b agree up to the scale freedom
        let d: Vec<f64> = pot.log_a.iter().zip(&pot.log_b).map(|(a, b)| a - b).collect();
        let spread = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - d.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 1e-8, "{spread}");
    }
}
