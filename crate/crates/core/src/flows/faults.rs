//! Deliberately wrong trajectories, used to show that the checkers can fail.

use super::{Boundary, Diagnostics, FlowFamily, FlowTrajectory};
use crate::coeffs::CoefficientSet;
use crate::functionals::{Phase, Snapshot};
use super::heat_density;
use crate::grid::{log_derivatives, Density, ScalarField, SymField, VectorField};
use crate::Result;

/// Same densities with `θ ↦ −θ` at every sample (times unchanged).
pub fn flip_phase_sign(traj: &FlowTrajectory) -> Result<FlowTrajectory> {
    let snaps = traj
        .snapshots()
        .iter()
        .map(|s| s.with_phase(s.phase().negated()))
        .collect::<Result<Vec<_>>>()?;
    traj.with_snapshots(snaps, FlowFamily::Synthetic)
}

/// Densities running the heat equation backwards, `ρ_t = P_{T−t} ρ_T`, paired
/// with the heat-flow phase `θ = −(σ/2) log ρ_t`. Continuity fails and `𝓘`
/// grows in time.
pub fn anti_diffusive_path(rho_end: &Density, sigma: f64, times: &[f64]) -> Result<FlowTrajectory> {
    super::validate_times(times)?;
    let grid = rho_end.grid().clone();
    let t_end = times[times.len() - 1];
    let c = -0.5 * sigma;
    let snaps = times
        .iter()
        .map(|&t| {
            let (rho, _) = heat_density(rho_end, t_end - t, sigma)?;
            let (lg, lh) = log_derivatives(rho.field())?;
            let scale = |x: &[Vec<f64>]| -> Vec<Vec<f64>> {
                x.iter().map(|v| v.iter().map(|y| c * y).collect()).collect()
            };
            let phase = Phase::from_parts(
                ScalarField::new(&grid, rho.values().iter().map(|v| c * v.ln()).collect())?,
                VectorField::new(&grid, scale(lg.components()))?,
                SymField::new(&grid, scale(lh.components()))?,
            )?
            .gauge_fixed(&rho)?;
            Snapshot::with_log_tables(rho, phase, lg, lh)
        })
        .collect::<Result<Vec<_>>>()?;
    FlowTrajectory::new(
        times.to_vec(),
        snaps,
        CoefficientSet::free(sigma),
        FlowFamily::Synthetic,
        Boundary::InitialValue,
        Diagnostics::default(),
    )
}
