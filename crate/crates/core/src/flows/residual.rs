//! PDE residual certificate of a sampled trajectory.
//!
//! Time derivatives are five-point finite differences at interior samples;
//! space derivatives come from the snapshot tables. The continuity residual
//! is a sup norm. The phase residual is measured in `L²(ρ)` after removing
//! its `ρ`-mean, because each snapshot's phase is defined only up to a
//! time-dependent constant.

use super::FlowTrajectory;
use crate::functionals::trace_field;
use crate::grid::{divergence, integrate_against, ScalarField, VectorField};
use crate::oracles::fd_weights;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    /// `sup |∂tρ + ∇·(ρ∇θ)|` over interior samples.
    pub continuity: f64,
    /// Largest `L²(ρ)` norm of the mean-free phase residual.
    pub phase: f64,
}

/// Residuals of both equations along `traj` (needs at least five samples).
pub fn pde_residual(traj: &FlowTrajectory) -> Result<Residual> {
    let m = traj.len();
    if m < 5 {
        return Err(Error::TooFewSamples { need: 5, got: m });
    }
    let times = traj.times();
    let snaps = traj.snapshots();
    let grid = traj.grid();
    let sigma = traj.coeffs().sigma;
    let n = grid.dim();
    let mut cont = 0.0f64;
    let mut phase = 0.0f64;
    for k in 2..m - 2 {
        let w = fd_weights(times[k], &times[k - 2..=k + 2], 1);
        let s = &snaps[k];
        let rho = s.density();
        let mut drho = vec![0.0; grid.len()];
        let mut dth = vec![0.0; grid.len()];
        for (j, wj) in w.iter().enumerate() {
            let o = &snaps[k - 2 + j];
            for i in 0..grid.len() {
                drho[i] += wj * o.density().values()[i];
                dth[i] += wj * o.phase().theta().values()[i];
            }
        }
        let flux: Vec<Vec<f64>> = (0..n)
            .map(|a| {
                s.phase()
                    .grad()
                    .component(a)
                    .iter()
                    .zip(rho.values())
                    .map(|(g, r)| g * r)
                    .collect()
            })
            .collect();
        let div = divergence(&VectorField::new(grid, flux)?);
        for i in 0..grid.len() {
            cont = cont.max((drho[i] + div.values()[i]).abs());
        }
        let forcing = traj.coeffs().forcing(rho)?;
        let gsq = s.phase().grad().norm_sq();
        let lsq = s.log_grad().norm_sq();
        let lap = trace_field(s.log_hess());
        let r: Vec<f64> = (0..grid.len())
            .map(|i| {
                dth[i]
                    + 0.5 * gsq.values()[i]
                    + sigma * sigma / 8.0 * (lsq.values()[i] + 2.0 * lap[i])
                    + forcing.values()[i]
            })
            .collect();
        let r = ScalarField::new(grid, r)?;
        let mean = integrate_against(&r, rho)?;
        let centred = r.map(|v| (v - mean) * (v - mean));
        phase = phase.max(integrate_against(&centred, rho)?.max(0.0).sqrt());
    }
    Ok(Residual { continuity: cont, phase })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{faults::flip_phase_sign, gaussian_density, heat_flow, uniform_times, NICE_FLOW_RESIDUAL};
    use crate::grid::Grid;
    use crate::sym::SymMatrix;

    fn heat() -> FlowTrajectory {
        let g = Grid::new(&[20.0], &[256]).unwrap();
        let rho = gaussian_density(&g, &[0.5], &SymMatrix::diag(&[1.0])).unwrap();
        heat_flow(&rho, 1.0, &uniform_times(1.0, 33)).unwrap()
    }

    #[test]
    fn heat_flow_solves_both_equations() {
        let r = pde_residual(&heat()).unwrap();
        assert!(r.continuity < NICE_FLOW_RESIDUAL, "{r:?}");
        assert!(r.phase < NICE_FLOW_RESIDUAL, "{r:?}");
    }

    #[test]
    fn flipped_phase_breaks_continuity() {
        let r = pde_residual(&flip_phase_sign(&heat()).unwrap()).unwrap();
        assert!(r.continuity > 1e-2, "{r:?}");
    }

    #[test]
    fn short_trajectories_are_rejected() {
        let g = Grid::new(&[20.0], &[64]).unwrap();
        let rho = gaussian_density(&g, &[0.0], &SymMatrix::diag(&[1.0])).unwrap();
        let traj = heat_flow(&rho, 1.0, &uniform_times(1.0, 3)).unwrap();
        assert!(pde_residual(&traj).is_err());
    }
}
