//! Heat flow `ρ_t = P_t ρ₀` with `θ_t = −(σ/2) log ρ_t`.

use super::{validate_times, Boundary, Diagnostics, FlowFamily, FlowTrajectory};
use crate::coeffs::CoefficientSet;
use crate::functionals::{Phase, Snapshot};
use super::log_heat;
use crate::grid::{log_derivatives, Density, ScalarField, SymField, VectorField};
use crate::{Error, Result};

/// `P_t ρ` for the semigroup of generator `(σ/2)Δ`, propagated in the log
/// domain so that far tails keep their relative accuracy. Returns the
/// density and the mass drift removed by renormalisation.
pub fn heat_density(rho: &Density, t: f64, sigma: f64) -> Result<(Density, f64)> {
    let grid = rho.grid();
    let log_rho: Vec<f64> = rho.values().iter().map(|v| v.ln()).collect();
    let out = log_heat(grid, &log_rho, t, sigma)?;
    let field = ScalarField::new(grid, out.into_iter().map(f64::exp).collect())?;
    Density::from_evolved(field, rho.floor())
}

/// Free heat flow sampled at `times` (absolute times, all `≥ 0`).
///
/// The phase tables are `−(σ/2)` times the `log ρ` ratio tables, so `𝓣₊`
/// vanishes to round-off.
pub fn heat_flow(rho0: &Density, sigma: f64, times: &[f64]) -> Result<FlowTrajectory> {
    validate_times(times)?;
    if times[0] < 0.0 {
        return Err(Error::NegativeTime(times[0]));
    }
    let grid = rho0.grid().clone();
    let mut drift = 0.0f64;
    let mut snaps = Vec::with_capacity(times.len());
    for &t in times {
        let (rho, d) = heat_density(rho0, t, sigma)?;
        drift = drift.max(d);
        let (lg, lh) = log_derivatives(rho.field())?;
        let c = -0.5 * sigma;
        let theta = ScalarField::new(&grid, rho.values().iter().map(|v| c * v.ln()).collect())?;
        let grad = VectorField::new(
            &grid,
            lg.components().iter().map(|x| x.iter().map(|v| c * v).collect()).collect(),
        )?;
        let hess = SymField::new(
            &grid,
            lh.components().iter().map(|x| x.iter().map(|v| c * v).collect()).collect(),
        )?;
        let phase = Phase::from_parts(theta, grad, hess)?.gauge_fixed(&rho)?;
        snaps.push(Snapshot::with_log_tables(rho, phase, lg, lh)?);
    }
    let diagnostics = Diagnostics {
        max_mass_drift: drift,
        ..Diagnostics::default()
    };
    FlowTrajectory::new(
        times.to_vec(),
        snaps,
        CoefficientSet::free(sigma),
        FlowFamily::Heat,
        Boundary::InitialValue,
        diagnostics,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{gaussian_density, uniform_times};
    use crate::functionals::{entropy, fisher_matrix};
    use crate::grid::Grid;
    use crate::oracles::gaussian_heat_oracle;
    use crate::sym::SymMatrix;

    fn unit_gaussian() -> Density {
        let g = Grid::new(&[20.0], &[256]).unwrap();
        gaussian_density(&g, &[0.0], &SymMatrix::diag(&[1.0])).unwrap()
    }

    #[test]
    fn zero_time_and_zero_sigma_are_identities() {
        let rho = unit_gaussian();
        for (t, sigma) in [(0.0, 1.0), (2.0, 0.0)] {
            let (p, _) = heat_density(&rho, t, sigma).unwrap();
            for (a, b) in p.values().iter().zip(rho.values()) {
                assert!((a - b).abs() <= 1e-14 * b);
            }
        }
        assert!(matches!(heat_density(&rho, -0.1, 1.0), Err(Error::NegativeTime(_))));
    }

    #[test]
    fn gaussian_spreads_at_the_closed_form_rate() {
        let rho = unit_gaussian();
        for t in [0.05, 0.5, 1.0] {
            let (p, drift) = heat_density(&rho, t, 1.0).unwrap();
            let o = gaussian_heat_oracle(&SymMatrix::diag(&[1.0]), 1.0, t).unwrap();
            assert!((p.covariance().get(0, 0) - o.cov.get(0, 0)).abs() < 1e-10);
            assert!((entropy(&p).unwrap() - o.entropy).abs() < 1e-10);
            assert!((fisher_matrix(&p).unwrap().value - o.fisher).max_abs() < 1e-9);
            assert!(drift < 1e-12);
        }
    }

    #[test]
    fn flow_phase_is_minus_half_sigma_log_density() {
        let traj = heat_flow(&unit_gaussian(), 0.7, &uniform_times(1.0, 9)).unwrap();
        assert_eq!(traj.family(), FlowFamily::Heat);
        assert_eq!(traj.boundary(), Boundary::InitialValue);
        for s in traj.snapshots() {
            let theta = s.phase().theta().values();
            let rho = s.density().values();
            // equal up to the gauge constant
            let c = theta[128] + 0.35 * rho[128].ln();
            for k in (0..256).step_by(17) {
                assert!((theta[k] + 0.35 * rho[k].ln() - c).abs() < 1e-9);
            }
        }
        assert!(heat_flow(&unit_gaussian(), 1.0, &[-0.5, 0.0]).is_err());
    }
}
