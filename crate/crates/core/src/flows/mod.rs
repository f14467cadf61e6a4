//! Flow constructions `(ρ_t, θ_t)` and the certificates attached to them.
//!
//! Viscous flows are never produced by marching the `(ρ, θ)` system forward
//! (the Bohm term is anti-diffusive); they come from semigroup products
//! ([`heat_flow`], [`schrodinger_bridge`]) or from a backward/forward
//! fixed point ([`mfg_picard`]). The `σ = 0` system is integrated directly
//! ([`zero_viscosity_integrate`]) and stops before shocks.
//!
//! Every constructor stamps the standing hypotheses of the comparison
//! theorems on the trajectory and, when there are enough samples, fills in
//! the PDE residual certificate.

mod bridge;
pub mod faults;
mod heat;
mod mfg;
mod residual;
mod spec;
mod transport;

pub use bridge::{bridge_cost, log_heat, schrodinger_bridge, sinkhorn, BridgePotentials, SinkhornOptions};
pub use heat::{heat_density, heat_flow};
pub use mfg::{mfg_picard, MfgOptions};
pub use residual::{pde_residual, Residual};
pub use spec::{
    gaussian_density, CoefficientSpec, DensitySpec, FlowScenario, FlowSpec, GridSpec, InteractionSpec, PhaseSpec,
    PotentialSpec,
};
pub use transport::{zero_viscosity_integrate, LiftedPhase, TransportOptions};

use crate::checks::Stamp;
use crate::coeffs::CoefficientSet;
use crate::comparison::min_eig;
use crate::functionals::{convexity_matrix, Snapshot};
use crate::grid::{seam_mass, Grid};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Residual level below which a trajectory is recorded as a nice flow.
pub const NICE_FLOW_RESIDUAL: f64 = 1e-4;
/// Seam mass above which a scenario is flagged as feeling the box boundary.
pub const SEAM_FLAG: f64 = 1e-8;
/// Tolerance on the convexity hypothesis `∫{∇²U − ∇²W*ρ} dρ ⪰ 0`.
pub const CONVEXITY_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowFamily {
    Heat,
    ZeroViscosity,
    Bridge,
    Mfg,
    /// Built by a fault injection; not a solution of the system.
    Synthetic,
}

impl FlowFamily {
    pub fn name(&self) -> &'static str {
        match self {
            FlowFamily::Heat => "heat",
            FlowFamily::ZeroViscosity => "zero_viscosity",
            FlowFamily::Bridge => "bridge",
            FlowFamily::Mfg => "mfg",
            FlowFamily::Synthetic => "synthetic",
        }
    }
}

/// What was prescribed when the flow was built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// `(ρ₀, θ₀)`.
    InitialValue,
    /// `(ρ₀, ρ_τ)`.
    Planning,
    /// `(ρ₀, u_τ)`.
    MeanFieldGame,
}

/// Standing assumptions evaluated on a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypotheses {
    pub sigma_nonnegative: bool,
    /// `f' ≥ 0` sampled on the density range of the trajectory.
    pub f_nondecreasing: bool,
    /// Smallest eigenvalue of `∫{∇²U − ∇²W*ρ_t} dρ_t` over the samples.
    pub convexity_min_eig: f64,
    pub convex: bool,
    pub interaction_free: bool,
    pub planning_boundary: bool,
    /// Largest PDE residual (both equations), when certified.
    pub residual: Option<f64>,
    pub max_seam_mass: f64,
}

impl Hypotheses {
    /// The assumptions of the matrix differential inequalities.
    pub fn theorem_eligible(&self) -> bool {
        self.sigma_nonnegative && self.f_nondecreasing && self.convex
    }

    pub fn nice_flow(&self) -> bool {
        self.residual.is_some_and(|r| r <= NICE_FLOW_RESIDUAL)
    }

    pub fn seam_flagged(&self) -> bool {
        self.max_seam_mass > SEAM_FLAG
    }

    /// Stamps for the differential-inequality theorems.
    pub fn stamps(&self) -> Vec<Stamp> {
        vec![
            Stamp::new("sigma >= 0", self.sigma_nonnegative),
            Stamp::new("f nondecreasing", self.f_nondecreasing),
            Stamp::new("int (hess U - hess W * rho) drho >= 0", self.convex),
        ]
    }
}

/// Construction diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: Option<usize>,
    pub marginal_error: Option<f64>,
    pub contraction: Option<f64>,
    /// Largest `|mass − 1|` removed when normalising evolved densities.
    pub max_mass_drift: f64,
    /// Cost computed from the bridge potentials (bridges only).
    pub static_cost: Option<f64>,
    pub notes: Vec<String>,
}

/// A sampled flow: snapshots at increasing times plus metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowTrajectory {
    grid: Grid,
    times: Vec<f64>,
    snapshots: Vec<Snapshot>,
    coeffs: CoefficientSet,
    family: FlowFamily,
    boundary: Boundary,
    hypotheses: Hypotheses,
    residual: Option<Residual>,
    diagnostics: Diagnostics,
}

pub(crate) fn validate_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("sample times".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("sample times must be strictly increasing".into()));
    }
    Ok(())
}

/// `m` uniform samples of `[0, τ]`.
pub fn uniform_times(tau: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![0.0];
    }
    (0..m).map(|k| tau * k as f64 / (m - 1) as f64).collect()
}

impl FlowTrajectory {
    /// Assembles a trajectory, stamps hypotheses and certifies the residual
    /// when at least five samples are present.
    pub fn new(
        times: Vec<f64>,
        snapshots: Vec<Snapshot>,
        coeffs: CoefficientSet,
        family: FlowFamily,
        boundary: Boundary,
        diagnostics: Diagnostics,
    ) -> Result<FlowTrajectory> {
        validate_times(&times)?;
        if snapshots.len() != times.len() {
            return Err(Error::InvalidArgument("one snapshot per time required".into()));
        }
        let grid = snapshots[0].grid().clone();
        if snapshots.iter().any(|s| *s.grid() != grid) {
            return Err(Error::GridMismatch);
        }
        coeffs.validate(&grid)?;
        let hypotheses = stamp_hypotheses(&snapshots, &coeffs, boundary)?;
        let mut traj = FlowTrajectory {
            grid,
            times,
            snapshots,
            coeffs,
            family,
            boundary,
            hypotheses,
            residual: None,
            diagnostics,
        };
        if traj.len() >= 5 {
            let r = pde_residual(&traj)?;
            traj.hypotheses.residual = Some(r.continuity.max(r.phase));
            traj.residual = Some(r);
        }
        Ok(traj)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn coeffs(&self) -> &CoefficientSet {
        &self.coeffs
    }

    pub fn sigma(&self) -> f64 {
        self.coeffs.sigma
    }

    pub fn family(&self) -> FlowFamily {
        self.family
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn hypotheses(&self) -> &Hypotheses {
        &self.hypotheses
    }

    pub fn residual(&self) -> Option<Residual> {
        self.residual
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `t_m − t_0`.
    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    /// Same trajectory restricted to the first `k` samples (used when a
    /// construction stops early).
    pub(crate) fn truncated(
        times: Vec<f64>,
        snapshots: Vec<Snapshot>,
        coeffs: CoefficientSet,
        family: FlowFamily,
        boundary: Boundary,
        diagnostics: Diagnostics,
    ) -> Box<FlowTrajectory> {
        let grid = snapshots[0].grid().clone();
        let hypotheses = stamp_hypotheses(&snapshots, &coeffs, boundary).unwrap_or(Hypotheses {
            sigma_nonnegative: coeffs.sigma >= 0.0,
            f_nondecreasing: false,
            convexity_min_eig: f64::NAN,
            convex: false,
            interaction_free: coeffs.interaction.is_zero(),
            planning_boundary: false,
            residual: None,
            max_seam_mass: f64::NAN,
        });
        Box::new(FlowTrajectory {
            grid,
            times,
            snapshots,
            coeffs,
            family,
            boundary,
            hypotheses,
            residual: None,
            diagnostics,
        })
    }

    /// Rebuilds a trajectory from stored parts without recomputing anything.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        times: Vec<f64>,
        snapshots: Vec<Snapshot>,
        coeffs: CoefficientSet,
        family: FlowFamily,
        boundary: Boundary,
        hypotheses: Hypotheses,
        residual: Option<Residual>,
        diagnostics: Diagnostics,
    ) -> Result<FlowTrajectory> {
        validate_times(&times)?;
        if snapshots.len() != times.len() {
            return Err(Error::InvalidArgument("one snapshot per time required".into()));
        }
        let grid = snapshots[0].grid().clone();
        Ok(FlowTrajectory {
            grid,
            times,
            snapshots,
            coeffs,
            family,
            boundary,
            hypotheses,
            residual,
            diagnostics,
        })
    }

    /// Copy with replaced snapshots and family, re-stamped and re-certified.
    pub fn with_snapshots(&self, snapshots: Vec<Snapshot>, family: FlowFamily) -> Result<FlowTrajectory> {
        FlowTrajectory::new(
            self.times.clone(),
            snapshots,
            self.coeffs.clone(),
            family,
            self.boundary,
            self.diagnostics.clone(),
        )
    }
}

/// Evaluates the standing hypotheses on a list of snapshots.
pub fn stamp_hypotheses(snapshots: &[Snapshot], coeffs: &CoefficientSet, boundary: Boundary) -> Result<Hypotheses> {
    let mut conv_min = f64::INFINITY;
    let mut rmin = f64::INFINITY;
    let mut rmax = 0.0f64;
    let mut seam = 0.0f64;
    for s in snapshots {
        let rho = s.density();
        conv_min = conv_min.min(min_eig(&convexity_matrix(rho, coeffs)?));
        rmin = rmin.min(rho.field().min());
        rmax = rmax.max(rho.field().max());
        seam = seam.max(seam_mass(rho));
    }
    let f_nondecreasing = if coeffs.congestion.is_zero() {
        true
    } else {
        // geometric sweep of the observed density range
        let steps = 64;
        let (lo, hi) = (rmin.max(f64::MIN_POSITIVE), rmax.max(rmin));
        (0..=steps).all(|k| {
            let r = lo * (hi / lo).powf(k as f64 / steps as f64);
            coeffs.congestion.df(r) >= 0.0
        })
    };
    Ok(Hypotheses {
        sigma_nonnegative: coeffs.sigma >= 0.0,
        f_nondecreasing,
        convexity_min_eig: conv_min,
        convex: conv_min >= -CONVEXITY_TOLERANCE,
        interaction_free: coeffs.interaction.is_zero(),
        planning_boundary: boundary == Boundary::Planning,
        residual: None,
        max_seam_mass: seam,
    })
}

/// `ρ̃_t = ρ_{τ−t}`, `θ̃_t = −θ_{τ−t}`: a pure relabelling.
pub fn reverse_trajectory(traj: &FlowTrajectory) -> FlowTrajectory {
    let t0 = traj.times[0];
    let t1 = traj.times[traj.times.len() - 1];
    let times: Vec<f64> = traj.times.iter().rev().map(|t| t0 + (t1 - t)).collect();
    let snapshots: Vec<Snapshot> = traj
        .snapshots
        .iter()
        .rev()
        .map(|s| {
            s.with_phase(s.phase().negated())
                .expect("negated phase lives on the same grid")
        })
        .collect();
    FlowTrajectory {
        grid: traj.grid.clone(),
        times,
        snapshots,
        coeffs: traj.coeffs.clone(),
        family: traj.family,
        boundary: traj.boundary,
        hypotheses: traj.hypotheses.clone(),
        residual: traj.residual,
        diagnostics: traj.diagnostics.clone(),
    }
}
