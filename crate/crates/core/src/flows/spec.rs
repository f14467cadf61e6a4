//! Serializable scenario descriptors.
//!
//! A [`FlowScenario`] describes a flow by its ingredients rather than by
//! samples, so the same flow can be rebuilt on a refined grid with more time
//! samples. Matrices are written as nested arrays (`[[1, 0], [0, 1]]`).

use super::{
    faults, heat_flow, mfg_picard, schrodinger_bridge, uniform_times,
    zero_viscosity_integrate, FlowTrajectory, LiftedPhase, MfgOptions, SinkhornOptions, TransportOptions,
};
use crate::coeffs::{CoefficientSet, Congestion, Interaction, Potential};
use crate::grid::{Density, Grid, ScalarField};
use crate::sym::SymMatrix;
use crate::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub extent: Vec<f64>,
    pub points: Vec<usize>,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(&self.extent, &self.points)
    }
}

fn sym_from_rows(rows: &[Vec<f64>], n: usize, what: &str) -> Result<SymMatrix> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument(format!("{what} must be a {n}x{n} matrix")));
    }
    for i in 0..n {
        for j in 0..i {
            if (rows[i][j] - rows[j][i]).abs() > 1e-12 * (1.0 + rows[i][j].abs()) {
                return Err(Error::InvalidArgument(format!("{what} must be symmetric")));
            }
        }
    }
    let mut m = SymMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            m.set(i, j, rows[i][j]);
        }
    }
    Ok(m)
}

fn check_len(v: &[f64], n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::InvalidArgument(format!("{what} must have {n} entries")));
    }
    Ok(())
}

/// Gaussian density with the given mean and covariance, sampled on the box.
pub fn gaussian_density(grid: &Grid, mean: &[f64], cov: &SymMatrix) -> Result<Density> {
    let n = grid.dim();
    check_len(mean, n, "mean")?;
    let prec = cov
        .inverse()
        .filter(|_| crate::comparison::min_eig(cov) > 0.0)
        .ok_or_else(|| Error::InvalidArgument("covariance must be positive definite".into()))?;
    Density::from_fn(grid, |x| {
        let d: Vec<f64> = (0..n).map(|a| x[a] - mean[a]).collect();
        (-0.5 * prec.quad(&d)).exp()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub density: DensitySpec,
}

/// Density descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Uniform,
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
    /// `∝ Π_a exp(κ cos(2π(x_a − c_a)/L_a))`.
    VonMises {
        center: Vec<f64>,
        kappa: f64,
    },
    Mixture {
        components: Vec<MixtureComponent>,
    },
    /// Values on a lattice of the same box; resampled spectrally if the
    /// point counts differ from the target grid.
    Samples {
        points: Vec<usize>,
        values: Vec<f64>,
    },
}

impl DensitySpec {
    /// Unnormalised positive values on `grid`.
    fn raw(&self, grid: &Grid) -> Result<Vec<f64>> {
        let n = grid.dim();
        match self {
            DensitySpec::Uniform => Ok(vec![1.0 / grid.volume(); grid.len()]),
            DensitySpec::Gaussian { mean, cov } => {
                let c = sym_from_rows(cov, n, "cov")?;
                let d = gaussian_density(grid, mean, &c)?;
                Ok(d.values().to_vec())
            }
            DensitySpec::VonMises { center, kappa } => {
                check_len(center, n, "center")?;
                if !(kappa.is_finite() && *kappa >= 0.0) {
                    return Err(Error::InvalidArgument("kappa must be >= 0".into()));
                }
                let f = ScalarField::from_fn(grid, |x| {
                    (0..n)
                        .map(|a| kappa * ((2.0 * PI * (x[a] - center[a]) / grid.extent()[a]).cos() - 1.0))
                        .sum::<f64>()
                        .exp()
                });
                Ok(f.into_values())
            }
            DensitySpec::Mixture { components } => {
                if components.is_empty() || components.iter().any(|c| !(c.weight > 0.0)) {
                    return Err(Error::InvalidArgument("mixture weights must be positive".into()));
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let mut acc = vec![0.0; grid.len()];
                for c in components {
                    let d = c.density.build(grid)?;
                    acc.iter_mut()
                        .zip(d.values())
                        .for_each(|(a, v)| *a += c.weight / total * v);
                }
                Ok(acc)
            }
            DensitySpec::Samples { points, values } => {
                let src = Grid::new(grid.extent(), points)?;
                if values.len() != src.len() {
                    return Err(Error::InvalidArgument(format!(
                        "{} samples for a {}-point lattice",
                        values.len(),
                        src.len()
                    )));
                }
                if src == *grid {
                    Ok(values.clone())
                } else {
                    Ok(resample(&src, values, grid))
                }
            }
        }
    }

    pub fn build(&self, grid: &Grid) -> Result<Density> {
        let raw = self.raw(grid)?;
        if let Some(v) = raw.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidArgument(format!("density value {v} is not positive")));
        }
        Density::new(ScalarField::new(grid, raw)?, crate::grid::DEFAULT_FLOOR)
    }
}

/// Trigonometric interpolation of `values` from `src` to `dst` (same box).
pub fn resample(src: &Grid, values: &[f64], dst: &Grid) -> Vec<f64> {
    let spec = src.forward(values);
    let mut out = vec![Complex64::new(0.0, 0.0); dst.len()];
    let dim = src.dim();
    for (i, c) in spec.iter().enumerate() {
        let m = src.unflatten(i);
        let mut idx = 0usize;
        let mut keep = true;
        for a in 0..dim {
            let (ns, nd) = (src.points()[a] as i64, dst.points()[a] as i64);
            let k = if m[a] as i64 <= ns / 2 { m[a] as i64 } else { m[a] as i64 - ns };
            let lim = ns.min(nd) / 2;
            if k.abs() >= lim {
                keep = false;
                break;
            }
            idx = idx * nd as usize + k.rem_euclid(nd) as usize;
        }
        if keep {
            out[idx] = *c;
        }
    }
    let scale = dst.len() as f64 / src.len() as f64;
    dst.inverse_real(out).into_iter().map(|v| v * scale).collect()
}

/// Phase descriptor (initial phase for `σ = 0`, terminal value for games).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhaseSpec {
    #[default]
    Zero,
    /// `½xᵀQx + ⟨p, x⟩`.
    Quadratic { q: Vec<Vec<f64>>, p: Vec<f64> },
    /// `A cos(2π⟨k, x/L⟩)` with integer wave numbers `k`.
    Cosine { amplitude: f64, wave: Vec<i64> },
}

impl PhaseSpec {
    pub fn build(&self, grid: &Grid) -> Result<LiftedPhase> {
        let n = grid.dim();
        match self {
            PhaseSpec::Zero => Ok(LiftedPhase::zero(grid)),
            PhaseSpec::Quadratic { q, p } => {
                check_len(p, n, "p")?;
                Ok(LiftedPhase::quadratic(grid, sym_from_rows(q, n, "q")?, p.clone()))
            }
            PhaseSpec::Cosine { amplitude, wave } => Ok(LiftedPhase::periodic(cosine(grid, *amplitude, wave)?)),
        }
    }
}

fn cosine(grid: &Grid, amplitude: f64, wave: &[i64]) -> Result<ScalarField> {
    let n = grid.dim();
    if wave.len() != n {
        return Err(Error::InvalidArgument(format!("wave must have {n} entries")));
    }
    Ok(ScalarField::from_fn(grid, |x| {
        let arg: f64 = (0..n).map(|a| 2.0 * PI * wave[a] as f64 * x[a] / grid.extent()[a]).sum();
        amplitude * arg.cos()
    }))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    #[default]
    Zero,
    /// `½⟨x−c, A(x−c)⟩`.
    Quadratic { center: Vec<f64>, a: Vec<Vec<f64>> },
    Cosine { amplitude: f64, wave: Vec<i64> },
}

impl PotentialSpec {
    pub fn build(&self, grid: &Grid) -> Result<Potential> {
        let n = grid.dim();
        match self {
            PotentialSpec::Zero => Ok(Potential::Zero),
            PotentialSpec::Quadratic { center, a } => {
                check_len(center, n, "center")?;
                Ok(Potential::Quadratic {
                    center: center.clone(),
                    a: sym_from_rows(a, n, "a")?,
                })
            }
            PotentialSpec::Cosine { amplitude, wave } => Ok(Potential::gridded(cosine(grid, *amplitude, wave)?)),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InteractionSpec {
    #[default]
    Zero,
    /// `W(x) = −b|x|²`.
    Quadratic { b: f64 },
}

impl InteractionSpec {
    pub fn build(&self) -> Result<Interaction> {
        match self {
            InteractionSpec::Zero => Ok(Interaction::Zero),
            InteractionSpec::Quadratic { b } => Interaction::quadratic(*b),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    #[serde(default)]
    pub potential: PotentialSpec,
    #[serde(default)]
    pub interaction: InteractionSpec,
    #[serde(default = "no_congestion")]
    pub congestion: Congestion,
    pub sigma: f64,
}

fn no_congestion() -> Congestion {
    Congestion::Zero
}

impl CoefficientSpec {
    pub fn free(sigma: f64) -> CoefficientSpec {
        CoefficientSpec {
            potential: PotentialSpec::Zero,
            interaction: InteractionSpec::Zero,
            congestion: Congestion::Zero,
            sigma,
        }
    }

    pub fn build(&self, grid: &Grid) -> Result<CoefficientSet> {
        let set = CoefficientSet {
            potential: self.potential.build(grid)?,
            interaction: self.interaction.build()?,
            congestion: self.congestion,
            sigma: self.sigma,
        };
        set.validate(grid)?;
        Ok(set)
    }
}

/// Which construction to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FlowSpec {
    Heat {
        rho0: DensitySpec,
    },
    ZeroViscosity {
        rho0: DensitySpec,
        #[serde(default)]
        theta0: PhaseSpec,
        #[serde(default)]
        cfl: Option<f64>,
    },
    Bridge {
        mu_a: DensitySpec,
        mu_z: DensitySpec,
        #[serde(default)]
        sinkhorn_tol: Option<f64>,
        #[serde(default)]
        max_iter: Option<usize>,
    },
    Mfg {
        rho0: DensitySpec,
        #[serde(default)]
        terminal: PhaseSpec,
        #[serde(default)]
        damping: Option<f64>,
        #[serde(default)]
        fp_tol: Option<f64>,
        #[serde(default)]
        max_rounds: Option<usize>,
        #[serde(default)]
        substeps: Option<usize>,
    },
    /// Fault injection: the base flow with its phase negated.
    SignFlip {
        base: Box<FlowSpec>,
    },
    /// Fault injection: backward heat densities with the heat-flow phase.
    AntiDiffusive {
        rho_end: DensitySpec,
    },
}

/// A complete, rebuildable flow description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowScenario {
    pub grid: GridSpec,
    pub coefficients: CoefficientSpec,
    pub flow: FlowSpec,
    pub tau: f64,
    pub samples: usize,
}

impl FlowScenario {
    pub fn times(&self) -> Vec<f64> {
        uniform_times(self.tau, self.samples)
    }

    /// Checks everything that can be checked without running the flow: the
    /// grid, coefficients, every descriptor and the family's preconditions.
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau {} must be positive", self.tau)));
        }
        if self.samples < 2 {
            return Err(Error::TooFewSamples {
                need: 2,
                got: self.samples,
            });
        }
        let grid = self.grid.build()?;
        let coeffs = self.coefficients.build(&grid)?;
        validate_flow(&self.flow, &grid, &coeffs)
    }

    pub fn build(&self) -> Result<FlowTrajectory> {
        self.validate()?;
        let grid = self.grid.build()?;
        let coeffs = self.coefficients.build(&grid)?;
        self.build_flow(&self.flow, &grid, &coeffs)
    }

    fn build_flow(&self, flow: &FlowSpec, grid: &Grid, coeffs: &CoefficientSet) -> Result<FlowTrajectory> {
        let times = self.times();
        let sigma = coeffs.sigma;
        let need_free = |what: &str| -> Result<()> {
            if coeffs.is_free() {
                Ok(())
            } else {
                Err(Error::Unsupported(format!("{what} requires U = W = f = 0")))
            }
        };
        match flow {
            FlowSpec::Heat { rho0 } => {
                need_free("heat flow")?;
                heat_flow(&rho0.build(grid)?, sigma, &times)
            }
            FlowSpec::ZeroViscosity { rho0, theta0, cfl } => {
                let mut opts = TransportOptions::default();
                if let Some(c) = cfl {
                    opts.cfl = *c;
                }
                zero_viscosity_integrate(&rho0.build(grid)?, &theta0.build(grid)?, coeffs, &times, opts)
            }
            FlowSpec::Bridge {
                mu_a,
                mu_z,
                sinkhorn_tol,
                max_iter,
            } => {
                need_free("a Schrödinger bridge")?;
                let mut opts = SinkhornOptions::default();
                if let Some(t) = sinkhorn_tol {
                    opts.tol = *t;
                }
                if let Some(m) = max_iter {
                    opts.max_iter = *m;
                }
                schrodinger_bridge(&mu_a.build(grid)?, &mu_z.build(grid)?, sigma, self.tau, &times, opts)
            }
            FlowSpec::Mfg {
                rho0,
                terminal,
                damping,
                fp_tol,
                max_rounds,
                substeps,
            } => {
                let d = MfgOptions::default();
                let opts = MfgOptions {
                    damping: damping.unwrap_or(d.damping),
                    fp_tol: fp_tol.unwrap_or(d.fp_tol),
                    max_rounds: max_rounds.unwrap_or(d.max_rounds),
                    substeps: substeps.unwrap_or(d.substeps),
                };
                mfg_picard(&rho0.build(grid)?, &terminal.build(grid)?, coeffs, self.tau, self.samples, opts)
            }
            FlowSpec::SignFlip { base } => faults::flip_phase_sign(&self.build_flow(base, grid, coeffs)?),
            FlowSpec::AntiDiffusive { rho_end } => {
                need_free("the anti-diffusive path")?;
                faults::anti_diffusive_path(&rho_end.build(grid)?, sigma, &times)
            }
        }
    }

    /// Same scenario with `factor×` the points per axis, `factor×` the time
    /// resolution and ten times tighter solver tolerances.
    pub fn refined(&self, factor: usize) -> FlowScenario {
        let mut out = self.clone();
        out.grid.points = self.grid.points.iter().map(|n| n * factor).collect();
        out.samples = (self.samples - 1) * factor + 1;
        tighten(&mut out.flow);
        out
    }
}

fn validate_flow(flow: &FlowSpec, grid: &Grid, coeffs: &CoefficientSet) -> Result<()> {
    let sigma = coeffs.sigma;
    let need_free = |what: &str| -> Result<()> {
        if coeffs.is_free() {
            Ok(())
        } else {
            Err(Error::Unsupported(format!("{what} requires U = W = f = 0")))
        }
    };
    let need_viscous = |what: &str| -> Result<()> {
        if sigma > 0.0 && sigma.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("{what} needs sigma > 0, got {sigma}")))
        }
    };
    let positive = |v: Option<f64>, what: &str| -> Result<()> {
        match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(Error::InvalidArgument(format!("{what} must be positive, got {x}"))),
            _ => Ok(()),
        }
    };
    match flow {
        FlowSpec::Heat { rho0 } => {
            need_free("heat flow")?;
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::InvalidArgument(format!("heat flow needs sigma >= 0, got {sigma}")));
            }
            rho0.build(grid)?;
        }
        FlowSpec::ZeroViscosity { rho0, theta0, cfl } => {
            if sigma != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "the zero-viscosity flow needs sigma = 0, got {sigma}"
                )));
            }
            positive(*cfl, "cfl")?;
            rho0.build(grid)?;
            theta0.build(grid)?;
        }
        FlowSpec::Bridge {
            mu_a,
            mu_z,
            sinkhorn_tol,
            max_iter,
        } => {
            need_free("a Schrödinger bridge")?;
            need_viscous("a Schrödinger bridge")?;
            positive(*sinkhorn_tol, "sinkhorn_tol")?;
            if *max_iter == Some(0) {
                return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
            }
            mu_a.build(grid)?;
            mu_z.build(grid)?;
        }
        FlowSpec::Mfg {
            rho0,
            terminal,
            damping,
            fp_tol,
            max_rounds,
            substeps,
        } => {
            need_viscous("a mean-field game")?;
            if let Some(d) = damping {
                if !(*d > 0.0 && *d <= 1.0) {
                    return Err(Error::InvalidArgument(format!("damping must lie in (0, 1], got {d}")));
                }
            }
            positive(*fp_tol, "fp_tol")?;
            if *max_rounds == Some(0) || *substeps == Some(0) {
                return Err(Error::InvalidArgument("max_rounds and substeps must be at least 1".into()));
            }
            rho0.build(grid)?;
            terminal.build(grid)?;
        }
        FlowSpec::SignFlip { base } => validate_flow(base, grid, coeffs)?,
        FlowSpec::AntiDiffusive { rho_end } => {
            need_free("the anti-diffusive path")?;
            need_viscous("the anti-diffusive path")?;
            rho_end.build(grid)?;
        }
    }
    Ok(())
}

fn tighten(flow: &mut FlowSpec) {
    match flow {
        FlowSpec::Bridge { sinkhorn_tol, .. } => {
            *sinkhorn_tol = Some(sinkhorn_tol.unwrap_or(SinkhornOptions::default().tol) / 10.0);
        }
        FlowSpec::Mfg { fp_tol, .. } => {
            *fp_tol = Some(fp_tol.unwrap_or(MfgOptions::default().fp_tol) / 10.0);
        }
        FlowSpec::ZeroViscosity { cfl, .. } => {
            *cfl = Some(cfl.unwrap_or(TransportOptions::default().cfl) / 2.0);
        }
        FlowSpec::SignFlip { base } => tighten(base),
        FlowSpec::Heat { .. } | FlowSpec::AntiDiffusive { .. } => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_is_exact_for_band_limited_fields() {
        let src = Grid::new(&[2.0 * PI], &[16]).unwrap();
        let dst = Grid::new(&[2.0 * PI], &[64]).unwrap();
        let f = |x: f64| 1.0 + 0.3 * (2.0 * x).sin() + 0.1 * (5.0 * x).cos();
        let vals: Vec<f64> = src.axis_coords(0).into_iter().map(f).collect();
        let out = resample(&src, &vals, &dst);
        for (x, v) in dst.axis_coords(0).into_iter().zip(out) {
            assert!((f(x) - v).abs() < 1e-13);
        }
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = FlowScenario {
            grid: GridSpec {
                extent: vec![12.0],
                points: vec![64],
            },
            coefficients: CoefficientSpec::free(1.0),
            flow: FlowSpec::Bridge {
                mu_a: DensitySpec::Gaussian {
                    mean: vec![0.0],
                    cov: vec![vec![1.0]],
                },
                mu_z: DensitySpec::Uniform,
                sinkhorn_tol: None,
                max_iter: None,
            },
            tau: 1.0,
            samples: 9,
        };
        let text = serde_json::to_string(&s).unwrap();
        let back: FlowScenario = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
        let bad = text.replace("\"tau\"", "\"tau_typo\"");
        assert!(serde_json::from_str::<FlowScenario>(&bad).is_err());
    }
}
