//! Coefficient descriptors: external potential `U`, interaction kernel `W`,
//! congestion `f` (with `f'` and the primitive-type `F` satisfying
//! `f = F + rF'`) and the viscosity `σ`.
//!
//! Quadratic potentials and interactions are never sampled and then
//! differentiated: their gradients, Hessians and convolutions are closed form.

use crate::grid::{circular_convolve, hessian, integrate_tensor, Density, Grid, ScalarField, SymField, VectorField};
use crate::sym::SymMatrix;
use crate::{Error, Result};

/// External potential `U`.
#[derive(Clone, Debug, PartialEq)]
pub enum Potential {
    Zero,
    /// `U(x) = ½⟨x−c, A(x−c)⟩` in box coordinates.
    Quadratic { center: Vec<f64>, a: SymMatrix },
    /// Periodic field with derivative tables.
    Gridded {
        values: ScalarField,
        grad: VectorField,
        hess: SymField,
    },
}

impl Potential {
    /// Gridded potential whose tables come from spectral differentiation.
    pub fn gridded(values: ScalarField) -> Potential {
        let grad = crate::grid::gradient(&values);
        let hess = hessian(&values);
        Potential::Gridded { values, grad, hess }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Potential::Zero)
    }

    /// `U` sampled on the grid.
    pub fn values(&self, grid: &Grid) -> ScalarField {
        match self {
            Potential::Zero => ScalarField::constant(grid, 0.0),
            Potential::Quadratic { center, a } => ScalarField::from_fn(grid, |x| {
                let d: Vec<f64> = (0..grid.dim()).map(|i| x[i] - center[i]).collect();
                0.5 * a.quad(&d)
            }),
            Potential::Gridded { values, .. } => values.clone(),
        }
    }

    /// `∇U` sampled on the grid.
    pub fn gradient(&self, grid: &Grid) -> VectorField {
        match self {
            Potential::Zero => VectorField::constant(grid, &vec![0.0; grid.dim()]),
            Potential::Quadratic { center, a } => {
                let n = grid.dim();
                let mut comps = vec![vec![0.0; grid.len()]; n];
                for k in 0..grid.len() {
                    let x = grid.position(k);
                    let d: Vec<f64> = (0..n).map(|i| x[i] - center[i]).collect();
                    let g = a.apply(&d);
                    for i in 0..n {
                        comps[i][k] = g[i];
                    }
                }
                VectorField::from_raw(grid, comps)
            }
            Potential::Gridded { grad, .. } => grad.clone(),
        }
    }

    /// `∫∇²U dρ`.
    pub fn mean_hessian(&self, rho: &Density) -> Result<SymMatrix> {
        let n = rho.grid().dim();
        match self {
            Potential::Zero => Ok(SymMatrix::zeros(n)),
            Potential::Quadratic { a, .. } => Ok(*a),
            Potential::Gridded { hess, .. } => integrate_tensor(hess, rho),
        }
    }

    /// The part of `U` that is exactly quadratic: `(A, A c)` so that
    /// `U = ½xᵀAx − ⟨Ac, x⟩ + const + periodic remainder`.
    pub fn quadratic_part(&self, n: usize) -> (SymMatrix, Vec<f64>) {
        match self {
            Potential::Quadratic { center, a } => (*a, a.apply(center)),
            _ => (SymMatrix::zeros(n), vec![0.0; n]),
        }
    }

    /// The periodic part of `U` on the grid (zero for quadratic potentials).
    pub fn periodic_part(&self) -> Option<ScalarField> {
        match self {
            Potential::Gridded { values, .. } => Some(values.clone()),
            _ => None,
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        match self {
            Potential::Zero => Ok(()),
            Potential::Quadratic { center, a } => {
                if center.len() != grid.dim() || a.dim() != grid.dim() {
                    return Err(Error::InvalidArgument("potential dimension differs from grid".into()));
                }
                if !a.is_finite() || center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::NonFinite("potential".into()));
                }
                Ok(())
            }
            Potential::Gridded { values, .. } => {
                if values.grid() != grid {
                    return Err(Error::GridMismatch);
                }
                Ok(())
            }
        }
    }
}

/// Interaction kernel `W`; must be concave.
#[derive(Clone, Debug, PartialEq)]
pub enum Interaction {
    Zero,
    /// `W(x) = −b|x|²` with `b ≥ 0`.
    Quadratic { b: f64 },
    /// Periodic kernel sampled at lattice positions, origin at the box centre.
    Gridded { kernel: ScalarField },
}

impl Interaction {
    /// Quadratic kernel; rejects `b < 0`.
    pub fn quadratic(b: f64) -> Result<Interaction> {
        if !b.is_finite() {
            return Err(Error::NonFinite("interaction strength".into()));
        }
        if b < 0.0 {
            return Err(Error::NotConcave(b));
        }
        Ok(Interaction::Quadratic { b })
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Interaction::Zero => true,
            Interaction::Quadratic { b } => *b == 0.0,
            Interaction::Gridded { .. } => false,
        }
    }

    /// `W*ρ`. The quadratic case uses moments:
    /// `−b(|x|² − 2⟨x, m₁⟩ + m₂)`.
    pub fn convolve(&self, rho: &Density) -> Result<ScalarField> {
        let grid = rho.grid();
        match self {
            Interaction::Zero => Ok(ScalarField::constant(grid, 0.0)),
            Interaction::Quadratic { b } => {
                if *b < 0.0 {
                    return Err(Error::NotConcave(*b));
                }
                let m1 = rho.mean();
                let m2 = rho.covariance().trace() + m1.iter().map(|v| v * v).sum::<f64>();
                let b = *b;
                Ok(ScalarField::from_fn(grid, |x| {
                    let mut s = 0.0;
                    for a in 0..grid.dim() {
                        s += x[a] * x[a] - 2.0 * x[a] * m1[a];
                    }
                    -b * (s + m2)
                }))
            }
            Interaction::Gridded { kernel } => circular_convolve(kernel, rho.field()),
        }
    }

    /// `∇(W*ρ)`.
    pub fn convolve_gradient(&self, rho: &Density) -> Result<VectorField> {
        let grid = rho.grid();
        let n = grid.dim();
        match self {
            Interaction::Zero => Ok(VectorField::constant(grid, &vec![0.0; n])),
            Interaction::Quadratic { b } => {
                let m1 = rho.mean();
                let mut comps = vec![vec![0.0; grid.len()]; n];
                for k in 0..grid.len() {
                    let x = grid.position(k);
                    for a in 0..n {
                        comps[a][k] = -2.0 * b * (x[a] - m1[a]);
                    }
                }
                Ok(VectorField::from_raw(grid, comps))
            }
            Interaction::Gridded { kernel } => Ok(crate::grid::gradient(&circular_convolve(kernel, rho.field())?)),
        }
    }

    /// `∫(−∇²W)*ρ dρ`.
    pub fn mean_neg_hessian(&self, rho: &Density) -> Result<SymMatrix> {
        let grid = rho.grid();
        let n = grid.dim();
        match self {
            Interaction::Zero => Ok(SymMatrix::zeros(n)),
            Interaction::Quadratic { b } => Ok(SymMatrix::scalar(n, 2.0 * b)),
            Interaction::Gridded { kernel } => {
                let h = hessian(kernel);
                let comps = h
                    .components()
                    .iter()
                    .map(|c| {
                        let k = ScalarField::from_raw(grid, c.iter().map(|v| -v).collect());
                        circular_convolve(&k, rho.field()).map(|f| f.into_values())
                    })
                    .collect::<Result<Vec<_>>>()?;
                integrate_tensor(&SymField::from_raw(grid, comps), rho)
            }
        }
    }

    /// Strength `b` of the exactly quadratic part.
    pub fn quadratic_strength(&self) -> f64 {
        match self {
            Interaction::Quadratic { b } => *b,
            _ => 0.0,
        }
    }

    /// Periodic part of `W*ρ` (the gridded convolution), if any.
    pub fn periodic_convolve(&self, rho: &Density) -> Result<Option<ScalarField>> {
        match self {
            Interaction::Gridded { kernel } => Ok(Some(circular_convolve(kernel, rho.field())?)),
            _ => Ok(None),
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        match self {
            Interaction::Zero => Ok(()),
            Interaction::Quadratic { b } => {
                if *b < 0.0 {
                    Err(Error::NotConcave(*b))
                } else {
                    Ok(())
                }
            }
            Interaction::Gridded { kernel } => {
                if kernel.grid() != grid {
                    Err(Error::GridMismatch)
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Congestion `f` from the built-in family, stored with `f'` and `F`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Congestion {
    Zero,
    /// `f(r) = ε log r`, `F(r) = ε(log r − 1)`.
    Log { eps: f64 },
    /// `f(r) = εr`, `F(r) = εr/2`.
    Linear { eps: f64 },
    /// `f(r) = εr^p`, `F(r) = εr^p/(p+1)`.
    Power { eps: f64, p: f64 },
}

impl Congestion {
    pub fn f(&self, r: f64) -> f64 {
        match *self {
            Congestion::Zero => 0.0,
            Congestion::Log { eps } => eps * r.ln(),
            Congestion::Linear { eps } => eps * r,
            Congestion::Power { eps, p } => eps * r.powf(p),
        }
    }

    pub fn df(&self, r: f64) -> f64 {
        match *self {
            Congestion::Zero => 0.0,
            Congestion::Log { eps } => eps / r,
            Congestion::Linear { eps } => eps,
            Congestion::Power { eps, p } => eps * p * r.powf(p - 1.0),
        }
    }

    #[allow(non_snake_case)]
    pub fn F(&self, r: f64) -> f64 {
        match *self {
            Congestion::Zero => 0.0,
            Congestion::Log { eps } => eps * (r.ln() - 1.0),
            Congestion::Linear { eps } => 0.5 * eps * r,
            Congestion::Power { eps, p } => eps * r.powf(p) / (p + 1.0),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Congestion::Zero => true,
            Congestion::Log { eps } | Congestion::Linear { eps } | Congestion::Power { eps, .. } => eps == 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Congestion::Zero => Ok(()),
            Congestion::Log { eps } | Congestion::Linear { eps } => {
                if eps.is_finite() {
                    Ok(())
                } else {
                    Err(Error::NonFinite("congestion".into()))
                }
            }
            Congestion::Power { eps, p } => {
                if eps.is_finite() && p.is_finite() && p > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!("power congestion needs p > 0, got {p}")))
                }
            }
        }
    }
}

/// Everything that enters the phase equation besides `ρ` and `θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientSet {
    pub potential: Potential,
    pub interaction: Interaction,
    pub congestion: Congestion,
    pub sigma: f64,
}

impl CoefficientSet {
    /// `U = W = f = 0` with the given viscosity.
    pub fn free(sigma: f64) -> CoefficientSet {
        CoefficientSet {
            potential: Potential::Zero,
            interaction: Interaction::Zero,
            congestion: Congestion::Zero,
            sigma,
        }
    }

    pub fn is_free(&self) -> bool {
        self.potential.is_zero() && self.interaction.is_zero() && self.congestion.is_zero()
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("sigma {} must be >= 0", self.sigma)));
        }
        self.potential.validate(grid)?;
        self.interaction.validate(grid)?;
        self.congestion.validate()
    }

    /// `U − W*ρ − f(ρ)` on the grid.
    pub fn forcing(&self, rho: &Density) -> Result<ScalarField> {
        let u = self.potential.values(rho.grid());
        let w = self.interaction.convolve(rho)?;
        let c = self.congestion;
        let vals = (0..rho.grid().len())
            .map(|k| u.values()[k] - w.values()[k] - c.f(rho.values()[k]))
            .collect();
        Ok(ScalarField::from_raw(rho.grid(), vals))
    }

    /// `∇(U − W*ρ − f(ρ))`, with `∇f(ρ) = f'(ρ)ρ∇log ρ` supplied by the caller.
    pub fn forcing_gradient(&self, rho: &Density, log_grad: &VectorField) -> Result<VectorField> {
        let grid = rho.grid();
        let n = grid.dim();
        let gu = self.potential.gradient(grid);
        let gw = self.interaction.convolve_gradient(rho)?;
        let mut comps = vec![vec![0.0; grid.len()]; n];
        for a in 0..n {
            for k in 0..grid.len() {
                let r = rho.values()[k];
                comps[a][k] = gu.component(a)[k] - gw.component(a)[k]
                    - self.congestion.df(r) * r * log_grad.component(a)[k];
            }
        }
        Ok(VectorField::from_raw(grid, comps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{integrate_against, Density, Grid};

    #[test]
    fn congestion_triples_satisfy_primitive_relation() {
        let fam = [
            Congestion::Log { eps: 0.3 },
            Congestion::Linear { eps: 0.1 },
            Congestion::Power { eps: 2.0, p: 1.5 },
        ];
        for c in fam {
            for &r in &[0.1, 0.7, 2.5] {
                let h = 1e-6;
                let d_big_f = (c.F(r + h) - c.F(r - h)) / (2.0 * h);
                assert!((c.F(r) + r * d_big_f - c.f(r)).abs() < 1e-8, "{c:?}");
                let df = (c.f(r + h) - c.f(r - h)) / (2.0 * h);
                assert!((df - c.df(r)).abs() < 1e-6, "{c:?}");
            }
        }
    }

    #[test]
    fn negative_interaction_is_rejected() {
        assert!(matches!(Interaction::quadratic(-0.5), Err(Error::NotConcave(_))));
        assert_eq!(Interaction::quadratic(0.0).unwrap().mean_neg_hessian(&Density::uniform(
            &Grid::new(&[1.0], &[8]).unwrap()
        )).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn quadratic_convolution_matches_circular_sum_on_centred_density() {
        // Direct summation of −b|x−y|² against a density well inside the box.
        let g = Grid::new(&[16.0], &[64]).unwrap();
        let rho = Density::from_fn(&g, |x| (-(x[0] - 0.3).powi(2) / 0.5).exp()).unwrap();
        let w = Interaction::quadratic(0.7).unwrap();
        let conv = w.convolve(&rho).unwrap();
        let h = g.cell_volume();
        for i in 0..g.len() {
            let xi = g.position(i)[0];
            let direct: f64 = (0..g.len())
                .map(|j| -0.7 * (xi - g.position(j)[0]).powi(2) * rho.values()[j] * h)
                .sum();
            assert!((conv.values()[i] - direct).abs() < 1e-8);
        }
    }

    #[test]
    fn quadratic_potential_hessian_mean() {
        let g = Grid::new(&[10.0, 10.0], &[16, 16]).unwrap();
        let a = SymMatrix::from_packed(2, &[2.0, 0.5, 1.0]);
        let u = Potential::Quadratic { center: vec![0.5, -0.5], a };
        let rho = Density::uniform(&g);
        assert_eq!(u.mean_hessian(&rho).unwrap(), a);
        let vals = u.values(&g);
        let mean = integrate_against(&vals, &rho).unwrap();
        assert!(mean.is_finite());
    }
}
