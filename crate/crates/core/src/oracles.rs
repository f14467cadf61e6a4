//! Independent reference values: closed-form Gaussian flows, refinement
//! reruns, and finite differences in time on possibly non-uniform samples.

use crate::flows::FlowScenario;
use crate::functionals::{assemble_series, FunctionalSeries};
use crate::sym::SymMatrix;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Fornberg weights for the `deriv`-th derivative at `x0` from nodes `xs`.
pub fn fd_weights(x0: f64, xs: &[f64], deriv: usize) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![vec![0.0; deriv + 1]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(deriv);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[deriv]).collect()
}

/// First derivative estimates with per-sample error estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct FdDerivative {
    pub values: Vec<f64>,
    /// Difference to the next-higher-order stencil plus a round-off term.
    pub errors: Vec<f64>,
}

fn stencil_derivative(times: &[f64], values: &[f64], k: usize, width: usize) -> (f64, f64) {
    let m = times.len();
    let start = k.saturating_sub(width / 2).min(m - width);
    let xs = &times[start..start + width];
    let w = fd_weights(times[k], xs, 1);
    let mut d = 0.0;
    let mut spread = 0.0f64;
    let mut wsum = 0.0;
    for (j, wj) in w.iter().enumerate() {
        let df = values[start + j] - values[k];
        d += wj * df;
        spread = spread.max(df.abs());
        wsum += wj.abs();
    }
    (d, 8.0 * f64::EPSILON * wsum * spread)
}

/// Five-point finite-difference derivative (centred where possible). The
/// error estimate compares with the seven-point stencil (three-point when
/// fewer than seven samples exist).
pub fn fd_derivative(times: &[f64], values: &[f64]) -> Result<FdDerivative> {
    let m = times.len();
    if values.len() != m {
        return Err(Error::InvalidArgument("times and values differ in length".into()));
    }
    if m < 5 {
        return Err(Error::TooFewSamples { need: 5, got: m });
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("times must be strictly increasing".into()));
    }
    let mut out = Vec::with_capacity(m);
    let mut errs = Vec::with_capacity(m);
    for k in 0..m {
        let (d5, r5) = stencil_derivative(times, values, k, 5);
        let (dref, _) = stencil_derivative(times, values, k, if m >= 7 { 7 } else { 3 });
        out.push(d5);
        errs.push((d5 - dref).abs() + r5);
    }
    Ok(FdDerivative { values: out, errors: errs })
}

/// Gaussian heat flow with `θ = −(σ/2) log ρ`, in closed form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianHeat {
    pub cov: SymMatrix,
    /// `∫ρ log ρ`.
    pub entropy: f64,
    pub fisher: SymMatrix,
    pub s_mat: SymMatrix,
    pub v_mat: SymMatrix,
    pub t_plus: SymMatrix,
    pub t_minus: SymMatrix,
}

/// Heat flow from `N(m, V₀)` at time `t`: covariance `V₀ + σt`, Fisher
/// `V⁻¹`, `𝓢 = −(σ/2)V⁻¹`, `𝓥 = (σ²/4)V⁻¹`.
pub fn gaussian_heat_oracle(cov0: &SymMatrix, sigma: f64, t: f64) -> Result<GaussianHeat> {
    let n = cov0.dim();
    let cov = *cov0 + SymMatrix::scalar(n, sigma * t);
    let fisher = cov
        .inverse()
        .filter(|_| cov.det() > 0.0)
        .ok_or_else(|| Error::InvalidArgument("covariance must be positive definite".into()))?;
    let entropy = -0.5 * ((2.0 * std::f64::consts::PI * std::f64::consts::E).powi(n as i32) * cov.det()).ln();
    let s_mat = fisher.scale(-0.5 * sigma);
    Ok(GaussianHeat {
        cov,
        entropy,
        fisher,
        s_mat,
        v_mat: fisher.scale(0.25 * sigma * sigma),
        t_plus: SymMatrix::zeros(n),
        t_minus: fisher.scale(-sigma),
    })
}

/// Inviscid free dilation `θ = (q(t)/2)|x|²` with `q(t) = (b/a)/(1 + (b/a)t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dilation {
    /// Standard deviation of each coordinate.
    pub std: f64,
    /// Curvature `q` of the phase.
    pub q: f64,
    /// `𝓢 = −b/(a + bt)` (times the identity).
    pub s: f64,
    /// `∂t𝓢 = 𝓢²`.
    pub ds: f64,
}

/// Closed form of the dilation started from an isotropic Gaussian with
/// standard deviation `std0`.
pub fn dilation_oracle(a: f64, b: f64, std0: f64, t: f64) -> Dilation {
    let s = -b / (a + b * t);
    Dilation {
        std: std0 * (1.0 + b * t / a),
        q: -s,
        s,
        ds: s * s,
    }
}

/// Symmetric Gaussian bridge `N(0, v) → N(0, v)` in one dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetricGaussianBridge {
    pub v: f64,
    pub sigma: f64,
    pub tau: f64,
    /// Precision of the Sinkhorn potentials `a = b ∝ exp(−αx²/2)`.
    pub alpha: f64,
}

impl SymmetricGaussianBridge {
    pub fn new(v: f64, sigma: f64, tau: f64) -> SymmetricGaussianBridge {
        // 1/v = α + α/(1 + αστ)  ⇔  cα² + (2 − c/v)α − 1/v = 0 with c = στ
        let c = sigma * tau;
        let bq = 2.0 - c / v;
        let alpha = (-bq + (bq * bq + 4.0 * c / v).sqrt()) / (2.0 * c);
        SymmetricGaussianBridge { v, sigma, tau, alpha }
    }

    /// Variance of `ρ_t`.
    pub fn variance(&self, t: f64) -> f64 {
        let wa = 1.0 / self.alpha + self.sigma * t;
        let wb = 1.0 / self.alpha + self.sigma * (self.tau - t);
        1.0 / (1.0 / wa + 1.0 / wb)
    }

    /// `∂t θ`'s curvature: `θ_t = (σ/2)(log P_{τ−t}b − log P_t a)` has
    /// Hessian `(σ/2)(1/w_a − 1/w_b)`.
    pub fn phase_curvature(&self, t: f64) -> f64 {
        let wa = 1.0 / self.alpha + self.sigma * t;
        let wb = 1.0 / self.alpha + self.sigma * (self.tau - t);
        0.5 * self.sigma * (1.0 / wa - 1.0 / wb)
    }
}

/// Rebuilds `scenario` at `factor×` resolution (space and time, tolerances
/// tightened) and assembles its series.
pub fn fine_grid_resolve(scenario: &FlowScenario, factor: usize) -> Result<FunctionalSeries> {
    if factor == 0 {
        return Err(Error::InvalidArgument("refinement factor must be >= 1".into()));
    }
    assemble_series(&scenario.refined(factor).build()?)
}

/// Largest relative change of `E`, `𝓢`, `𝓘`, `𝓥` between a series and its
/// `factor×` refinement at the shared sample times.
pub fn refinement_change(base: &FunctionalSeries, fine: &FunctionalSeries, factor: usize) -> Result<f64> {
    if (base.len() - 1) * factor + 1 != fine.len() {
        return Err(Error::InvalidArgument("series are not nested refinements".into()));
    }
    let mut worst = 0.0f64;
    for (k, r) in base.records.iter().enumerate() {
        let f = &fine.records[k * factor];
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(1.0);
        worst = worst.max(rel(r.entropy, f.entropy));
        for (x, y) in [(r.s_mat, f.s_mat), (r.i_mat, f.i_mat), (r.v_mat, f.v_mat)] {
            worst = worst.max((x - y).max_abs() / x.max_abs().max(1.0));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fornberg_central_weights() {
        let w = fd_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 1);
        let expect = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn derivative_of_constant_is_exactly_zero() {
        let t: Vec<f64> = (0..9).map(|k| k as f64 * 0.1).collect();
        let d = fd_derivative(&t, &[3.5; 9]).unwrap();
        assert!(d.values.iter().all(|v| *v == 0.0));
        assert!(d.errors.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn derivative_exact_on_quartics_nonuniform() {
        let t: Vec<f64> = (0..11).map(|k| (k as f64 * 0.13).powf(1.2)).collect();
        let f: Vec<f64> = t.iter().map(|x| x.powi(4) - 2.0 * x * x + x).collect();
        let d = fd_derivative(&t, &f).unwrap();
        for (x, v) in t.iter().zip(&d.values) {
            let exact = 4.0 * x.powi(3) - 4.0 * x + 1.0;
            assert!((v - exact).abs() < 1e-10, "{v} vs {exact}");
        }
    }

    #[test]
    fn error_estimate_tracks_true_error() {
        let t: Vec<f64> = (0..21).map(|k| k as f64 * 0.1).collect();
        let f: Vec<f64> = t.iter().map(|x| (2.0 * x).sin()).collect();
        let d = fd_derivative(&t, &f).unwrap();
        for k in 0..t.len() {
            let err = (d.values[k] - 2.0 * (2.0 * t[k]).cos()).abs();
            assert!(err <= 2.0 * d.errors[k] + 1e-14, "{k}: {err} vs {}", d.errors[k]);
        }
    }

    #[test]
    fn gaussian_heat_relations() {
        let v0 = SymMatrix::diag(&[0.5, 2.0]);
        let g = gaussian_heat_oracle(&v0, 1.0, 0.5).unwrap();
        let (tp, tm) = crate::functionals::t_matrices(&g.s_mat, &g.fisher, 1.0);
        assert!(tp.max_abs() < 1e-15);
        assert!((tm - g.t_minus).max_abs() < 1e-15);
        assert!((g.cov.get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dilation_solves_riccati_equality() {
        let d0 = dilation_oracle(1.0, 0.25, 1.0, 0.3);
        let h = 1e-5;
        let dp = dilation_oracle(1.0, 0.25, 1.0, 0.3 + h);
        let dm = dilation_oracle(1.0, 0.25, 1.0, 0.3 - h);
        assert!(((dp.s - dm.s) / (2.0 * h) - d0.ds).abs() < 1e-9);
    }

    #[test]
    fn symmetric_bridge_hits_marginals() {
        let b = SymmetricGaussianBridge::new(0.7, 1.0, 2.0);
        assert!((b.variance(0.0) - 0.7).abs() < 1e-14);
        assert!((b.variance(2.0) - 0.7).abs() < 1e-14);
        assert!(b.variance(1.0) > 0.7);
    }
}
