//! Matrix comparison machinery for paths `t ↦ M(t)` of small symmetric
//! matrices satisfying (or claimed to satisfy) `∂tM ⪰ M² + R`.
//!
//! Contents: a symmetric eigen-solver (closed form for `n ≤ 2`, cyclic Jacobi
//! for `n = 3`), the directional Riccati bound, the trace and log-trace
//! bounds, a residual check of the differential inequality, and the
//! concavity profile of `c_w(t) = exp(−∫₀ᵗ⟨w, M w⟩)`.
//!
//! Poles are not errors: a bound whose denominator vanishes is reported as
//! `+∞`, together with the offending eigenvalue or direction value.

use crate::checks::{CheckReport, Component, Witness};
use crate::functionals::cumulative_integral;
use crate::oracles::fd_derivative;
use crate::sym::SymMatrix;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Eigenvalues in descending order with matching unit eigenvectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
}

impl EigenDecomposition {
    /// `Σ λᵢ wᵢ⊗wᵢ`.
    pub fn reconstruct(&self) -> SymMatrix {
        let n = self.eigenvalues.len();
        let mut m = SymMatrix::zeros(n);
        for (l, w) in self.eigenvalues.iter().zip(&self.eigenvectors) {
            m += SymMatrix::outer(w).scale(*l);
        }
        m
    }
}

fn normalise_sign(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-14) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Symmetric eigen-decomposition for `n ≤ 3`.
pub fn sym_eig(m: &SymMatrix) -> EigenDecomposition {
    let n = m.dim();
    let mut pairs: Vec<(f64, Vec<f64>)> = match n {
        1 => vec![(m.get(0, 0), vec![1.0])],
        2 => {
            let (a, b, c) = (m.get(0, 0), m.get(0, 1), m.get(1, 1));
            let mean = 0.5 * (a + c);
            let r = (0.5 * (a - c)).hypot(b);
            let (l1, l2) = (mean + r, mean - r);
            let w1 = if b == 0.0 {
                if a >= c {
                    vec![1.0, 0.0]
                } else {
                    vec![0.0, 1.0]
                }
            } else if a >= c {
                vec![l1 - c, b]
            } else {
                vec![b, l1 - a]
            };
            let mut w1 = w1;
            normalise_sign(&mut w1);
            let mut w2 = vec![-w1[1], w1[0]];
            normalise_sign(&mut w2);
            vec![(l1, w1), (l2, w2)]
        }
        _ => jacobi3(m),
    };
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(std::cmp::Ordering::Equal));
    EigenDecomposition {
        eigenvalues: pairs.iter().map(|p| p.0).collect(),
        eigenvectors: pairs.into_iter().map(|p| p.1).collect(),
    }
}

fn jacobi3(m: &SymMatrix) -> Vec<(f64, Vec<f64>)> {
    let mut a = m.to_full();
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for _sweep in 0..64 {
        let off = (a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2)).sqrt();
        if off <= 1e-13 * scale {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q].abs() <= 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vkp = row[p];
                let vkq = row[q];
                row[p] = c * vkp - s * vkq;
                row[q] = s * vkp + c * vkq;
            }
        }
    }
    (0..3)
        .map(|i| {
            let mut w = vec![v[0][i], v[1][i], v[2][i]];
            normalise_sign(&mut w);
            (a[i][i], w)
        })
        .collect()
}

/// Smallest eigenvalue.
pub fn min_eig(m: &SymMatrix) -> f64 {
    *sym_eig(m).eigenvalues.last().unwrap()
}

/// Largest eigenvalue.
pub fn max_eig(m: &SymMatrix) -> f64 {
    sym_eig(m).eigenvalues[0]
}

/// Value of a comparison bound, or `+∞` at a pole.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bound {
    pub value: f64,
    /// The eigenvalue or directional value that reached the pole.
    pub pole: Option<f64>,
}

impl Bound {
    fn finite(value: f64) -> Bound {
        Bound { value, pole: None }
    }

    fn pole(at: f64) -> Bound {
        Bound {
            value: f64::INFINITY,
            pole: Some(at),
        }
    }
}

/// `⟨w, M₀w⟩ / (1 − t⟨w, M₀w⟩)`.
pub fn riccati_lower_bound(m0: &SymMatrix, w: &[f64], t: f64) -> Bound {
    let m = m0.quad(w);
    let d = 1.0 - t * m;
    if d <= 0.0 {
        Bound::pole(m)
    } else {
        Bound::finite(m / d)
    }
}

/// `Σ λᵢ / (1 − λᵢt)` over the eigenvalues of `M₀`.
pub fn trace_lower_bound(m0: &SymMatrix, t: f64) -> Bound {
    let mut s = 0.0;
    for l in sym_eig(m0).eigenvalues {
        let d = 1.0 - l * t;
        if d <= 0.0 {
            return Bound::pole(l);
        }
        s += l / d;
    }
    Bound::finite(s)
}

/// `−Σ log(1 − τλᵢ)` over the eigenvalues of `M₀`.
pub fn log_bound(m0: &SymMatrix, tau: f64) -> Bound {
    let mut s = 0.0;
    for l in sym_eig(m0).eigenvalues {
        let d = 1.0 - tau * l;
        if d <= 0.0 {
            return Bound::pole(l);
        }
        s -= d.ln();
    }
    Bound::finite(s)
}

/// A sampled matrix path with an optional remainder `R(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixOdePath {
    pub times: Vec<f64>,
    pub matrices: Vec<SymMatrix>,
    pub remainder: Option<Vec<SymMatrix>>,
}

impl MatrixOdePath {
    pub fn new(times: Vec<f64>, matrices: Vec<SymMatrix>, remainder: Option<Vec<SymMatrix>>) -> Result<Self> {
        if times.len() != matrices.len() || remainder.as_ref().is_some_and(|r| r.len() != times.len()) {
            return Err(Error::InvalidArgument("path columns differ in length".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("path times must increase".into()));
        }
        let n = matrices.first().map(|m| m.dim()).unwrap_or(1);
        if matrices.iter().any(|m| m.dim() != n) {
            return Err(Error::InvalidArgument("path matrices differ in dimension".into()));
        }
        Ok(MatrixOdePath {
            times,
            matrices,
            remainder,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].dim()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Horizon `τ = t_m − t_0`.
    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    /// Entrywise time derivative and its truncation-error estimate.
    pub fn derivative(&self) -> Result<(Vec<SymMatrix>, Vec<f64>)> {
        let n = self.dim();
        let len = crate::sym::packed_len(n);
        let m = self.len();
        let mut vals = vec![vec![0.0; len]; m];
        let mut errs = vec![0.0f64; m];
        for c in 0..len {
            let col: Vec<f64> = self.matrices.iter().map(|x| x.packed()[c]).collect();
            let d = fd_derivative(&self.times, &col)?;
            for k in 0..m {
                vals[k][c] = d.values[k];
                errs[k] = errs[k].max(d.errors[k]);
            }
        }
        Ok((vals.into_iter().map(|p| SymMatrix::from_packed(n, &p)).collect(), errs))
    }

    /// `t ↦ ⟨w, M(t) w⟩`.
    pub fn directional(&self, w: &[f64]) -> Vec<f64> {
        self.matrices.iter().map(|m| m.quad(w)).collect()
    }

    /// Time-reversed path `t ↦ −M(τ − t)` with the remainder reversed.
    pub fn reversed_negated(&self) -> MatrixOdePath {
        let t0 = self.times[0];
        let t1 = self.times[self.times.len() - 1];
        MatrixOdePath {
            times: self.times.iter().rev().map(|t| t0 + t1 - t).collect(),
            matrices: self.matrices.iter().rev().map(|m| -*m).collect(),
            remainder: self.remainder.as_ref().map(|r| r.iter().rev().copied().collect()),
        }
    }
}

/// Unit directions: eigenvectors of `m` followed by `count` seeded random
/// unit vectors. Labels describe each direction.
pub fn sample_directions(m: &SymMatrix, count: usize, seed: u64) -> Vec<(String, Vec<f64>)> {
    let n = m.dim();
    let mut out: Vec<(String, Vec<f64>)> = sym_eig(m)
        .eigenvectors
        .into_iter()
        .enumerate()
        .map(|(i, w)| (format!("eigenvector {i}"), w))
        .collect();
    out.extend(
        random_unit_vectors(n, count, seed)
            .into_iter()
            .enumerate()
            .map(|(i, w)| (format!("random {i}"), w)),
    );
    out
}

/// `count` seeded unit vectors in `ℝⁿ`.
pub fn random_unit_vectors(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            out.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    out
}

/// Seeded random orthonormal basis (Gram-Schmidt on random vectors).
pub fn random_orthonormal_basis(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// Checks `∂tM − M² − R ⪰ −tol` at every interior sample. Each sample's
/// tolerance is widened by the finite-difference error estimate there.
pub fn check_matrix_ode(path: &MatrixOdePath, tol: f64) -> Result<CheckReport> {
    if path.len() < 5 {
        return Err(Error::TooFewSamples {
            need: 5,
            got: path.len(),
        });
    }
    let n = path.dim();
    let (dm, errs) = path.derivative()?;
    let mut report = CheckReport::new("matrix_ode", tol);
    let mut worst: Option<(f64, f64, usize)> = None;
    let mut best_shift = 0.0f64;
    for k in 1..path.len() - 1 {
        let mut r = dm[k] - path.matrices[k].square();
        if let Some(rem) = &path.remainder {
            r = r - rem[k];
        }
        let e = sym_eig(&r);
        let lam = *e.eigenvalues.last().unwrap();
        let extra = n as f64 * errs[k];
        // compare margins after shifting by the local allowance
        let shifted = lam + extra;
        if worst.is_none_or(|(s, _, _)| shifted < s) {
            worst = Some((shifted, lam, k));
            best_shift = extra;
        }
    }
    if let Some((_, lam, k)) = worst {
        let (dm_k, m_k) = (dm[k], path.matrices[k]);
        let mut r = dm_k - m_k.square();
        if let Some(rem) = &path.remainder {
            r = r - rem[k];
        }
        let w = sym_eig(&r).eigenvectors.last().unwrap().clone();
        report.push(Component {
            name: "dM - M^2 - R min eigenvalue".into(),
            margin: lam,
            tolerance: tol + best_shift,
            witness: Some(Witness {
                time: path.times[k],
                direction: w,
                label: "lowest eigenvector of the residual".into(),
            }),
        });
        report.note(format!("finite-difference allowance at witness {best_shift:.3e}"));
    }
    Ok(report.finish())
}

/// Margins of the Riccati, trace and log-trace consequences of
/// `∂tM ⪰ M²` along the path. `integral` overrides `∫Tr M` (for instance
/// with an entropy difference).
pub fn check_comparison_bounds(
    path: &MatrixOdePath,
    directions: &[(String, Vec<f64>)],
    integral: Option<f64>,
    tol: f64,
) -> Result<CheckReport> {
    let mut report = CheckReport::new("comparison_bounds", tol);
    let m0 = path.matrices[0];
    let t0 = path.times[0];
    // directional Riccati bound
    for (label, w) in directions {
        let mut worst = (f64::INFINITY, 0usize);
        for (k, (t, m)) in path.times.iter().zip(&path.matrices).enumerate() {
            let b = riccati_lower_bound(&m0, w, t - t0);
            let margin = m.quad(w) - b.value;
            if margin < worst.0 {
                worst = (margin, k);
            }
        }
        report.push(Component {
            name: format!("riccati bound ({label})"),
            margin: worst.0,
            tolerance: tol,
            witness: Some(Witness {
                time: path.times[worst.1],
                direction: w.clone(),
                label: label.clone(),
            }),
        });
    }
    // trace bound
    let mut worst = (f64::INFINITY, 0usize);
    for (k, (t, m)) in path.times.iter().zip(&path.matrices).enumerate() {
        let margin = m.trace() - trace_lower_bound(&m0, t - t0).value;
        if margin < worst.0 {
            worst = (margin, k);
        }
    }
    report.push(Component {
        name: "trace bound".into(),
        margin: worst.0,
        tolerance: tol,
        witness: Some(Witness {
            time: path.times[worst.1],
            direction: vec![],
            label: "trace".into(),
        }),
    });
    // log-trace bound
    let tr: Vec<f64> = path.matrices.iter().map(|m| m.trace()).collect();
    let total = match integral {
        Some(v) => v,
        None => *cumulative_integral(&path.times, &tr)?.last().unwrap(),
    };
    let lb = log_bound(&m0, path.horizon());
    if let Some(p) = lb.pole {
        report.note(format!("log-trace bound has a pole at eigenvalue {p}"));
    }
    report.push(Component {
        name: "log-trace bound".into(),
        margin: total - lb.value,
        tolerance: tol,
        witness: Some(Witness {
            time: path.times[path.len() - 1],
            direction: vec![],
            label: "integrated trace".into(),
        }),
    });
    Ok(report.finish())
}

/// Concavity of `c_w(t) = exp(−∫₀ᵗ⟨w, M w⟩)` and the consequence
/// `−1/t ≤ ⟨w, M(t) w⟩ ≤ 1/(τ−t)` at interior samples. `integral`, when
/// given, supplies `∫₀ᵗ M` directly (e.g. the matrix entropy).
pub fn concavity_profile(
    path: &MatrixOdePath,
    w: &[f64],
    integral: Option<&[SymMatrix]>,
    tol: f64,
) -> Result<CheckReport> {
    if path.len() < 5 {
        return Err(Error::TooFewSamples {
            need: 5,
            got: path.len(),
        });
    }
    let m = path.directional(w);
    let cum = match integral {
        Some(e) => e.iter().map(|x| x.quad(w)).collect(),
        None => cumulative_integral(&path.times, &m)?,
    };
    let c: Vec<f64> = cum.iter().map(|v| (-v).exp()).collect();
    let cmax = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let (dm, _) = path.derivative()?;
    let dmax = dm.iter().map(|d| d.quad(w).abs()).fold(0.0f64, f64::max);
    let mut report = CheckReport::new("concavity_profile", tol);
    let mut worst = (f64::INFINITY, 0usize);
    let mut max_dt = 0.0f64;
    for k in 1..path.len() - 1 {
        let h1 = path.times[k] - path.times[k - 1];
        let h2 = path.times[k + 1] - path.times[k];
        max_dt = max_dt.max(h1).max(h2);
        // divided second difference on possibly non-uniform samples
        let d2 = 2.0 * ((c[k + 1] - c[k]) / h2 - (c[k] - c[k - 1]) / h1) / (h1 + h2);
        if -d2 < worst.0 {
            worst = (-d2, k);
        }
    }
    let scale_tol = tol * cmax.max(1.0) + cmax * max_dt * max_dt * dmax;
    report.push(Component {
        name: "concavity of c_w".into(),
        margin: worst.0,
        tolerance: scale_tol,
        witness: Some(Witness {
            time: path.times[worst.1],
            direction: w.to_vec(),
            label: "second difference".into(),
        }),
    });
    let t0 = path.times[0];
    let tau = path.horizon();
    let mut lo = (f64::INFINITY, 0usize);
    let mut hi = (f64::INFINITY, 0usize);
    for k in 1..path.len() - 1 {
        let t = path.times[k] - t0;
        let l = m[k] + 1.0 / t;
        let u = 1.0 / (tau - t) - m[k];
        if l < lo.0 {
            lo = (l, k);
        }
        if u < hi.0 {
            hi = (u, k);
        }
    }
    for (name, (margin, k)) in [("lower bound -1/t", lo), ("upper bound 1/(tau-t)", hi)] {
        report.push(Component {
            name: name.into(),
            margin,
            tolerance: tol,
            witness: Some(Witness {
                time: path.times[k],
                direction: w.to_vec(),
                label: "directional value".into(),
            }),
        });
    }
    Ok(report.finish())
}

/// RK4 solution of `∂tM = M² + P(t)` sampled at `times` (with `substeps`
/// internal steps between samples).
pub fn integrate_riccati(
    m0: &SymMatrix,
    p: impl Fn(f64) -> SymMatrix,
    times: &[f64],
    substeps: usize,
) -> Vec<SymMatrix> {
    let f = |t: f64, m: &SymMatrix| m.square() + p(t);
    let mut out = vec![*m0];
    let mut m = *m0;
    for w in times.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        let mut t = w[0];
        for _ in 0..substeps {
            let k1 = f(t, &m);
            let k2 = f(t + 0.5 * h, &(m + k1.scale(0.5 * h)));
            let k3 = f(t + 0.5 * h, &(m + k2.scale(0.5 * h)));
            let k4 = f(t + h, &(m + k3.scale(h)));
            m += (k1 + k2.scale(2.0) + k3.scale(2.0) + k4).scale(h / 6.0);
            t += h;
        }
        out.push(m);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linspace(a: f64, b: f64, m: usize) -> Vec<f64> {
        (0..m).map(|k| a + (b - a) * k as f64 / (m - 1) as f64).collect()
    }

    #[test]
    fn eig_examples() {
        let e = sym_eig(&SymMatrix::identity(3));
        assert_eq!(e.eigenvalues, vec![1.0, 1.0, 1.0]);
        let e = sym_eig(&SymMatrix::diag(&[3.0, 1.0]));
        assert_eq!(e.eigenvalues, vec![3.0, 1.0]);
        assert_eq!(e.eigenvectors[0], vec![1.0, 0.0]);
        let e = sym_eig(&SymMatrix::from_packed(2, &[2.0, 1.0, 2.0]));
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-15 && (e.eigenvalues[1] - 1.0).abs() < 1e-15);
        let r = 0.5f64.sqrt();
        assert!((e.eigenvectors[0][0] - r).abs() < 1e-15 && (e.eigenvectors[0][1] - r).abs() < 1e-15);
    }

    #[test]
    fn jacobi_reconstructs() {
        let m = SymMatrix::from_packed(3, &[4.0, -2.0, 0.5, 1.0, 3.0, -1.5]);
        let e = sym_eig(&m);
        assert!((e.reconstruct() - m).max_abs() < 1e-12);
        assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn bound_examples() {
        let w = [1.0, 0.0];
        assert_eq!(riccati_lower_bound(&SymMatrix::zeros(2), &w, 3.0).value, 0.0);
        assert_eq!(riccati_lower_bound(&SymMatrix::diag(&[-1.0, 0.0]), &w, 1.0).value, -0.5);
        assert!(riccati_lower_bound(&SymMatrix::diag(&[2.0, 0.0]), &w, 1.0).pole.is_some());
        let m0 = SymMatrix::diag(&[-1.0, -1.0]);
        assert_eq!(trace_lower_bound(&m0, 1.0).value, -1.0);
        assert!((log_bound(&m0, 1.0).value + 2.0 * 2.0f64.ln()).abs() < 1e-15);
        assert_eq!(log_bound(&SymMatrix::zeros(2), 1.0).value, 0.0);
    }

    #[test]
    fn riccati_equality_by_rk4() {
        let m0 = SymMatrix::diag(&[-1.0, 0.5]);
        let path = integrate_riccati(&m0, |_| SymMatrix::zeros(2), &[0.0, 1.0], 2000);
        let b = riccati_lower_bound(&m0, &[1.0, 0.0], 1.0).value;
        assert!((path[1].get(0, 0) - b).abs() < 1e-10);
        assert!((b + 0.5).abs() < 1e-15);
    }

    #[test]
    fn matrix_ode_examples() {
        let times = linspace(0.0, 1.0, 41);
        let zero = MatrixOdePath::new(times.clone(), vec![SymMatrix::zeros(1); 41], None).unwrap();
        let r = check_matrix_ode(&zero, 1e-8).unwrap();
        assert!(r.pass && r.worst_margin == 0.0);
        let exact: Vec<SymMatrix> = times.iter().map(|t| SymMatrix::diag(&[-1.0 / (1.0 + t)])).collect();
        let r = check_matrix_ode(&MatrixOdePath::new(times.clone(), exact, None).unwrap(), 1e-6).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.worst_margin.abs() < 1e-5);
        let bad: Vec<SymMatrix> = times.iter().map(|t| SymMatrix::diag(&[-t])).collect();
        let r = check_matrix_ode(&MatrixOdePath::new(times.clone(), bad.clone(), None).unwrap(), 1e-6).unwrap();
        assert!(!r.pass);
        assert!(r.witness.as_ref().unwrap().time > 0.9);
        let r = concavity_profile(&MatrixOdePath::new(times, bad, None).unwrap(), &[1.0], None, 1e-6).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn commuting_closed_form_is_equality() {
        let times = linspace(0.0, 1.0, 201);
        let m0 = SymMatrix::diag(&[0.5, -2.0]);
        let path: Vec<SymMatrix> = times
            .iter()
            .map(|t| SymMatrix::diag(&[0.5 / (1.0 - 0.5 * t), -2.0 / (1.0 + 2.0 * t)]))
            .collect();
        for (t, m) in times.iter().zip(&path) {
            let tb = trace_lower_bound(&m0, *t).value;
            assert!((m.trace() - tb).abs() < 1e-12);
        }
        let p = MatrixOdePath::new(times, path, None).unwrap();
        let e = sym_eig(&m0);
        let dirs: Vec<(String, Vec<f64>)> = e.eigenvectors.iter().map(|w| ("e".to_string(), w.clone())).collect();
        let r = check_comparison_bounds(&p, &dirs, None, 1e-8).unwrap();
        assert!(r.pass, "{r:?}");
        for c in &r.components {
            assert!(c.margin.abs() < 1e-8, "{}: {}", c.name, c.margin);
        }
        let r = concavity_profile(&p, &[1.0, 0.0], None, 1e-8).unwrap();
        assert!(r.pass, "{r:?}");
    }
}
