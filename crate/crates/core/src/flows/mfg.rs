//! Second-order mean-field games by damped Picard iteration.
//!
//! With `u = θ + (σ/2) log ρ` the system becomes a backward HJB equation
//! `∂tu + (σ/2)Δu + ½|∇u|² + U = f(ρ) + W*ρ` with terminal data `u_τ` and a
//! forward Fokker–Planck equation `∂tρ = (σ/2)Δρ − ∇·(ρ∇u)`. Each sweep solves
//! the HJB equation for the current density path and then the FP equation
//! for the resulting drift; the density path is relaxed with factor `λ`.
//!
//! `u` is carried as `½xᵀQx + ⟨p, x⟩ + u_per` and `log ρ` as
//! `−½xᵀPx + ⟨r, x⟩ + ℓ_per` (as in the `σ = 0` integrator), so the FP sweep
//! solves
//! `∂t log ρ = (σ/2)(Δ log ρ + |∇log ρ|²) − Δu − ∇u·∇log ρ`
//! and never produces negative densities. Both sweeps use integrating-factor
//! RK4 on a fine time grid; values at half steps come from four-point cubic
//! interpolation in time.

use super::transport::{lift_log_density, LiftedPhase, VACUUM_FLOOR};
use super::{Boundary, Diagnostics, FlowFamily, FlowTrajectory};
use crate::coeffs::{CoefficientSet, Interaction};
use crate::functionals::{Phase, Snapshot};
use crate::grid::{
    circular_convolve, gradient, hessian, laplacian, sum, weighted_sum, Density, Grid, ScalarField, SymField,
    VectorField,
};
use crate::sym::{packed_pairs, SymMatrix};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MfgOptions {
    /// Relaxation factor `λ` of the density update.
    pub damping: f64,
    /// Stop when the sup-norm change of the density path is below this.
    pub fp_tol: f64,
    pub max_rounds: usize,
    /// Fine steps per sample interval.
    pub substeps: usize,
}

impl Default for MfgOptions {
    fn default() -> Self {
        MfgOptions {
            damping: 0.5,
            fp_tol: 1e-10,
            max_rounds: 400,
            substeps: 8,
        }
    }
}

/// Lagrange weights for the midpoint of `[t_j, t_{j+1}]` on a uniform path
/// with nodes `0..=last`.
fn mid_weights(j: usize, last: usize) -> [(usize, f64); 4] {
    if last < 3 {
        return [(j, 0.5), (j + 1, 0.5), (j, 0.0), (j + 1, 0.0)];
    }
    if j == 0 {
        [(0, 5.0 / 16.0), (1, 15.0 / 16.0), (2, -5.0 / 16.0), (3, 1.0 / 16.0)]
    } else if j + 1 == last {
        [
            (last, 5.0 / 16.0),
            (last - 1, 15.0 / 16.0),
            (last - 2, -5.0 / 16.0),
            (last - 3, 1.0 / 16.0),
        ]
    } else {
        [(j - 1, -1.0 / 16.0), (j, 9.0 / 16.0), (j + 1, 9.0 / 16.0), (j + 2, -1.0 / 16.0)]
    }
}

fn interp(path: &[Vec<f64>], w: &[(usize, f64); 4]) -> Vec<f64> {
    let mut out = vec![0.0; path[0].len()];
    for &(i, c) in w {
        if c != 0.0 {
            out.iter_mut().zip(&path[i]).for_each(|(o, v)| *o += c * v);
        }
    }
    out
}

fn interp_sym(path: &[SymMatrix], w: &[(usize, f64); 4]) -> SymMatrix {
    let mut out = SymMatrix::zeros(path[0].dim());
    for &(i, c) in w {
        out += path[i].scale(c);
    }
    out
}

fn axpy(a: &[f64], h: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + h * y).collect()
}

struct Ctx<'a> {
    grid: &'a Grid,
    coeffs: &'a CoefficientSet,
    coords: Vec<Vec<f64>>,
    a_mat: SymMatrix,
    a_c: Vec<f64>,
    b: f64,
    u_per: Option<Vec<f64>>,
    h: f64,
    last: usize,
}

/// `log ρ = −½xᵀPx + ⟨r, x⟩ + ℓ_per` at one fine node.
#[derive(Clone, Debug)]
struct LogState {
    p_mat: SymMatrix,
    r: Vec<f64>,
    ell: Vec<f64>,
}

impl LogState {
    fn axpy(&self, h: f64, d: &LogState) -> LogState {
        LogState {
            p_mat: self.p_mat + d.p_mat.scale(h),
            r: axpy(&self.r, h, &d.r),
            ell: axpy(&self.ell, h, &d.ell),
        }
    }
}

/// Drift `Qx + p + ∇u_per` and `Δu` at one time.
struct Drift {
    q: SymMatrix,
    p: Vec<f64>,
    grad_per: Vec<Vec<f64>>,
    lap_per: Vec<f64>,
}

/// HJB solution on the fine nodes.
struct Value {
    q: Vec<SymMatrix>,
    p: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
}

impl Ctx<'_> {
    fn heat(&self, v: &[f64], dt: f64) -> Vec<f64> {
        let c = 0.5 * self.coeffs.sigma * dt;
        self.grid.apply_radial_multiplier(v, |k2| (-c * k2).exp())
    }

    fn first_moment(&self, rho: &[f64]) -> Vec<f64> {
        let vol = self.grid.cell_volume();
        let mass = sum(rho) * vol;
        self.coords.iter().map(|x| weighted_sum(x, rho) * vol / mass).collect()
    }

    /// `Qx + p` per axis.
    fn affine(&self, q: &SymMatrix, p: &[f64]) -> Vec<Vec<f64>> {
        let n = self.grid.dim();
        (0..n)
            .map(|a| {
                (0..self.grid.len())
                    .map(|k| p[a] + (0..n).map(|c| q.get(a, c) * self.coords[c][k]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    /// Right-hand side of `∂s u_per` without the diffusion.
    fn hjb_nonlinear(&self, u: &[f64], q: &SymMatrix, p: &[f64], rho: &[f64]) -> Vec<f64> {
        let g = self.grid;
        let n = g.dim();
        let gu = gradient(&ScalarField::from_raw(g, u.to_vec()));
        let aff = self.affine(q, p);
        let wper = match &self.coeffs.interaction {
            Interaction::Gridded { kernel } => Some(
                circular_convolve(kernel, &ScalarField::from_raw(g, rho.to_vec()))
                    .expect("kernel shares the grid")
                    .into_values(),
            ),
            _ => None,
        };
        let f = self.coeffs.congestion;
        let raw: Vec<f64> = (0..g.len())
            .map(|k| {
                let mut v = 0.0;
                for a in 0..n {
                    let d = gu.component(a)[k];
                    v += aff[a][k] * d + 0.5 * d * d;
                }
                if let Some(up) = &self.u_per {
                    v += up[k];
                }
                if let Some(w) = &wper {
                    v -= w[k];
                }
                v - f.f(rho[k].max(f64::MIN_POSITIVE))
            })
            .collect();
        g.dealias(&raw)
    }

    fn log_rho(&self, s: &LogState) -> Vec<f64> {
        let n = self.grid.dim();
        (0..self.grid.len())
            .map(|k| {
                let mut v = s.ell[k];
                for a in 0..n {
                    v += s.r[a] * self.coords[a][k];
                    for b in 0..n {
                        v -= 0.5 * s.p_mat.get(a, b) * self.coords[a][k] * self.coords[b][k];
                    }
                }
                v
            })
            .collect()
    }

    /// Log-form FP right-hand side without the `(σ/2)Δℓ_per` term.
    fn fp_nonlinear(&self, s: &LogState, d: &Drift) -> LogState {
        let g = self.grid;
        let n = g.dim();
        let sigma = self.coeffs.sigma;
        let ge = gradient(&ScalarField::from_raw(g, s.ell.clone()));
        let px = self.affine(&s.p_mat, &vec![0.0; n]);
        let qxp = self.affine(&d.q, &d.p);
        let pr = s.p_mat.apply(&s.r);
        let shift = -0.5 * sigma * s.p_mat.trace() - d.q.trace() - (0..n).map(|a| d.p[a] * s.r[a]).sum::<f64>();
        let raw: Vec<f64> = (0..g.len())
            .map(|k| {
                let mut v = shift - d.lap_per[k];
                for a in 0..n {
                    let ge_a = ge.component(a)[k];
                    let rg = s.r[a] + ge_a;
                    v += 0.5 * sigma * (rg * rg - 2.0 * px[a][k] * ge_a);
                    v -= qxp[a][k] * ge_a;
                    v -= d.grad_per[a][k] * (rg - px[a][k]);
                }
                v
            })
            .collect();
        let qr = d.q.apply(&s.r);
        let pp = s.p_mat.apply(&d.p);
        LogState {
            p_mat: (s.p_mat.square().scale(sigma) + d.q.mul_sym(&s.p_mat).scale(2.0)).scale(-1.0),
            r: (0..n).map(|a| -sigma * pr[a] - qr[a] + pp[a]).collect(),
            ell: g.dealias(&raw),
        }
    }

    fn heat_state(&self, s: &LogState, dt: f64) -> LogState {
        LogState {
            ell: self.heat(&s.ell, dt),
            ..s.clone()
        }
    }

    /// Backward sweep for the density path `rho` on the fine nodes.
    fn hjb(&self, rho: &[Vec<f64>], terminal: &LiftedPhase) -> Result<Value> {
        let n = self.grid.dim();
        let last = self.last;
        let h = self.h;
        let m1: Vec<Vec<f64>> = rho.iter().map(|r| self.first_moment(r)).collect();
        // Q and p: RK4 in s = τ − t
        let mut q = vec![SymMatrix::zeros(n); last + 1];
        let mut p = vec![vec![0.0; n]; last + 1];
        q[last] = terminal.q;
        p[last] = terminal.p.clone();
        let dq = |q: &SymMatrix| q.square() + self.a_mat + SymMatrix::scalar(n, 2.0 * self.b);
        let dp = |q: &SymMatrix, p: &[f64], m: &[f64]| -> Vec<f64> {
            let qp = q.apply(p);
            (0..n).map(|a| qp[a] - self.a_c[a] - 2.0 * self.b * m[a]).collect()
        };
        for j in (0..last).rev() {
            let mid = interp(&m1, &mid_weights(j, last));
            let (q0, p0) = (q[j + 1], p[j + 1].clone());
            let k1q = dq(&q0);
            let k1p = dp(&q0, &p0, &m1[j + 1]);
            let q1 = q0 + k1q.scale(0.5 * h);
            let p1 = axpy(&p0, 0.5 * h, &k1p);
            let k2q = dq(&q1);
            let k2p = dp(&q1, &p1, &mid);
            let q2 = q0 + k2q.scale(0.5 * h);
            let p2 = axpy(&p0, 0.5 * h, &k2p);
            let k3q = dq(&q2);
            let k3p = dp(&q2, &p2, &mid);
            let q3 = q0 + k3q.scale(h);
            let p3 = axpy(&p0, h, &k3p);
            let k4q = dq(&q3);
            let k4p = dp(&q3, &p3, &m1[j]);
            q[j] = q0 + (k1q + k2q.scale(2.0) + k3q.scale(2.0) + k4q).scale(h / 6.0);
            p[j] = (0..n)
                .map(|a| p0[a] + h / 6.0 * (k1p[a] + 2.0 * k2p[a] + 2.0 * k3p[a] + k4p[a]))
                .collect();
            if !q[j].is_finite() || p[j].iter().any(|v| !v.is_finite()) {
                return Err(Error::HjbOverflow { time: j as f64 * h });
            }
        }
        // periodic part: Lawson RK4 in s
        let mut u = vec![Vec::new(); last + 1];
        u[last] = terminal.periodic.values().to_vec();
        for j in (0..last).rev() {
            let w = mid_weights(j, last);
            let (rm, qm, pm) = (interp(rho, &w), interp_sym(&q, &w), interp(&p, &w));
            let v = &u[j + 1];
            let k1 = self.hjb_nonlinear(v, &q[j + 1], &p[j + 1], &rho[j + 1]);
            let e_v = self.heat(v, 0.5 * h);
            let k2 = self.hjb_nonlinear(&self.heat(&axpy(v, 0.5 * h, &k1), 0.5 * h), &qm, &pm, &rm);
            let k3 = self.hjb_nonlinear(&axpy(&e_v, 0.5 * h, &k2), &qm, &pm, &rm);
            let k4 = self.hjb_nonlinear(
                &axpy(&self.heat(v, h), h, &self.heat(&k3, 0.5 * h)),
                &q[j],
                &p[j],
                &rho[j],
            );
            let e1 = self.heat(&axpy(v, h / 6.0, &k1), h);
            let e2 = self.heat(&k2.iter().zip(&k3).map(|(a, b)| a + b).collect::<Vec<_>>(), 0.5 * h);
            let next: Vec<f64> = (0..v.len()).map(|k| e1[k] + h / 3.0 * e2[k] + h / 6.0 * k4[k]).collect();
            if next.iter().any(|x| !x.is_finite()) {
                return Err(Error::HjbOverflow { time: j as f64 * h });
            }
            u[j] = next;
        }
        Ok(Value { q, p, u })
    }

    fn drift_at(&self, val: &Value, w: &[(usize, f64); 4]) -> Drift {
        let u = interp(&val.u, w);
        self.drift(interp_sym(&val.q, w), interp(&val.p, w), u)
    }

    fn drift(&self, q: SymMatrix, p: Vec<f64>, u: Vec<f64>) -> Drift {
        let f = ScalarField::from_raw(self.grid, u);
        let lap = laplacian(&f).into_values();
        Drift {
            lap_per: lap,
            grad_per: gradient(&f).components().to_vec(),
            q,
            p,
        }
    }

    /// Forward FP sweep for the drift given by `val`.
    fn fp(&self, start: &LogState, val: &Value) -> Result<Vec<LogState>> {
        let last = self.last;
        let h = self.h;
        let nodes: Vec<Drift> = (0..=last)
            .map(|j| self.drift(val.q[j], val.p[j].clone(), val.u[j].clone()))
            .collect();
        let mut out = Vec::with_capacity(last + 1);
        out.push(start.clone());
        for j in 0..last {
            let mid = self.drift_at(val, &mid_weights(j, last));
            let v = &out[j];
            let k1 = self.fp_nonlinear(v, &nodes[j]);
            let e_v = self.heat_state(v, 0.5 * h);
            let k2 = self.fp_nonlinear(&self.heat_state(&v.axpy(0.5 * h, &k1), 0.5 * h), &mid);
            let k3 = self.fp_nonlinear(&e_v.axpy(0.5 * h, &k2), &mid);
            let k4 = self.fp_nonlinear(
                &self.heat_state(v, h).axpy(h, &self.heat_state(&k3, 0.5 * h)),
                &nodes[j + 1],
            );
            let e1 = self.heat_state(&v.axpy(h / 6.0, &k1), h);
            let e2 = self.heat_state(&k2.axpy(1.0, &k3), 0.5 * h);
            let next = e1.axpy(h / 3.0, &e2).axpy(h / 6.0, &k4);
            if next.ell.iter().chain(&next.r).any(|x| !x.is_finite()) || !next.p_mat.is_finite() {
                return Err(Error::NonFinite(format!("Fokker-Planck sweep at t = {}", (j + 1) as f64 * h)));
            }
            out.push(next);
        }
        Ok(out)
    }
}

/// Solves the planning problem with initial density `ρ₀` and terminal value
/// `u_τ`, sampled at `samples` uniform times on `[0, τ]`.
pub fn mfg_picard(
    rho0: &Density,
    terminal: &LiftedPhase,
    coeffs: &CoefficientSet,
    tau: f64,
    samples: usize,
    opts: MfgOptions,
) -> Result<FlowTrajectory> {
    let grid = rho0.grid().clone();
    coeffs.validate(&grid)?;
    if !(coeffs.sigma > 0.0) {
        return Err(Error::InvalidArgument("mean-field games need sigma > 0".into()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau {tau} must be positive")));
    }
    if samples < 2 {
        return Err(Error::TooFewSamples { need: 2, got: samples });
    }
    if terminal.periodic.grid() != &grid || terminal.q.dim() != grid.dim() || terminal.p.len() != grid.dim() {
        return Err(Error::GridMismatch);
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) || opts.substeps == 0 {
        return Err(Error::InvalidArgument("damping must lie in (0, 1] and substeps >= 1".into()));
    }
    let n = grid.dim();
    let (a_mat, a_c) = coeffs.potential.quadratic_part(n);
    let last = (samples - 1) * opts.substeps;
    let ctx = Ctx {
        grid: &grid,
        coeffs,
        coords: (0..n).map(|a| grid.coordinate(a).into_values()).collect(),
        a_mat,
        a_c,
        b: coeffs.interaction.quadratic_strength(),
        u_per: coeffs.potential.periodic_part().map(|f| f.into_values()),
        h: tau / last as f64,
        last,
    };
    let lift = lift_log_density(rho0);
    let start = LogState {
        p_mat: lift.p_mat,
        r: lift.r,
        ell: lift.per,
    };
    let mut path: Vec<Vec<f64>> = vec![rho0.values().to_vec(); last + 1];
    let mut prev = f64::NAN;
    let mut contraction = f64::NAN;
    for round in 1..=opts.max_rounds {
        let val = ctx.hjb(&path, terminal)?;
        let states = ctx.fp(&start, &val)?;
        let next: Vec<Vec<f64>> = states
            .iter()
            .map(|s| ctx.log_rho(s).into_iter().map(f64::exp).collect())
            .collect();
        let diff = next
            .iter()
            .zip(&path)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0f64, f64::max);
        if prev.is_finite() && prev > 0.0 {
            contraction = diff / prev;
        }
        prev = diff;
        if diff <= opts.fp_tol {
            let diagnostics = Diagnostics {
                iterations: Some(round),
                marginal_error: Some(diff),
                contraction: contraction.is_finite().then_some(contraction),
                ..Diagnostics::default()
            };
            return assemble(&ctx, &states, &val, samples, opts.substeps, diagnostics);
        }
        let lam = opts.damping;
        for (p, q) in path.iter_mut().zip(&next) {
            p.iter_mut().zip(q).for_each(|(a, b)| *a = (1.0 - lam) * *a + lam * b);
        }
    }
    Err(Error::PicardStalled {
        rounds: opts.max_rounds,
        difference: prev,
        contraction,
    })
}

fn assemble(
    ctx: &Ctx<'_>,
    states: &[LogState],
    val: &Value,
    samples: usize,
    substeps: usize,
    mut diagnostics: Diagnostics,
) -> Result<FlowTrajectory> {
    let grid = ctx.grid;
    let n = grid.dim();
    let sigma = ctx.coeffs.sigma;
    let mut times = Vec::with_capacity(samples);
    let mut snaps = Vec::with_capacity(samples);
    for s in 0..samples {
        let j = s * substeps;
        let t = j as f64 * ctx.h;
        let st = &states[j];
        let log_rho = ctx.log_rho(st);
        let field = ScalarField::new(grid, log_rho.iter().map(|v| v.exp()).collect())?;
        let (dens, drift) = Density::from_evolved(field, VACUUM_FLOOR).map_err(|e| match e {
            Error::BelowFloor { min, .. } => Error::Vacuum { time: t, min },
            e => e,
        })?;
        diagnostics.max_mass_drift = diagnostics.max_mass_drift.max(drift);
        let ell = ScalarField::from_raw(grid, st.ell.clone());
        let ge = gradient(&ell);
        let he = hessian(&ell);
        let log_lin = ctx.affine(&st.p_mat.scale(-1.0), &st.r);
        let lg = VectorField::new(
            grid,
            log_lin.iter().zip(ge.components()).map(|(l, e)| axpy(l, 1.0, e)).collect(),
        )?;
        let lh = SymField::new(
            grid,
            packed_pairs(n)
                .into_iter()
                .enumerate()
                .map(|(ci, (i, jj))| he.components()[ci].iter().map(|v| v - st.p_mat.get(i, jj)).collect())
                .collect(),
        )?;
        let per = ScalarField::new(grid, val.u[j].clone())?;
        let gp = gradient(&per);
        let hp = hessian(&per);
        let (q, p) = (&val.q[j], &val.p[j]);
        let c = 0.5 * sigma;
        let mut theta = Vec::with_capacity(grid.len());
        let mut grad = vec![vec![0.0; grid.len()]; n];
        for k in 0..grid.len() {
            let x = &grid.position(k)[..n];
            let qx = q.apply(x);
            let lin: f64 = (0..n).map(|a| p[a] * x[a]).sum();
            // the additive constant is removed by the gauge fix
            theta.push(0.5 * q.quad(x) + lin + per.values()[k] - c * log_rho[k]);
            for a in 0..n {
                grad[a][k] = qx[a] + p[a] + gp.component(a)[k] - c * lg.component(a)[k];
            }
        }
        let hess: Vec<Vec<f64>> = packed_pairs(n)
            .into_iter()
            .enumerate()
            .map(|(ci, (i, jj))| {
                hp.components()[ci]
                    .iter()
                    .zip(&lh.components()[ci])
                    .map(|(hv, lv)| hv + q.get(i, jj) - c * lv)
                    .collect()
            })
            .collect();
        let phase = Phase::from_parts(
            ScalarField::new(grid, theta)?,
            VectorField::new(grid, grad)?,
            SymField::new(grid, hess)?,
        )?
        .gauge_fixed(&dens)?;
        times.push(t);
        snaps.push(Snapshot::with_log_tables(dens, phase, lg, lh)?);
    }
    FlowTrajectory::new(
        times,
        snaps,
        ctx.coeffs.clone(),
        FlowFamily::Mfg,
        Boundary::MeanFieldGame,
        diagnostics,
    )
}
