//! Direct integration of the `σ = 0` system.
//!
//! The phase is carried as `θ = ½xᵀQx + ⟨p, x⟩ + θ_per` so that quadratic
//! potentials, quadratic interactions and linear or quadratic initial phases
//! are represented without wrapping. The density is carried the same way,
//! `log ρ = −½xᵀPx + ⟨r, x⟩ + ℓ_per`, which keeps far tails positive and
//! relatively accurate. `Q, p, P, r` obey closed ODEs; the periodic
//! remainders are advanced spectrally with classical RK4, a CFL-limited step
//! and 2/3 dealiasing of the right-hand sides.

use super::{validate_times, Boundary, Diagnostics, FlowFamily, FlowTrajectory};
use crate::coeffs::{CoefficientSet, Interaction};
use crate::functionals::{Phase, Snapshot};
use crate::grid::{
    circular_convolve, gradient, hessian, Density, Grid, ScalarField, SymField,
    VectorField,
};
use crate::sym::{packed_pairs, SymMatrix};
use crate::{Error, Result};

/// Initial phase `½xᵀQx + ⟨p, x⟩ + θ_per`.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedPhase {
    pub q: SymMatrix,
    pub p: Vec<f64>,
    pub periodic: ScalarField,
}

impl LiftedPhase {
    pub fn zero(grid: &Grid) -> LiftedPhase {
        LiftedPhase {
            q: SymMatrix::zeros(grid.dim()),
            p: vec![0.0; grid.dim()],
            periodic: ScalarField::constant(grid, 0.0),
        }
    }

    pub fn periodic(field: ScalarField) -> LiftedPhase {
        let n = field.grid().dim();
        LiftedPhase {
            q: SymMatrix::zeros(n),
            p: vec![0.0; n],
            periodic: field,
        }
    }

    pub fn quadratic(grid: &Grid, q: SymMatrix, p: Vec<f64>) -> LiftedPhase {
        LiftedPhase {
            q,
            p,
            periodic: ScalarField::constant(grid, 0.0),
        }
    }

    /// The phase with exact tables.
    pub fn to_phase(&self) -> Phase {
        phase_tables(&self.q, &self.p, &self.periodic)
    }
}

fn phase_tables(q: &SymMatrix, p: &[f64], per: &ScalarField) -> Phase {
    let grid = per.grid();
    let n = grid.dim();
    let gp = gradient(per);
    let hp = hessian(per);
    let mut theta = Vec::with_capacity(grid.len());
    let mut grad = vec![vec![0.0; grid.len()]; n];
    for k in 0..grid.len() {
        let x = &grid.position(k)[..n];
        let qx = q.apply(x);
        let lin: f64 = (0..n).map(|a| p[a] * x[a]).sum();
        theta.push(0.5 * q.quad(x) + lin + per.values()[k]);
        for a in 0..n {
            grad[a][k] = qx[a] + p[a] + gp.component(a)[k];
        }
    }
    let hess: Vec<Vec<f64>> = packed_pairs(n)
        .into_iter()
        .enumerate()
        .map(|(c, (i, j))| hp.components()[c].iter().map(|v| v + q.get(i, j)).collect())
        .collect();
    Phase::from_parts(
        ScalarField::new(grid, theta).expect("finite phase"),
        VectorField::from_raw(grid, grad),
        SymField::from_raw(grid, hess),
    )
    .expect("tables share a grid")
}

/// Default vacuum threshold. The log-density is carried directly, so far
/// tails stay accurate long before they approach underflow.
pub const VACUUM_FLOOR: f64 = 1e-100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransportOptions {
    /// Courant number relative to the fastest signal (advection plus sound).
    pub cfl: f64,
    /// Density value under which the run stops with a vacuum error; `None`
    /// uses the smaller of a thousandth of the initial minimum and
    /// [`VACUUM_FLOOR`].
    pub vacuum_floor: Option<f64>,
}

impl Default for TransportOptions {
    fn default() -> Self {
        TransportOptions {
            cfl: 0.4,
            vacuum_floor: None,
        }
    }
}

/// `log ρ = −½xᵀPx + ⟨r, x⟩ + ℓ_per`.
#[derive(Clone, Debug)]
pub(crate) struct LogLift {
    pub(crate) p_mat: SymMatrix,
    pub(crate) r: Vec<f64>,
    pub(crate) per: Vec<f64>,
}

/// Spectral energy of `values` in the upper half of the resolved modes.
fn roughness(grid: &Grid, values: &[f64]) -> f64 {
    let spec = grid.forward(values);
    let n = grid.dim();
    let mut hi = 0.0;
    for (idx, c) in spec.iter().enumerate().skip(1) {
        let m = grid.unflatten(idx);
        let e = c.norm_sqr();
        if (0..n).any(|a| {
            let na = grid.points()[a];
            let k = if m[a] <= na / 2 { m[a] } else { na - m[a] };
            4 * k > na
        }) {
            hi += e;
        }
    }
    hi
}

/// Solves the dense system `a x = b` by Gaussian elimination with partial
/// pivoting; `None` when singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if !(a[piv][col].abs() > 1e-300) {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Mass-weighted least-squares fit `log ρ ≈ c − ½xᵀPx + ⟨r, x⟩`, exact
/// for Gaussian data. Returns `(P, r)`.
fn fit_log_quadratic(rho: &Density, log_rho: &[f64]) -> Option<(SymMatrix, Vec<f64>)> {
    let grid = rho.grid();
    let n = grid.dim();
    let m = rho.mean();
    let pairs = packed_pairs(n);
    // basis in centred coordinates y = x − m: 1, y_a, −½ y_a y_b (×2 off-diagonal)
    let nb = 1 + n + pairs.len();
    let mut ata = vec![vec![0.0; nb]; nb];
    let mut atb = vec![0.0; nb];
    let vol = grid.cell_volume();
    let mut row = vec![0.0; nb];
    for k in 0..grid.len() {
        let x = grid.position(k);
        let y: Vec<f64> = (0..n).map(|a| x[a] - m[a]).collect();
        row[0] = 1.0;
        row[1..=n].copy_from_slice(&y[..n]);
        for (c, &(i, j)) in pairs.iter().enumerate() {
            row[1 + n + c] = if i == j { -0.5 * y[i] * y[i] } else { -y[i] * y[j] };
        }
        let w = rho.values()[k] * vol;
        for i in 0..nb {
            atb[i] += w * row[i] * log_rho[k];
            for j in 0..nb {
                ata[i][j] += w * row[i] * row[j];
            }
        }
    }
    let coef = solve_dense(ata, atb)?;
    let p_mat = SymMatrix::from_packed(n, &coef[1 + n..]);
    let pm = p_mat.apply(&m);
    let r = (0..n).map(|a| coef[1 + a] + pm[a]).collect();
    Some((p_mat, r))
}

/// Splits `log ρ₀` into a quadratic part and a periodic remainder. The
/// quadratic fit is used when it leaves a smoother remainder than no lift at
/// all (densities that decay inside the box); periodic densities keep
/// `P = 0`.
pub(crate) fn lift_log_density(rho0: &Density) -> LogLift {
    let grid = rho0.grid();
    let n = grid.dim();
    let log_rho: Vec<f64> = rho0.values().iter().map(|v| v.ln()).collect();
    let flat = LogLift {
        p_mat: SymMatrix::zeros(n),
        r: vec![0.0; n],
        per: log_rho.clone(),
    };
    let Some((p_mat, r)) = fit_log_quadratic(rho0, &log_rho).filter(|(p, _)| p.is_finite()) else {
        return flat;
    };
    let per: Vec<f64> = (0..grid.len())
        .map(|k| {
            let x = &grid.position(k)[..n];
            log_rho[k] + 0.5 * p_mat.quad(x) - (0..n).map(|a| r[a] * x[a]).sum::<f64>()
        })
        .collect();
    if roughness(grid, &per) < roughness(grid, &log_rho) {
        LogLift { p_mat, r, per }
    } else {
        flat
    }
}

#[derive(Clone, Debug)]
struct State {
    /// Periodic remainder of `log ρ` (carries the normalisation constant).
    ell: Vec<f64>,
    p_mat: SymMatrix,
    r: Vec<f64>,
    per: Vec<f64>,
    q: SymMatrix,
    p: Vec<f64>,
}

impl State {
    fn axpy(&self, h: f64, d: &State) -> State {
        State {
            ell: self.ell.iter().zip(&d.ell).map(|(a, b)| a + h * b).collect(),
            p_mat: self.p_mat + d.p_mat.scale(h),
            r: self.r.iter().zip(&d.r).map(|(a, b)| a + h * b).collect(),
            per: self.per.iter().zip(&d.per).map(|(a, b)| a + h * b).collect(),
            q: self.q + d.q.scale(h),
            p: self.p.iter().zip(&d.p).map(|(a, b)| a + h * b).collect(),
        }
    }

    fn is_finite(&self) -> bool {
        self.ell.iter().chain(&self.per).chain(&self.r).chain(&self.p).all(|v| v.is_finite())
            && self.q.is_finite()
            && self.p_mat.is_finite()
    }
}

struct Model<'a> {
    grid: &'a Grid,
    coeffs: &'a CoefficientSet,
    coords: Vec<Vec<f64>>,
    a_mat: SymMatrix,
    a_c: Vec<f64>,
    b: f64,
    u_per: Option<Vec<f64>>,
}

impl Model<'_> {
    fn first_moment(&self, rho: &[f64]) -> Vec<f64> {
        let vol = self.grid.cell_volume();
        let mass = crate::grid::sum(rho) * vol;
        self.coords
            .iter()
            .map(|x| crate::grid::weighted_sum(x, rho) * vol / mass)
            .collect()
    }

    /// `M x + c + ∇f_per` per axis.
    fn lifted_gradient(&self, m: &SymMatrix, c: &[f64], grad_per: &VectorField) -> Vec<Vec<f64>> {
        let n = self.grid.dim();
        (0..n)
            .map(|a| {
                (0..self.grid.len())
                    .map(|k| {
                        let mut v = c[a] + grad_per.component(a)[k];
                        for b in 0..n {
                            v += m.get(a, b) * self.coords[b][k];
                        }
                        v
                    })
                    .collect()
            })
            .collect()
    }

    fn log_rho(&self, s: &State) -> Vec<f64> {
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

    fn rho(&self, s: &State) -> Vec<f64> {
        self.log_rho(s).into_iter().map(f64::exp).collect()
    }

    fn rhs(&self, s: &State) -> State {
        let g = self.grid;
        let n = g.dim();
        let per = ScalarField::from_raw(g, s.per.clone());
        let gp = gradient(&per);
        let lap_per = crate::grid::laplacian(&per);
        let ge = gradient(&ScalarField::from_raw(g, s.ell.clone()));
        let vel = self.lifted_gradient(&s.q, &s.p, &gp);
        let neg_p = s.p_mat.scale(-1.0);
        let glog = self.lifted_gradient(&neg_p, &s.r, &ge);
        let rho = self.rho(s);
        let shift = -s.q.trace() - (0..n).map(|a| s.p[a] * s.r[a]).sum::<f64>();
        let dell_raw: Vec<f64> = (0..g.len())
            .map(|k| {
                let mut v = shift - lap_per.values()[k];
                for a in 0..n {
                    v -= (vel[a][k] - gp.component(a)[k]) * ge.component(a)[k];
                    v -= gp.component(a)[k] * glog[a][k];
                }
                v
            })
            .collect();
        let dell = g.dealias(&dell_raw);
        let wper = match &self.coeffs.interaction {
            Interaction::Gridded { kernel } => Some(
                circular_convolve(kernel, &ScalarField::from_raw(g, rho.clone()))
                    .expect("kernel shares the grid")
                    .into_values(),
            ),
            _ => None,
        };
        let f = self.coeffs.congestion;
        let dper_raw: Vec<f64> = (0..g.len())
            .map(|k| {
                let mut adv = 0.0;
                let mut sq = 0.0;
                for a in 0..n {
                    let d = gp.component(a)[k];
                    adv += (vel[a][k] - d) * d;
                    sq += d * d;
                }
                let mut v = -adv - 0.5 * sq + f.f(rho[k]);
                if let Some(u) = &self.u_per {
                    v -= u[k];
                }
                if let Some(w) = &wper {
                    v += w[k];
                }
                v
            })
            .collect();
        let dper = g.dealias(&dper_raw);
        let dq = (s.q.square() + self.a_mat + SymMatrix::scalar(n, 2.0 * self.b)).scale(-1.0);
        let m1 = self.first_moment(&rho);
        let qp = s.q.apply(&s.p);
        let dp = (0..n).map(|a| -qp[a] + self.a_c[a] + 2.0 * self.b * m1[a]).collect();
        let dpm = s.q.mul_sym(&s.p_mat).scale(-2.0);
        let pp = s.p_mat.apply(&s.p);
        let qr = s.q.apply(&s.r);
        let dr = (0..n).map(|a| pp[a] - qr[a]).collect();
        State {
            ell: dell,
            p_mat: dpm,
            r: dr,
            per: dper,
            q: dq,
            p: dp,
        }
    }

    fn max_signal(&self, s: &State) -> f64 {
        let gp = gradient(&ScalarField::from_raw(self.grid, s.per.clone()));
        let vel = self.lifted_gradient(&s.q, &s.p, &gp);
        let rho = self.rho(s);
        let f = self.coeffs.congestion;
        (0..self.grid.len())
            .map(|k| {
                let v: f64 = vel.iter().map(|c| c[k] * c[k]).sum::<f64>().sqrt();
                let r = rho[k];
                v + (r * f.df(r)).max(0.0).sqrt()
            })
            .fold(0.0, f64::max)
    }

    fn snapshot(&self, s: &State, floor: f64) -> Result<(Snapshot, f64, f64)> {
        let field = ScalarField::new(self.grid, self.rho(s))?;
        let (rho, drift) = Density::from_evolved(field, floor)?;
        let phase = phase_tables(&s.q, &s.p, &ScalarField::from_raw(self.grid, s.per.clone())).gauge_fixed(&rho)?;
        let hmax = phase.hess().max_abs();
        let ell = ScalarField::from_raw(self.grid, s.ell.clone());
        let ge = gradient(&ell);
        let he = hessian(&ell);
        let lg = VectorField::from_raw(self.grid, self.lifted_gradient(&s.p_mat.scale(-1.0), &s.r, &ge));
        let n = self.grid.dim();
        let lh = SymField::from_raw(
            self.grid,
            packed_pairs(n)
                .into_iter()
                .enumerate()
                .map(|(c, (i, j))| he.components()[c].iter().map(|v| v - s.p_mat.get(i, j)).collect())
                .collect(),
        );
        Ok((Snapshot::with_log_tables(rho, phase, lg, lh)?, drift, hmax))
    }
}

/// Integrates the `σ = 0` system from `(ρ₀, θ₀)` and samples it at `times`
/// (absolute times; integration starts at `times[0]`).
///
/// Fails with [`Error::Vacuum`] if the density drops below the vacuum floor,
/// and with [`Error::ShockImminent`] (carrying the samples produced so far)
/// once `max|∇²θ|` exceeds `1/(10 Δt)` for the sample spacing `Δt`.
pub fn zero_viscosity_integrate(
    rho0: &Density,
    theta0: &LiftedPhase,
    coeffs: &CoefficientSet,
    times: &[f64],
    opts: TransportOptions,
) -> Result<FlowTrajectory> {
    validate_times(times)?;
    let grid = rho0.grid().clone();
    if theta0.periodic.grid() != &grid || theta0.q.dim() != grid.dim() || theta0.p.len() != grid.dim() {
        return Err(Error::GridMismatch);
    }
    if coeffs.sigma != 0.0 {
        return Err(Error::InvalidArgument("the direct integrator is for sigma = 0".into()));
    }
    coeffs.validate(&grid)?;
    let n = grid.dim();
    let (a_mat, a_c) = coeffs.potential.quadratic_part(n);
    let model = Model {
        grid: &grid,
        coeffs,
        coords: (0..n).map(|a| grid.coordinate(a).into_values()).collect(),
        a_mat,
        a_c,
        b: coeffs.interaction.quadratic_strength(),
        u_per: coeffs.potential.periodic_part().map(|f| f.into_values()),
    };
    let floor = opts
        .vacuum_floor
        .unwrap_or((1e-3 * rho0.field().min()).min(VACUUM_FLOOR))
        .max(f64::MIN_POSITIVE);
    let min_dt = if times.len() > 1 {
        times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    } else {
        f64::INFINITY
    };
    let shock = 1.0 / (10.0 * min_dt);
    let hmin = grid.spacing().iter().cloned().fold(f64::INFINITY, f64::min);

    let lift = lift_log_density(rho0);
    let mut state = State {
        ell: lift.per,
        p_mat: lift.p_mat,
        r: lift.r,
        per: theta0.periodic.values().to_vec(),
        q: theta0.q,
        p: theta0.p.clone(),
    };
    let mut t = times[0];
    let mut out_times = Vec::with_capacity(times.len());
    let mut snaps = Vec::with_capacity(times.len());
    let mut drift = 0.0f64;
    let mut steps = 0usize;
    for &target in times {
        while t < target {
            let signal = model.max_signal(&state) + state.q.max_abs() * hmin;
            let mut dt = opts.cfl * hmin / signal.max(1e-12);
            dt = dt.min(0.1 / state.q.max_abs().max(1e-12));
            if t + dt >= target - 1e-14 * target.abs().max(1.0) {
                dt = target - t;
            }
            let k1 = model.rhs(&state);
            let k2 = model.rhs(&state.axpy(0.5 * dt, &k1));
            let k3 = model.rhs(&state.axpy(0.5 * dt, &k2));
            let k4 = model.rhs(&state.axpy(dt, &k3));
            let mut next = state.axpy(dt / 6.0, &k1);
            next = next.axpy(dt / 3.0, &k2);
            next = next.axpy(dt / 3.0, &k3);
            next = next.axpy(dt / 6.0, &k4);
            state = next;
            t = if dt == target - t { target } else { t + dt };
            steps += 1;
            if !state.is_finite() {
                return Err(Error::NonFinite(format!("transport state at t = {t}")));
            }
            let min = model.log_rho(&state).into_iter().fold(f64::INFINITY, f64::min).exp();
            if !(min >= floor) {
                return Err(Error::Vacuum { time: t, min });
            }
        }
        let (snap, d, hmax) = model.snapshot(&state, floor)?;
        if hmax > shock {
            let diagnostics = Diagnostics {
                max_mass_drift: drift,
                notes: vec![format!("{steps} RK4 steps")],
                ..Diagnostics::default()
            };
            if snaps.is_empty() {
                out_times.push(target);
                snaps.push(snap);
            }
            let truncated = FlowTrajectory::truncated(
                out_times,
                snaps,
                coeffs.clone(),
                FlowFamily::ZeroViscosity,
                Boundary::InitialValue,
                diagnostics,
            );
            return Err(Error::ShockImminent {
                time: target,
                hess_max: hmax,
                truncated,
            });
        }
        drift = drift.max(d);
        out_times.push(target);
        snaps.push(snap);
    }
    let diagnostics = Diagnostics {
        max_mass_drift: drift,
        notes: vec![format!("{steps} RK4 steps")],
        ..Diagnostics::default()
    };
    FlowTrajectory::new(
        out_times,
        snaps,
        coeffs.clone(),
        FlowFamily::ZeroViscosity,
        Boundary::InitialValue,
        diagnostics,
    )
}
