//! Acceptance suite: every criterion at its stated tolerance, one verdict
//! line each. Run with `cargo test -p matflow-core --test acceptance --
//! --nocapture` to see the lines.

use matflow_core::checks::{self, BridgeSettings, CheckReport};
use matflow_core::comparison::{
    check_comparison_bounds, check_matrix_ode, concavity_profile, integrate_riccati, random_unit_vectors,
    sample_directions, sym_eig, MatrixOdePath,
};
use matflow_core::flows::{gaussian_density, FlowScenario, FlowTrajectory};
use matflow_core::functionals::{assemble_series, FunctionalSeries};
use matflow_core::grid::{Density, Grid};
use matflow_core::oracles::{fd_derivative, fine_grid_resolve, refinement_change};
use matflow_core::sym::SymMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

type Verdict = Result<String, String>;

fn gaussian(mean: f64, var: f64) -> String {
    format!(r#"{{"kind": "gaussian", "mean": [{mean:?}], "cov": [[{var:?}]]}}"#)
}

fn scenario(coefficients: &str, flow: &str, tau: f64, samples: usize) -> FlowScenario {
    scenario_on(20.0, coefficients, flow, tau, samples)
}

fn scenario_on(extent: f64, coefficients: &str, flow: &str, tau: f64, samples: usize) -> FlowScenario {
    let text = format!(
        r#"{{"grid": {{"extent": [{extent:?}], "points": [256]}}, "coefficients": {coefficients},
            "flow": {flow}, "tau": {tau:?}, "samples": {samples}}}"#
    );
    serde_json::from_str(&text).expect("scenario parses")
}

fn bridge(a: (f64, f64), z: (f64, f64)) -> FlowScenario {
    // Narrow marginals on the default box underflow the density floor at the edges.
    let extent = if a.1.min(z.1) < 0.5 { 10.0 } else { 20.0 };
    scenario_on(
        extent,
        r#"{"sigma": 1.0}"#,
        &format!(
            r#"{{"kind": "bridge", "mu_a": {}, "mu_z": {}}}"#,
            gaussian(a.0, a.1),
            gaussian(z.0, z.1)
        ),
        1.0,
        64,
    )
}

fn heat() -> FlowScenario {
    scenario(
        r#"{"sigma": 1.0}"#,
        &format!(r#"{{"kind": "heat", "rho0": {}}}"#, gaussian(0.0, 1.0)),
        1.0,
        64,
    )
}

fn dilation() -> FlowScenario {
    scenario(
        r#"{"sigma": 0.0}"#,
        &format!(
            r#"{{"kind": "zero_viscosity", "rho0": {}, "theta0": {{"kind": "quadratic", "q": [[0.5]], "p": [0.0]}}}}"#,
            gaussian(0.0, 1.0)
        ),
        1.0,
        64,
    )
}

fn convex_transport() -> FlowScenario {
    scenario(
        r#"{"sigma": 0.0, "potential": {"kind": "quadratic", "center": [0.0], "a": [[1.0]]},
            "congestion": {"kind": "linear", "eps": 0.1}}"#,
        &format!(
            r#"{{"kind": "zero_viscosity", "rho0": {}, "theta0": {{"kind": "quadratic", "q": [[0.3]], "p": [0.2]}}}}"#,
            gaussian(0.5, 1.0)
        ),
        1.0,
        64,
    )
}

fn mfg() -> FlowScenario {
    scenario(
        r#"{"sigma": 1.0, "potential": {"kind": "quadratic", "center": [0.0], "a": [[0.25]]},
            "congestion": {"kind": "linear", "eps": 0.1}}"#,
        &format!(r#"{{"kind": "mfg", "rho0": {}}}"#, gaussian(0.5, 1.0)),
        1.0,
        33,
    )
}

fn fault(flow: &str) -> FlowScenario {
    scenario(r#"{"sigma": 1.0}"#, flow, 1.0, 64)
}

fn build(s: &FlowScenario) -> Result<(FlowTrajectory, FunctionalSeries), String> {
    let traj = s.build().map_err(|e| format!("construction failed: {e}"))?;
    let series = assemble_series(&traj).map_err(|e| format!("series failed: {e}"))?;
    Ok((traj, series))
}

fn require(report: &CheckReport) -> Result<(), String> {
    if report.pass {
        Ok(())
    } else {
        Err(format!(
            "{} failed (worst margin {:.3e}, tolerance {:.1e}, hypotheses_ok {}): {:?}",
            report.name, report.worst_margin, report.tolerance, report.hypotheses_ok, report.notes
        ))
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn component(series: &FunctionalSeries, pick: impl Fn(&matflow_core::functionals::SeriesRecord) -> SymMatrix, c: usize) -> Vec<f64> {
    series.records.iter().map(|r| pick(r).packed()[c]).collect()
}

fn derivative(times: &[f64], values: &[f64]) -> Result<Vec<f64>, String> {
    fd_derivative(times, values).map(|d| d.values).map_err(|e| e.to_string())
}

fn criterion_1() -> Verdict {
    let (_, series) = build(&bridge((-1.0, 1.0), (1.0, 0.8)))?;
    let t = series.times();
    let e = series.scalars(|r| r.entropy);
    let tr_s = series.scalars(|r| r.s_mat.trace());
    let err_e = max_abs_diff(&derivative(&t, &e)?, &tr_s);
    let mut err_s = 0.0f64;
    let mut err_v = 0.0f64;
    for c in 0..series.records[0].s_mat.packed().len() {
        let ds = derivative(&t, &component(&series, |r| r.s_mat, c))?;
        err_s = err_s.max(max_abs_diff(&ds, &component(&series, |r| r.ds_rhs, c)));
        let dv = derivative(&t, &component(&series, |r| r.v_mat, c))?;
        let di: Vec<f64> = derivative(&t, &component(&series, |r| r.i_mat, c))?
            .into_iter()
            .map(|v| 0.25 * series.sigma * series.sigma * v)
            .collect();
        err_v = err_v.max(max_abs_diff(&dv, &di));
    }
    let msg = format!("|dE/dt - Tr S| {err_e:.2e}, |dS/dt - rhs| {err_s:.2e}, |dV/dt - (s^2/4) dI/dt| {err_v:.2e}");
    if err_e <= 1e-5 && err_s <= 1e-4 && err_v <= 1e-4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn random_rotation(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let seed = rng.random::<u64>();
    matflow_core::comparison::random_orthonormal_basis(n, seed)
}

fn rotated(q: &[Vec<f64>], d: &[f64]) -> SymMatrix {
    let n = d.len();
    let mut m = SymMatrix::zeros(n);
    for (l, w) in d.iter().zip(q) {
        m += SymMatrix::outer(w).scale(*l);
    }
    if n == 1 {
        m = SymMatrix::diag(&[d[0]]);
    }
    m
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let tau = 1.0;
    let times: Vec<f64> = (0..=200).map(|k| tau * k as f64 / 200.0).collect();
    let tol = 1e-6;
    let mut worst_closed = 0.0f64;
    for case in 0..200 {
        let n = 1 + case % 3;
        let q = random_rotation(&mut rng, n);
        let lambda: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..0.5)).collect();
        let m0 = rotated(&q, &lambda);
        let b: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-0.3..0.3)).collect()).collect();
        let bbt = {
            let mut m = SymMatrix::zeros(n);
            for col in 0..n {
                let v: Vec<f64> = (0..n).map(|r| b[r][col]).collect();
                m += SymMatrix::outer(&v);
            }
            m
        };
        let phase = rng.random_range(0.0..6.0);
        let p = move |t: f64| bbt.scale(1.0 + 0.5 * (3.0 * t + phase).sin());
        let path = integrate_riccati(&m0, p, &times, 20);
        let path = MatrixOdePath::new(times.clone(), path, None).map_err(|e| e.to_string())?;
        let seed = rng.random::<u64>();
        let ode = check_matrix_ode(&path, tol).map_err(|e| e.to_string())?;
        require(&ode).map_err(|e| format!("case {case}: {e}"))?;
        let bounds =
            check_comparison_bounds(&path, &sample_directions(&m0, 8, seed), None, tol).map_err(|e| e.to_string())?;
        require(&bounds).map_err(|e| format!("case {case}: {e}"))?;
        for w in random_unit_vectors(n, 8, seed ^ 1) {
            let conc = concavity_profile(&path, &w, None, tol).map_err(|e| e.to_string())?;
            require(&conc).map_err(|e| format!("case {case}: {e}"))?;
        }
        // commuting closed form: M(t) = Q diag(λ/(1 − λt)) Qᵀ
        let closed: Vec<SymMatrix> = times
            .iter()
            .map(|t| rotated(&q, &lambda.iter().map(|l| l / (1.0 - l * t)).collect::<Vec<_>>()))
            .collect();
        let closed = MatrixOdePath::new(times.clone(), closed, None).map_err(|e| e.to_string())?;
        let integral: f64 = lambda.iter().map(|l| -(1.0 - l * tau).ln()).sum();
        let dirs: Vec<(String, Vec<f64>)> = sym_eig(&m0)
            .eigenvectors
            .into_iter()
            .map(|w| ("eigenvector".to_string(), w))
            .collect();
        let eq = check_comparison_bounds(&closed, &dirs, Some(integral), 1e-8).map_err(|e| e.to_string())?;
        for c in &eq.components {
            worst_closed = worst_closed.max(c.margin.abs());
        }
    }
    let msg = format!("200 synthetic paths pass; closed-form bound gap {worst_closed:.2e}");
    if worst_closed <= 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_3() -> Verdict {
    let (_, heat) = build(&heat())?;
    let t = heat.times();
    let tplus = heat.records.iter().map(|r| r.t_plus.max_abs()).fold(0.0, f64::max);
    let tm = component(&heat, |r| r.t_minus, 0);
    let dtm = derivative(&t, &tm)?;
    let heat_gap = (1..t.len() - 1)
        .map(|k| (dtm[k] - tm[k] * tm[k]).abs())
        .fold(0.0, f64::max);
    let (_, dil) = build(&dilation())?;
    let s = component(&dil, |r| r.s_mat, 0);
    let ds = derivative(&t, &s)?;
    let dil_gap = (1..t.len() - 1).map(|k| (ds[k] - s[k] * s[k]).abs()).fold(0.0, f64::max);
    let msg = format!("heat max|T+| {tplus:.2e}, |dT-/dt - T-^2| {heat_gap:.2e}; dilation |dS/dt - S^2| {dil_gap:.2e}");
    if tplus <= 1e-6 && heat_gap <= 1e-4 && dil_gap <= 1e-4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_4() -> Verdict {
    let mut worst = Vec::new();
    for (label, s) in [("bridge", bridge((-1.0, 1.0), (1.0, 0.8))), ("transport", convex_transport())] {
        let (_, series) = build(&s)?;
        for r in [
            checks::check_t_inequality(&series, 1e-4, checks::DEFAULT_SEED),
            checks::check_s_inequality(&series, 1e-4, checks::DEFAULT_SEED),
        ] {
            let r = r.map_err(|e| e.to_string())?;
            require(&r).map_err(|e| format!("{label}: {e}"))?;
            worst.push(format!("{label} {} {:.1e}", r.name, r.worst_margin));
        }
    }
    Ok(worst.join(", "))
}

fn criterion_5() -> Verdict {
    let (_, series) = build(&heat())?;
    let (v0, sigma, tau) = (1.0f64, 1.0f64, 1.0f64);
    let de = series.records.last().unwrap().entropy - series.records[0].entropy;
    let exact = -0.5 * (1.0 + sigma * tau / v0).ln();
    let bound = -(1.0 + sigma * tau / (2.0 * v0)).ln();
    let report = checks::check_entropy_growth(&series, 1e-6).map_err(|e| e.to_string())?;
    require(&report)?;
    let lower = &report.components[0];
    let slack_err = ((de - bound) - lower.margin).abs().max((de - exact).abs());
    let (_, sym) = build(&bridge((0.0, 1.0), (0.0, 1.0)))?;
    let two_sided = checks::check_entropy_growth(&sym, 1e-6).map_err(|e| e.to_string())?;
    require(&two_sided)?;
    if two_sided.components.len() != 2 {
        return Err("symmetric bridge bracket is not two-sided".into());
    }
    let msg = format!(
        "heat dE {de:.10} vs {exact:.10} (bound {bound:.6}), closed-form error {slack_err:.1e}; symmetric bridge bracket margins {:.2e}, {:.2e}",
        two_sided.components[0].margin, two_sided.components[1].margin
    );
    if slack_err <= 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_6() -> Verdict {
    let mut parts = Vec::new();
    for (label, a, z) in [
        ("shifted", (-1.0, 1.0), (1.0, 0.8)),
        ("symmetric", (0.0, 1.0), (0.0, 1.0)),
        ("concentrated", (-0.5, 0.25), (0.5, 0.25)),
    ] {
        let (_, series) = build(&bridge(a, z))?;
        let r = checks::check_turnpike(&series, 1e-6).map_err(|e| e.to_string())?;
        require(&r).map_err(|e| format!("{label}: {e}"))?;
        parts.push(format!("{label} margin {:.3}", r.worst_margin));
    }
    Ok(parts.join(", "))
}

fn criterion_7() -> Verdict {
    let mut parts = Vec::new();
    for (label, s) in [
        ("heat", heat()),
        ("bridge", bridge((-1.0, 1.0), (1.0, 0.8))),
        ("concentrated bridge", bridge((-0.5, 0.25), (0.5, 0.25))),
    ] {
        let (_, series) = build(&s)?;
        let energy = checks::check_energy(&series, 1e-5).map_err(|e| e.to_string())?;
        require(&energy).map_err(|e| format!("{label}: {e}"))?;
        let cost = checks::check_cost_identity(&series, 1e-4).map_err(|e| e.to_string())?;
        require(&cost).map_err(|e| format!("{label}: {e}"))?;
        let mut line = format!("{label}: energy {:.1e}, cost {:.1e}", energy.worst_margin, cost.worst_margin);
        if label.contains("bridge") {
            let m = checks::check_matrix_energy(&series, 1e-5).map_err(|e| e.to_string())?;
            require(&m).map_err(|e| format!("{label}: {e}"))?;
            line.push_str(&format!(", matrix energy {:.1e}", m.worst_margin));
        }
        parts.push(line);
    }
    Ok(parts.join("; "))
}

fn marginals(a: (f64, f64), z: (f64, f64)) -> (Density, Density) {
    let g = Grid::new(&[20.0], &[256]).unwrap();
    (
        gaussian_density(&g, &[a.0], &SymMatrix::diag(&[a.1])).unwrap(),
        gaussian_density(&g, &[z.0], &SymMatrix::diag(&[z.1])).unwrap(),
    )
}

fn criterion_8() -> Verdict {
    let (a, z) = marginals((-1.0, 1.0), (1.0, 0.8));
    let r = checks::check_longtime(&a, &z, 1.0, &[1.0, 2.0, 4.0], BridgeSettings::default(), 1e-4)
        .map_err(|e| e.to_string())?;
    require(&r)?;
    Ok(format!("worst margin {:.2e}; {}", r.worst_margin, r.notes.join("; ")))
}

fn criterion_9() -> Verdict {
    let mut parts = Vec::new();
    for (a, z) in [((-1.0, 1.0), (1.0, 0.8)), ((0.0, 0.5), (0.5, 1.5))] {
        let (ma, mz) = marginals(a, z);
        let evi = checks::check_evi(&ma, &mz, &[0.0, 0.5], 1e-2, BridgeSettings::default(), 1e-3, checks::DEFAULT_SEED)
            .map_err(|e| e.to_string())?;
        require(&evi)?;
        let con = checks::check_contraction(&ma, &mz, 0.5, 4, BridgeSettings::default(), 1e-3)
            .map_err(|e| e.to_string())?;
        require(&con)?;
        let trace = evi
            .components
            .iter()
            .chain(&con.components)
            .filter(|c| c.name.starts_with("trace identity"))
            .map(|c| -c.margin)
            .fold(0.0, f64::max);
        if trace > 1e-6 {
            return Err(format!("trace identity error {trace:.2e}"));
        }
        parts.push(format!(
            "pair {a:?}->{z:?}: evi {:.1e}, contraction {:.1e}, trace identity {trace:.1e}",
            evi.worst_margin, con.worst_margin
        ));
    }
    Ok(parts.join("; "))
}

fn criterion_10() -> Verdict {
    let flip = fault(&format!(
        r#"{{"kind": "sign_flip", "base": {{"kind": "heat", "rho0": {}}}}}"#,
        gaussian(0.0, 1.0)
    ));
    let anti = fault(&format!(r#"{{"kind": "anti_diffusive", "rho_end": {}}}"#, gaussian(0.0, 2.0)));
    let mut parts = Vec::new();
    for (label, s) in [("sign flip", flip), ("anti-diffusive", anti)] {
        let (traj, series) = build(&s)?;
        let tol = checks::default_tolerance(&series);
        let reports = [
            checks::check_t_inequality(&series, tol, checks::DEFAULT_SEED),
            checks::check_s_inequality(&series, tol, checks::DEFAULT_SEED),
            checks::check_cost_identity(&series, tol),
            checks::check_time_symmetry(&traj, tol),
        ];
        let mut caught = Vec::new();
        for r in reports {
            let r = r.map_err(|e| e.to_string())?;
            if !r.pass && r.hypotheses_ok {
                if let Some(w) = &r.witness {
                    caught.push(format!("{} at t = {:.3}", r.name, w.time));
                }
            }
        }
        if caught.is_empty() {
            return Err(format!("{label}: no checker failed"));
        }
        parts.push(format!("{label}: {}", caught.join(", ")));
    }
    Ok(parts.join("; "))
}

fn criterion_11() -> Verdict {
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    for (label, s) in [
        ("heat", heat()),
        ("bridge", bridge((-1.0, 1.0), (1.0, 0.8))),
        ("dilation", dilation()),
        ("transport", convex_transport()),
        ("mfg", mfg()),
    ] {
        let (_, base) = build(&s)?;
        let (_, again) = build(&s)?;
        if serde_json::to_string(&base).unwrap() != serde_json::to_string(&again).unwrap() {
            failures.push(format!("{label}: repeated builds differ"));
        }
        let fine = fine_grid_resolve(&s, 2).map_err(|e| format!("{label}: {e}"))?;
        let change = refinement_change(&base, &fine, 2).map_err(|e| e.to_string())?;
        if !(change <= 1e-5) {
            failures.push(format!("{label}: 2x refinement changes functionals by {change:.2e}"));
        }
        parts.push(format!("{label} {change:.1e}"));
    }
    let msg = format!("deterministic; refinement change {}", parts.join(", "));
    if failures.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{}; {msg}", failures.join("; ")))
    }
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("formula fidelity", criterion_1),
        ("matrix comparison machinery", criterion_2),
        ("equality cases", criterion_3),
        ("matrix inequalities on nontrivial flows", criterion_4),
        ("entropy growth", criterion_5),
        ("turnpike", criterion_6),
        ("conservation and cost", criterion_7),
        ("large time", criterion_8),
        ("EVI and contraction", criterion_9),
        ("detector non-vacuity", criterion_10),
        ("determinism and convergence", criterion_11),
    ];
    let start = Instant::now();
    let mut failed = Vec::new();
    for (k, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = f();
        let secs = t.elapsed().as_secs_f64();
        match &v {
            Ok(msg) => println!("criterion {:>2} {name}: PASS ({secs:.1} s) {msg}", k + 1),
            Err(msg) => {
                println!("criterion {:>2} {name}: FAIL ({secs:.1} s) {msg}", k + 1);
                failed.push(k + 1);
            }
        }
    }
    println!("acceptance total {:.1} s", start.elapsed().as_secs_f64());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
