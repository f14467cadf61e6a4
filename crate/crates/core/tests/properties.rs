//! Property tests for the invariants each module promises.

use matflow_core::checks::{self, CheckReport, Component};
use matflow_core::comparison::{
    check_comparison_bounds, check_matrix_ode, concavity_profile, integrate_riccati, random_orthonormal_basis,
    random_unit_vectors, riccati_lower_bound, sample_directions, sym_eig, trace_lower_bound, MatrixOdePath,
};
use matflow_core::flows::{faults::flip_phase_sign, heat_flow, schrodinger_bridge, uniform_times, SinkhornOptions};
use matflow_core::functionals::{
    assemble_series, entropy, entropy_production_matrix, fisher_matrix, velocity_second_moment, Phase,
};
use matflow_core::grid::{
    bohm_potential, bohm_potential_direct, divergence, gradient, heat_propagate, integrate, laplacian, Density, Grid,
    ScalarField, VectorField,
};
use matflow_core::oracles::gaussian_heat_oracle;
use matflow_core::sym::SymMatrix;
use proptest::prelude::*;
use std::f64::consts::PI;

fn torus(n: usize) -> Grid {
    Grid::new(&[2.0 * PI, 2.0 * PI], &[n, n]).unwrap()
}

/// Trigonometric polynomial with wavenumbers up to 3 in each axis.
fn band_limited(grid: &Grid, coeffs: &[f64]) -> ScalarField {
    let modes: Vec<(f64, f64)> = (0..=3).flat_map(|a| (-3..=3).map(move |b| (a as f64, b as f64))).collect();
    ScalarField::from_fn(grid, |x| {
        modes
            .iter()
            .zip(coeffs.chunks(2))
            .map(|((ka, kb), c)| {
                let arg = ka * x[0] + kb * x[1];
                c[0] * arg.cos() + c[1] * arg.sin()
            })
            .sum()
    })
}

fn coeff_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 56)
}

/// `exp` of a band-limited field scaled to amplitude at most 1.5.
fn smooth_profile(grid: &Grid, coeffs: &[f64]) -> ScalarField {
    let log = band_limited(grid, coeffs);
    let k = 1.5 / log.max_abs().max(1.5);
    log.map(|v| (k * v).exp())
}

fn smooth_density(grid: &Grid, coeffs: &[f64]) -> Density {
    Density::new(smooth_profile(grid, coeffs), 1e-30).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn divergence_of_gradient_is_laplacian(c in coeff_vec()) {
        let g = torus(32);
        let f = band_limited(&g, &c);
        let lhs = divergence(&gradient(&f));
        let rhs = laplacian(&f);
        let err = lhs.values().iter().zip(rhs.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-10, "error {err}");
    }

    #[test]
    fn integration_by_parts(c in coeff_vec(), d in coeff_vec(), e in coeff_vec()) {
        let g = torus(32);
        let f = band_limited(&g, &c);
        let v = VectorField::new(&g, vec![band_limited(&g, &d).into_values(), band_limited(&g, &e).into_values()]).unwrap();
        let div = divergence(&v);
        prop_assert!(integrate(&div).abs() <= 1e-10);
        let gf = gradient(&f);
        let lhs: f64 = (0..g.len()).map(|k| gf.at(k)[0] * v.at(k)[0] + gf.at(k)[1] * v.at(k)[1]).sum::<f64>() * g.cell_volume();
        let rhs = -integrate(&f.zip_map(&div, |a, b| a * b).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn heat_preserves_mass_and_composes(c in coeff_vec(), s in 0.0f64..0.5, t in 0.0f64..0.5, sigma in 0.1f64..2.0) {
        let g = torus(32);
        let f = band_limited(&g, &c).map(|v| v + 3.0);
        let ps = heat_propagate(&f, s, sigma).unwrap();
        let pts = heat_propagate(&ps, t, sigma).unwrap();
        let direct = heat_propagate(&f, s + t, sigma).unwrap();
        prop_assert!((integrate(&ps) - integrate(&f)).abs() <= 1e-12 * integrate(&f).abs().max(1.0));
        let err = pts.values().iter().zip(direct.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-10, "semigroup error {err}");
        prop_assert!(heat_propagate(&f, -1e-3, sigma).is_err());
    }

    #[test]
    fn bohm_forms_agree(c in coeff_vec()) {
        let g = torus(64);
        let rho = smooth_density(&g, &c);
        let a = bohm_potential(&rho).unwrap();
        let b = bohm_potential_direct(&rho).unwrap();
        let scale = a.max_abs().max(1.0);
        let err = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-6 * scale, "error {err}");
    }

    #[test]
    fn functionals_are_psd_and_forms_agree(c in coeff_vec(), d in coeff_vec()) {
        let g = torus(64);
        let rho = smooth_density(&g, &c);
        let phase = Phase::from_field(band_limited(&g, &d));
        let i = fisher_matrix(&rho).unwrap();
        prop_assert!(i.discrepancy <= 1e-6);
        let s = entropy_production_matrix(&rho, &phase).unwrap();
        prop_assert!(s.discrepancy <= 1e-6);
        let v = velocity_second_moment(&rho, &phase).unwrap();
        prop_assert!(sym_eig(&i.value).eigenvalues.iter().all(|l| *l >= -1e-10));
        prop_assert!(sym_eig(&v).eigenvalues.iter().all(|l| *l >= -1e-10));
    }

    #[test]
    fn entropy_is_translation_invariant(c in coeff_vec(), sa in 0usize..32, sb in 0usize..32) {
        let g = torus(32);
        let raw = smooth_profile(&g, &c);
        let rho = Density::new(raw.clone(), 1e-30).unwrap();
        let n = 32;
        let shifted: Vec<f64> = (0..g.len())
            .map(|k| {
                let (i, j) = (k / n, k % n);
                raw.values()[((i + sa) % n) * n + (j + sb) % n]
            })
            .collect();
        let moved = Density::new(ScalarField::new(&g, shifted).unwrap(), 1e-30).unwrap();
        prop_assert_eq!(entropy(&rho).unwrap(), entropy(&moved).unwrap());
    }

    #[test]
    fn eigen_decomposition_is_orthonormal(p in prop::collection::vec(-5.0f64..5.0, 6), n in 1usize..=3) {
        let m = SymMatrix::from_packed(n, &p[..n * (n + 1) / 2]);
        let e = sym_eig(&m);
        prop_assert!((e.reconstruct() - m).max_abs() <= 1e-12 * m.max_abs().max(1.0));
        for a in 0..n {
            let norm: f64 = e.eigenvectors[a].iter().map(|x| x * x).sum();
            prop_assert!((norm - 1.0).abs() <= 1e-12);
            for b in 0..a {
                let dot: f64 = e.eigenvectors[a].iter().zip(&e.eigenvectors[b]).map(|(x, y)| x * y).sum();
                prop_assert!(dot.abs() <= 1e-10);
            }
        }
        prop_assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn trace_bound_is_sum_over_eigenbasis(seed in any::<u64>(), n in 1usize..=3, l in prop::collection::vec(-4.0f64..0.9, 3), t in 0.0f64..1.0) {
        let q = random_orthonormal_basis(n, seed);
        let mut m0 = SymMatrix::zeros(n);
        for a in 0..n {
            m0 += SymMatrix::outer(&q[a]).scale(l[a]);
        }
        let e = sym_eig(&m0);
        let sum: f64 = e.eigenvectors.iter().map(|w| riccati_lower_bound(&m0, w, t).value).sum();
        let tr = trace_lower_bound(&m0, t).value;
        prop_assert!(rel(tr, sum) <= 1e-12, "{tr} vs {sum}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn riccati_solutions_satisfy_all_bounds(
        seed in any::<u64>(),
        n in 1usize..=3,
        l in prop::collection::vec(-3.0f64..0.6, 3),
        b in prop::collection::vec(-0.4f64..0.4, 9),
        phase in 0.0f64..6.0,
    ) {
        let q = random_orthonormal_basis(n, seed);
        let mut m0 = SymMatrix::zeros(n);
        for a in 0..n {
            m0 += SymMatrix::outer(&q[a]).scale(l[a]);
        }
        let mut bbt = SymMatrix::zeros(n);
        for col in 0..n {
            bbt += SymMatrix::outer(&b[col * 3..col * 3 + n]);
        }
        let times = uniform_times(1.0, 201);
        let path = integrate_riccati(&m0, |t| bbt.scale(1.0 + 0.5 * (3.0 * t + phase).sin()), &times, 20);
        let path = MatrixOdePath::new(times, path, None).unwrap();
        prop_assert!(check_matrix_ode(&path, 1e-6).unwrap().pass);
        prop_assert!(check_comparison_bounds(&path, &sample_directions(&m0, 8, seed), None, 1e-6).unwrap().pass);
        for w in random_unit_vectors(n, 8, seed.wrapping_add(1)) {
            prop_assert!(concavity_profile(&path, &w, None, 1e-6).unwrap().pass);
        }
    }

    #[test]
    fn report_verdict_matches_margins(
        margins in prop::collection::vec((-1.0f64..1.0, 1e-6f64..1e-1), 1..6),
        tol in 1e-6f64..1e-1,
        ok in any::<bool>(),
    ) {
        let mut r = CheckReport::new("synthetic", tol);
        for (k, (m, t)) in margins.iter().enumerate() {
            r.push(Component { name: format!("c{k}"), margin: *m, tolerance: *t, witness: None });
        }
        r.hypotheses_ok = ok;
        let r = r.finish();
        prop_assert_eq!(r.pass, r.worst_margin >= -tol && ok);
        let each = margins.iter().all(|(m, t)| *m >= -*t);
        prop_assert_eq!(r.pass, each && ok);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn heat_flow_matches_gaussian_oracle(v0 in 0.8f64..1.2, sigma in 0.3f64..0.8) {
        let g = Grid::new(&[20.0], &[256]).unwrap();
        let rho0 = matflow_core::flows::gaussian_density(&g, &[0.0], &SymMatrix::diag(&[v0])).unwrap();
        let times = uniform_times(1.0, 17);
        let traj = heat_flow(&rho0, sigma, &times).unwrap();
        let series = assemble_series(&traj).unwrap();
        // the box holds 7 standard deviations while v0 + sigma <= 2; narrower
        // Gaussians approach the density floor at the box edge and
        // the certificate grows accordingly
        let cert = series.resolution_certificate();
        if v0 >= 1.0 {
            prop_assert!(cert <= 1e-6, "certificate {cert}");
        }
        for (snap, rec) in traj.snapshots().iter().zip(&series.records) {
            let mass = integrate(snap.density().field());
            prop_assert!((mass - 1.0).abs() <= 1e-10);
            let o = gaussian_heat_oracle(&SymMatrix::diag(&[v0]), sigma, rec.t).unwrap();
            prop_assert!((rec.entropy - o.entropy).abs() <= 1e-8, "E {} vs {}", rec.entropy, o.entropy);
            prop_assert!((rec.s_mat - o.s_mat).max_abs() <= cert.max(1e-6));
            prop_assert!(rec.t_plus.max_abs() <= 1e-6);
        }
    }

    #[test]
    fn bridge_hits_its_marginals_and_checkers_are_deterministic(ma in -1.0f64..1.0, mz in -1.0f64..1.0, va in 0.7f64..1.5, vz in 0.7f64..1.5) {
        let g = Grid::new(&[20.0], &[256]).unwrap();
        let a = matflow_core::flows::gaussian_density(&g, &[ma], &SymMatrix::diag(&[va])).unwrap();
        let z = matflow_core::flows::gaussian_density(&g, &[mz], &SymMatrix::diag(&[vz])).unwrap();
        let opts = SinkhornOptions::default();
        let traj = schrodinger_bridge(&a, &z, 1.0, 1.0, &uniform_times(1.0, 33), opts).unwrap();
        let snaps = traj.snapshots();
        for (got, want) in [(snaps[0].density(), &a), (snaps[snaps.len() - 1].density(), &z)] {
            let err = got.values().iter().zip(want.values()).map(|(x, y)| (x - y).abs() / y).fold(0.0, f64::max);
            prop_assert!(err <= 1e-8, "marginal error {err}");
        }
        let series = assemble_series(&traj).unwrap();
        let tol = checks::default_tolerance(&series);
        let first = checks::check_t_inequality(&series, tol, 11).unwrap();
        let again = checks::check_t_inequality(&series, tol, 11).unwrap();
        prop_assert_eq!(&first, &again);
        prop_assert!(first.pass);
        prop_assert_eq!(first.seed, Some(11));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn sign_flip_is_detected(v0 in 0.6f64..2.0, sigma in 0.5f64..1.5) {
        let g = Grid::new(&[20.0], &[256]).unwrap();
        let rho0 = matflow_core::flows::gaussian_density(&g, &[0.3], &SymMatrix::diag(&[v0])).unwrap();
        let traj = flip_phase_sign(&heat_flow(&rho0, sigma, &uniform_times(1.0, 33)).unwrap()).unwrap();
        let series = assemble_series(&traj).unwrap();
        let tol = checks::default_tolerance(&series);
        let t = checks::check_t_inequality(&series, tol, checks::DEFAULT_SEED).unwrap();
        let s = checks::check_s_inequality(&series, tol, checks::DEFAULT_SEED).unwrap();
        prop_assert!(!t.pass || !s.pass);
    }
}

#[test]
fn checkers_refuse_outside_their_hypotheses() {
    let g = Grid::new(&[20.0], &[256]).unwrap();
    let rho0 = matflow_core::flows::gaussian_density(&g, &[0.0], &SymMatrix::diag(&[1.0])).unwrap();
    let traj = heat_flow(&rho0, 0.0, &uniform_times(1.0, 17)).unwrap();
    let series = assemble_series(&traj).unwrap();
    let r = checks::check_cost_identity(&series, 1e-4).unwrap();
    assert!(!r.hypotheses_ok);
    assert!(!r.pass);
}
