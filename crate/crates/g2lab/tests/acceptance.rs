//! End-to-end acceptance suite. Each numbered criterion prints one PASS/FAIL
//! line; the test fails if any criterion fails.

use g2lab::exterior::{adjugate, coframe3, natural_flat, FrameAlgebra, KForm};
use g2lab::flow::{
    abelian_closed_form, consistency_residuals, flow_rhs, integrate, sample_consistent_jet,
    verify_solution, FlowState, IntegratorConfig,
};
use g2lab::g2::{
    local_invariant_forms, metric_from_three_form, model_phi, model_star_phi, multi_moment,
    G2Structure, LocalFrameData,
};
use g2lab::reduction::{basis_change, derive_forms, BaseGeometry, InvariantData};
use g2lab::sphere7::{
    self, extremum_point, grad_nu, hessian_at, maximize_nu, nu, reference_hessian, spin7_form,
    zero_sphere_point, SpherePoint, TorusGenerators,
};
use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn check(ok: bool, msg: &str) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

fn random_local_data(rng: &mut StdRng) -> LocalFrameData {
    LocalFrameData {
        p: rng.gen_range(0.2..2.0),
        q1: rng.gen_range(-1.0..1.0),
        q2: rng.gen_range(0.2..2.0),
        r1: rng.gen_range(-1.0..1.0),
        r2: rng.gen_range(-1.0..1.0),
        r3: rng.gen_range(-1.5..1.5),
        r4: rng.gen_range(0.1..1.5),
    }
}

/// The interior 10%-90% of a trajectory, away from walls where finite
/// differences of the curvature coefficients lose accuracy.
fn interior_slice(solution: &g2lab::flow::FlowSolution) -> g2lab::flow::FlowSolution {
    let n = solution.samples.len();
    g2lab::flow::FlowSolution {
        samples: solution.samples[n / 10..(9 * n) / 10].to_vec(),
        termination: solution.termination,
        base: solution.base,
    }
}

fn random_regular_state(rng: &mut StdRng) -> FlowState {
    loop {
        let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0f64..1.0));
        let h = m * m.transpose() + Matrix3::identity() * rng.gen_range(0.5..1.5);
        let u = Matrix3::from_fn(|_, _| rng.gen_range(-1.0f64..1.0));
        if u.determinant().abs() < 0.1 {
            continue;
        }
        let s = rng.gen_range(0.05..0.8) * h.determinant().sqrt();
        let state = FlowState { s, u, h };
        if state.validate().is_ok() && state.rho() > 0.05 {
            return state;
        }
    }
}

/// Pointwise identities of the model three-form.
fn criterion_1() -> Result<(), String> {
    let frame = FrameAlgebra::orthonormal(7);
    let s = G2Structure::standard(frame.clone());
    let coeff = s
        .phi
        .wedge(&s.star_phi)
        .coefficient(&[1, 2, 3, 4, 5, 6, 7])
        .val;
    check((coeff - 7.0).abs() < 1e-14, "phi ^ *phi != 7 vol")?;
    let (metric, _) = metric_from_three_form(&s.phi).map_err(|e| e.to_string())?;
    let id = DMatrix::<f64>::identity(7, 7);
    check(
        (&metric - &id).abs().max() < 1e-12,
        "recovered metric is not the identity",
    )?;
    let idx = [1, 2, 3, 4, 5, 6, 7];
    let star = model_phi(7, &idx).hodge(&frame);
    check(
        star.max_abs_diff(&model_star_phi(7, &idx)) < 1e-14,
        "hodge dual of the model three-form mismatch",
    )
}

/// Staircase normal form identities over 1000 random draws.
fn criterion_2() -> Result<(), String> {
    let s = G2Structure::standard(FrameAlgebra::orthonormal(7));
    let mut rng = StdRng::seed_from_u64(1001);
    for _ in 0..1000 {
        let data = random_local_data(&mut rng);
        let [u1, u2, u3] = data.u_vectors();
        let (nu_v, dnu) = multi_moment(&s, &u1, &u2, &u3);
        check((nu_v - data.nu()).abs() < 1e-11, "nu != p q2 r3")?;
        let expected = KForm::monomial(7, &[7], 4.0 * data.p * data.q2 * data.r4);
        check(dnu.approx_eq(&expected, 1e-11), "dnu != 4 p q2 r4 e^7")?;
        let h = data.h_matrix().determinant();
        check((h - data.h_det()).abs() < 1e-11, "h != p^2 q2^2 rtilde^2")?;
        let rho = h - nu_v * nu_v;
        let dnu_sq = dnu.inner(&dnu, &s.frame);
        check((rho - dnu_sq / 16.0).abs() < 1e-11, "rho != |dnu|^2/16")?;
    }
    Ok(())
}

/// Extrema, Hessian blocks/rank, and criticality of the six zero spheres.
fn criterion_3() -> Result<(), String> {
    let (_, max_v) = maximize_nu(0, 100_000, true);
    check(
        (max_v - 0.25).abs() < 1e-8,
        &format!("maximized nu = {max_v}"),
    )?;
    let (hessian, rank) = hessian_at(&extremum_point(1.0)).map_err(|e| e.to_string())?;
    check(
        (&hessian - &reference_hessian()).abs().max() < 1e-14,
        "Hessian entries differ from the exact rationals",
    )?;
    check(rank == 4, &format!("Hessian rank = {rank}"))?;
    let mut rng = StdRng::seed_from_u64(1003);
    for i in 1..=4 {
        for j in (i + 1)..=4 {
            for _ in 0..200 {
                let p = zero_sphere_point(i, j, &mut rng);
                check(nu(&p).abs() < 1e-12, "zero sphere point has nu != 0")?;
                let g = grad_nu(&p);
                let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                check(gn < 1e-10, "zero sphere point is not critical")?;
            }
        }
    }
    Ok(())
}

/// The polynomial nu and its gradient against the four-form contractions.
fn criterion_4() -> Result<(), String> {
    let psi = spin7_form();
    let mut rng = StdRng::seed_from_u64(1004);
    for _ in 0..1000 {
        let p = SpherePoint::random(&mut rng);
        let us = TorusGenerators::all_u_at(&p);
        let slot = psi.interior(&p.x);
        let form_value = slot.evaluate(&[&us[0], &us[1], &us[2]]);
        check(
            (nu(&p) - form_value).abs() < 1e-9,
            "nu != phi(U1,U2,U3) pointwise",
        )?;
        // gradient: -4 Psi(U1,U2,U3, .) restricted to the tangent space
        let w = psi.interior(&us[0]).interior(&us[1]).interior(&us[2]);
        let mut amb = [0.0f64; 8];
        for (k, a) in amb.iter_mut().enumerate() {
            let mut e = [0.0f64; 8];
            e[k] = 1.0;
            *a = -4.0 * w.evaluate(&[&e]);
        }
        let d: f64 = (0..8).map(|k| amb[k] * p.x[k]).sum();
        let g = grad_nu(&p);
        for k in 0..8 {
            let proj = amb[k] - d * p.x[k];
            check(
                (g[k] - proj).abs() < 1e-9,
                "grad nu != -4 (star phi)(U1,U2,U3, .)^sharp",
            )?;
        }
    }
    Ok(())
}

/// Flow on the flat base against the closed-form solution plus the RK4
/// convergence order.
fn criterion_5() -> Result<(), String> {
    let initial = FlowState {
        s: 0.5,
        u: Matrix3::identity(),
        h: Matrix3::identity(),
    };
    let base = BaseGeometry::abelian();
    let mut worst = 0.0f64;
    for (direction, s_end) in [(1.0, 0.6), (-1.0, 0.1)] {
        let config = IntegratorConfig {
            step: 1e-4,
            direction,
            s_end: Some(s_end),
            ..Default::default()
        };
        let solution = integrate(&initial, base, &config).map_err(|e| e.to_string())?;
        check(
            solution.termination.as_str() == "reached_end",
            "flat-base run did not reach its target",
        )?;
        for sample in &solution.samples {
            let (r, u) = abelian_closed_form(0.5, sample.state.s);
            worst = worst.max((sample.state.h[(0, 0)] - r).abs() / r);
            worst = worst.max((sample.state.u[(0, 0)] - u).abs() / u);
        }
    }
    check(worst < 1e-8, &format!("closed-form error {worst:.3e}"))?;
    // convergence order: halving the step shrinks the endpoint error ~16x
    let err_at = |step: f64| -> Result<f64, String> {
        let config = IntegratorConfig {
            step,
            s_end: Some(0.6),
            ..Default::default()
        };
        let solution = integrate(&initial, base, &config).map_err(|e| e.to_string())?;
        let last = solution.final_state();
        let (r, u) = abelian_closed_form(0.5, last.s);
        Ok((last.h[(0, 0)] - r).abs().max((last.u[(0, 0)] - u).abs()))
    };
    let ratio = err_at(4e-3)? / err_at(2e-3)?;
    check(
        (12.0..=20.0).contains(&ratio),
        &format!("halving ratio {ratio:.2} outside [12, 20]"),
    )
}

/// H stays symmetric without re-symmetrization, and consistent jets keep the
/// antisymmetric part of H' at the noise floor.
fn criterion_6() -> Result<(), String> {
    let su2_initial = FlowState {
        s: 0.5,
        u: Matrix3::identity(),
        h: Matrix3::identity(),
    };
    let solution = integrate(&su2_initial, BaseGeometry::su2(), &IntegratorConfig::default())
        .map_err(|e| e.to_string())?;
    check(
        solution.max_symmetry_drift() < 1e-10,
        "symmetry drift along the su(2) trajectory",
    )?;
    let mut rng = StdRng::seed_from_u64(1006);
    let lambdas = [-1.0, 0.0, 1.0];
    for run in 0..100 {
        let state = random_regular_state(&mut rng);
        let base = BaseGeometry {
            lambda: std::array::from_fn(|_| lambdas[rng.gen_range(0..3)]),
        };
        let direction = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let config = IntegratorConfig {
            step: 1e-3,
            direction,
            s_end: Some(state.s * (1.0 + 0.05 * direction)),
            max_steps: 2000,
            ..Default::default()
        };
        let solution = integrate(&state, base, &config).map_err(|e| e.to_string())?;
        check(
            solution.max_symmetry_drift() < 1e-10,
            &format!("drift on randomized trajectory {run}"),
        )?;
    }
    for i in 0..1000 {
        let state = random_regular_state(&mut rng);
        let jet = sample_consistent_jet(&state, 9000 + i).map_err(|e| e.to_string())?;
        check(
            jet.k.iter().any(|m| m.abs().max() > 1e-6),
            "sampled jet has no inhomogeneous part",
        )?;
        let res = consistency_residuals(&state, &jet).map_err(|e| e.to_string())?;
        check(res.max() < 1e-12, "jet consistency residual")?;
        let rhs = flow_rhs(&state, &jet).map_err(|e| e.to_string())?;
        check(
            natural_flat(&rhs.h_prime).norm() < 1e-11,
            "H' has an antisymmetric part",
        )?;
    }
    Ok(())
}

/// The su(2) run: u collapses past 1e-6, s_max is step-stable, and the
/// commutation identity holds along the trajectory.
fn criterion_7() -> Result<(), String> {
    let initial = FlowState {
        s: 0.5,
        u: Matrix3::identity(),
        h: Matrix3::identity(),
    };
    let base = BaseGeometry::su2();
    let config = IntegratorConfig {
        rho_min: 1e-18,
        det_u_min: 9e-7,
        ..Default::default()
    };
    let solution = integrate(&initial, base, &config).map_err(|e| e.to_string())?;
    let s_max = solution.final_state().s;
    check(s_max > 0.5, "s_max <= s_0")?;
    let u_final = solution.final_state().u.determinant().abs().cbrt();
    check(
        u_final < 1e-6,
        &format!("u at termination = {u_final:.3e}"),
    )?;
    let half = IntegratorConfig {
        step: 5e-5,
        ..config
    };
    let refined = integrate(&initial, base, &half).map_err(|e| e.to_string())?;
    let rel = (refined.final_state().s - s_max).abs() / s_max;
    check(rel < 1e-6, &format!("s_max halving drift {rel:.3e}"))?;
    // verify on the finer run, where the finite-difference stencil error
    // sits well below the tolerance
    let report = verify_solution(&interior_slice(&refined), 150).map_err(|e| e.to_string())?;
    check(
        report.max_commutation < 1e-7,
        &format!("commutation residual {:.3e}", report.max_commutation),
    )
}

/// Assembled seven-dimensional structures are nearly parallel along both
/// trajectories, with the degree-split residuals at the tight tolerance.
fn criterion_8() -> Result<(), String> {
    let initial = FlowState {
        s: 0.5,
        u: Matrix3::identity(),
        h: Matrix3::identity(),
    };
    for (base, config, label) in [
        (
            BaseGeometry::abelian(),
            IntegratorConfig {
                s_end: Some(0.6),
                ..Default::default()
            },
            "flat base",
        ),
        (
            BaseGeometry::su2(),
            IntegratorConfig {
                step: 5e-5,
                ..Default::default()
            },
            "su(2) base",
        ),
    ] {
        let solution = integrate(&initial, base, &config).map_err(|e| e.to_string())?;
        let report =
            verify_solution(&interior_slice(&solution), 150).map_err(|e| e.to_string())?;
        check(
            report.max_nearly_parallel < 1e-6,
            &format!(
                "{label}: nearly-parallel residual {:.3e}",
                report.max_nearly_parallel
            ),
        )?;
        check(
            report.max_deg0 < 1e-8,
            &format!("{label}: degree-0 residual {:.3e}", report.max_deg0),
        )?;
        check(
            report.max_deg1 < 1e-8,
            &format!("{label}: degree-1 residual {:.3e}", report.max_deg1),
        )?;
    }
    Ok(())
}

/// Covariance under lattice basis change for 200 random P, including the
/// invariance of the assembled metric blocks.
fn criterion_9() -> Result<(), String> {
    let mut rng = StdRng::seed_from_u64(1009);
    let lambdas = [-1.0, 0.0, 1.0];
    let mut done = 0;
    while done < 200 {
        let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0f64..1.0));
        let h = m * m.transpose() + Matrix3::identity() * rng.gen_range(0.5..1.5);
        let u = Matrix3::from_fn(|_, _| rng.gen_range(-1.0f64..1.0));
        let s = rng.gen_range(-0.9..0.9) * h.determinant().sqrt();
        let data = InvariantData {
            s,
            u,
            h,
            base: BaseGeometry {
                lambda: std::array::from_fn(|_| lambdas[rng.gen_range(0..3)]),
            },
        };
        if data.validate().is_err() {
            continue;
        }
        let p = loop {
            let p = Matrix3::from_fn(|_, _| rng.gen_range(-1.0f64..1.0));
            if p.determinant().abs() > 0.2 {
                break p;
            }
        };
        let changed = match basis_change(&data, &p) {
            Ok(c) if c.validate().is_ok() => c,
            _ => continue,
        };
        done += 1;
        let det = p.determinant();
        check(
            (changed.s - det * data.s).abs() < 1e-10 * (1.0 + data.s.abs()),
            "nu-level rule",
        )?;
        check(
            (changed.h - p * data.h * p.transpose()).abs().max() < 1e-10,
            "H rule",
        )?;
        let scale = 1.0 + data.h_det().abs();
        check(
            (changed.h_det() - det * det * data.h_det()).abs() < 1e-9 * scale,
            "h rule",
        )?;
        check(
            (changed.rho() - det * det * data.rho()).abs() < 1e-9 * scale,
            "rho rule",
        )?;
        let adj_t = adjugate(&p).transpose();
        let alpha_rule = data.alpha().apply(&adj_t);
        check(
            changed
                .alpha()
                .approx_eq(&alpha_rule, 1e-10 * (1.0 + alpha_rule.max_abs())),
            "alpha rule",
        )?;
        let before = derive_forms(&data).map_err(|e| e.to_string())?;
        let after = derive_forms(&changed).map_err(|e| e.to_string())?;
        let tau_rule = before.tau.apply(&adj_t);
        check(
            after.tau.approx_eq(&tau_rule, 1e-10 * (1.0 + tau_rule.max_abs())),
            "tau rule",
        )?;
        let sigma_rule = before.sigma.apply(&(p * det));
        check(
            after
                .sigma
                .approx_eq(&sigma_rule, 1e-10 * (1.0 + sigma_rule.max_abs())),
            "sigma rule",
        )?;
        // assembled metric blocks diag(1/(16 rho), H, U^T H U / rho) pull
        // back to the original under the coframe change
        // (ds, theta, e) -> (ds, (P^T)^{-1} theta, e)
        let blocks = |d: &InvariantData| -> DMatrix<f64> {
            let mut g = DMatrix::<f64>::zeros(7, 7);
            g[(0, 0)] = 1.0 / (16.0 * d.rho());
            for i in 0..3 {
                for j in 0..3 {
                    g[(1 + i, 1 + j)] = d.h[(i, j)];
                }
            }
            let e_block = d.u.transpose() * d.h * d.u / d.rho();
            for i in 0..3 {
                for j in 0..3 {
                    g[(4 + i, 4 + j)] = e_block[(i, j)];
                }
            }
            g
        };
        let q = p
            .transpose()
            .try_inverse()
            .ok_or("P is not invertible")?;
        let mut change = DMatrix::<f64>::identity(7, 7);
        // the level coordinate rescales with the lattice volume
        change[(0, 0)] = det;
        for i in 0..3 {
            for j in 0..3 {
                change[(1 + i, 1 + j)] = q[(i, j)];
            }
        }
        let pulled = change.transpose() * blocks(&changed) * &change;
        let original = blocks(&data);
        let tol = 1e-10 * (1.0 + original.abs().max());
        check(
            (&pulled - &original).abs().max() < tol,
            "assembled metric invariance",
        )?;
        // theta rule: the transformed coframe stays dual to the new lattice
        // directions in the seven-dimensional staircase model
        let local = random_local_data(&mut rng);
        let structure = G2Structure::standard(FrameAlgebra::orthonormal(7));
        let (theta, alpha7) = local_invariant_forms(&local).map_err(|e| e.to_string())?;
        let us = local.u_vectors();
        let new_us: [[f64; 7]; 3] = std::array::from_fn(|i| {
            std::array::from_fn(|k| (0..3).map(|j| p[(i, j)] * us[j][k]).sum())
        });
        let new_theta = theta.apply(&Matrix3::from(q));
        for i in 0..3 {
            for j in 0..3 {
                let v = new_theta.components[i]
                    .interior(&new_us[j])
                    .coefficient(&[])
                    .val;
                let expect = if i == j { 1.0 } else { 0.0 };
                check((v - expect).abs() < 1e-10, "theta rule duality")?;
            }
        }
        let nu_v = local.nu();
        let new_nu = structure
            .phi
            .evaluate(&[&new_us[0], &new_us[1], &new_us[2]]);
        check(
            (new_nu - det * nu_v).abs() < 1e-10 * (1.0 + nu_v.abs()),
            "nu scaling rule",
        )?;
        // alpha_i = nu theta_i - phi(U_j, U_k, .) transforms by (adj P)^T
        let new_alpha_def: Vec<KForm> = (0..3)
            .map(|i| {
                let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                new_theta.components[i].scale(new_nu).sub(
                    &structure
                        .phi
                        .interior(&new_us[j])
                        .interior(&new_us[k]),
                )
            })
            .collect();
        let alpha_rule7 = alpha7.apply(&adj_t);
        for i in 0..3 {
            check(
                new_alpha_def[i]
                    .approx_eq(&alpha_rule7.components[i], 1e-9 * (1.0 + alpha_rule7.max_abs())),
                "alpha rule in the staircase model",
            )?;
        }
    }
    Ok(())
}

#[test]
fn acceptance() {
    let criteria: Vec<(&str, fn() -> Result<(), String>)> = vec![
        ("pointwise model identities", criterion_1),
        ("staircase normal form identities", criterion_2),
        ("seven-sphere extrema and Hessian", criterion_3),
        ("seven-sphere moment map consistency", criterion_4),
        ("flat-base flow vs closed form", criterion_5),
        ("symmetry preservation", criterion_6),
        ("su(2) run self-consistency", criterion_7),
        ("assembled structures nearly parallel", criterion_8),
        ("basis-change covariance", criterion_9),
    ];
    let mut failures = Vec::new();
    for (i, (label, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(()) => println!("criterion {}: {label} ... PASS", i + 1),
            Err(msg) => {
                println!("criterion {}: {label} ... FAIL ({msg})", i + 1);
                failures.push(format!("criterion {} ({label}): {msg}", i + 1));
            }
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}
