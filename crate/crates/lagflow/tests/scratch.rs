// Temporary probe for sweep tuning. Delete before shipping.
use lagflow::analysis::{closed_loop_system, kkt_oracle, kp_from_ki, KiBranch};
use lagflow::bench::make_quadratic;
use lagflow::controllers::GainConfig;
use lagflow::integrate::stable_step_size;
use nalgebra::DVector;

fn iters(a: &nalgebra::DMatrix<f64>, b: &DVector<f64>, dt: f64, target: &DVector<f64>) -> usize {
    let dim = b.len();
    let mut z = DVector::zeros(dim);
    let mut rate = DVector::zeros(dim);
    for k in 1..=3_000_000usize {
        rate.copy_from(b);
        rate.gemv(dt, a, &z, dt);
        z += &rate;
        let mut dist = 0.0f64;
        for i in 0..dim {
            dist = dist.max((z[i] - target[i]).abs());
        }
        if dist <= 1e-6 {
            return k;
        }
    }
    usize::MAX
}

/// dt minimizing the spectral radius of I + dt A (convex in dt); ternary search.
fn optimal_dt(a: &nalgebra::DMatrix<f64>) -> (f64, f64) {
    let eigs = a.clone().complex_eigenvalues();
    let radius = |dt: f64| -> f64 {
        eigs.iter()
            .map(|mu| nalgebra::Complex::new(1.0 + dt * mu.re, dt * mu.im).norm())
            .fold(0.0f64, f64::max)
    };
    let dt_max = eigs
        .iter()
        .map(|mu| 2.0 * mu.re.abs() / mu.norm_sqr())
        .fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (0.0, dt_max);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if radius(m1) < radius(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let dt = 0.5 * (lo + hi);
    (dt, radius(dt))
}

#[test]
fn probe_optimal() {
    for m in [2usize, 18, 26] {
        let mut g_sum = 0.0;
        let runs = 12;
        for run in 0..runs as u64 {
            let q = make_quadratic(50, m, 1000 + run * 7 + m as u64);
            let (x, l) = kkt_oracle(&q).unwrap();
            let mut target = DVector::zeros(50 + m);
            target.rows_mut(0, 50).copy_from(&x);
            target.rows_mut(50, m).copy_from(&l);
            let (b1, b2) = q.curvature_bounds();

            let count = |g: &GainConfig| -> (usize, f64) {
                let (a, b) = closed_loop_system(&q, g);
                let (dt, rad) = optimal_dt(&a);
                (iters(&a, &b, dt, &target), rad)
            };
            let kp = kp_from_ki(b1, b2, 20.0, KiBranch::RhoPlusKpBeta2).unwrap().0;
            let (i0, r0) = count(&GainConfig::pdgd(20.0));
            let (i1, r1) = count(&GainConfig::pi(kp, 20.0));
            let gain = 100.0 * (i0 as f64 - i1 as f64) / i0 as f64;
            g_sum += gain;
            println!("m={m} run={run}: pdgd={i0} (rad {r0:.5}) pi={i1} (rad {r1:.5}) gain={gain:.1}%");
        }
        println!("== m={m}: mean gain {:.1}%", g_sum / runs as f64);
    }
}

#[test]
fn probe_sysid() {
    use lagflow::bench::make_sysid;
    use lagflow::controllers::{fl_rhs, GainConfig};
    use lagflow::problem::JointState;
    use lagflow::{integrate, zero_dynamics_check, Controller, IntegratorConfig, Method};

    let (p, theta_true, data) = make_sysid(400, 0, 0.0).unwrap();
    // Zero-dynamics conditioning at the true solution.
    let mut xstar = DVector::zeros(p.n());
    for i in 0..5 {
        xstar[i] = theta_true[i];
    }
    for k in 1..=400 {
        xstar[5 + k - 1] = data.y_true[k - 1];
    }
    let t0 = std::time::Instant::now();
    let zd = zero_dynamics_check(&p, &xstar, &DVector::zeros(p.m())).unwrap();
    println!(
        "reduced Hessian ({} x {}): min eig {:.4}, eigs: {:?}  ({:.1}s)",
        zd.reduced_hessian.nrows(),
        zd.reduced_hessian.ncols(),
        zd.min_eig,
        zd.reduced_hessian
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .map(|v: &f64| (v * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>(),
        t0.elapsed().as_secs_f64()
    );

    // Trace theta along the flow.
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let probe_seed: u64 = std::env::var("LAGFLOW_PROBE_SEED").ok().and_then(|v| v.parse().ok()).unwrap_or(0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(lagflow::bench::mix_seed(probe_seed, 1, 0));
    let x0: DVector<f64> = DVector::from_fn(p.n(), |_, _| StandardNormal.sample(&mut rng));
    let gains = GainConfig::fl_uniform(1.0, p.m());
    let mut x = x0;
    let dt = 1e-2;
    for step in 0..=2000 {
        if step % 200 == 0 {
            let th: Vec<f64> = (0..5usize).map(|i| (x[i] * 1e4).round() / 1e4).collect();
            let err = (0..5usize)
                .map(|i| (x[i] - theta_true[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            let f = p.cost(&x).unwrap();
            println!("t={:5.1} theta={th:?} err={err:.5} f={f:.6}", step as f64 * dt);
        }
        let d = fl_rhs(&p, &x, &gains).unwrap();
        x.axpy(dt, &d.xdot, 1.0);
    }
    let _ = (integrate as fn(_, _, _, _, _) -> _, IntegratorConfig::default(), Method::Euler, Controller::Fl, JointState::new as fn(_, _) -> _);
}

#[test]
fn probe_safety() {
    use rayon::prelude::*;
    for safety in [0.98, 0.99, 0.995] {
        for m in [2usize, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24, 26] {
            let runs = 100u64;
            let results: Vec<(usize, usize)> = (0..runs)
                .into_par_iter()
                .map(|run| {
                    let q = make_quadratic(50, m, lagflow::bench::mix_seed(9, m as u64, run));
                    let (x, l) = kkt_oracle(&q).unwrap();
                    let mut target = DVector::zeros(50 + m);
                    target.rows_mut(0, 50).copy_from(&x);
                    target.rows_mut(50, m).copy_from(&l);
                    let (b1, b2) = q.curvature_bounds();
                    let count = |g: &GainConfig| -> usize {
                        let (a, b) = closed_loop_system(&q, g);
                        let dt = stable_step_size(&a, safety).unwrap();
                        iters(&a, &b, dt, &target)
                    };
                    let kp1 = kp_from_ki(b1, b2, 20.0, KiBranch::RhoPlusKpBeta1).unwrap().0;
                    (count(&GainConfig::pdgd(20.0)), count(&GainConfig::pi(kp1, 20.0)))
                })
                .collect();
            let s: (f64, f64) = results
                .iter()
                .fold((0.0, 0.0), |a, r| (a.0 + r.0 as f64, a.1 + r.1 as f64));
            println!(
                "safety={safety} m={m}: pdgd {:.1} pi {:.1} gain {:.1}%",
                s.0 / runs as f64,
                s.1 / runs as f64,
                100.0 * (s.0 - s.1) / s.0
            );
        }
    }
}

#[test]
fn probe_means() {
    use rayon::prelude::*;
    for m in [18usize, 20, 22, 24, 26] {
        let runs = 150u64;
        let results: Vec<(usize, usize, usize)> = (0..runs)
            .into_par_iter()
            .map(|run| {
                let q = make_quadratic(50, m, lagflow::bench::mix_seed(9, m as u64, run));
                let (x, l) = kkt_oracle(&q).unwrap();
                let mut target = DVector::zeros(50 + m);
                target.rows_mut(0, 50).copy_from(&x);
                target.rows_mut(50, m).copy_from(&l);
                let (b1, b2) = q.curvature_bounds();
                let count = |g: &GainConfig| -> usize {
                    let (a, b) = closed_loop_system(&q, g);
                    let dt = stable_step_size(&a, 0.9).unwrap();
                    iters(&a, &b, dt, &target)
                };
                let kp2 = kp_from_ki(b1, b2, 20.0, KiBranch::RhoPlusKpBeta2).unwrap().0;
                let kp1 = kp_from_ki(b1, b2, 20.0, KiBranch::RhoPlusKpBeta1).unwrap().0;
                (
                    count(&GainConfig::pdgd(20.0)),
                    count(&GainConfig::pi(kp2, 20.0)),
                    count(&GainConfig::pi(kp1, 20.0)),
                )
            })
            .collect();
        let s: (f64, f64, f64) = results.iter().fold((0.0, 0.0, 0.0), |a, r| {
            (a.0 + r.0 as f64, a.1 + r.1 as f64, a.2 + r.2 as f64)
        });
        println!(
            "m={m}: pdgd {:.1} | pi-b2 {:.1} (gain {:.1}%) | pi-b1 {:.1} (gain {:.1}%)",
            s.0 / runs as f64,
            s.1 / runs as f64,
            100.0 * (s.0 - s.1) / s.0,
            s.2 / runs as f64,
            100.0 * (s.0 - s.2) / s.0
        );
    }
}

#[test]
fn probe() {
    for m in [2usize, 18, 26] {
        for run in 0..3u64 {
            let q = make_quadratic(50, m, 1000 + run * 7 + m as u64);
            let (x, l) = kkt_oracle(&q).unwrap();
            let mut target = DVector::zeros(50 + m);
            target.rows_mut(0, 50).copy_from(&x);
            target.rows_mut(50, m).copy_from(&l);
            let (b1, b2) = q.curvature_bounds();
            let (a1, a2) = q.gram_bounds();

            let report = |label: &str, g: &GainConfig| {
                let (a, b) = closed_loop_system(&q, g);
                let dt = stable_step_size(&a, 0.9).unwrap();
                let eig = a.clone().complex_eigenvalues();
                let slow = eig.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
                let k = iters(&a, &b, dt, &target);
                println!(
                    "  {label}: kp={:.4} dt={:.5} slowRe={:.3} iters={k}",
                    g.kp, dt, slow
                );
                k
            };

            println!("m={m} run={run}: beta=({b1:.1},{b2:.1}) alpha=({a1:.2},{a2:.1})");
            let kp_b2 = kp_from_ki(b1, b2, 20.0, KiBranch::RhoPlusKpBeta2).unwrap().0;
            let kp_b1 = kp_from_ki(b1, b2, 20.0, KiBranch::RhoPlusKpBeta1).unwrap().0;
            let i0 = report("PDGD    ", &GainConfig::pdgd(20.0));
            let i2 = report("PI-b2   ", &GainConfig::pi(kp_b2, 20.0));
            let i1 = report("PI-b1   ", &GainConfig::pi(kp_b1, 20.0));
            println!(
                "  gains: b2 {:.1}%  b1 {:.1}%",
                100.0 * (i0 as f64 - i2 as f64) / i0 as f64,
                100.0 * (i0 as f64 - i1 as f64) / i0 as f64
            );
        }
    }
}
