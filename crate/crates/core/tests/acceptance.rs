//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line to stderr, written
//! directly so the line shows up even when libtest captures output.

use std::io::Write as _;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use sacbp::adjoint::{adjoint_backward, cost_variation_adjoint};
use sacbp::dynamics::{simulate_hybrid, simulate_nominal, total_cost, ObservationSource};
use sacbp::filters::{
    categorical_update, ekf_predict_continuous, ekf_predict_discrete, ekf_update_raw, kf1d_update,
    unscented_predict, unscented_update, UkfParams,
};
use sacbp::harness::{metrics_csv, run_logs, ExperimentConfig};
use sacbp::planner::{optimize_perturbation, MetricsLog, VariationCoefficients};
use sacbp::rng::{derive_seed, rng_from_seed};
use sacbp::scenarios::{
    make_linear_fixture, LinearSystem, ScalarTargetConfig, ScalarTargetModel, TrackingConfig,
    TrackingModel,
};
use sacbp::{CategoricalBelief, ControlBox, ControlSchedule, GaussianBelief, Nominal, ScenarioModel, TimeGrid};

// The two benchmarks time planner calls, so they take turns.
static BENCH: Mutex<()> = Mutex::new(());

fn report(id: u32, name: &str, pass: bool, elapsed: Duration, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {id} {name}: {status} ({:.1} s) {detail}\n", elapsed.as_secs_f64());
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {id} {name} failed: {detail}");
}

fn zeros(model: &dyn ScenarioModel, grid: &TimeGrid) -> Nominal {
    let sched = ControlSchedule::zeros(0.0, grid.dt_ctrl, grid.n_steps().unwrap(), model.control_box().clone());
    Nominal::OpenLoop(sched.unwrap())
}

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap()
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[test]
fn criterion_1_adjoint_variation_duality() {
    let start = Instant::now();
    let model = make_linear_fixture(1, 3).unwrap();
    let sys = model.system();
    let (a, b, c, r) = (sys.a[(0, 0)], sys.b[(0, 0)], sys.c[(0, 0)], sys.r[(0, 0)]);
    let cu = model.control_cost_diag()[0];
    let grid = TimeGrid::new(1e-3, 0.5, 2.0).unwrap();
    let nominal = zeros(&model, &grid);
    let x0 = DVector::from_vec(vec![1.2, 0.8]);
    let traj = simulate_nominal(&model, &x0, &nominal, &grid, 21).unwrap();
    let adj = adjoint_backward(&traj, &nominal, &model).unwrap();

    // Forward variation of (mean, variance) from the closed-form scalar Kalman filter:
    // Euler flow m' = m + dt a m, s' = s + dt (2 a s + q); update with gain k = s c / (c² s + r).
    let (tau, v) = (0.7, 1.5);
    let dt = grid.dt_ctrl;
    let j0 = (tau / dt).round() as usize;
    let jump_of = |j: usize| traj.jump_indices.iter().position(|&e| e == j);
    let jump = |pre: &DVector<f64>, y: f64, psi: [f64; 2]| {
        let (m, s) = (pre[0], pre[1]);
        let sv = c * c * s + r;
        let k = s * c / sv;
        let dm = (1.0 - k * c) * psi[0] + (y - c * m) * c * r / (sv * sv) * psi[1];
        let ds = r * r / (sv * sv) * psi[1];
        [dm, ds]
    };
    let mut psi = [b * v, 0.0];
    let mut psi_hat = 0.5 * cu * v * v;
    let pair = |rho: &DVector<f64>, psi: [f64; 2], hat: f64| rho[0] * psi[0] + rho[1] * psi[1] + hat;
    let mut invariant = vec![pair(adj.rho_before(j0), psi, psi_hat)];
    if let Some(k) = jump_of(j0) {
        psi = jump(&traj.pre_jump_states[k], traj.observations[k][0], psi);
        invariant.push(pair(&adj.rho[j0], psi, psi_hat));
    }
    let mut jumps_crossed = 0;
    for j in j0..traj.n_steps() {
        let x = &traj.states[j];
        psi_hat += dt * (x[0] * psi[0] + 0.5 * psi[1]);
        psi = [psi[0] * (1.0 + a * dt), psi[1] * (1.0 + 2.0 * a * dt)];
        invariant.push(pair(adj.rho_before(j + 1), psi, psi_hat));
        if let Some(k) = jump_of(j + 1) {
            psi = jump(&traj.pre_jump_states[k], traj.observations[k][0], psi);
            jumps_crossed += 1;
            invariant.push(pair(&adj.rho[j + 1], psi, psi_hat));
        }
    }
    let x_f = traj.final_state();
    let nu_forward = psi_hat + x_f[0] * psi[0] + 0.5 * psi[1];
    let nu_adjoint = cost_variation_adjoint(&adj, &traj, &model, tau, &DVector::from_element(1, v)).unwrap();
    let i0 = invariant[0];
    let drift = invariant.iter().map(|i| (i - i0).abs()).fold(0.0, f64::max) / (1.0 + i0.abs());
    let gap = (nu_forward - nu_adjoint).abs() / (1.0 + nu_adjoint.abs());
    let elapsed = start.elapsed();
    report(
        1,
        "adjoint-variation duality",
        jumps_crossed == 3 && drift <= 1e-6 && gap <= 1e-6 && elapsed.as_secs_f64() < 5.0,
        elapsed,
        &format!("jumps={jumps_crossed} drift={drift:.2e} nu_gap={gap:.2e}"),
    );
}

/// Per-sample adjoint variations and finite-difference cost slopes (one list per `ε`) over
/// `n_mc` sampled observation sequences, each replayed for the perturbed rollouts.
fn fd_vs_adjoint(
    model: &dyn ScenarioModel,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    tau: f64,
    v: &DVector<f64>,
    eps: &[f64],
    n_mc: usize,
    seed: u64,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let nominal = zeros(model, grid);
    let perturbed: Vec<Nominal> = eps.iter().map(|&e| nominal.perturbed(tau, v, e).unwrap()).collect();
    let mut nus = Vec::with_capacity(n_mc);
    let mut fds = vec![Vec::with_capacity(n_mc); eps.len()];
    for i in 0..n_mc {
        let traj = simulate_nominal(model, x0, &nominal, grid, derive_seed(seed, 0, i as u64)).unwrap();
        let adj = adjoint_backward(&traj, &nominal, model).unwrap();
        let nu = cost_variation_adjoint(&adj, &traj, model, tau, v).unwrap();
        let base = total_cost(&traj, model);
        nus.push(nu);
        for (e, pert) in perturbed.iter().enumerate() {
            let replay = ObservationSource::Replay(&traj.observations);
            let p = simulate_hybrid(model, x0, pert, grid, replay).unwrap();
            fds[e].push((total_cost(&p, model) - base) / eps[e]);
        }
    }
    (nus, fds)
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn criterion_2_mode_insertion_gradient() {
    let start = Instant::now();
    let scalar = ScalarTargetModel::new(ScalarTargetConfig::default()).unwrap();
    let grid = TimeGrid::new(1e-4, 0.5, 2.0).unwrap();
    let v = DVector::from_element(1, 1.5);
    let (nu, fd) = fd_vs_adjoint(&scalar, &scalar.initial_state(), &grid, 0.7, &v, &[1e-3, 5e-4], 1, 0);
    let (nu, fd) = (nu[0], [fd[0][0], fd[1][0]]);
    let (e1, e2) = ((fd[0] - nu).abs(), (fd[1] - nu).abs());
    let rel = e1 / nu.abs();
    let ratio = e1 / e2;

    let model = TrackingModel::new(TrackingConfig { n_targets: 2, ..Default::default() }, 0.2).unwrap();
    let grid = TimeGrid::new(1e-3, 0.2, 2.0).unwrap();
    let v = DVector::from_vec(vec![2.0, -1.0]);
    let n_mc = 256;
    let (nus, fds) = fd_vs_adjoint(&model, &model.initial_state(), &grid, 0.35, &v, &[1e-3], n_mc, 17);
    let (nu_mean, nu_se) = mean_and_stderr(&nus);
    let (fd_mean, fd_se) = mean_and_stderr(&fds[0]);
    let z = (fd_mean - nu_mean).abs() / nu_se.hypot(fd_se);
    let elapsed = start.elapsed();
    report(
        2,
        "mode insertion gradient",
        rel <= 0.01 && (1.5..=2.5).contains(&ratio) && z <= 2.0 && elapsed.as_secs_f64() < 60.0,
        elapsed,
        &format!("rel_err={rel:.2e} ratio={ratio:.3} tracking |FD-E[nu]|/pooled_se={z:.3}"),
    );
}

#[test]
fn criterion_3_qp_against_grid() {
    let start = Instant::now();
    let mut rng = rng_from_seed(5150);
    let (mut gap, mut nu_max, mut at_nominal) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    for _ in 0..100 {
        let m = 2;
        let c = DVector::from_fn(m, |_, _| rng.random_range(0.05..4.0));
        let h = DMatrix::from_fn(4, m, |_, _| rng.random_range(-3.0..3.0));
        let rho = DVector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
        let lo = DVector::from_fn(m, |_, _| rng.random_range(-2.0..-0.2));
        let hi = DVector::from_fn(m, |_, _| rng.random_range(0.2..2.0));
        let u = DVector::from_fn(m, |i, _| rng.random_range(lo[i]..hi[i]));
        let bounds = ControlBox::new(lo.clone(), hi.clone()).unwrap();
        let w = h.transpose() * &rho;
        // ν(v) = ½vᵀCv + ρᵀH(v - u) - ½uᵀCu
        let nu = |v: &[f64]| {
            (0..m).map(|i| 0.5 * c[i] * (v[i] * v[i] - u[i] * u[i]) + w[i] * (v[i] - u[i])).sum::<f64>()
        };
        let coeffs = VariationCoefficients::from_costate(w.clone(), &u, &c);
        let res = optimize_perturbation(&[(0.5, coeffs.clone())], &c, &bounds).unwrap();
        let raw = res.per_tau_curve[0].nu;
        let axis = |i: usize| {
            let n = ((hi[i] - lo[i]) / 1e-2).ceil() as usize;
            (0..=n).map(|k| lo[i] + (hi[i] - lo[i]) * k as f64 / n as f64).collect::<Vec<_>>()
        };
        let (xs, ys) = (axis(0), axis(1));
        let best = xs
            .iter()
            .flat_map(|&x| ys.iter().map(move |&y| [x, y]))
            .map(|p| nu(&p))
            .fold(f64::INFINITY, f64::min);
        gap = gap.max((raw - best).abs()).max((nu(res.per_tau_curve[0].v.as_slice()) - raw).abs());
        nu_max = nu_max.max(res.nu_star).max(raw);
        at_nominal = at_nominal.max(coeffs.value(&u, &c).abs());
    }
    let elapsed = start.elapsed();
    report(
        3,
        "QP against grid",
        gap <= 1e-3 && nu_max <= 0.0 && at_nominal == 0.0 && elapsed.as_secs_f64() < 10.0,
        elapsed,
        &format!("max_gap={gap:.2e} max_nu*={nu_max:.2e} max|nu(u)|={at_nominal:e}"),
    );
}

#[test]
fn criterion_4_filter_exactness() {
    let start = Instant::now();
    let fixture = make_linear_fixture(3, 4).unwrap();
    let sys = fixture.system();
    let dt = 0.05;
    let f = DMatrix::identity(3, 3) + &sys.a * dt;
    let g = &sys.b * dt;
    let q = &sys.q * dt;
    let params = UkfParams::default();
    let mut rng = rng_from_seed(77);
    let mut kf_m = DVector::from_vec(vec![-0.4, 1.1, 0.2]);
    let mut kf_p = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 0.8, 0.1, 0.0, 0.1, 1.5]);
    let mut ekf = GaussianBelief::new(kf_m.clone(), kf_p.clone()).unwrap();
    let mut ukf = ekf.clone();
    let (mut ekf_err, mut ukf_err) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let u = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        // textbook Kalman filter
        let m = &f * &kf_m + &g * &u;
        let p = &f * &kf_p * f.transpose() + &q;
        let s = &sys.c * &p * sys.c.transpose() + &sys.r;
        let k = &p * sys.c.transpose() * s.try_inverse().unwrap();
        kf_m = &m + &k * (&y - &sys.c * &m);
        kf_p = &p - &k * &sys.c * &p;

        let pred = ekf_predict_discrete(&ekf, &f, &g, &u, &q).unwrap();
        ekf = ekf_update_raw(sys, &pred.mean, &pred.cov, &y).unwrap();
        let pred = unscented_predict(&ukf.mean, &ukf.cov, |x| &f * x + &g * &u, &q, &params).unwrap();
        ukf = unscented_update(&pred.mean, &pred.cov, &sys.r, |x, v| &sys.c * x + v, &y, &params).unwrap();
        let err = |b: &GaussianBelief| (&b.mean - &kf_m).amax().max((&b.cov - &kf_p).amax());
        ekf_err = ekf_err.max(err(&ekf));
        ukf_err = ukf_err.max(err(&ukf));
    }

    let (a, qs, s0) = (-0.4, 0.6, 0.3);
    let scalar = LinearSystem {
        a: DMatrix::from_element(1, 1, a),
        b: DMatrix::from_element(1, 1, 1.0),
        c: DMatrix::from_element(1, 1, 1.0),
        q: DMatrix::from_element(1, 1, qs),
        r: DMatrix::from_element(1, 1, 1.0),
    };
    let mut b = GaussianBelief::new(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, s0)).unwrap();
    for _ in 0..1000 {
        b = ekf_predict_continuous(&b, &DVector::zeros(1), &scalar, 1e-3).unwrap();
    }
    let e2a = (2.0 * a).exp();
    let lyap_err = (b.cov[(0, 0)] - (e2a * s0 + qs * (e2a - 1.0) / (2.0 * a))).abs();
    let elapsed = start.elapsed();
    report(
        4,
        "filter exactness",
        ekf_err <= 1e-8 && ukf_err <= 1e-8 && lyap_err <= 1e-3 && elapsed.as_secs_f64() < 5.0,
        elapsed,
        &format!("ekf={ekf_err:.2e} ukf={ukf_err:.2e} lyapunov={lyap_err:.2e}"),
    );
}

#[test]
fn criterion_5_jump_bounds() {
    let start = Instant::now();
    let n = 100_000;
    let mut rng = rng_from_seed(31337);
    let mut kf_bad = 0;
    for _ in 0..n {
        let m: f64 = rng.random_range(-1e3..1e3);
        let s: f64 = 10f64.powf(rng.random_range(-8.0..4.0));
        let y: f64 = rng.random_range(-1e3..1e3);
        let (m1, s1) = kf1d_update(m, s, y).unwrap();
        let nb = m.hypot(s);
        if m1.hypot(s1) > 2f64.sqrt() * nb + nb * y.abs() {
            kf_bad += 1;
        }
    }
    let mut cat_bad = 0;
    let mut cat_n = 0;
    while cat_n < n {
        let k = rng.random_range(2..10);
        let w = DVector::from_fn(k, |_, _| rng.random_range(0.0..1.0));
        let lik = DMatrix::from_fn(4, k, |_, _| rng.random_range(0.0..1.0));
        let y = rng.random_range(0..4);
        let prior = CategoricalBelief::new(w).unwrap();
        let Ok(post) = categorical_update(&prior, &lik, y) else { continue };
        cat_n += 1;
        if post.weights().norm() > prior.weights().norm() {
            cat_bad += 1;
        }
    }
    let elapsed = start.elapsed();
    report(
        5,
        "jump bounds",
        kf_bad == 0 && cat_bad == 0 && elapsed.as_secs_f64() < 10.0,
        elapsed,
        &format!("scalar_kf_violations={kf_bad}/{n} categorical_violations={cat_bad}/{cat_n}"),
    );
}

fn final_value(log: &MetricsLog, metric: &str) -> f64 {
    log.metric(metric).last().expect("metric logged").1
}

fn initial_value(log: &MetricsLog, metric: &str) -> f64 {
    log.metric(metric).first().expect("metric logged").1
}

fn run(cfg: &ExperimentConfig) -> Vec<MetricsLog> {
    let logs: Vec<MetricsLog> = run_logs(cfg, workers()).unwrap().into_iter().map(|(_, l)| l).collect();
    for l in &logs {
        assert!(!l.failed(), "{}/{} seed failed: {:?}", cfg.scenario.id, cfg.planner.id, l.failure);
    }
    logs
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) }
}

fn mean_update(logs: &[MetricsLog]) -> f64 {
    let all: Vec<f64> = logs.iter().flat_map(|l| l.update_seconds.iter().copied()).collect();
    mean(&all)
}

#[test]
fn criterion_6_tracking_benchmark() {
    let _guard = BENCH.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut cfg = config("tracking.toml");
    assert_eq!((cfg.scenario.tracking.n_targets, cfg.seeds.len()), (5, 10));
    let metric = "worst_entropy_exp";
    let sacbp = run(&cfg);
    cfg.planner.id = "greedy".into();
    let greedy = run(&cfg);
    cfg.planner.id = "nominal_only".into();
    let zero = run(&cfg);
    let finals = |logs: &[MetricsLog]| mean(&logs.iter().map(|l| final_value(l, metric)).collect::<Vec<_>>());
    let (s, g, z) = (finals(&sacbp), finals(&greedy), finals(&zero));
    let upd = mean_update(&sacbp);
    let elapsed = start.elapsed();
    report(
        6,
        "tracking benchmark",
        s <= 0.8 * g && s <= 0.8 * z && g < z && upd <= 1.0 && elapsed.as_secs_f64() < 900.0,
        elapsed,
        &format!("sacbp={s:.4} greedy={g:.4} zero={z:.4} mean_update={upd:.3}s"),
    );
}

#[test]
fn criterion_7_manipulation_benchmark() {
    let _guard = BENCH.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut cfg = config("manipulation.toml");
    assert_eq!(cfg.seeds.len(), 10);
    let metric = "residual_norm";
    let sacbp = run(&cfg);
    cfg.planner.id = "mcts_dpw".into();
    let mcts = run(&cfg);
    let reached = sacbp.iter().filter(|l| final_value(l, metric) <= 0.3 * initial_value(l, metric)).count();
    let finals = |logs: &[MetricsLog]| logs.iter().map(|l| final_value(l, metric)).collect::<Vec<_>>();
    let (ms, mm) = (median(&finals(&sacbp)), median(&finals(&mcts)));
    let (ts, tm) = (mean_update(&sacbp), mean_update(&mcts));
    // the MCTS query budget is set so its calls take about as long as a SACBP update
    let matched = (0.5..=2.0).contains(&(tm / ts));
    let elapsed = start.elapsed();
    report(
        7,
        "manipulation benchmark",
        reached >= 7 && ms < mm && matched && elapsed.as_secs_f64() < 900.0,
        elapsed,
        &format!(
            "reached={reached}/10 median sacbp={ms:.4} mcts={mm:.4} update sacbp={ts:.3}s mcts={tm:.3}s"
        ),
    );
}

#[test]
fn criterion_8_determinism() {
    let start = Instant::now();
    let mut tracking = config("tracking.toml");
    tracking.sim_duration = 4.0;
    tracking.seeds = vec![0, 1, 2, 3];
    let mut manipulation = config("manipulation.toml");
    manipulation.sim_duration = 2.0;
    manipulation.seeds = vec![5, 6];
    let mut mcts = manipulation.clone();
    mcts.planner.id = "mcts_dpw".into();
    let mut identical = true;
    let mut compared = 0;
    for cfg in [&tracking, &manipulation, &mcts] {
        let csvs = |w: usize| -> Vec<String> {
            run_logs(cfg, w).unwrap().iter().map(|(_, l)| metrics_csv(l)).collect()
        };
        let reference = csvs(1);
        for w in [4, 8] {
            identical &= csvs(w) == reference;
            compared += reference.len();
        }
    }
    let elapsed = start.elapsed();
    report(
        8,
        "determinism across workers",
        identical && elapsed.as_secs_f64() < 120.0,
        elapsed,
        &format!("csv files compared={compared} workers=1,4,8"),
    );
}
