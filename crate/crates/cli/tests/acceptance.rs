//! Acceptance criteria, one verdict line each. Runs without the libtest harness so every
//! line is printed; exits nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::Matrix3;
use rand::Rng;

use collabcal::diffusion::{
    analytic_gaussian_denoiser, ddim_step, fit_codec, forward_sample, make_schedule, sample, standard_normal,
    SamplerKind, SamplerOptions,
};
use collabcal::evaluation::{median, run_sweep, run_trial, PipelineConfig, PipelineFlags, SweepGrid};
use collabcal::geometry::{wrap_angle, Pose2, Transform2};
use collabcal::matching::{edge_consistency, max_weight_assignment};
use collabcal::posegraph::{se2_residual, se2_residual_jacobians, AgentEdge, ObsEdge, PoseGraphProblem, SolverOptions};
use collabcal::scenario::{generate_scene, observe, rng_from_seed, synthesize_feature, NoiseConfig};
use collabcal::tensor::Tensor3;

type Criterion = (u32, &'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let el = start.elapsed();
    (el <= limit, format!("{:.2}s of {}s", el.as_secs_f64(), limit.as_secs()))
}

fn and_time(mut v: Verdict, limit: u64, start: Instant) -> Verdict {
    let (ok, t) = within(Duration::from_secs(limit), start);
    v.pass &= ok;
    v.detail = format!("{}; {t}", v.detail);
    v
}

fn brute_max(scores: &[Vec<f64>]) -> f64 {
    fn go(scores: &[Vec<f64>], row: usize, used: &mut Vec<bool>, left: usize, acc: f64, best: &mut f64) {
        if row == scores.len() || left == 0 {
            if left == 0 && acc > *best {
                *best = acc;
            }
            return;
        }
        // rows beyond the column count may stay unassigned
        if scores.len() - row > left {
            go(scores, row + 1, used, left, acc, best);
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                go(scores, row + 1, used, left - 1, acc + scores[row][c], best);
                used[c] = false;
            }
        }
    }
    let cols = scores[0].len();
    let mut best = f64::NEG_INFINITY;
    go(
        scores,
        0,
        &mut vec![false; cols],
        scores.len().min(cols),
        0.0,
        &mut best,
    );
    best
}

fn c1_assignment_optimality() -> Verdict {
    let start = Instant::now();
    let mut rng = rng_from_seed(1001);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let rows = rng.random_range(1..=7);
        let cols = rng.random_range(1..=7);
        let scores: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.random::<f64>()).collect())
            .collect();
        let pairs = max_weight_assignment(&scores);
        let km: f64 = pairs.iter().fold(0.0, |acc, &(r, c)| acc + scores[r][c]);
        if km != brute_max(&scores) {
            mismatches += 1;
        }
    }
    and_time(
        check(
            mismatches == 0,
            format!("{mismatches}/1000 totals differ from brute force"),
        ),
        10,
        start,
    )
}

fn c2_noiseless_fixed_point() -> Verdict {
    let start = Instant::now();
    let cfg = PipelineConfig {
        noise: NoiseConfig::noiseless(),
        ..PipelineConfig::default()
    };
    let (mut worst_f1, mut worst_t, mut worst_r, mut worst_iou) = (1.0f64, 0.0f64, 0.0f64, 1.0f64);
    for seed in 0..200 {
        let r = match run_trial(&cfg, PipelineFlags::ALL, seed) {
            Ok(r) => r,
            Err(e) => return check(false, format!("seed {seed}: {e}")),
        };
        worst_f1 = worst_f1.min(r.match_f1);
        worst_t = worst_t.max(r.trans_rmse_after).max(r.trans_rmse_before);
        worst_r = worst_r.max(r.rot_rmse_after).max(r.rot_rmse_before);
        worst_iou = worst_iou.min(r.iou_after);
    }
    let pass = worst_f1 == 1.0 && worst_t <= 1e-9 && worst_r <= 1e-9 && worst_iou >= 0.999;
    and_time(
        check(
            pass,
            format!("min F1 {worst_f1}, max RMSE {worst_t:.2e} m / {worst_r:.2e} deg, min IoU {worst_iou:.6}"),
        ),
        30,
        start,
    )
}

fn c3_pcm_efficacy() -> Verdict {
    let start = Instant::now();
    let mut cfg = PipelineConfig::default();
    cfg.noise.sigma_t = 0.4;
    cfg.noise.sigma_r = 0.4;
    let on_flags = PipelineFlags { pcm: true, tcm: false };
    let off_flags = PipelineFlags::NONE;
    let (mut before, mut after, mut wins) = (Vec::new(), Vec::new(), 0);
    for seed in 0..100 {
        let (on, off) = match (run_trial(&cfg, on_flags, seed), run_trial(&cfg, off_flags, seed)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return check(false, format!("seed {seed}: {e}")),
        };
        before.push(on.trans_rmse_before);
        after.push(on.trans_rmse_after);
        if on.iou_after >= off.iou_after {
            wins += 1;
        }
    }
    let (mb, ma) = (median(&before), median(&after));
    let pass = ma <= 0.5 * mb && wins >= 95;
    and_time(
        check(
            pass,
            format!(
                "median RMSE {mb:.4} -> {ma:.4} m (ratio {:.3}); IoU on >= off in {wins}/100",
                ma / mb
            ),
        ),
        300,
        start,
    )
}

fn random_pose(rng: &mut impl Rng, span: f64) -> Pose2 {
    Pose2::new(
        rng.random_range(-span..span),
        rng.random_range(-span..span),
        rng.random_range(-3.1..3.1),
    )
}

fn jitter(p: &Pose2, rng: &mut impl Rng, t: f64, r: f64) -> Pose2 {
    Pose2::new(
        p.x + rng.random_range(-t..t),
        p.y + rng.random_range(-t..t),
        p.theta + rng.random_range(-r..r),
    )
}

fn random_problem(rng: &mut impl Rng) -> PoseGraphProblem {
    let n_agents = rng.random_range(2..=4u32);
    let n_objects = rng.random_range(3..=12u32);
    let agents: Vec<Pose2> = (0..n_agents).map(|_| random_pose(rng, 20.0)).collect();
    let objects: Vec<Pose2> = (0..n_objects).map(|_| random_pose(rng, 40.0)).collect();
    let mut obs_edges = Vec::new();
    for (a, ap) in agents.iter().enumerate() {
        for (o, op) in objects.iter().enumerate() {
            if rng.random_bool(0.7) {
                obs_edges.push(ObsEdge {
                    agent: a as u32,
                    object: o as u32,
                    measurement: jitter(&ap.relative(op), rng, 0.2, 0.02),
                    information: [100.0, 100.0, 1e4],
                });
            }
        }
    }
    let agent_edges = (1..n_agents)
        .map(|j| AgentEdge {
            from: j,
            to: 0,
            measurement: jitter(&agents[j as usize].relative(&agents[0]), rng, 0.5, 0.01),
            information: [6.25, 6.25, 2e4],
        })
        .collect();
    PoseGraphProblem {
        agents: agents
            .iter()
            .enumerate()
            .map(|(i, p)| (i as u32, if i == 0 { *p } else { jitter(p, rng, 2.0, 0.3) }))
            .collect(),
        objects: objects
            .iter()
            .enumerate()
            .map(|(i, p)| (i as u32, jitter(p, rng, 2.0, 0.3)))
            .collect(),
        obs_edges,
        agent_edges,
        anchor: 0,
    }
}

fn numeric_jacobians(m: &Pose2, a: &Pose2, x: &Pose2, h: f64) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let mut ja = [[0.0; 3]; 3];
    let mut jx = [[0.0; 3]; 3];
    for k in 0..3 {
        let mut d = [0.0; 3];
        d[k] = h;
        let plus = |p: &Pose2| Pose2::new(p.x + d[0], p.y + d[1], p.theta + d[2]);
        let minus = |p: &Pose2| Pose2::new(p.x - d[0], p.y - d[1], p.theta - d[2]);
        let (ra_p, ra_m) = (se2_residual(m, &plus(a), x), se2_residual(m, &minus(a), x));
        let (rx_p, rx_m) = (se2_residual(m, a, &plus(x)), se2_residual(m, a, &minus(x)));
        for row in 0..3 {
            let diff = |p: f64, q: f64| if row == 2 { wrap_angle(p - q).unwrap() } else { p - q };
            ja[row][k] = diff(ra_p[row], ra_m[row]) / (2.0 * h);
            jx[row][k] = diff(rx_p[row], rx_m[row]) / (2.0 * h);
        }
    }
    (ja, jx)
}

fn rel_err(analytic: &Matrix3<f64>, numeric: &[[f64; 3]; 3]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for r in 0..3 {
        for c in 0..3 {
            num += (analytic[(r, c)] - numeric[r][c]).powi(2);
            den += numeric[r][c].powi(2);
        }
    }
    (num / den).sqrt()
}

fn c4_lm_correctness() -> Verdict {
    let start = Instant::now();
    let mut rng = rng_from_seed(4004);
    let opts = SolverOptions::default();

    let mut monotone = 0;
    for _ in 0..100 {
        let p = random_problem(&mut rng);
        if let Ok((_, report)) = p.solve_lm(&opts) {
            if report.cost_trace.windows(2).all(|w| w[1] <= w[0]) {
                monotone += 1;
            }
        }
    }

    let mut worst_jac = 0.0f64;
    for _ in 0..100 {
        let (m, a, x) = (
            random_pose(&mut rng, 30.0),
            random_pose(&mut rng, 30.0),
            random_pose(&mut rng, 30.0),
        );
        let (_, ja, jx) = se2_residual_jacobians(&m, &a, &x);
        let (na, nx) = numeric_jacobians(&m, &a, &x, 1e-6);
        worst_jac = worst_jac.max(rel_err(&ja, &na)).max(rel_err(&jx, &nx));
    }

    // one observation edge: X* = E·T; one agent edge: E_j* = E_i·T_ji⁻¹.
    // The default absolute gradient tolerance stops near a 1e-9 residual, which lever arms of
    // tens of metres amplify past 1e-8, so these solves run to the cost-change floor instead.
    let opts = SolverOptions {
        grad_tol: 1e-14,
        ..SolverOptions::default()
    };
    let mut worst_closed = 0.0f64;
    for _ in 0..50 {
        let (e, t) = (random_pose(&mut rng, 20.0), random_pose(&mut rng, 20.0));
        let p = PoseGraphProblem {
            agents: [(0, e)].into(),
            objects: [(0, random_pose(&mut rng, 20.0))].into(),
            obs_edges: vec![ObsEdge {
                agent: 0,
                object: 0,
                measurement: t,
                information: [1.0, 2.0, 3.0],
            }],
            agent_edges: vec![],
            anchor: 0,
        };
        let want = e.compose(&t);
        let got = p.solve_lm(&opts).map(|(s, _)| s.objects[&0]);
        worst_closed = worst_closed.max(got.map_or(f64::INFINITY, |g| pose_gap(&g, &want)));

        let (ei, tji) = (random_pose(&mut rng, 20.0), random_pose(&mut rng, 20.0));
        let p = PoseGraphProblem {
            agents: [(0, ei), (1, random_pose(&mut rng, 20.0))].into(),
            objects: Default::default(),
            obs_edges: vec![],
            agent_edges: vec![AgentEdge {
                from: 1,
                to: 0,
                measurement: tji,
                information: [4.0, 4.0, 9.0],
            }],
            anchor: 0,
        };
        let want = ei.compose(&tji.inverse());
        let got = p.solve_lm(&opts).map(|(s, _)| s.agents[&1]);
        worst_closed = worst_closed.max(got.map_or(f64::INFINITY, |g| pose_gap(&g, &want)));
    }

    let pass = monotone == 100 && worst_jac < 1e-5 && worst_closed <= 1e-8;
    and_time(
        check(
            pass,
            format!(
                "monotone traces {monotone}/100; max Jacobian rel err {worst_jac:.2e}; max closed-form gap {worst_closed:.2e}"
            ),
        ),
        60,
        start,
    )
}

fn pose_gap(a: &Pose2, b: &Pose2) -> f64 {
    (a.x - b.x)
        .abs()
        .max((a.y - b.y).abs())
        .max(wrap_angle(a.theta - b.theta).unwrap().abs())
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn entries(t: &Transform2) -> [[f64; 3]; 3] {
    let m = t.matrix();
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

fn c5_edge_consistency() -> Verdict {
    let start = Instant::now();
    let mut rng = rng_from_seed(5005);
    let mut identical_ok = true;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t = random_pose(&mut rng, 50.0).to_matrix();
        identical_ok &= edge_consistency(&t, &t) == 1.0;

        // T_pm = D·T_qn with D a unit translation, so ‖T_pm·T_qn⁻¹ − I‖_F = 1
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let d = [[1.0, 0.0, phi.cos()], [0.0, 1.0, phi.sin()], [0.0, 0.0, 1.0]];
        let qn = random_pose(&mut rng, 50.0);
        let t_qn = qn.to_matrix();
        let t_pm_entries = matmul(&d, &entries(&t_qn));
        let t_pm = Transform2::from_matrix(Matrix3::from_fn(|i, j| t_pm_entries[i][j])).expect("rigid");

        // independent check of the deviation norm with plain arrays
        let inv = entries(&qn.inverse().to_matrix());
        let prod = matmul(&entries(&t_pm), &inv);
        let mut fro = 0.0;
        for (i, row) in prod.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                fro += (v - if i == j { 1.0 } else { 0.0 }).powi(2);
            }
        }
        let expected = (-fro.sqrt()).exp();
        worst = worst
            .max((edge_consistency(&t_pm, &t_qn) - expected).abs())
            .max((edge_consistency(&t_pm, &t_qn) - (-1.0f64).exp()).abs());
    }
    let pass = identical_ok && worst <= 1e-12;
    and_time(
        check(
            pass,
            format!("identical -> 1.0 exactly: {identical_ok}; max |S - e^-1| {worst:.2e}"),
        ),
        60,
        start,
    )
}

fn moments(x: &Tensor3) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.mean();
    let v = x.as_slice().iter().map(|u| (u - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

fn c6_forward_marginals() -> Verdict {
    let start = Instant::now();
    let sched = make_schedule(500, 1e-4, 0.02).expect("schedule");
    let (mu0, sigma0, n) = (0.5, 0.8, 100_000usize);
    let mut rng = rng_from_seed(6006);
    let mut worst = 0.0f64;
    let mut notes = Vec::new();
    for t in [1, 125, 250, 500] {
        let x0 = standard_normal((1, 1, n), &mut rng).map(|v| mu0 + sigma0 * v);
        let eps = standard_normal((1, 1, n), &mut rng);
        let xt = forward_sample(&x0, t, &eps, &sched).expect("forward");
        let ab = sched.alpha_bar(t);
        let (m_th, v_th) = (ab.sqrt() * mu0, ab * sigma0 * sigma0 + 1.0 - ab);
        let (m, v) = moments(&xt);
        let z_mean = (m - m_th).abs() / (v_th / n as f64).sqrt();
        let z_var = (v - v_th).abs() / (v_th * (2.0 / (n as f64 - 1.0)).sqrt());
        worst = worst.max(z_mean).max(z_var);
        notes.push(format!("t={t}: {z_mean:.2}/{z_var:.2} SE"));
    }
    and_time(
        check(worst <= 3.0, format!("mean/var deviations {}", notes.join(", "))),
        60,
        start,
    )
}

fn c7_sampler_recovery() -> Verdict {
    let start = Instant::now();
    let sched = make_schedule(500, 1e-4, 0.02).expect("schedule");
    let (mu0, sigma0) = (0.5, 1.0);
    let den = analytic_gaussian_denoiser(mu0, sigma0, &sched).expect("denoiser");
    let mut pass = true;
    let mut notes = Vec::new();
    for (kind, seed) in [(SamplerKind::Ddpm, 7007), (SamplerKind::Ddim, 7008)] {
        let opts = SamplerOptions {
            kind,
            n_steps: 8,
            ..Default::default()
        };
        let x = sample(&den, &[], (1, 1, 10_000), &sched, &opts, &mut rng_from_seed(seed)).expect("sample");
        let (m, v) = moments(&x);
        let mean_err = (m - mu0).abs() / sigma0;
        let var_err = (v / (sigma0 * sigma0) - 1.0).abs();
        let ok = mean_err <= 0.02 && var_err <= 0.05;
        pass &= ok;
        notes.push(format!(
            "{kind:?} mean err {:.2}% sd, var err {:.2}% ({})",
            100.0 * mean_err,
            100.0 * var_err,
            if ok { "ok" } else { "out of tolerance" }
        ));
    }
    and_time(check(pass, notes.join("; ")), 60, start)
}

fn c8_perfect_inversion() -> Verdict {
    let start = Instant::now();
    let sched = make_schedule(500, 1e-4, 0.02).expect("schedule");
    let mut rng = rng_from_seed(8008);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x0 = standard_normal((4, 4, 4), &mut rng).map(|v| 3.0 * v);
        let eps = standard_normal((4, 4, 4), &mut rng);
        let t = rng.random_range(1..=500);
        let xt = forward_sample(&x0, t, &eps, &sched).expect("forward");
        let back = ddim_step(&xt, t, 0, &eps, &sched, 0.0, &mut rng).expect("step");
        for (a, b) in back.as_slice().iter().zip(x0.as_slice()) {
            worst = worst.max((a - b).abs());
        }
    }
    and_time(
        check(worst <= 1e-10, format!("max |x0_hat - x0| {worst:.2e}")),
        60,
        start,
    )
}

fn c9_codec_monotonicity() -> Verdict {
    let start = Instant::now();
    let cfg = PipelineConfig::default();
    let mut violations = 0;
    for seed in 0..100 {
        let scene = generate_scene(&cfg.scene, 90_000 + seed).expect("scene");
        let mut rng = rng_from_seed(seed);
        let batch: Vec<Tensor3> = scene
            .agents
            .iter()
            .map(|a| {
                let det = observe(&scene, a.id, &cfg.noise, &mut rng).expect("observe");
                synthesize_feature(&det.boxes, &cfg.grid).expect("render").grid
            })
            .collect();
        let mut last = f64::INFINITY;
        for rate in [64, 32, 16, 8] {
            let codec = fit_codec(&batch, rate).expect("fit");
            let err: f64 = batch.iter().map(|f| codec.reconstruction_error(f).expect("rec")).sum();
            if err > last {
                violations += 1;
            }
            last = err;
        }
    }

    let mut worst_exact = 0.0f64;
    let mut rng = rng_from_seed(9009);
    for rate in [64usize, 32, 16, 8] {
        let c = 64;
        let d = c / rate;
        let basis = standard_normal((1, d, c), &mut rng);
        let offset: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let coeff = standard_normal((24, 24, d), &mut rng);
        let data = Tensor3::from_fn(24, 24, c, |r, col, k| {
            offset[k] + (0..d).map(|j| coeff.get(r, col, j) * basis.get(0, j, k)).sum::<f64>()
        });
        let codec = fit_codec(std::slice::from_ref(&data), rate).expect("fit");
        let rec = codec.decode(&codec.encode(&data).expect("enc")).expect("dec");
        for (a, b) in rec.as_slice().iter().zip(data.as_slice()) {
            worst_exact = worst_exact.max((a - b).abs());
        }
    }
    let pass = violations == 0 && worst_exact <= 1e-9;
    and_time(
        check(
            pass,
            format!("{violations} monotonicity violations over 100 batches; rank-limited max error {worst_exact:.2e}"),
        ),
        300,
        start,
    )
}

fn c10_delay_trend() -> Verdict {
    let start = Instant::now();
    let cfg = PipelineConfig::default();
    let delays = [0.0, 0.1, 0.2, 0.4];
    let grid = SweepGrid {
        noise_levels: vec![[cfg.noise.sigma_t, cfg.noise.sigma_r]],
        delays: delays.to_vec(),
        flags: vec![PipelineFlags::NONE, PipelineFlags::ALL],
        trials: 100,
        base_seed: 10_000,
    };
    let rows = match run_sweep(&cfg, &grid, 4) {
        Ok(r) => r,
        Err(e) => return check(false, e.to_string()),
    };
    let med = |delay: f64, flags: PipelineFlags| {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.delay == delay && r.flags() == flags)
            .map(|r| r.iou_after)
            .collect();
        median(&v)
    };
    let off: Vec<f64> = delays.iter().map(|&d| med(d, PipelineFlags::NONE)).collect();
    let on: Vec<f64> = delays.iter().map(|&d| med(d, PipelineFlags::ALL)).collect();
    let monotone = off.windows(2).all(|w| w[1] <= w[0]);
    let dominated = on.iter().zip(&off).all(|(a, b)| a >= b);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    and_time(
        check(
            monotone && dominated,
            format!(
                "median IoU off [{}] on [{}] at delays 0/100/200/400 ms",
                fmt(&off),
                fmt(&on)
            ),
        ),
        300,
        start,
    )
}

fn run_cli_sweep(dir: &Path, config: &Path, grid: &Path, jobs: usize) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_collabcal"))
        .args(["sweep", "--config"])
        .arg(config)
        .arg("--grid")
        .arg(grid)
        .args(["--jobs", &jobs.to_string(), "--out-dir"])
        .arg(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    std::fs::read(dir.join("trials.csv")).map_err(|e| e.to_string())
}

fn c11_determinism() -> Verdict {
    let start = Instant::now();
    let tmp = tempfile::tempdir().expect("tempdir");
    let config = tmp.path().join("run.toml");
    let grid = tmp.path().join("grid.toml");
    std::fs::write(&config, "schema_version = 1\nseed = 3\n[scene]\nn_objects = 20\n").expect("write");
    std::fs::write(
        &grid,
        "schema_version = 1\n[sweep]\nnoise_levels = [[0.0, 0.0], [0.1, 0.1], [0.2, 0.2], [0.3, 0.3], [0.4, 0.4]]\n\
         delays = [0.0, 0.2]\ntrials = 3\nbase_seed = 77\nflags = [{ pcm = true, tcm = true }, { pcm = false, tcm = false }]\n",
    )
    .expect("write");
    let a = run_cli_sweep(&tmp.path().join("a"), &config, &grid, 1);
    let b = run_cli_sweep(&tmp.path().join("b"), &config, &grid, 4);
    match (a, b) {
        (Ok(a), Ok(b)) => {
            let rows = a.iter().filter(|&&c| c == b'\n').count().saturating_sub(1);
            and_time(
                check(
                    a == b && rows == 60,
                    format!("{rows} rows, {} bytes, identical: {}", a.len(), a == b),
                ),
                300,
                start,
            )
        }
        (Err(e), _) | (_, Err(e)) => check(false, format!("sweep failed: {e}")),
    }
}

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "assignment optimality", c1_assignment_optimality),
        (2, "noiseless pipeline fixed point", c2_noiseless_fixed_point),
        (3, "pose calibration efficacy", c3_pcm_efficacy),
        (4, "LM correctness", c4_lm_correctness),
        (5, "edge-consistency anchor values", c5_edge_consistency),
        (6, "forward-diffusion marginals", c6_forward_marginals),
        (7, "sampler distribution recovery", c7_sampler_recovery),
        (8, "perfect-denoiser inversion", c8_perfect_inversion),
        (9, "codec monotonicity", c9_codec_monotonicity),
        (10, "delay robustness trend", c10_delay_trend),
        (11, "sweep determinism", c11_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| x == &id.to_string()) {
            continue;
        }
        let v = f();
        println!(
            "criterion {id:>2} {} {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        if !v.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
