//! Acceptance suite. Each numbered test checks one release criterion end to
//! end and prints a single PASS or FAIL line with the measured numbers; run
//! `cargo test --test acceptance -- --nocapture` to see them all.
//!
//! The offline pipeline (dataset collection plus pretraining at the default
//! configuration) is built once and shared; criteria that fly the learned
//! controllers block on it. Heavy flights serialize on a lock so timing
//! measurements are not distorted by sibling tests saturating the cores.

use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use flightlab::dynamics::{ActuatorInputs, Disturbance, MassDelta, QuadState};
use flightlab::fuzzy::{correction_scalar, mamdani_reference};
use flightlab::learning::{collect_offline, pretrain, run_neural};
use flightlab::net::{batch_gradient, batch_loss, Architecture};
use flightlab::trajectory::TrajectorySpec;
use flightlab::{
    flight_metrics, fly, improvement_ratio, repeat_stats, AxisNetwork, ControllerModel,
    ExperimentConfig, FeatureScaling, FlightLog, FuzzyParams, NeuralMode, PidPilot,
    PretrainReport, TrainingSample, FEATURE_DIM,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Pipeline {
    config: ExperimentConfig,
    samples_per_axis: [usize; 3],
    model: ControllerModel,
    report: PretrainReport,
}

static PIPELINE: OnceLock<Pipeline> = OnceLock::new();

/// Collects the training set and pretrains the networks, once per process.
fn pipeline() -> &'static Pipeline {
    PIPELINE.get_or_init(|| {
        let config = ExperimentConfig::default();
        let dataset = collect_offline(
            &config.sim(),
            &config.pid,
            &config.limits,
            &config.collection.trajectories,
            config.collection.samples_per_axis,
            &config.disturbance,
            config.collection.seed,
        )
        .expect("offline collection completes");
        let (model, report) = pretrain(
            &dataset,
            config.network.architecture,
            &config.trainer,
            config.network.scaled_clamp,
        )
        .expect("pretraining completes");
        Pipeline { config, samples_per_axis: dataset.counts(), model, report }
    })
}

static HEAVY: Mutex<()> = Mutex::new(());

/// Flights whose wall-clock or compute-time measurements matter take this
/// lock so they never share the machine with each other.
fn heavy_lock() -> MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// The evaluation scenario for the refinement criteria: constant 0.3 N
/// horizontal wind, a payload adding 20% of the vehicle mass from the
/// start, and mild measurement noise.
fn perturbed_disturbance(seed: u64) -> Disturbance {
    let diagonal = 0.3 / std::f64::consts::SQRT_2;
    Disturbance {
        force: [diagonal, diagonal, 0.0],
        mass_schedule: vec![MassDelta { at: 0.0, delta: 0.1 }],
        position_noise_std: 0.002,
        velocity_noise_std: 0.002,
        seed,
        ..Disturbance::none()
    }
}

fn fly_pid(config: &ExperimentConfig, traj: &TrajectorySpec, dist: &Disturbance) -> FlightLog {
    let mut pilot = PidPilot::new(config.pid, config.limits);
    fly(&config.sim(), traj, dist, &mut pilot).expect("pid flight completes")
}

fn fly_neural(
    config: &ExperimentConfig,
    model: &ControllerModel,
    mode: NeuralMode,
    traj: &TrajectorySpec,
    dist: &Disturbance,
) -> FlightLog {
    run_neural(
        &config.sim(),
        model,
        mode,
        traj,
        dist,
        &config.limits,
        &config.fuzzy,
        &config.online,
        &config.trainer,
    )
    .expect("neural flight completes")
    .log
}

/// Central finite differences over the flattened parameters.
fn fd_gradient(
    net: &AxisNetwork,
    scaling: &FeatureScaling,
    batch: &[TrainingSample],
    h: f64,
) -> Vec<f64> {
    let base = net.params();
    let mut scratch = net.clone();
    let mut g = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        scratch.set_params(&p);
        let plus = batch_loss(&scratch, scaling, batch).unwrap().loss;
        p[i] = base[i] - h;
        scratch.set_params(&p);
        let minus = batch_loss(&scratch, scaling, batch).unwrap().loss;
        g[i] = (plus - minus) / (2.0 * h);
    }
    g
}

/// Relative error with an absolute floor: the finite-difference oracle
/// carries roundoff noise around 1e-10, so components much smaller than the
/// floor are compared absolutely instead of amplifying that noise.
fn guarded_relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn criterion_1_backprop_matches_finite_differences() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut pairs = 0usize;
    let mut worst = 0.0f64;

    for round in 0..120 {
        let arch = match round % 3 {
            0 => Architecture::default(),
            1 => Architecture { inputs: FEATURE_DIM, hidden_layers: 1, hidden_width: 5 },
            _ => Architecture { inputs: FEATURE_DIM, hidden_layers: 3, hidden_width: 4 },
        };
        let params: Vec<f64> =
            (0..arch.param_count()).map(|_| rng.random_range(-0.8..0.8)).collect();
        let net = AxisNetwork::from_params(arch, &params);

        let mut scaling = FeatureScaling::identity();
        for i in 0..FEATURE_DIM {
            scaling.feature_mean[i] = rng.random_range(-0.5..0.5);
            scaling.feature_std[i] = rng.random_range(0.5..2.0);
        }
        scaling.output_mean = rng.random_range(-0.5..0.5);
        scaling.output_std = rng.random_range(0.5..2.0);

        // Every ninth batch has constant targets to cover the MSE fallback.
        let constant = round % 9 == 8;
        let batch: Vec<TrainingSample> = (0..rng.random_range(6..24))
            .map(|_| {
                let mut features = [0.0; FEATURE_DIM];
                for f in features.iter_mut() {
                    *f = rng.random_range(-2.0..2.0);
                }
                let target = if constant { 0.4 } else { rng.random_range(-1.5..1.5) };
                TrainingSample { features, target }
            })
            .collect();

        let analytic = batch_gradient(&net, &scaling, &batch).unwrap();
        let fd = fd_gradient(&net, &scaling, &batch, 1e-6);
        for (a, b) in analytic.gradient.iter().zip(&fd) {
            worst = worst.max(guarded_relative_error(*a, *b));
        }
        pairs += 1;
    }

    let elapsed = started.elapsed().as_secs_f64();
    let pass = pairs >= 100 && worst < 1e-5 && elapsed < 10.0;
    println!(
        "criterion 1 {}: {pairs} weight/batch pairs, worst guarded relative error {worst:.2e} \
         ({elapsed:.1} s)",
        verdict(pass),
    );
    assert!(pass, "gradient check failed: worst {worst:.2e} over {pairs} pairs in {elapsed:.1} s");
}

#[test]
fn criterion_2_fuzzy_corners_and_rule_base_sign() {
    let started = Instant::now();
    let params = FuzzyParams { error_scale: 1.0, error_rate_scale: 1.0, ..Default::default() };
    let rate = 0.7;

    // Rows scan the scaled error in {-1, 0, 1}, columns the scaled error
    // rate; entries are the expected correction before the rate gain.
    let corner_table = [
        [-1.0, -0.5, 0.0],
        [-1.0, 0.0, 1.0],
        [0.0, 0.5, 1.0],
    ];
    let mut corners_exact = true;
    for (i, e) in [-1.0, 0.0, 1.0].into_iter().enumerate() {
        for (j, de) in [-1.0, 0.0, 1.0].into_iter().enumerate() {
            if correction_scalar(e, de, rate, &params) != rate * corner_table[i][j] {
                corners_exact = false;
            }
        }
    }

    let mut grid_points = 0usize;
    let mut signs_agree = true;
    for i in 0..41 {
        for j in 0..41 {
            let e = -1.0 + i as f64 * 0.05;
            let de = -1.0 + j as f64 * 0.05;
            let closed = correction_scalar(e, de, rate, &params);
            let rules = mamdani_reference(e, de, rate, &params);
            let matches = if closed.abs() < 1e-12 {
                rules.abs() < 1e-9
            } else {
                closed.signum() == rules.signum()
            };
            signs_agree &= matches;
            grid_points += 1;
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    let pass = corners_exact && signs_agree && elapsed < 1.0;
    println!(
        "criterion 2 {}: 9 corners exact, {grid_points} grid points sign-consistent \
         ({elapsed:.2} s)",
        verdict(pass),
    );
    assert!(
        pass,
        "fuzzy surface check failed: corners_exact={corners_exact} signs_agree={signs_agree}"
    );
}

/// Everything except the step-timing column, which tracks the host CPU.
fn rows_equal_modulo_timing(a: &FlightLog, b: &FlightLog) -> bool {
    let field_bits = |log: &FlightLog| -> Vec<u64> {
        let mut bits = Vec::with_capacity(log.rows.len() * 22);
        for r in &log.rows {
            for v in [r.t]
                .into_iter()
                .chain(r.reference)
                .chain(r.position)
                .chain(r.ref_velocity)
                .chain(r.velocity)
                .chain(r.command)
                .chain(r.correction)
                .chain(r.error)
                .chain(r.error_rate)
            {
                bits.push(v.to_bits());
            }
            bits.push(u64::from(r.guard_frozen));
            bits.push(u64::from(r.actuators_clamped));
        }
        bits
    };
    a.rows.len() == b.rows.len() && field_bits(a) == field_bits(b)
}

#[test]
fn criterion_3_hover_integrator_and_determinism() {
    let started = Instant::now();
    let config = ExperimentConfig::default();

    // A perfectly balanced hover must be a fixed point of the integrator.
    let params = config.plant;
    let hover = QuadState { pos: [0.0, 0.0, 1.0], ..QuadState::default() };
    let u = ActuatorInputs { thrust: params.hover_thrust(), torque: [0.0; 3] };
    let mut state = hover;
    let dt = config.timing.physics_dt;
    for k in 0..10_000 {
        state = flightlab::dynamics::step_rk4(
            &state,
            &u,
            &params,
            &Disturbance::none(),
            k as f64 * dt,
            dt,
        )
        .expect("hover never aborts");
    }
    let drift = state
        .to_array()
        .iter()
        .zip(hover.to_array())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let hover_ok = drift < 1e-9;

    // Observed convergence order on a tumbling, thrusting flight segment.
    let tumble = QuadState {
        pos: [0.1, -0.2, 0.5],
        att: [0.3, -0.2, 0.4],
        vel: [0.5, -0.3, 0.2],
        rate: [1.2, -0.9, 0.7],
    };
    let u = ActuatorInputs { thrust: 0.8 * params.hover_thrust(), torque: [0.01, -0.02, 0.005] };
    let integrate = |dt: f64| {
        let mut s = tumble;
        let steps = (0.4 / dt).round() as u64;
        for k in 0..steps {
            s = flightlab::dynamics::step_rk4(&s, &u, &params, &Disturbance::none(), k as f64 * dt, dt)
                .expect("tumble stays integrable");
        }
        s.to_array()
    };
    let reference = integrate(0.02 / 64.0);
    let err = |dt: f64| -> f64 {
        integrate(dt).iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let order_coarse = (err(0.02) / err(0.01)).log2();
    let order_fine = (err(0.01) / err(0.005)).log2();
    let order_ok = order_coarse >= 3.8 && order_fine >= 3.8;

    // Identical seeds must reproduce a noisy flight bit for bit.
    let traj = TrajectorySpec { duration: 8.0, ..Default::default() };
    let dist = Disturbance { seed: 9000, ..config.disturbance.clone() };
    let first = fly_pid(&config, &traj, &dist);
    let second = fly_pid(&config, &traj, &dist);
    let deterministic = rows_equal_modulo_timing(&first, &second);

    let elapsed = started.elapsed().as_secs_f64();
    let pass = hover_ok && order_ok && deterministic && elapsed < 30.0;
    println!(
        "criterion 3 {}: hover drift {drift:.1e} m over 10 s, rk4 orders \
         {order_coarse:.2}/{order_fine:.2}, seeded rerun bit-identical: {deterministic} \
         ({elapsed:.1} s)",
        verdict(pass),
    );
    assert!(
        pass,
        "physics suite failed: drift {drift:.1e}, orders {order_coarse:.2}/{order_fine:.2}, \
         deterministic {deterministic}, {elapsed:.1} s"
    );
}

#[test]
fn criterion_4_pretrained_networks_mimic_the_teacher() {
    let started = Instant::now();
    let pipeline = pipeline();
    let config = &pipeline.config;

    let samples_ok = pipeline.samples_per_axis.iter().all(|&n| n >= 20_000);
    let nse = [
        pipeline.report.axes[0].held_out_nse,
        pipeline.report.axes[1].held_out_nse,
        pipeline.report.axes[2].held_out_nse,
    ];
    let nse_ok = nse.iter().all(|&v| v < 0.05);

    // A slow circle under the stock noise, flown by both the teacher and
    // the frozen student.
    let slow_circle = &config.evaluation.trajectories[0];
    let dist = Disturbance { seed: config.evaluation.base_seed, ..config.disturbance.clone() };
    let pid_mae = flight_metrics(&fly_pid(config, slow_circle, &dist)).unwrap().mae;
    let frozen_log = fly_neural(config, &pipeline.model, NeuralMode::Frozen, slow_circle, &dist);
    let frozen_mae = flight_metrics(&frozen_log).unwrap().mae;
    let mimicry_ok = frozen_mae <= 2.0 * pid_mae;

    let elapsed = started.elapsed().as_secs_f64();
    let pass = samples_ok && nse_ok && mimicry_ok && elapsed < 300.0;
    println!(
        "criterion 4 {}: {} samples/axis, held-out nse [{:.1e}, {:.1e}, {:.1e}], frozen mae \
         {frozen_mae:.4} vs pid {pid_mae:.4} on {} ({elapsed:.0} s)",
        verdict(pass),
        pipeline.samples_per_axis[0],
        nse[0],
        nse[1],
        nse[2],
        slow_circle.label(),
    );
    assert!(
        pass,
        "mimicry failed: samples {:?}, nse {nse:?}, frozen {frozen_mae:.4} vs pid {pid_mae:.4}",
        pipeline.samples_per_axis
    );
}

#[test]
fn criterion_5_online_refinement_beats_both_baselines() {
    let started = Instant::now();
    let pipeline = pipeline();
    let config = &pipeline.config;
    let _guard = heavy_lock();

    // Both shapes are absent from the training set: the circle by speed,
    // the square by kind.
    let unseen = [&config.evaluation.trajectories[1], &config.evaluation.trajectories[2]];
    let reps = config.evaluation.repetitions;
    let base_seed = config.evaluation.base_seed;

    let mut lines = Vec::new();
    let mut pass = true;
    for traj in unseen {
        let median = |mode: Option<NeuralMode>| -> f64 {
            let summary = repeat_stats(reps, base_seed, |seed| {
                let dist = perturbed_disturbance(seed);
                let log = match mode {
                    None => fly_pid(config, traj, &dist),
                    Some(mode) => fly_neural(config, &pipeline.model, mode, traj, &dist),
                };
                Ok(log)
            })
            .expect("all repetitions complete");
            assert!(summary.failures.is_empty(), "failed runs: {:?}", summary.failures);
            summary.median_mae()
        };
        let pid = median(None);
        let frozen = median(Some(NeuralMode::Frozen));
        let online = median(Some(NeuralMode::Online));

        let vs_pid = improvement_ratio(online, pid).unwrap();
        let vs_frozen = improvement_ratio(online, frozen).unwrap();
        pass &= online < frozen && online < pid && vs_frozen >= 0.20;
        lines.push(format!(
            "{} pid {pid:.4} dnn0 {frozen:.4} dnn {online:.4} ({:+.1}% vs pid, {:+.1}% vs dnn0)",
            traj.label(),
            vs_pid * 100.0,
            vs_frozen * 100.0,
        ));
    }

    let elapsed = started.elapsed().as_secs_f64();
    pass &= elapsed < 900.0;
    println!(
        "criterion 5 {}: {} over {reps} seeded runs each, median mae ({elapsed:.0} s)",
        verdict(pass),
        lines.join("; "),
    );
    assert!(pass, "online refinement failed: {} ({elapsed:.0} s)", lines.join("; "));
}

#[test]
fn criterion_6_zero_rate_refinement_is_the_frozen_flight() {
    let pipeline = pipeline();
    let config = &pipeline.config;

    let traj = &config.evaluation.trajectories[0];
    let dist = Disturbance { seed: config.evaluation.base_seed, ..config.disturbance.clone() };
    let frozen = fly_neural(config, &pipeline.model, NeuralMode::Frozen, traj, &dist);

    // Same model, same seed, updates running at a zero correction rate.
    let mut zero_rate = config.clone();
    zero_rate.fuzzy = config.fuzzy.with_rate([0.0; 3]);
    let online = fly_neural(&zero_rate, &pipeline.model, NeuralMode::Online, traj, &dist);

    let identical = rows_equal_modulo_timing(&frozen, &online);
    println!(
        "criterion 6 {}: {} control steps bit-identical with updates at zero correction rate: \
         {identical}",
        verdict(identical),
        frozen.rows.len(),
    );
    assert!(identical, "zero-rate refinement diverged from the frozen flight");
}

#[test]
fn criterion_7_improvement_ratio_reproduces_published_percentages() {
    // Published tracking errors (m) for the three hardware test
    // trajectories: baseline, frozen network, refined network.
    let published = [
        (0.241, 0.254, 0.097),
        (0.632, 0.833, 0.250),
        (0.284, 0.431, 0.154),
    ];
    let quoted_vs_pid = [60.0, 61.0, 46.0];
    let quoted_vs_frozen = [62.0, 70.0, 64.0];

    let mut computed = Vec::new();
    let mut pass = true;
    for (i, (pid, frozen, refined)) in published.into_iter().enumerate() {
        let vs_pid = improvement_ratio(refined, pid).unwrap() * 100.0;
        let vs_frozen = improvement_ratio(refined, frozen).unwrap() * 100.0;
        pass &= (vs_pid - quoted_vs_pid[i]).abs() <= 1.0;
        pass &= (vs_frozen - quoted_vs_frozen[i]).abs() <= 1.0;
        computed.push(format!("{vs_pid:.1}/{vs_frozen:.1}"));
    }

    println!(
        "criterion 7 {}: ratios vs baseline/frozen {} against quoted {:?}/{:?} (all within 1 \
         point)",
        verdict(pass),
        computed.join(", "),
        quoted_vs_pid,
        quoted_vs_frozen,
    );
    assert!(pass, "ratio arithmetic drifted: computed {computed:?}");
}

#[test]
fn criterion_8_online_step_stays_inside_the_compute_budget() {
    let pipeline = pipeline();
    let config = &pipeline.config;
    let _guard = heavy_lock();

    let fast_circle = &config.evaluation.trajectories[1];
    let dist = perturbed_disturbance(config.evaluation.base_seed);
    let log = fly_neural(config, &pipeline.model, NeuralMode::Online, fast_circle, &dist);

    let steps: Vec<f64> = log.rows.iter().map(|r| r.step_us).collect();
    let mean_ms = steps.iter().sum::<f64>() / steps.len() as f64 / 1e3;
    let worst_ms = steps.iter().cloned().fold(0.0, f64::max) / 1e3;
    // The update deadline plus 1 ms of slack for the forward pass, the
    // supervisor, and one in-flight line-search trial past the check.
    let bound_ms = config.trainer.online_budget_ms + 1.0;
    let over_budget = steps.iter().filter(|&&us| us > bound_ms * 1e3).count();

    let pass = mean_ms < 10.0 && over_budget == 0;
    println!(
        "criterion 8 {}: mean online step {mean_ms:.2} ms, worst {worst_ms:.2} ms, {over_budget} \
         of {} steps over the {bound_ms:.1} ms bound (reference onboard implementation: 5.4 ms)",
        verdict(pass),
        steps.len(),
    );
    assert!(
        pass,
        "timing budget failed: mean {mean_ms:.2} ms, worst {worst_ms:.2} ms, {over_budget} over"
    );
}
