mod common;

use dynct::acquisition::{bit_reversed_schedule, simulate_measurements, SinogramSet};
use dynct::datasets::DynamicObject;
use dynct::nf::{NeuralField, NfArch};
use dynct::optim::{Adam, AdamConfig};
use dynct::recon::{
    fbar_step_fixed_point, fidelity_loss, fixed_point_combination, nf_step, rsr_nf_reconstruct, temp_nf_reconstruct,
    AdmmState, InnerProblem, RunOptions, SolverConfig, CHECKPOINT_FILE,
};
use dynct::restoration::{LinearRestorer, ScaledIdentity};
use ndarray::{Array2, Array3, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_arch() -> NfArch {
    NfArch {
        frequencies: 2,
        hidden_layers: 2,
        width: 8,
        ..Default::default()
    }
}

fn small_problem(j: usize, p: usize, sigma: f64) -> (DynamicObject, SinogramSet) {
    let frames = Array3::from_shape_fn((p, j, j), |(t, r, c)| {
        let (y, x) = (r as f64 / j as f64 - 0.5, c as f64 / j as f64 - 0.5);
        let d = ((x - 0.05 * t as f64 / p as f64).powi(2) + y * y).sqrt();
        if d < 0.3 {
            1.0 - d
        } else {
            0.0
        }
    });
    let obj = DynamicObject::new(frames, "blob").unwrap();
    let sinos = simulate_measurements(&obj, &bit_reversed_schedule(p).unwrap(), sigma, 11).unwrap();
    (obj, sinos)
}

fn small_cfg() -> SolverConfig {
    SolverConfig {
        outer_iters: 6,
        inner_steps: 3,
        lr: 5e-3,
        batch: Some(2),
        arch: tiny_arch(),
        early_stop_tol: 0.0,
        seed: 4,
        ..Default::default()
    }
}

#[test]
fn warm_start_moves_the_initial_field_toward_the_data() {
    let (truth, sinos) = small_problem(16, 16, 0.0);
    let psnr = |cfg: &SolverConfig| {
        let st = AdmmState::<f64>::initial(&sinos, cfg).unwrap();
        let obj = DynamicObject::new(st.fbar, "init").unwrap();
        dynct::metrics::evaluate(&obj, &truth, None, Some(truth.normalization)).unwrap().psnr_db
    };
    let cold = psnr(&small_cfg());
    let warm = psnr(&SolverConfig {
        warm_start_steps: 300,
        ..small_cfg()
    });
    assert!(warm > cold + 5.0, "warm {warm} dB vs cold {cold} dB");
}

#[test]
fn zero_lambda_matches_temp_nf_bit_for_bit() {
    let (_, sinos) = small_problem(12, 8, 0.01);
    let cfg = SolverConfig {
        lambda: 0.0,
        ..small_cfg()
    };
    let a = rsr_nf_reconstruct::<f64>(&sinos, &ScaledIdentity(0.3), &cfg, RunOptions::default()).unwrap();
    let b = temp_nf_reconstruct::<f64>(&sinos, &small_cfg(), RunOptions::default()).unwrap();
    assert_eq!(a.state.nf.params(), b.state.nf.params());
    assert_eq!(a.object.frames, b.object.frames);
}

#[test]
fn reconstruction_is_deterministic() {
    let (_, sinos) = small_problem(12, 8, 0.01);
    let r = ScaledIdentity(0.8);
    let a = rsr_nf_reconstruct::<f32>(&sinos, &r, &small_cfg(), RunOptions::default()).unwrap();
    let b = rsr_nf_reconstruct::<f32>(&sinos, &r, &small_cfg(), RunOptions::default()).unwrap();
    assert_eq!(a.object.frames, b.object.frames);
    assert_eq!(a.state.fbar, b.state.fbar);
    assert_eq!(a.state.dual, b.state.dual);
    assert_eq!(a.history().len(), 6);
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let (_, sinos) = small_problem(12, 8, 0.01);
    let r = ScaledIdentity(0.8);
    let dir = tempfile::tempdir().unwrap();
    let cfg = SolverConfig {
        checkpoint_every: 3,
        ..small_cfg()
    };
    let full = rsr_nf_reconstruct::<f64>(&sinos, &r, &cfg, RunOptions::default()).unwrap();
    let opts = RunOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        stop_after: Some(3),
        ..Default::default()
    };
    rsr_nf_reconstruct::<f64>(&sinos, &r, &cfg, opts).unwrap();
    let (state, saved_cfg) = AdmmState::<f64>::load(dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(state.iteration, 3);
    assert_eq!(saved_cfg, cfg);
    let resumed = rsr_nf_reconstruct(
        &sinos,
        &r,
        &saved_cfg,
        RunOptions {
            resume: Some(state),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(common::max_abs_diff(&full.object.frames, &resumed.object.frames) <= 1e-8);
    assert!(common::max_abs_diff(&full.state.fbar, &resumed.state.fbar) <= 1e-8);
    assert!(common::max_abs_diff(&full.state.dual, &resumed.state.dual) <= 1e-8);
    assert_eq!(full.history().len(), resumed.history().len());
    for (a, b) in full.history().iter().zip(resumed.history()) {
        assert!((a.objective - b.objective).abs() <= 1e-8 * a.objective.abs().max(1.0));
    }
}

#[test]
fn minibatch_loss_is_unbiased() {
    let (j, p, b) = (8, 8, 3);
    let (_, sinos) = small_problem(j, p, 0.05);
    let frames = common::random_stack(p, j, 7).mapv(|v| 0.5 + 0.3 * v);
    let fbar = common::random_stack(p, j, 8);
    let dual = common::random_stack(p, j, 9).mapv(|v| 0.1 * v);
    let prob = InnerProblem::new(&sinos, &fbar, &dual, 2.0, 1.5).unwrap();
    let full = prob.full_terms(&frames).unwrap().total();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws = 10_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..draws {
        let batch: Vec<usize> = (0..b).map(|_| rng.gen_range(0..p)).collect();
        let needed = prob.frames_needed(&batch);
        let rendered = frames.select(Axis(0), &needed);
        let v = prob.batch_terms(&batch, &needed, &rendered).unwrap().0.total();
        sum += v;
        sq += v * v;
    }
    let mean = sum / draws as f64;
    let se = ((sq / draws as f64 - mean * mean) / draws as f64).sqrt();
    assert!((mean - full).abs() <= 3.0 * se, "mean {mean} vs full {full} (se {se})");
}

#[test]
fn zero_inner_steps_leave_parameters_alone() {
    let (_, sinos) = small_problem(8, 4, 0.0);
    let cfg = SolverConfig {
        inner_steps: 0,
        ..small_cfg()
    };
    let mut state = AdmmState::<f64>::initial(&sinos, &cfg).unwrap();
    let before = state.nf.params().to_vec();
    nf_step(&mut state, &sinos, &cfg).unwrap();
    assert_eq!(state.nf.params(), &before[..]);
}

#[test]
fn full_batch_descent_on_a_representable_object() {
    let (j, p) = (8, 4);
    let teacher = NeuralField::<f64>::new(tiny_arch(), 99).unwrap();
    let truth = teacher.render_grid(j, p).unwrap();
    let sinos = simulate_measurements(&truth, &bit_reversed_schedule(p).unwrap(), 0.0, 0).unwrap();
    let zeros = Array3::zeros((p, j, j));
    let prob = InnerProblem::new(&sinos, &zeros, &zeros, 0.0, 0.0).unwrap();
    let all: Vec<usize> = (0..p).collect();
    let mut nf = NeuralField::<f64>::new(tiny_arch(), 1).unwrap();
    let mut adam = Adam::<f64>::new(nf.param_count(), AdamConfig::default());
    let mut last = fidelity_loss(&nf, &sinos, &all).unwrap();
    for it in 0..50 {
        let (terms, grad) = prob.loss_and_grad(&nf, &all).unwrap();
        assert!((terms.total() - last).abs() <= 1e-9 * last);
        adam.step(nf.params_mut(), &grad, 1e-4).unwrap();
        let now = fidelity_loss(&nf, &sinos, &all).unwrap();
        assert!(now < last, "step {it}: {now} >= {last}");
        last = now;
    }
}

#[test]
fn fixed_point_iteration_reaches_stationarity_with_linear_stub() {
    let (p, j) = (3, 4);
    let n = j * j;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0));
    // symmetric with spectrum inside (0, 1): a contraction
    let a = (&b + &b.t()) * (0.25 / n as f64) + Array2::<f64>::eye(n) * 0.4;
    let stub = LinearRestorer { matrix: a };
    let ftilde = common::random_stack(p, j, 1);
    let dual = common::random_stack(p, j, 2).mapv(|v| 0.2 * v);
    let (lambda, beta) = (2.0, 1.0);
    let mut fbar = &ftilde + &dual;
    for _ in 0..200 {
        fbar = fbar_step_fixed_point(&fbar, &ftilde, &dual, &stub, lambda, beta).unwrap();
    }
    use dynct::restoration::Restorer;
    let d = stub.restore_frames(&fbar).unwrap();
    let resid = (&fbar - &d) * lambda + (&fbar - &ftilde - &dual) * beta;
    let norm = |x: &Array3<f64>| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm(&resid) < 1e-6 * norm(&fbar), "residual {}", norm(&resid));
}

#[test]
fn temp_nf_objective_trends_down_and_primal_residual_shrinks() {
    let (_, sinos) = small_problem(16, 16, 0.01);
    let cfg = SolverConfig {
        outer_iters: 30,
        inner_steps: 5,
        lr: 5e-3,
        batch: Some(4),
        arch: NfArch {
            frequencies: 4,
            hidden_layers: 3,
            width: 16,
            ..Default::default()
        },
        early_stop_tol: 0.0,
        ..Default::default()
    };
    let rec = temp_nf_reconstruct::<f32>(&sinos, &cfg, RunOptions::default()).unwrap();
    let median = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let h = rec.history();
    assert!(h.iter().all(|r| r.objective.is_finite()));
    let mut first: Vec<f64> = h[..10].iter().map(|r| r.objective).collect();
    let mut last: Vec<f64> = h[h.len() - 10..].iter().map(|r| r.objective).collect();
    assert!(median(&mut last) < median(&mut first));

    let rsr = rsr_nf_reconstruct::<f32>(&sinos, &ScaledIdentity(0.9), &cfg, RunOptions::default()).unwrap();
    let h = rsr.history();
    assert!(h.last().unwrap().primal_residual_rel <= h[0].primal_residual_rel);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fixed_point_update_is_the_convex_combination(
        lambda in 0.0f64..50.0,
        beta in 1e-3f64..50.0,
        seed in any::<u64>(),
    ) {
        let d = common::random_stack(2, 3, seed);
        let f = common::random_stack(2, 3, seed ^ 1);
        let u = common::random_stack(2, 3, seed ^ 2);
        let out = fixed_point_combination(&d, &f, &u, lambda, beta).unwrap();
        let (a, c) = (lambda / (lambda + beta), beta / (lambda + beta));
        prop_assert!((a + c - 1.0).abs() <= 2.0 * f64::EPSILON);
        for (((o, dv), fv), uv) in out.iter().zip(d.iter()).zip(f.iter()).zip(u.iter()) {
            prop_assert_eq!(*o, a * dv + c * (fv + uv));
        }
    }

    #[test]
    fn temporal_penalty_vanishes_on_affine_objects(
        p in 3usize..10,
        j in 2usize..6,
        slope in -2.0f64..2.0,
        seed in any::<u64>(),
    ) {
        // dyadic coefficients keep every second difference exact
        let base = common::random_stack(1, j, seed).mapv(|v| (v * 64.0).round() / 64.0);
        let s = (slope * 64.0).round() / 64.0;
        let frames = Array3::from_shape_fn((p, j, j), |(t, r, c)| base[[0, r, c]] + s * t as f64 * (r as f64 - 1.0));
        prop_assert_eq!(dynct::recon::temporal_penalty_frames(&frames), 0.0);
    }
}
