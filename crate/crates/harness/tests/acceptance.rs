//! Acceptance criteria 1 to 9, one PASS/FAIL line each.
//!
//! `HOSSNET_ACCEPTANCE=1,2,5` runs a subset.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use hossnet_autograd::gradcheck::{numeric_gradient, relative_error};
use hossnet_autograd::{Graph, Tensor};
use hossnet_core::flow::{estimate_flow_planes, flow_angle_loss, objective, FlowSolverParams};
use hossnet_core::metrics::{mean_over_leads, rmse, ssim, wfe, Metric, SsimParams};
use hossnet_core::postproc::enforce_positive_direction;
use hossnet_core::{FieldFrame, FlowField, MaskKind, RegionMask, SampleSequence};
use hossnet_harness::evaluate::evaluate;
use hossnet_harness::splits::make_split;
use hossnet_harness::train::train_network;
use hossnet_harness::{Dataset, Experiment, ExperimentConfig, Protocol, Variant};
use hossnet_model::tensor_io::{planes, stack_windows};
use hossnet_model::{total_loss, LossSettings, LossWeights, Mode, ModelConfig, Network, RandomConvExtractor};
use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array2, Array3, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------- 1. flow solver against a dense minimizer ----------

fn smooth_frame(h: usize, w: usize, shift: f64) -> Array2<f64> {
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (xf, yf) = (x as f64 - shift, y as f64);
        0.5 + 0.25 * (2.0 * PI * xf / 16.0).sin() * (2.0 * PI * yf / 16.0 + 0.4).cos() + 0.1 * (2.0 * PI * xf / 8.0 + 0.2).cos()
    })
}

/// The discretized energy as an explicit least-squares system `E(x) = |J x + c|²`
/// over `x = (u, v)`: one data row per pixel and one smoothness row per
/// (pixel, neighbour, component) of the clamped 3×3 averaging kernel.
fn energy_system(a: &Array2<f64>, b: &Array2<f64>, lambda: f64) -> (DMatrix<f64>, DVector<f64>) {
    let (h, w) = a.dim();
    let n = h * w;
    let at = |y: isize, x: isize| (y.clamp(0, h as isize - 1) as usize) * w + x.clamp(0, w as isize - 1) as usize;
    let mean: Vec<f64> = a.iter().zip(b.iter()).map(|(p, q)| 0.5 * (p + q)).collect();
    let neighbours: Vec<(isize, isize, f64)> =
        [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().map(|&(dy, dx)| (dy, dx, 1.0 / 6.0)).chain([(-1, -1), (-1, 1), (1, -1), (1, 1)].iter().map(|&(dy, dx)| (dy, dx, 1.0 / 12.0))).collect();
    let rows = n + 2 * n * neighbours.len();
    let mut j = DMatrix::zeros(rows, 2 * n);
    let mut c = DVector::zeros(rows);
    let mut r = 0;
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = at(y, x);
            j[(r, p)] = 0.5 * (mean[at(y, x + 1)] - mean[at(y, x - 1)]);
            j[(r, n + p)] = 0.5 * (mean[at(y + 1, x)] - mean[at(y - 1, x)]);
            c[r] = b[[y as usize, x as usize]] - a[[y as usize, x as usize]];
            r += 1;
        }
    }
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = at(y, x);
            for &(dy, dx, wt) in &neighbours {
                let q = at(y + dy, x + dx);
                let k = (0.5 * lambda * lambda * wt).sqrt();
                for off in [0, n] {
                    j[(r, off + p)] += k;
                    j[(r, off + q)] -= k;
                    r += 1;
                }
            }
        }
    }
    (j, c)
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let (a, b) = (smooth_frame(16, 16, 0.0), smooth_frame(16, 16, 1.0));
    let params = FlowSolverParams { n_iterations: 3000, ..Default::default() };
    let f = estimate_flow_planes(a.view(), b.view(), &params).map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed().as_secs_f64();

    let (j, c) = energy_system(&a, &b, params.lambda);
    let energy = |x: &DVector<f64>| (&j * x + &c).norm_squared();
    let jt = j.transpose();
    let hess = &jt * &j;
    let x_star = hess.clone().cholesky().ok_or("normal equations not positive definite")?.solve(&(-(&jt * &c)));
    let n = 256;
    let x_f = DVector::from_iterator(2 * n, f.u.iter().chain(f.v.iter()).copied());

    // the implementation's energy must agree with the explicit system
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..3 {
        let x = DVector::from_fn(2 * n, |_, _| rng.random_range(-1.0..1.0));
        let field = FlowField::new(Array2::from_shape_fn((16, 16), |(y, xx)| x[y * 16 + xx]), Array2::from_shape_fn((16, 16), |(y, xx)| x[n + y * 16 + xx])).unwrap();
        let e_impl = objective(a.view(), b.view(), &field, &params).unwrap();
        let e_ref = energy(&x);
        ensure((e_impl - e_ref).abs() <= 1e-9 * e_ref.max(1.0), || format!("energy mismatch {e_impl} vs {e_ref}"))?;
    }
    let gap = energy(&x_f) - energy(&x_star);
    let mad = (&x_f - &x_star).abs().sum() / n as f64;
    ensure(gap < 1e-3 && gap > -1e-9, || format!("objective gap {gap:.3e}"))?;
    ensure(mad < 0.15, || format!("mean abs flow error {mad:.4}"))?;
    ensure(elapsed < 10.0, || format!("solver took {elapsed:.2}s"))?;
    Ok(format!("objective gap {gap:.2e}, mean |flow error| {mad:.4} (u+v), solve {elapsed:.3}s"))
}

// ---------- 2. angle loss ----------

fn uniform_flow(h: usize, w: usize, u: f64, v: f64) -> FlowField {
    FlowField::new(Array2::from_elem((h, w), u), Array2::from_elem((h, w), v)).unwrap()
}

fn criterion_2() -> Outcome {
    let (h, w) = (7, 9);
    let n = (h * w) as f64;
    let floor = 1e-6;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let obs = FlowField::new(Array2::from_shape_simple_fn((h, w), || rng.random_range(-2.0..2.0)), Array2::from_shape_simple_fn((h, w), || rng.random_range(-2.0..2.0))).unwrap();
    let same = flow_angle_loss(&obs, &obs, floor).unwrap();
    ensure(same == 0.0, || format!("identical flows gave {same}"))?;
    let orth = flow_angle_loss(&uniform_flow(h, w, 1.0, 0.0), &uniform_flow(h, w, 0.0, 1.0), floor).unwrap();
    ensure(rel(orth, n * (PI / 2.0).powi(2)) < 1e-9, || format!("orthogonal {orth}"))?;
    let anti = flow_angle_loss(&uniform_flow(h, w, 1.0, 0.0), &uniform_flow(h, w, -1.0, 0.0), floor).unwrap();
    ensure(rel(anti, n * PI * PI) < 1e-9, || format!("antiparallel {anti}"))?;
    let pred = FlowField::new(Array2::from_shape_simple_fn((h, w), || rng.random_range(-2.0..2.0)), Array2::from_shape_simple_fn((h, w), || rng.random_range(-2.0..2.0))).unwrap();
    let scale = Array2::from_shape_simple_fn((h, w), || rng.random_range(0.1..10.0));
    let scaled = FlowField::new(&pred.u * &scale, &pred.v * &scale).unwrap();
    let (l0, l1) = (flow_angle_loss(&pred, &obs, floor).unwrap(), flow_angle_loss(&scaled, &obs, floor).unwrap());
    ensure(rel(l1, l0) < 1e-9, || format!("rescaled {l1} vs {l0}"))?;
    Ok(format!("orthogonal {orth:.6} = N(π/2)², antiparallel {anti:.6} = Nπ², rescaling rel. change {:.1e}", rel(l1, l0)))
}

// ---------- 3. gradients ----------

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_shape_simple_fn(IxDyn(shape), || rng.random_range(0.05..0.95))
}

fn drifting_blob() -> Tensor {
    Tensor::from_shape_fn(IxDyn(&[2, 1, 8, 8]), |ix| {
        let (t, y, x) = (ix[0] as f64, ix[2] as f64, ix[3] as f64);
        0.1 + 0.8 * (-((x - 3.0 - 0.7 * t).powi(2) + (y - 4.0).powi(2)) / 6.0).exp()
    })
}

fn criterion_3() -> Outcome {
    let ext = RandomConvExtractor::new(11, &[3, 3]);
    let truth = drifting_blob();
    let pred = &truth * 0.8 + (random_tensor(&[2, 1, 8, 8], 3) - 0.5) * 0.2 + 0.05;
    let settings = LossSettings { weights: LossWeights { alpha_perc: 1.0, alpha_op: 1.0 }, ..Default::default() };
    let mut mask = Array2::from_elem((8, 8), false);
    mask.slice_mut(s![1..7, 0..6]).fill(true);
    let masks = vec![RegionMask::new(mask, MaskKind::SubRegion)];
    let mut worst_pred: f64 = 0.0;
    for m in [None, Some(masks.as_slice())] {
        let f = |x: &Tensor| {
            let mut g = Graph::new();
            let p = g.constant(x.clone());
            let l = total_loss(&mut g, p, &truth, 2, m, &settings, Some(&ext)).unwrap().0;
            g.scalar(l)
        };
        let mut g = Graph::new();
        let p = g.variable(pred.clone());
        let (l, _) = total_loss(&mut g, p, &truth, 2, m, &settings, Some(&ext)).unwrap();
        let ana = g.backward(l).get(p).unwrap().clone();
        worst_pred = worst_pred.max(relative_error(&ana, &numeric_gradient(f, &pred, 1e-6)));
    }
    ensure(worst_pred < 1e-4, || format!("prediction gradient relative error {worst_pred:.2e}"))?;

    let cfg = ModelConfig { base_width: 4, latent_state_size: 4, window_length: 2, n_res_blocks_per_stage: 1, ..Default::default() };
    let net = Network::new(cfg).unwrap();
    let x = random_tensor(&[2, 1, 8, 8], 12);
    let settings = LossSettings { flow: FlowSolverParams { n_iterations: 20, ..Default::default() }, ..settings };
    let loss_with = |n: &Network| {
        let mut g = Graph::new();
        let bind = n.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let out = n.forward(&mut g, &bind, xv, 2, Mode::Train).unwrap();
        let (l, _) = total_loss(&mut g, out.output, &truth, 2, None, &settings, Some(&ext)).unwrap();
        (g, bind, l)
    };
    let (g, bind, l) = loss_with(&net);
    let grads = bind.gradients(&g.backward(l), net.params());
    let (mut ana, mut num) = (Vec::new(), Vec::new());
    for (id, a) in grads {
        let base = net.params().get(id).clone();
        let n = numeric_gradient(
            |t| {
                let mut m = net.clone();
                *m.params_mut().get_mut(id) = t.clone();
                let (g, _, l) = loss_with(&m);
                g.scalar(l)
            },
            &base,
            1e-6,
        );
        ana.extend(a.iter().copied());
        num.extend(n.iter().copied());
    }
    let count = ana.len();
    let err = relative_error(&Tensor::from_shape_vec(IxDyn(&[count]), ana).unwrap(), &Tensor::from_shape_vec(IxDyn(&[count]), num).unwrap());
    ensure(err < 1e-3, || format!("weight gradient relative error {err:.2e}"))?;
    Ok(format!("d loss/d pred rel. error {worst_pred:.2e}, {count} weights rel. error {err:.2e}"))
}

// ---------- 4. positive direction ----------

fn seq_of(planes: Vec<Array2<f64>>) -> SampleSequence {
    SampleSequence::from_damage_planes("m", planes).unwrap()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cases = 200;
    for case in 0..cases {
        let (h, w, t) = (rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..12));
        let planes: Vec<Array2<f64>> = (0..t).map(|_| Array2::from_shape_simple_fn((h, w), || rng.random_range(0.0..1.0))).collect();
        let anchor = FieldFrame::damage(Array2::from_shape_simple_fn((h, w), || rng.random_range(0.0..0.6)), 0);
        let out = enforce_positive_direction(&seq_of(planes.clone()), &anchor).unwrap();
        let op = out.planes().unwrap();
        let a = anchor.plane().unwrap();
        for (i, p) in op.iter().enumerate() {
            let prev = if i == 0 { a.to_owned() } else { op[i - 1].clone() };
            ensure(p.iter().zip(prev.iter()).all(|(x, y)| x >= y), || format!("case {case}: decrease at step {i}"))?;
            ensure(p.iter().zip(planes[i].iter()).all(|(x, y)| x >= y), || format!("case {case}: below prediction at step {i}"))?;
        }
        let twice = enforce_positive_direction(&out, &anchor).unwrap();
        ensure(twice == out, || format!("case {case}: not idempotent"))?;
        let monotone = seq_of(op.clone());
        let zero = FieldFrame::damage(Array2::zeros((h, w)), 0);
        ensure(enforce_positive_direction(&monotone, &zero).unwrap().planes().unwrap() == op, || format!("case {case}: changed a monotone input"))?;
    }
    Ok(format!("{cases} random sequences: non-decreasing, ≥ anchor, idempotent, identity on monotone input"))
}

// ---------- 5. metrics ----------

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = SsimParams::default();
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let a = Array2::from_shape_simple_fn((8, 8), || rng.random_range(0.0..1.0));
        let b = Array2::from_shape_simple_fn((8, 8), || rng.random_range(0.0..1.0));
        let saa = ssim(a.view(), a.view(), &params).unwrap();
        ensure((saa - 1.0).abs() < 1e-12, || format!("case {case}: ssim(a,a) = {saa}"))?;
        let (sab, sba) = (ssim(a.view(), b.view(), &params).unwrap(), ssim(b.view(), a.view(), &params).unwrap());
        ensure((sab - sba).abs() < 1e-12, || format!("case {case}: ssim asymmetric"))?;
        let (rab, rba) = (rmse(a.view(), b.view()).unwrap(), rmse(b.view(), a.view()).unwrap());
        ensure((rab - rba).abs() < 1e-12, || format!("case {case}: rmse asymmetric"))?;

        // a random dynamic region, never empty nor full
        let mut mask = Array2::from_shape_simple_fn((8, 8), || rng.random_bool(0.3));
        mask[[0, 0]] = true;
        mask[[7, 7]] = false;
        let (mut sd, mut nd, mut sf, mut nf) = (0.0, 0usize, 0.0, 0usize);
        for (&m, (&p, &q)) in mask.iter().zip(a.iter().zip(b.iter())) {
            if m {
                sd += (p - q) * (p - q);
                nd += 1;
            } else {
                sf += (p - q) * (p - q);
                nf += 1;
            }
        }
        let hand = 10.0 * (sd / nd as f64).sqrt() + (sf / nf as f64).sqrt();
        let got = wfe(a.view(), b.view(), &RegionMask::new(mask, MaskKind::Dynamic)).unwrap();
        worst = worst.max((got - hand).abs());
        ensure((got - hand).abs() < 1e-12, || format!("case {case}: wfe {got} vs hand {hand}"))?;
    }
    Ok(format!("20 random 8×8 pairs; worst |wfe - hand| {worst:.1e}"))
}

// ---------- 6. shape and range ----------

fn criterion_6() -> Outcome {
    let mut checked = 0;
    for c_in in [1, 3] {
        let cfg = ModelConfig { in_channels: c_in, base_width: 8, latent_state_size: 8, ..Default::default() };
        let l = cfg.window_length;
        let net = Network::new(cfg).unwrap();
        for h in [8, 16, 32] {
            for w in [8, 16, 32] {
                let mut rng = ChaCha8Rng::seed_from_u64((h * w * c_in) as u64);
                let window = |rng: &mut ChaCha8Rng| -> Vec<FieldFrame> {
                    let kind = if c_in == 1 { hossnet_core::ChannelKind::FractureDamage } else { hossnet_core::ChannelKind::CauchyStress };
                    (0..l).map(|t| FieldFrame::new(Array3::from_shape_simple_fn((h, w, c_in), || rng.random_range(0.0..1.0)), kind, t).unwrap()).collect()
                };
                let (w1, w2) = (window(&mut rng), window(&mut rng));
                let single = net.predict(&stack_windows(&[&w1]).unwrap(), l).unwrap();
                ensure(single.shape() == [l, 1, h, w], || format!("{c_in}ch {h}×{w}: output shape {:?}", single.shape()))?;
                ensure(single.iter().all(|&v| v > 0.0 && v < 1.0), || format!("{c_in}ch {h}×{w}: output outside (0,1)"))?;
                let batched = net.predict(&stack_windows(&[&w1, &w2]).unwrap(), l).unwrap();
                let second = net.predict(&stack_windows(&[&w2]).unwrap(), l).unwrap();
                let pb = planes(&batched);
                let ps: Vec<Array2<f64>> = planes(&single).into_iter().chain(planes(&second)).collect();
                let diff = pb.iter().zip(&ps).flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs())).fold(0.0, f64::max);
                ensure(diff < 1e-6, || format!("{c_in}ch {h}×{w}: batched differs by {diff:.2e}"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} (channels, H, W) combinations: shape L×1×H×W, sigmoid range, batched == unbatched"))
}

// ---------- 7. training smoke test ----------

fn desk_experiment(dir: &std::path::Path, variant: Variant, seed: u64, epochs: usize) -> Experiment {
    let mut cfg = ExperimentConfig::desk();
    cfg.data.root = Some(dir.to_path_buf());
    cfg.output_dir = dir.join("runs");
    cfg.variant = variant;
    cfg.seed = seed;
    cfg.train.epochs = epochs;
    let ds = Dataset::load_or_generate(dir, &cfg.data).unwrap();
    Experiment::prepare(&cfg, &ds).unwrap()
}

fn criterion_7(dir: &std::path::Path) -> Outcome {
    let exp = desk_experiment(dir, Variant::Hossnet, 0, 100);
    let t0 = Instant::now();
    let out = train_network(&exp, None).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let (first, last) = (out.history[0].train.mse, out.history.last().unwrap().train.mse);
    let ratio = last / first;
    let msg = format!("HOSSnet C→F over-sample seed 0: train MSE {first:.4} → {last:.4} (ratio {ratio:.3}) in {:.0}s", secs);
    ensure(out.history.len() == 100, || format!("{} epochs ran", out.history.len()))?;
    ensure(ratio <= 0.5, || msg.clone())?;
    ensure(secs < 600.0, || msg.clone())?;
    Ok(msg)
}

// ---------- 8. protocol integrity ----------

fn criterion_8() -> Outcome {
    let ids: Vec<String> = (0..6).map(|i| format!("crack_{i:03}")).collect();
    let range = |a: usize, b: usize| (a..b).collect::<Vec<_>>();
    for t in [300usize, 60] {
        let half = t / 2;
        let third = t / 3;
        for &p in Protocol::ALL {
            let s = make_split(p, &ids, t, None).map_err(|e| e.to_string())?;
            ensure(s.train_pairs().is_disjoint(&s.test_pairs()), || format!("{p} T={t}: overlap"))?;
            let (train5, test5) = (s.train_steps_of(5), s.test[0].steps.clone());
            let (want_train, want_test) = match p {
                Protocol::OverSample => (vec![], range(0, t)),
                Protocol::OverTime => (range(0, half), range(half, t)),
                Protocol::InterpolationBlocks => (range(0, third).into_iter().chain(t - third..t).collect(), range(third, t - third)),
                Protocol::InterpolationSparse => ((0..t).step_by(10).collect(), (0..t).filter(|x| x % 10 != 0).collect()),
            };
            ensure(train5 == want_train && test5 == want_test, || format!("{p} T={t}: index sets differ"))?;
            let others_full = (0..5).all(|i| match p {
                Protocol::OverSample | Protocol::OverTime => s.train_steps_of(i) == range(0, t),
                _ => s.train_steps_of(i).is_empty(),
            });
            ensure(others_full, || format!("{p} T={t}: other samples misassigned"))?;
        }
    }
    Ok("4 protocols at T=300 (150/150, 100/100/100, every 10th) and T=60: exact index sets, no overlap".into())
}

// ---------- 9. directional ablation ----------

fn criterion_9(dir: &std::path::Path) -> Outcome {
    const EPOCHS: usize = 25;
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let mut wfe10 = Vec::new();
        for v in [Variant::Hossnet, Variant::Hru] {
            let exp = desk_experiment(dir, v, seed, EPOCHS);
            let out = train_network(&exp, None).map_err(|e| e.to_string())?;
            let evals = evaluate(&exp, &out.best, exp.config.model.window_length, true).map_err(|e| e.to_string())?;
            let records: Vec<_> = evals.iter().flat_map(|e| e.records.iter().cloned()).collect();
            wfe10.push(mean_over_leads(&records, Metric::Wfe, 10).ok_or("no records")?);
        }
        if wfe10[0] <= wfe10[1] {
            wins += 1;
        }
        lines.push(format!("seed {seed}: HOSSnet {:.4} vs HRU {:.4}", wfe10[0], wfe10[1]));
    }
    let msg = format!("mean WFE over leads 1-10 after {EPOCHS} epochs; {}; HOSSnet no worse in {wins}/3 (synthetic data, ordering only)", lines.join(", "));
    ensure(wins >= 2, || msg.clone())?;
    Ok(msg)
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("HOSSNET_ACCEPTANCE").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let dir = tempfile::tempdir().expect("temporary directory");
    let data = dir.path().to_path_buf();
    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Outcome>)> = vec![
        (1, "flow solver matches dense minimizer", Box::new(criterion_1)),
        (2, "angle loss exactness", Box::new(criterion_2)),
        (3, "gradient fidelity", Box::new(criterion_3)),
        (4, "positive-direction monotonicity", Box::new(criterion_4)),
        (5, "metric identities", Box::new(criterion_5)),
        (6, "shape and range contract", Box::new(criterion_6)),
        (7, "training smoke test", Box::new({
            let d = data.clone();
            move || criterion_7(&d)
        })),
        (8, "protocol integrity", Box::new(criterion_8)),
        (9, "directional ablation", Box::new(move || criterion_9(&data))),
    ];
    let mut failed = 0;
    for (n, name, f) in &criteria {
        if only.as_ref().is_some_and(|o| !o.contains(n)) {
            continue;
        }
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
