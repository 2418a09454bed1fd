use hossnet_autograd::gradcheck::{numeric_gradient, relative_error};
use hossnet_autograd::{Graph, Tensor};
use hossnet_core::flow::{self, FlowSolverParams};
use hossnet_core::{MaskKind, RegionMask};
use hossnet_model::extractor::FeatureExtractor;
use hossnet_model::losses::{mse_loss, optical_loss, perceptual_loss, subregion_mask, total_loss};
use hossnet_model::tensor_io::planes;
use hossnet_model::{LossSettings, LossWeights, Mode, ModelConfig, Network, RandomConvExtractor};
use ndarray::{s, Array2, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_shape_simple_fn(IxDyn(shape), || rng.random_range(0.05..0.95))
}

/// Two 8×8 frames of a smooth blob drifting right, plus a noisy prediction of them.
fn pair() -> (Tensor, Tensor) {
    let truth = Tensor::from_shape_fn(IxDyn(&[2, 1, 8, 8]), |ix| {
        let (t, y, x) = (ix[0] as f64, ix[2] as f64, ix[3] as f64);
        0.1 + 0.8 * (-((x - 3.0 - 0.7 * t).powi(2) + (y - 4.0).powi(2)) / 6.0).exp()
    });
    let noise = random(&[2, 1, 8, 8], 3) - 0.5;
    let pred = &truth * 0.8 + noise * 0.2 + 0.05;
    (pred, truth)
}

fn scalar_of(f: impl Fn(&mut Graph, hossnet_autograd::Var) -> hossnet_autograd::Var, x: &Tensor) -> f64 {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let out = f(&mut g, v);
    g.scalar(out)
}

#[test]
fn mse_examples() {
    let truth = Tensor::zeros(IxDyn(&[1, 1, 2, 2]));
    assert_eq!(scalar_of(|g, p| mse_loss(g, p, &truth, None).unwrap(), &truth), 0.0);
    let off = truth.mapv(|v| v + 0.1);
    assert!((scalar_of(|g, p| mse_loss(g, p, &truth, None).unwrap(), &off) - 0.01).abs() < 1e-15);
    let mut one = truth.clone();
    one[[0, 0, 1, 1]] = 0.5;
    assert_eq!(scalar_of(|g, p| mse_loss(g, p, &truth, None).unwrap(), &one), 0.0625);
    let mut g = Graph::new();
    let bad = g.constant(Tensor::zeros(IxDyn(&[1, 1, 2, 3])));
    assert!(mse_loss(&mut g, bad, &truth, None).is_err());
}

#[test]
fn masked_mse() {
    let truth = Tensor::zeros(IxDyn(&[1, 1, 2, 2]));
    let pred = Tensor::from_shape_vec(IxDyn(&[1, 1, 2, 2]), vec![0.2, 0.4, 0.0, 0.0]).unwrap();
    let full = Tensor::ones(IxDyn(&[1, 1, 2, 2]));
    let unmasked = scalar_of(|g, p| mse_loss(g, p, &truth, None).unwrap(), &pred);
    assert_eq!(scalar_of(|g, p| mse_loss(g, p, &truth, Some(&full)).unwrap(), &pred), unmasked);
    let bottom = Tensor::from_shape_vec(IxDyn(&[1, 1, 2, 2]), vec![0.0, 0.0, 1.0, 1.0]).unwrap();
    assert_eq!(scalar_of(|g, p| mse_loss(g, p, &truth, Some(&bottom)).unwrap(), &pred), 0.0);
    let top = Tensor::from_shape_vec(IxDyn(&[1, 1, 2, 2]), vec![1.0, 1.0, 0.0, 0.0]).unwrap();
    let expect = (0.04 + 0.16) / 2.0;
    assert!((scalar_of(|g, p| mse_loss(g, p, &truth, Some(&top)).unwrap(), &pred) - expect).abs() < 1e-15);
    let none = Tensor::zeros(IxDyn(&[1, 1, 2, 2]));
    let mut g = Graph::new();
    let p = g.constant(pred);
    assert!(mse_loss(&mut g, p, &truth, Some(&none)).is_err());
}

#[test]
fn perceptual_properties() {
    let ext = RandomConvExtractor::new(5, &[4, 4]);
    let (pred, truth) = pair();
    assert_eq!(scalar_of(|g, p| perceptual_loss(g, p, &truth, &ext, None).unwrap(), &truth), 0.0);
    let v = scalar_of(|g, p| perceptual_loss(g, p, &truth, &ext, None).unwrap(), &pred);
    assert!(v > 0.0);
    // swapping the batch order of both arguments leaves the value unchanged
    let swap = |t: &Tensor| {
        let mut o = t.clone();
        o.slice_mut(s![0, .., .., ..]).assign(&t.slice(s![1, .., .., ..]));
        o.slice_mut(s![1, .., .., ..]).assign(&t.slice(s![0, .., .., ..]));
        o
    };
    let ts = swap(&truth);
    let vs = scalar_of(|g, p| perceptual_loss(g, p, &ts, &ext, None).unwrap(), &swap(&pred));
    assert!((v - vs).abs() <= 1e-12 * v);
}

#[test]
fn optical_term_matches_core_regularizer() {
    let (pred, truth) = pair();
    let settings = LossSettings::default();
    let got = scalar_of(|g, p| optical_loss(g, p, &truth, 2, &settings, None).unwrap(), &pred);
    let obs = flow::observed_flows(&planes(&truth), &settings.flow).unwrap();
    let pp = planes(&pred);
    let fp = flow::estimate_flow_planes(pp[0].view(), pp[1].view(), &settings.flow).unwrap();
    let expect = flow::flow_angle_loss(&fp, &obs[0], settings.magnitude_floor).unwrap();
    assert!((got - expect).abs() <= 1e-12 * expect.max(1.0));
    assert!(got > 0.0);
}

fn report_for(pred: &Tensor, truth: &Tensor, w: LossWeights, masks: Option<&[RegionMask]>, ext: &dyn FeatureExtractor) -> hossnet_model::LossReport {
    let mut g = Graph::new();
    let p = g.constant(pred.clone());
    let settings = LossSettings { weights: w, ..Default::default() };
    total_loss(&mut g, p, truth, 2, masks, &settings, Some(ext)).unwrap().1
}

#[test]
fn total_loss_composition() {
    let ext = RandomConvExtractor::new(5, &[4, 4]);
    let (pred, truth) = pair();
    let r0 = report_for(&pred, &truth, LossWeights { alpha_perc: 0.0, alpha_op: 0.0 }, None, &ext);
    assert_eq!(r0.total, r0.mse);
    let r1 = report_for(&pred, &truth, LossWeights { alpha_perc: 1.0, alpha_op: 1.0 }, None, &ext);
    let perc = scalar_of(|g, p| perceptual_loss(g, p, &truth, &ext, None).unwrap(), &pred);
    let opt = scalar_of(|g, p| optical_loss(g, p, &truth, 2, &LossSettings::default(), None).unwrap(), &pred);
    let mse = scalar_of(|g, p| mse_loss(g, p, &truth, None).unwrap(), &pred);
    assert!((r1.total - (mse + perc + opt)).abs() <= 1e-12 * r1.total);
    assert!((r1.total - (r1.mse + r1.perceptual + r1.optical)).abs() <= 1e-9 * r1.total);
    let r2 = report_for(&pred, &truth, LossWeights { alpha_perc: 1.0, alpha_op: 2.0 }, None, &ext);
    assert!(r2.total >= r1.total);
    let same = report_for(&truth, &truth, LossWeights { alpha_perc: 1.0, alpha_op: 1.0 }, None, &ext);
    assert_eq!(same.total, 0.0);

    let mut g = Graph::new();
    let one = g.constant(pred.slice(s![0..1, .., .., ..]).to_owned().into_dyn());
    let t1 = truth.slice(s![0..1, .., .., ..]).to_owned().into_dyn();
    assert!(total_loss(&mut g, one, &t1, 1, None, &LossSettings::default(), Some(&ext)).is_err());
    let mut g = Graph::new();
    let p = g.constant(pred.clone());
    assert!(total_loss(&mut g, p, &truth, 2, None, &LossSettings::default(), None).is_err());
}

#[test]
fn subregion_is_dilated_bounding_box() {
    let mut a = Array2::<f64>::zeros((16, 16));
    let b = {
        let mut b = a.clone();
        b[[6, 7]] = 0.5;
        b[[8, 9]] = 0.5;
        b
    };
    let m = subregion_mask(&[a.clone(), b], 4, 1e-4);
    assert_eq!(m.kind, MaskKind::SubRegion);
    let expect = Array2::from_shape_fn((16, 16), |(y, x)| (2..=12).contains(&y) && (3..=13).contains(&x));
    assert_eq!(m.mask, expect);
    a[[0, 0]] = 1.0;
    let still = subregion_mask(&[a.clone(), a], 4, 1e-4);
    assert_eq!(still.count(), 256);
}

#[test]
fn total_loss_gradient_wrt_predictions() {
    let ext = RandomConvExtractor::new(11, &[3, 3]);
    let (pred, truth) = pair();
    let mut mask = Array2::from_elem((8, 8), false);
    mask.slice_mut(s![1..7, 0..6]).fill(true);
    let masks = vec![RegionMask::new(mask, MaskKind::SubRegion)];
    let settings = LossSettings { weights: LossWeights { alpha_perc: 1.0, alpha_op: 1.0 }, ..Default::default() };
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
        let num = numeric_gradient(f, &pred, 1e-6);
        let err = relative_error(&ana, &num);
        assert!(err < 1e-4, "relative error {err}");
    }
}

#[test]
fn end_to_end_weight_gradients() {
    let cfg = ModelConfig { base_width: 4, latent_state_size: 4, window_length: 2, n_res_blocks_per_stage: 1, ..Default::default() };
    let net = Network::new(cfg).unwrap();
    let ext = RandomConvExtractor::new(11, &[3, 3]);
    let (_, truth) = pair();
    let x = random(&[2, 1, 8, 8], 12);
    let settings = LossSettings { weights: LossWeights { alpha_perc: 1.0, alpha_op: 1.0 }, flow: FlowSolverParams { n_iterations: 20, ..Default::default() }, ..Default::default() };
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
    let mut ana_all = Vec::new();
    let mut num_all = Vec::new();
    for (id, ana) in grads {
        let base = net.params().get(id).clone();
        let num = numeric_gradient(
            |t| {
                let mut n = net.clone();
                *n.params_mut().get_mut(id) = t.clone();
                let (g, _, l) = loss_with(&n);
                g.scalar(l)
            },
            &base,
            1e-6,
        );
        ana_all.extend(ana.iter().copied());
        num_all.extend(num.iter().copied());
    }
    let a = Tensor::from_shape_vec(IxDyn(&[ana_all.len()]), ana_all).unwrap();
    let n = Tensor::from_shape_vec(IxDyn(&[num_all.len()]), num_all).unwrap();
    let err = relative_error(&a, &n);
    assert!(err < 1e-3, "relative error {err}");
}
