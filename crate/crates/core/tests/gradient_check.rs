//! Analytic gradients against central finite differences, in f64.

use angioseg::image::{FlowField, Label};
use angioseg::nnet::gradcheck::{check_parameters, layer_parameters, Objective};
use angioseg::nnet::{backward, bce, forward, siamese_cce, Gradients, UNetConfig, UNetParams, UpsampleMode};
use angioseg::optflow::ProbWarp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOLERANCE: f64 = 1e-4;

fn tiny(classes: usize) -> UNetConfig {
    UNetConfig {
        input_size: 16,
        levels: 1,
        convs_per_level: 2,
        base_features: 2,
        out_classes: classes,
        upsample: UpsampleMode::BilinearConv,
    }
}

fn image(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..256).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn check(
    params: &UNetParams<f64>,
    analytic: &Gradients<f64>,
    objective: &Objective,
    candidates: Vec<usize>,
    wanted: usize,
    minimum: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let r = check_parameters(params, analytic, objective, candidates, wanted, rng);
    assert!(r.checked >= wanted.min(minimum), "only {} kink-free parameters", r.checked);
    r.worst
}

fn binary_objective<'a>(input: &'a [f64], target: &'a [bool]) -> impl Fn(&UNetParams<f64>) -> (f64, u64) + 'a {
    move |p| {
        let trace = forward(p, input).unwrap();
        (bce(trace.probs(), target).loss, trace.activation_pattern())
    }
}

#[test]
fn binary_network_gradients_per_layer_group() {
    let cfg = tiny(1);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let params = UNetParams::<f64>::init(cfg, 7).unwrap();
    let input = image(&mut rng);
    let target: Vec<bool> = (0..256).map(|_| rng.random_bool(0.3)).collect();
    let trace = forward(&params, &input).unwrap();
    let g = bce(trace.probs(), &target);
    let analytic = backward(&params, &trace, &g.grad).unwrap();
    let objective = binary_objective(&input, &target);

    // layout: 0,1 encoder | 2,3 bottleneck | 4 post-upsample conv | 5,6 decoder | 7 head
    let groups: [(&str, &[usize]); 5] = [
        ("conv", &[5, 6]),
        ("pool (encoder, through pool + skip)", &[0, 1]),
        ("upsample (bottleneck)", &[2, 3]),
        ("skip-concat (post-upsample conv)", &[4]),
        ("sigmoid+bce head", &[7]),
    ];
    for (name, layers) in groups {
        let cands = layer_parameters(&cfg, layers);
        let wanted = cands.len().min(100);
        let minimum = wanted * 9 / 10;
        let worst = check(&params, &analytic, &objective, cands, wanted, minimum, &mut rng);
        println!("{name}: worst relative error {worst:.2e}");
        assert!(worst < TOLERANCE, "{name}: {worst}");
    }
}

#[test]
fn siamese_network_gradient_sums_both_branches() {
    let cfg = tiny(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = UNetParams::<f64>::init(cfg, 5).unwrap();
    let first = image(&mut rng);
    let second = image(&mut rng);
    let labels: Vec<Label> = (0..256).map(|_| Label::ALL[rng.random_range(0..3)]).collect();
    let flow = FlowField::from_fn(16, 16, |x, y| [0.3 * (y as f32 / 4.0).sin() + 0.4, -0.25 * (x as f32 / 5.0).cos()]);
    let warp = ProbWarp::new(&flow);

    let t1 = forward(&params, &first).unwrap();
    let t2 = forward(&params, &second).unwrap();
    let warped = warp.forward(t2.probs(), 3);
    let l = siamese_cce(t1.probs(), Some(&warped), &labels, 3);
    let mut analytic = backward(&params, &t1, &l.grad_first).unwrap();
    let g2 = warp.backward(t2.probs(), 3, &l.grad_warped);
    analytic.add_assign(&backward(&params, &t2, &g2).unwrap()).unwrap();

    let objective = |p: &UNetParams<f64>| {
        let a = forward(p, &first).unwrap();
        let b = forward(p, &second).unwrap();
        let w = warp.forward(b.probs(), 3);
        let loss = siamese_cce(a.probs(), Some(&w), &labels, 3).loss;
        (loss, a.activation_pattern() ^ b.activation_pattern().rotate_left(1))
    };
    let all: Vec<usize> = (0..cfg.parameter_count()).collect();
    let worst = check(&params, &analytic, &objective, all, 100, 100, &mut rng);
    println!("softmax + two-branch loss: worst relative error {worst:.2e}");
    assert!(worst < TOLERANCE);
}

#[test]
fn deeper_network_gradients() {
    let cfg = UNetConfig {
        input_size: 16,
        levels: 2,
        convs_per_level: 2,
        base_features: 2,
        out_classes: 3,
        upsample: UpsampleMode::BilinearConv,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = UNetParams::<f64>::init(cfg, 1).unwrap();
    let input = image(&mut rng);
    let labels: Vec<Label> = (0..256).map(|_| Label::ALL[rng.random_range(0..3)]).collect();
    let trace = forward(&params, &input).unwrap();
    let l = siamese_cce(trace.probs(), None, &labels, 3);
    let analytic = backward(&params, &trace, &l.grad_first).unwrap();
    let objective = |p: &UNetParams<f64>| {
        let t = forward(p, &input).unwrap();
        (siamese_cce(t.probs(), None, &labels, 3).loss, t.activation_pattern())
    };
    let all: Vec<usize> = (0..cfg.parameter_count()).collect();
    let worst = check(&params, &analytic, &objective, all, 100, 100, &mut rng);
    assert!(worst < TOLERANCE, "{worst}");
}
