use agentgen::gen::{GenArch, GenModel, LATENT_DIM};
use agentgen::nn::{Activation, Mlp};
use agentgen::rng::Rng;
use agentgen::zoo::Group;

const H: f64 = 1e-4;
const PROBES: usize = 100;
const TOL: f64 = 1e-4;

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Scalar objective `c · f(x)` so every output contributes.
fn mlp_objective(net: &Mlp, x: &[f64], c: &[f64]) -> f64 {
    net.forward(x).unwrap().iter().zip(c).map(|(y, c)| y * c).sum()
}

fn check_mlp(widths: &[usize], acts: Vec<Activation>, seed: u64) {
    let mut rng = Rng::new(seed);
    let mut net = Mlp::init(widths, acts, &mut rng).unwrap();
    let x: Vec<f64> = (0..widths[0]).map(|_| rng.normal()).collect();
    let c: Vec<f64> = (0..*widths.last().unwrap()).map(|_| rng.normal()).collect();

    let trace = net.trace(&x).unwrap();
    let mut grad = vec![0.0; net.num_params()];
    let grad_in = net.backward_trace(&trace, &c, &mut grad).unwrap();

    let base = net.params();
    let mut worst: f64 = 0.0;
    for _ in 0..PROBES {
        let k = rng.below(base.len());
        let mut p = base.clone();
        p[k] = base[k] + H;
        net.set_params(&p).unwrap();
        let plus = mlp_objective(&net, &x, &c);
        p[k] = base[k] - H;
        net.set_params(&p).unwrap();
        let minus = mlp_objective(&net, &x, &c);
        worst = worst.max(rel_error(grad[k], (plus - minus) / (2.0 * H)));
    }
    net.set_params(&base).unwrap();
    for k in 0..x.len() {
        let mut xp = x.clone();
        xp[k] += H;
        let plus = mlp_objective(&net, &xp, &c);
        xp[k] -= 2.0 * H;
        let minus = mlp_objective(&net, &xp, &c);
        worst = worst.max(rel_error(grad_in[k], (plus - minus) / (2.0 * H)));
    }
    assert!(worst < TOL, "{widths:?}: worst relative error {worst:e}");
}

#[test]
fn single_identity_layer() {
    check_mlp(&[5, 3], vec![Activation::Identity], 1);
}

#[test]
fn single_elu_layer() {
    check_mlp(&[5, 7], vec![Activation::Elu], 2);
}

#[test]
fn cartpole_net_shape() {
    check_mlp(&[4, 30, 2], vec![Activation::Elu, Activation::Identity], 3);
}

#[test]
fn deep_elu_stack() {
    check_mlp(
        &[8, 16, 16, 6, 3],
        vec![Activation::Elu, Activation::Elu, Activation::Elu, Activation::Identity],
        4,
    );
}

fn check_gen(arch: GenArch, label: Option<Group>, seed: u64) {
    let mut rng = Rng::new(seed);
    let mut model = GenModel::new(arch, &mut rng);
    let x: Vec<f64> = (0..arch.input_dim).map(|_| 0.3 * rng.normal()).collect();
    let eps: Vec<f64> = (0..LATENT_DIM).map(|_| rng.normal()).collect();
    let mut grad = vec![0.0; model.num_params()];
    model.accumulate_gradient(&x, label, &eps, 1.0, &mut grad).unwrap();

    let base = model.params();
    let mut worst: f64 = 0.0;
    for _ in 0..PROBES {
        let k = rng.below(base.len());
        let mut p = base.clone();
        p[k] = base[k] + H;
        model.set_params(&p).unwrap();
        let plus = model.loss_with_noise(&x, label, &eps).unwrap().total;
        p[k] = base[k] - H;
        model.set_params(&p).unwrap();
        let minus = model.loss_with_noise(&x, label, &eps).unwrap().total;
        worst = worst.max(rel_error(grad[k], (plus - minus) / (2.0 * H)));
    }
    assert!(worst < TOL, "worst relative error {worst:e}");
}

#[test]
fn unconditional_vae_loss() {
    check_gen(GenArch::unconditional(), None, 5);
}

#[test]
fn conditional_vae_loss() {
    check_gen(GenArch::conditional(), Some(Group::G3), 6);
}

#[test]
fn gradient_scale_is_linear() {
    let mut rng = Rng::new(7);
    let model = GenModel::new(GenArch::unconditional(), &mut rng);
    let x: Vec<f64> = (0..212).map(|_| 0.3 * rng.normal()).collect();
    let eps: Vec<f64> = (0..LATENT_DIM).map(|_| rng.normal()).collect();
    let mut g1 = vec![0.0; model.num_params()];
    let mut g2 = vec![0.0; model.num_params()];
    model.accumulate_gradient(&x, None, &eps, 1.0, &mut g1).unwrap();
    model.accumulate_gradient(&x, None, &eps, 0.5, &mut g2).unwrap();
    model.accumulate_gradient(&x, None, &eps, 0.5, &mut g2).unwrap();
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}
