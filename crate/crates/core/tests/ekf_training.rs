use rnn_ekf::data::{gen_nonlinear_benchmark, Dataset, Scaling};
use rnn_ekf::ekf::{train, EkfConfig};
use rnn_ekf::models::{Activation, RnnModel, RnnSpec};
use rnn_ekf::numerics::{SeededRng, Signal};
use rnn_ekf::objectives::{Loss, Regularizer};
use rnn_ekf::report::{evaluate, EvalSettings};

fn linear_system(n: usize, seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed);
    let (mut x1, mut x2) = (0.0, 0.0);
    let (mut u, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let uk = rng.uniform(-1.0, 1.0);
        u.push(uk);
        y.push(x1 - 0.4 * x2);
        (x1, x2) = (0.7 * x1 + 0.2 * x2 + 0.5 * uk, -0.2 * x1 + 0.8 * x2 + uk);
    }
    Dataset::single(Signal::scalar(&u), Signal::scalar(&y)).unwrap()
}

fn l2(rho: f64) -> Vec<Regularizer> {
    vec![Regularizer::L2 {
        rho_theta: rho,
        rho_x: rho,
    }]
}

#[test]
fn identifies_stable_linear_system() {
    let (train_set, test_set) = linear_system(800, 7).split_at(400).unwrap();
    let model = RnnModel::new(RnnSpec::linear(2, 1, 1)).unwrap();
    let cfg = EkfConfig::new(Loss::mse_identity(1), l2(1e-4)).with_epochs(10);
    let out = train(&train_set, &model, &cfg, None, &mut SeededRng::new(1)).unwrap();
    let eval = evaluate(&model, &out.theta, &test_set, &cfg.loss, &cfg.regs, &EvalSettings::default()).unwrap();
    assert!(eval.fit > 95.0, "test BFR {}", eval.fit);
}

#[test]
fn training_is_deterministic() {
    let data = linear_system(200, 3);
    let model = RnnModel::new(RnnSpec::shallow(2, 1, 1, 3, Activation::Tanh)).unwrap();
    let cfg = EkfConfig::new(Loss::mse_identity(1), l2(1e-3)).with_epochs(2);
    let a = train(&data, &model, &cfg, None, &mut SeededRng::new(5)).unwrap();
    let b = train(&data, &model, &cfg, None, &mut SeededRng::new(5)).unwrap();
    assert_eq!(a.theta, b.theta);
    assert_eq!(a.final_state, b.final_state);
}

#[test]
fn recurrent_model_beats_linear_model_on_nonlinear_benchmark() {
    let g = gen_nonlinear_benchmark(0, 1000).unwrap();
    let scaling = Scaling::fit(&g.train());
    let (tr, te) = (scaling.apply(&g.train()), scaling.apply(&g.test()));
    let fit = |spec: RnnSpec| {
        let model = RnnModel::new(spec).unwrap();
        let cfg = EkfConfig::new(Loss::mse_identity(1), l2(1e-3)).with_epochs(10);
        let out = train(&tr, &model, &cfg, None, &mut SeededRng::new(0)).unwrap();
        evaluate(&model, &out.theta, &te, &cfg.loss, &cfg.regs, &EvalSettings::default()).unwrap().fit
    };
    let linear = fit(RnnSpec::linear(4, 1, 1));
    let rnn = fit(RnnSpec::shallow(4, 1, 1, 6, Activation::Atan));
    assert!(rnn > linear, "rnn {rnn:.2} vs linear {linear:.2}");
}
