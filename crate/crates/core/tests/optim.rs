use voxelseg_core::net::{NetworkConfig, NetworkParams};
use voxelseg_core::optim::{Optimizer, OptimizerConfig};
use voxelseg_core::Tensor;

#[test]
fn adam_minimizes_quadratic_bowl() {
    let mut opt = Optimizer::<f64>::new(OptimizerConfig::adam(0.1)).unwrap();
    let mut w = Tensor::<f64>::new(&[1], vec![0.0]).unwrap().with_grad();
    let mut steps = 0;
    while (w.data()[0] - 3.0).abs() >= 1e-3 || steps < 10 {
        let g = 2.0 * (w.data()[0] - 3.0);
        w.accumulate_grad(&[g]).unwrap();
        opt.step_tensors(&mut [("w".to_string(), &mut w)]).unwrap();
        steps += 1;
        assert!(steps <= 2000, "w = {}", w.data()[0]);
    }
}

#[test]
fn sgd_momentum_minimizes_quadratic_bowl() {
    let mut opt = Optimizer::<f64>::new(OptimizerConfig::sgd(0.05, 0.9)).unwrap();
    let mut w = Tensor::<f64>::new(&[1], vec![0.0]).unwrap().with_grad();
    for _ in 0..2000 {
        let g = 2.0 * (w.data()[0] - 3.0);
        w.accumulate_grad(&[g]).unwrap();
        opt.step_tensors(&mut [("w".to_string(), &mut w)]).unwrap();
    }
    assert!((w.data()[0] - 3.0).abs() < 1e-6);
}

#[test]
fn network_step_leaves_statistics_alone_and_clears_grads() {
    let mut net = NetworkParams::<f64>::build(&NetworkConfig::tiny(), 3).unwrap();
    for cfg in [OptimizerConfig::adam(1e-3), OptimizerConfig::sgd(1e-3, 0.9)] {
        let before = net.clone();
        let mut opt = Optimizer::new(cfg).unwrap();
        opt.step(&mut net).unwrap();
        assert_eq!(net, before, "zero gradients must not move anything");
        for e in net.entries_mut() {
            if let Some(g) = e.tensor.grad_mut() {
                g.iter_mut().for_each(|v| *v = 1.0);
            }
        }
        opt.step(&mut net).unwrap();
        for (a, b) in net.entries().iter().zip(before.entries()) {
            if a.role.trainable() {
                assert_ne!(a.tensor.data(), b.tensor.data(), "{}", a.path);
                assert!(a.tensor.grad().unwrap().iter().all(|&g| g == 0.0));
            } else {
                assert_eq!(a.tensor.data(), b.tensor.data());
            }
        }
        net = before;
    }
}
