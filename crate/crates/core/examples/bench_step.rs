use efpkd::nn::*;
use rand::SeedableRng;
fn main() {
    let spec = NetworkSpec::student(22, &[1, 64, 128], &[64], 2).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut p = ModelParams::init(&spec, &mut rng).unwrap();
    let batch = Tensor::new(vec![32, 1, 22], (0..32 * 22).map(|i| (i % 7) as f64 * 0.1).collect()).unwrap();
    let labels: Vec<usize> = (0..32).map(|i| i % 2).collect();
    let mut opt = OptimizerState::sgd(1e-4, 0.97);
    let t = std::time::Instant::now();
    let n = 300;
    for _ in 0..n {
        let out = forward_train(&spec, &mut p, &batch).unwrap();
        let l = loss_supervised(&out.logits, &labels, LabelMode::Binary).unwrap();
        let g = backward(&spec, &p, &out.cache, &l.grad, None).unwrap();
        opt.step(&mut p, &g).unwrap();
    }
    let dt = t.elapsed().as_secs_f64();
    println!("{:.3} ms/step, {:.1} us/sample", dt / n as f64 * 1e3, dt / (n * 32) as f64 * 1e6);
    let tspec = NetworkSpec::teacher(22, &[1, 32, 64, 128], &[512], 2).unwrap();
    let mut tp = ModelParams::init(&tspec, &mut rng).unwrap();
    let mut opt = OptimizerState::adam(1e-3, tp.total_count());
    let t = std::time::Instant::now();
    for _ in 0..100 {
        let out = forward_train(&tspec, &mut tp, &batch).unwrap();
        let l = loss_supervised(&out.logits, &labels, LabelMode::Binary).unwrap();
        let g = backward(&tspec, &tp, &out.cache, &l.grad, None).unwrap();
        opt.step(&mut tp, &g).unwrap();
    }
    println!("teacher {:.3} ms/step", t.elapsed().as_secs_f64() / 100.0 * 1e3);
}
