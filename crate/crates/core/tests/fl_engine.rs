mod common;

use common::*;
use efpkd::data::{dirichlet_partition, PartitionPlan};
use efpkd::fl::{
    aggregate_models, aggregate_prototypes, batch_regularization, client_update, compute_prototypes,
    global_objective_value, init_clients, model_weights, pretrain_teacher, run_training, sample_availability,
    ObjectiveTerm, PrototypeSet, RoundConfig, Strategy,
};
use efpkd::nn::{backward, forward, LabelMode, Mode, ModelParams, NetworkSpec, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn plan_of(shards: Vec<Vec<usize>>) -> PartitionPlan {
    PartitionPlan {
        client_shards: shards,
        delta: 1.0,
        seed: 0,
    }
}

#[test]
fn availability_frequency_matches_probability() {
    let mut r = rng(17);
    let mut hits = [0usize; 10];
    for _ in 0..10_000 {
        for (h, a) in hits.iter_mut().zip(sample_availability(10, 0.5, &mut r)) {
            *h += a as usize;
        }
    }
    for h in hits {
        let f = h as f64 / 10_000.0;
        assert!((f - 0.5).abs() <= 0.02, "frequency {f}");
    }
}

fn separable_shard(n: usize, d: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut r = rng(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let shift = if y == 0 { 0.25 } else { 0.75 };
        rows.push((0..d).map(|_| shift + r.random_range(-0.15..0.15)).collect::<Vec<f64>>());
        labels.push(y);
    }
    (Tensor::from_rows(&rows).unwrap(), labels)
}

#[test]
fn teacher_learns_separable_toy_and_is_deterministic() {
    let d = 6;
    let spec = NetworkSpec::teacher(d, &[1, 4, 4], &[8], 2).unwrap();
    let (x, y) = separable_shard(200, d, 2);
    let init = ModelParams::init(&spec, &mut rng(4)).unwrap();

    let mut unchanged = init.clone();
    pretrain_teacher(0, &spec, &mut unchanged, &x, &y, LabelMode::Binary, 0, 1e-3, 32, 9).unwrap();
    assert_eq!(unchanged, init);

    let mut a = init.clone();
    pretrain_teacher(0, &spec, &mut a, &x, &y, LabelMode::Binary, 5, 1e-3, 32, 9).unwrap();
    let mut b = init.clone();
    pretrain_teacher(0, &spec, &mut b, &x, &y, LabelMode::Binary, 5, 1e-3, 32, 9).unwrap();
    assert_eq!(a.values(), b.values());
    assert_eq!(a.buffers(), b.buffers());

    let pred = efpkd::fl::predict(&spec, &a, &x).unwrap();
    let acc = pred.iter().zip(&y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64;
    assert!(acc > 0.95, "training accuracy {acc}");
}

#[test]
fn prototypes_are_class_means_of_embeddings() {
    let d = 5;
    let spec = NetworkSpec::student(d, &[1, 3], &[4], 3).unwrap();
    let params = random_params(&spec, &mut rng(8));
    let rows = random_records(&mut rng(9), 3, d);
    let x = Tensor::from_rows(&rows).unwrap();
    let labels = [2, 0, 2];

    let p = compute_prototypes(&spec, &params, &x, &labels, true).unwrap();
    let emb = forward(&spec, &params, &batch_tensor(&rows), Mode::Infer).unwrap().embedding;
    assert_eq!(p.get(0).unwrap().vector, emb.row(1));
    assert_eq!(p.get(0).unwrap().count, 1);
    assert_eq!(p.get(2).unwrap().count, 2);
    for (j, v) in p.get(2).unwrap().vector.iter().enumerate() {
        let direct = (emb.row(0)[j] + emb.row(2)[j]) / 2.0;
        assert!((v - direct).abs() < 1e-12);
    }
    assert!(p.get(1).is_none());
    assert!(compute_prototypes(&spec, &params, &x, &labels, false).unwrap().is_empty());
}

#[test]
fn regularization_gradient_passes_finite_differences() {
    let mut checked = 0;
    for seed in 0..16u64 {
        let mut r = rng(300 + seed);
        let spec = random_spec(&mut r);
        let params = random_params(&spec, &mut r);
        let n = 5;
        let records = random_records(&mut r, n, spec.input_len);
        let naive = naive_forward(&spec, &params, &records, true);
        if naive.pre_relu.iter().any(|v| v.abs() < 1e-3) {
            continue;
        }
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let dim = spec.embedding_dim();
        let mut global = PrototypeSet::empty(dim);
        global.insert(0, (0..dim).map(|_| r.random_range(-1.0..1.0)).collect(), 3);
        global.insert(1, (0..dim).map(|_| r.random_range(-1.0..1.0)).collect(), 2);

        let out = forward(&spec, &params, &batch_tensor(&records), Mode::Train).unwrap();
        let (_, eg) = batch_regularization(&out.embedding, &labels, &global);
        let zero = Tensor::zeros(vec![n, spec.n_classes()]);
        let g = backward(&spec, &params, &out.cache, &zero, Some(&eg)).unwrap();

        let buffers = params.buffers().to_vec();
        let numeric = central_differences(params.values(), 1e-5, |v| {
            let mut p = ModelParams::zeros(&spec).unwrap();
            p.assign(v.to_vec(), buffers.clone()).unwrap();
            let o = naive_forward(&spec, &p, &records, true);
            // squared distance between batch class means and the global vectors
            (0..2)
                .map(|k| {
                    let members: Vec<&Vec<f64>> =
                        o.embedding.iter().zip(&labels).filter(|(_, &y)| y == k).map(|(e, _)| e).collect();
                    let gv = &global.get(k).unwrap().vector;
                    (0..dim)
                        .map(|j| {
                            let m = members.iter().map(|e| e[j]).sum::<f64>() / members.len() as f64;
                            (m - gv[j]).powi(2)
                        })
                        .sum::<f64>()
                })
                .sum()
        });
        let err = max_relative_error(&g.values, &numeric, 1e-6);
        assert!(err < 1e-4, "seed {seed}: {err}");
        checked += 1;
    }
    assert!(checked >= 6, "only {checked} kink-free cases");
}

fn toy_clients(cfg: &RoundConfig, n_clients: usize) -> (efpkd::data::PreparedData, efpkd::fl::ModelSpecs, PartitionPlan) {
    let data = toy_data(240, 60, 8, LabelMode::Binary, 1);
    let specs = toy_specs(8, 2);
    let plan = dirichlet_partition(&data.train.labels, n_clients, 5.0, cfg.seed).unwrap();
    (data, specs, plan)
}

#[test]
fn client_update_returns_model_only_when_aggregating() {
    let cfg = RoundConfig {
        rounds: 3,
        local_epochs: 1,
        teacher_epochs: 1,
        ..Default::default()
    };
    let (data, specs, plan) = toy_clients(&cfg, 2);
    let (mut clients, _) = init_clients(&data.train, &plan, &specs, &cfg).unwrap();
    let c = &mut clients[0];
    c.alpha = true;
    let empty = PrototypeSet::empty(specs.student.embedding_dim());
    let u = client_update(c, &specs.student, &empty, &cfg, 1).unwrap();
    assert!(u.model.is_none());
    assert!(u.prototypes.is_some());
    let u = client_update(c, &specs.student, &empty, &cfg, 3).unwrap();
    assert!(u.model.is_some());

    let frozen = RoundConfig { local_epochs: 0, ..cfg.clone() };
    let before = c.student.clone();
    let u = client_update(c, &specs.student, &empty, &frozen, 2).unwrap();
    assert_eq!(c.student, before);
    let direct = compute_prototypes(&specs.student, &before, &c.features, &c.labels, true).unwrap();
    assert_eq!(u.prototypes.unwrap(), direct);
    for (k, p) in &direct.entries {
        assert_eq!(p.count, c.class_count(*k));
    }
}

#[test]
fn local_loss_trace_mostly_decreases() {
    let cfg = RoundConfig {
        rounds: 1,
        local_epochs: 5,
        teacher_epochs: 3,
        student_lr: 0.05,
        epoch_end_eval: true,
        ..Default::default()
    };
    let (data, specs, plan) = toy_clients(&cfg, 1);
    let (mut clients, _) = init_clients(&data.train, &plan, &specs, &cfg).unwrap();
    let c = &mut clients[0];
    c.alpha = true;
    let before = efpkd::fl::shard_loss(c, &specs.student, &PrototypeSet::empty(6), &cfg, None).unwrap();
    let u = client_update(c, &specs.student, &PrototypeSet::empty(6), &cfg, 1).unwrap();
    let mut trace = vec![before];
    trace.extend(&u.epoch_losses);
    let non_increasing = trace.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(non_increasing >= 4, "trace {trace:?}");
}

#[test]
fn weighted_model_average_spot_value() {
    let spec = NetworkSpec::student(4, &[1, 2], &[3], 2).unwrap();
    let a = ModelParams::init(&spec, &mut rng(1)).unwrap();
    let b = ModelParams::init(&spec, &mut rng(2)).unwrap();
    let g = aggregate_models(&[&a, &b], &[100, 300], &[true, true]).unwrap();
    for i in 0..a.total_count() {
        assert!((g.values()[i] - (0.25 * a.values()[i] + 0.75 * b.values()[i])).abs() < 1e-12);
    }
    let other = ModelParams::init(&NetworkSpec::student(5, &[1, 2], &[3], 2).unwrap(), &mut rng(3)).unwrap();
    assert!(aggregate_models(&[&a, &other], &[1, 1], &[true, true]).is_err());
}

#[test]
fn single_round_efpkd_produces_global_model() {
    let cfg = RoundConfig {
        rounds: 1,
        local_epochs: 1,
        teacher_epochs: 1,
        ..Default::default()
    };
    let (data, specs, plan) = toy_clients(&cfg, 3);
    let run = run_training(&data.train, &plan, &specs, &cfg, None).unwrap();
    assert!(run.global.model.is_some());
    assert!(run.reports[0].ledger.model_bytes_up > 0);
}

#[test]
fn efpkd_moves_no_model_bytes_before_final_round() {
    let cfg = RoundConfig {
        rounds: 4,
        local_epochs: 1,
        teacher_epochs: 1,
        availability_probability: 0.7,
        seed: 5,
        ..Default::default()
    };
    let (data, specs, plan) = toy_clients(&cfg, 4);
    let run = run_training(&data.train, &plan, &specs, &cfg, Some(&data.test)).unwrap();
    for r in &run.reports {
        if r.round < cfg.rounds {
            assert_eq!(r.ledger.model_bytes(), 0, "round {}", r.round);
            assert!(!r.global_model_present);
            assert!(r.ledger.prototype_bytes_up > 0);
        } else {
            assert!(r.ledger.model_bytes() > 0);
            assert!(r.global_model_present);
        }
        assert!(r.test_accuracy.is_some());
    }
    assert!(run.init_model_bytes > 0);
}

#[test]
fn one_step_fedavg_equals_centralized_full_batch() {
    let data = toy_data(200, 10, 8, LabelMode::Binary, 2);
    let specs = toy_specs(8, 2);
    let n = data.train.len();
    let cfg = RoundConfig {
        strategy: Strategy::Fedavg,
        rounds: 1,
        local_epochs: 1,
        batch_size: n,
        student_lr: 0.05,
        availability_probability: 1.0,
        ..Default::default()
    };
    let split = plan_of(vec![(0..n).step_by(2).collect(), (1..n).step_by(2).collect()]);
    let central = plan_of(vec![(0..n).collect()]);
    let fed = run_training(&data.train, &split, &specs, &cfg, None).unwrap();
    let cen = run_training(&data.train, &central, &specs, &cfg, None).unwrap();
    let (a, b) = (fed.global.model.unwrap(), cen.global.model.unwrap());
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() < 1e-9, "{x} vs {y}");
    }
}

#[test]
fn degenerate_efpkd_matches_fedavg_bit_for_bit() {
    let base = RoundConfig {
        rounds: 3,
        local_epochs: 2,
        psi: 1.0,
        gamma: 0.0,
        availability_probability: 1.0,
        force_model_aggregation_every_round: true,
        seed: 11,
        ..Default::default()
    };
    let (data, specs, plan) = toy_clients(&base, 3);
    let e = run_training(&data.train, &plan, &specs, &base, None).unwrap();
    let f = run_training(
        &data.train,
        &plan,
        &specs,
        &RoundConfig {
            strategy: Strategy::Fedavg,
            ..base.clone()
        },
        None,
    )
    .unwrap();
    assert_eq!(e.global.model.unwrap().values(), f.global.model.unwrap().values());
}

#[test]
fn same_seed_reproduces_every_strategy() {
    for strategy in Strategy::ALL {
        let cfg = RoundConfig {
            strategy,
            rounds: 2,
            local_epochs: 1,
            teacher_epochs: 1,
            seed: 3,
            ..Default::default()
        };
        let (data, specs, plan) = toy_clients(&cfg, 3);
        let a = run_training(&data.train, &plan, &specs, &cfg, Some(&data.test)).unwrap();
        let b = run_training(&data.train, &plan, &specs, &cfg, Some(&data.test)).unwrap();
        assert_eq!(a.reports, b.reports, "{strategy}");
        assert_eq!(a.global.model, b.global.model);
        for (x, y) in a.clients.iter().zip(&b.clients) {
            assert_eq!(x.student, y.student);
        }
        let expect_model = matches!(strategy, Strategy::Efpkd | Strategy::Fedavg | Strategy::Fedprox | Strategy::Fedkd);
        assert_eq!(a.global.model.is_some(), expect_model, "{strategy}");
        let protos = matches!(strategy, Strategy::Efpkd | Strategy::Fedproto);
        assert_eq!(a.reports[1].global_prototype_classes > 0, protos, "{strategy}");
    }
}

#[test]
fn objective_matches_hand_computation() {
    let mk = |alpha, size, loss, k: &[(usize, Vec<f64>, usize)]| {
        let mut p = PrototypeSet::empty(2);
        for (c, v, n) in k {
            p.insert(*c, v.clone(), *n);
        }
        ObjectiveTerm {
            alpha,
            size,
            supervised_loss: loss,
            prototypes: p,
        }
    };
    let t1 = mk(true, 30, 0.4, &[(0, vec![1.0, 0.0], 10), (1, vec![0.0, 2.0], 20)]);
    let t2 = mk(true, 10, 0.9, &[(0, vec![3.0, 1.0], 10)]);
    let t3 = mk(false, 50, 5.0, &[(0, vec![9.0, 9.0], 50)]);
    let mut g = PrototypeSet::empty(2);
    g.insert(0, vec![2.0, 0.0], 20);
    g.insert(1, vec![0.0, 1.0], 20);
    let gamma = 0.5;
    // supervised: 30/40*0.4 + 10/40*0.9; class 0: 10/20*1 + 10/20*(1+1); class 1: 20/20*1
    let expected = 0.75 * 0.4 + 0.25 * 0.9 + gamma * (0.5 * 1.0 + 0.5 * 2.0 + 1.0);
    let got = global_objective_value(&[t1, t2, t3], &g, gamma);
    assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
}

fn proto_set(entries: Vec<(usize, Vec<f64>, usize)>) -> PrototypeSet {
    let mut s = PrototypeSet::empty(2);
    for (k, v, c) in entries {
        s.insert(k, v, c);
    }
    s
}

proptest! {
    #[test]
    fn model_weights_sum_to_one(
        sizes in prop::collection::vec(1usize..10_000, 1..12),
        mask in prop::collection::vec(any::<bool>(), 12),
    ) {
        let mut alphas: Vec<bool> = mask[..sizes.len()].to_vec();
        alphas[0] = true;
        let w = model_weights(&sizes, &alphas).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aggregation_is_permutation_invariant(
        vals in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 1usize..50, 0usize..3), 2..6),
        sizes in prop::collection::vec(1usize..500, 6),
        rot in 0usize..6,
    ) {
        let sets: Vec<PrototypeSet> = vals.iter().map(|&(a, b, c, k)| proto_set(vec![(k, vec![a, b], c)])).collect();
        let alphas = vec![true; sets.len()];
        let mut rotated = sets.clone();
        rotated.rotate_left(rot % sets.len());
        prop_assert_eq!(
            aggregate_prototypes(&sets, &alphas, false).unwrap(),
            aggregate_prototypes(&rotated, &alphas, false).unwrap()
        );

        let spec = NetworkSpec::student(3, &[1, 2], &[2], 2).unwrap();
        let models: Vec<ModelParams> = (0..sets.len()).map(|i| ModelParams::init(&spec, &mut rng(i as u64)).unwrap()).collect();
        let sz = &sizes[..models.len()];
        let refs: Vec<&ModelParams> = models.iter().collect();
        let a = aggregate_models(&refs, sz, &alphas).unwrap();
        let mut order: Vec<usize> = (0..models.len()).collect();
        order.rotate_left(rot % models.len());
        let refs2: Vec<&ModelParams> = order.iter().map(|&i| &models[i]).collect();
        let sz2: Vec<usize> = order.iter().map(|&i| sz[i]).collect();
        let b = aggregate_models(&refs2, &sz2, &alphas).unwrap();
        prop_assert_eq!(a.values(), b.values());
    }

    #[test]
    fn single_participant_is_identity(a in -5.0f64..5.0, b in -5.0f64..5.0, c in 1usize..100) {
        let s = proto_set(vec![(1, vec![a, b], c)]);
        let other = proto_set(vec![(1, vec![b, a], c + 1)]);
        prop_assert_eq!(aggregate_prototypes(&[s.clone(), other], &[true, false], false).unwrap(), s);
    }
}
