use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shtrans_core::dataset::{generate_example, DatasetConfig, Split};
use shtrans_nn::gradcheck::{grad_check, max_rel_err, relative_error, FD_STEP, GRAD_FLOOR};
use shtrans_nn::model::{dry_run_shapes, packed_width, Dpt, Encoder, JNet, PointInput, Tac, Upscale, YNet};
use shtrans_nn::params::{Init, ParamStore};
use shtrans_nn::{Graph, ModelConfig, ModelInput, PreparedExample, Tensor, TtNet, Var};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Largest relative error between backward-pass and central-difference
/// gradients of `mse(build(·), target)` over `count` random parameters.
fn component_grad_check(store: &ParamStore, count: usize, seed: u64, build: impl Fn(&mut Graph, &ParamStore) -> Var) -> f64 {
    let loss = |s: &ParamStore| {
        let mut g = Graph::new();
        let out = build(&mut g, s);
        let n = g.value(out).values.len();
        let target: Vec<f64> = (0..n).map(|i| 0.3 * (i as f64 * 0.7).sin()).collect();
        let l = g.mse(out, &target);
        (g, l)
    };
    let (g, l) = loss(store);
    let grad = g.backward(l, store.len());
    let mut r = rng(seed);
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let i = r.random_range(0..store.len());
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + FD_STEP;
        let (gp, lp) = loss(&probe);
        probe.values_mut()[i] = orig - FD_STEP;
        let (gm, lm) = loss(&probe);
        probe.values_mut()[i] = orig;
        let numeric = (gp.value(lp).values[0] - gm.value(lm).values[0]) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(grad[i], numeric, GRAD_FLOOR));
    }
    worst
}

fn randomize_biases(store: &mut ParamStore, seed: u64) {
    let mut r = rng(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.entry(id).rows == 1 {
            store.slice_mut(id).iter_mut().for_each(|v| *v = r.random_range(-0.3..0.3));
        }
    }
}

#[test]
fn j_net_contract() {
    let mut store = ParamStore::new();
    let j = JNet::new(&mut store, "j", 4, 16, &mut rng(1));
    let kr: Vec<f64> = (1..=30).map(|i| 0.1 * i as f64).collect();
    let mut g = Graph::new();
    let out = j.forward(&mut g, &store, &kr);
    assert_eq!(g.shape(out), (30, 5));
    randomize_biases(&mut store, 2);
    assert!(component_grad_check(&store, 5, 3, |g, s| j.forward(g, s, &kr)) < 1e-4);
    store.values_mut().fill(0.0);
    let mut g = Graph::new();
    let out = j.forward(&mut g, &store, &kr);
    assert!(g.value(out).values.iter().all(|&v| v == 0.0));
}

#[test]
fn y_net_contract() {
    let mut store = ParamStore::new();
    let y = YNet::new(&mut store, "y", 8, 32, &mut rng(4));
    let mut g = Graph::new();
    let a = y.forward(&mut g, &store, 1.1, 0.7);
    let b = y.forward(&mut g, &store, 1.1, 0.7 + 2.0 * std::f64::consts::PI);
    assert_eq!(g.shape(a), (81, 1));
    for (u, v) in g.value(a).values.iter().zip(&g.value(b).values) {
        assert!((u - v).abs() < 1e-12);
    }
    randomize_biases(&mut store, 5);
    assert!(component_grad_check(&store, 5, 6, |g, s| y.forward(g, s, 0.4, -2.0)) < 1e-4);
}

#[test]
fn attention_single_row_ignores_queries_and_keys() {
    let mut store = ParamStore::new();
    let enc = Encoder::new(&mut store, "enc", 7, 5, 3, 2, &mut rng(7));
    let x = random_tensor(&mut rng(8), 1, 7);
    let run = |s: &ParamStore| {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let o = enc.forward(&mut g, s, xv).unwrap();
        for w in &o.weights {
            assert_eq!(g.value(*w).values, vec![1.0]);
        }
        g.value(o.out).values.clone()
    };
    let before = run(&store);
    let mut other = store.clone();
    for name in ["enc.wq", "enc.wk", "enc.bq", "enc.bk"] {
        let id = other.find(name).unwrap();
        other.slice_mut(id).iter_mut().for_each(|v| *v += 0.5);
    }
    assert_eq!(run(&other), before);
}

#[test]
fn attention_permutation_equivariance_and_softmax() {
    let mut store = ParamStore::new();
    let enc = Encoder::new(&mut store, "enc", 9, 9, 4, 2, &mut rng(9));
    assert_eq!(enc.inner, 12);
    randomize_biases(&mut store, 10);
    let mut r = rng(11);
    let x = random_tensor(&mut r, 6, 9);
    let mut perm: Vec<usize> = (0..6).collect();
    perm.shuffle(&mut r);
    let xp = Tensor::new(6, 9, perm.iter().flat_map(|&i| x.values[i * 9..(i + 1) * 9].to_vec()).collect());
    let mut g = Graph::new();
    let a = g.input(x);
    let b = g.input(xp);
    let oa = enc.forward(&mut g, &store, a).unwrap();
    let ob = enc.forward(&mut g, &store, b).unwrap();
    for (row, &src) in perm.iter().enumerate() {
        for c in 0..9 {
            assert!((g.value(ob.out).at(row, c) - g.value(oa.out).at(src, c)).abs() < 1e-12);
        }
    }
    assert_eq!(g.shape(oa.hidden), (6, 9));
    for w in &oa.weights {
        for row in g.value(*w).values.chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    let bad = g.input(Tensor::zeros(2, 8));
    assert!(enc.forward(&mut g, &store, bad).is_err());
}

#[test]
fn dual_path_block_contract() {
    let mut store = ParamStore::new();
    let dpt = Dpt::new(&mut store, "dpt", 4, 30, 2, &mut rng(12));
    let mut r = rng(13);
    let x = random_tensor(&mut r, 30, 50);
    let j = random_tensor(&mut r, 30, 5);
    let y = random_tensor(&mut r, 25, 1);
    let mut g = Graph::new();
    let (xv, jv, yv) = (g.input(x.clone()), g.input(j.clone()), g.input(y.clone()));
    let out = dpt.forward(&mut g, &store, xv, jv, yv).unwrap();
    assert_eq!(g.shape(out), (30, 50));
    assert!(dpt.forward(&mut g, &store, xv, yv, jv).is_err());

    let mut g = Graph::new();
    let (xv, jv, yv) = (g.input(Tensor::zeros(30, 50)), g.input(Tensor::zeros(30, 5)), g.input(Tensor::zeros(25, 1)));
    let out = dpt.forward(&mut g, &store, xv, jv, yv).unwrap();
    assert!(g.value(out).values.iter().all(|&v| v == 0.0));

    // smaller block for the finite-difference check
    let mut store = ParamStore::new();
    let dpt = Dpt::new(&mut store, "dpt", 2, 6, 2, &mut rng(14));
    randomize_biases(&mut store, 15);
    let x = random_tensor(&mut r, 6, 18);
    let j = random_tensor(&mut r, 6, 3);
    let y = random_tensor(&mut r, 9, 1);
    let err = component_grad_check(&store, 10, 16, |g, s| {
        let (xv, jv, yv) = (g.input(x.clone()), g.input(j.clone()), g.input(y.clone()));
        dpt.forward(g, s, xv, jv, yv).unwrap()
    });
    assert!(err < 1e-3, "dual-path gradient error {err}");
}

#[test]
fn fusion_contract() {
    let mut store = ParamStore::new();
    let tac = Tac::new(&mut store, "tac", 8, 6, &mut rng(17));
    randomize_biases(&mut store, 18);
    let mut r = rng(19);
    let xs: Vec<Tensor> = (0..5).map(|_| random_tensor(&mut r, 3, 8)).collect();

    // single point: two affine maps around one rectifier
    let mut g = Graph::new();
    let x0 = g.input(xs[0].clone());
    let out = tac.forward(&mut g, &store, &[x0]).unwrap();
    let wt = store.slice(store.find("tac.transform.w").unwrap()).to_vec();
    let bt = store.slice(store.find("tac.transform.b").unwrap()).to_vec();
    let alpha = store.slice(store.find("tac.prelu").unwrap())[0];
    let wc = store.slice(store.find("tac.concat.w").unwrap()).to_vec();
    let bc = store.slice(store.find("tac.concat.b").unwrap()).to_vec();
    for row in 0..3 {
        let t: Vec<f64> = (0..6)
            .map(|h| {
                let v = bt[h] + (0..8).map(|i| xs[0].at(row, i) * wt[i * 6 + h]).sum::<f64>();
                if v > 0.0 { v } else { alpha * v }
            })
            .collect();
        for c in 0..8 {
            let v = bc[c] + (0..6).map(|h| t[h] * (wc[h * 8 + c] + wc[(h + 6) * 8 + c])).sum::<f64>();
            assert!((g.value(out[0]).at(row, c) - v).abs() < 1e-12);
        }
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
    let outs = tac.forward(&mut g, &store, &vars).unwrap();
    let perm = [3, 0, 4, 1, 2];
    let pvars: Vec<Var> = perm.iter().map(|&i| vars[i]).collect();
    let pouts = tac.forward(&mut g, &store, &pvars).unwrap();
    for (k, &src) in perm.iter().enumerate() {
        for (a, b) in g.value(pouts[k]).values.iter().zip(&g.value(outs[src]).values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    let same = vec![vars[0]; 4];
    let outs = tac.forward(&mut g, &store, &same).unwrap();
    for o in &outs[1..] {
        assert_eq!(g.value(*o).values, g.value(outs[0]).values);
    }
    assert!(tac.forward(&mut g, &store, &[]).is_err());
}

#[test]
fn upscale_contract() {
    let mut store = ParamStore::new();
    let up = Upscale::new(&mut store, "up", 4, 5, &mut rng(20));
    assert_eq!((packed_width(4), packed_width(5)), (50, 72));
    let mut g = Graph::new();
    let z = g.input(Tensor::zeros(3, 50));
    let out = up.forward(&mut g, &store, z).unwrap();
    assert_eq!(g.shape(out), (3, 72));
    assert!(g.value(out).values.iter().all(|&v| v == 0.0));
    let bad = g.input(Tensor::zeros(3, 49));
    assert!(up.forward(&mut g, &store, bad).is_err());
    randomize_biases(&mut store, 21);
    let x = random_tensor(&mut rng(22), 3, 50);
    assert!(component_grad_check(&store, 10, 23, |g, s| {
        let xv = g.input(x.clone());
        up.forward(g, s, xv).unwrap()
    }) < 1e-4);
}

fn random_input(config: &ModelConfig, q: usize, seed: u64) -> ModelInput {
    let mut r = rng(seed);
    let d = packed_width(config.n_in);
    ModelInput {
        points: (0..q)
            .map(|_| PointInput {
                coeffs: random_tensor(&mut r, config.k_bins, d),
                kr: (0..config.k_bins).map(|_| r.random_range(0.0..10.0)).collect(),
                theta: r.random_range(0.0..std::f64::consts::PI),
                phi: r.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            })
            .collect(),
    }
}

#[test]
fn full_model_output_shape() {
    let cfg = DatasetConfig {
        q_max: 4,
        ..DatasetConfig::default()
    };
    let ex = generate_example(&cfg, Split::Train, 0).unwrap();
    let net = TtNet::new(ModelConfig::ladder(4, 8, 30, 1).unwrap(), 0).unwrap();
    let out = net.predict(&ex).unwrap();
    assert_eq!((out.k_bins(), out.width()), (30, 81));
    let mut wrong = ex.clone();
    wrong.inputs.iter_mut().for_each(|s| *s = s.truncated(3));
    assert!(net.predict(&wrong).is_err());
}

#[test]
fn shape_contract_matrix() {
    for n_in in [2, 4] {
        for n_out in [4, 8] {
            for k in [4, 30] {
                let cfg = ModelConfig::ladder(n_in, n_out, k, if n_in == n_out { 0 } else { 1 }).unwrap();
                let net = TtNet::new(cfg.clone(), 1).unwrap();
                for q in [1, 4, 8] {
                    let input = random_input(&cfg, q, 30 + q as u64);
                    let mut g = Graph::new();
                    let mut trace = Vec::new();
                    let out = net.forward_traced(&mut g, &input, Some(&mut trace)).unwrap();
                    assert_eq!(g.shape(out), (k, packed_width(n_out)));
                    assert_eq!(trace, dry_run_shapes(&cfg, q).unwrap(), "n_in {n_in} n_out {n_out} K {k} Q {q}");
                }
            }
        }
    }
}

#[test]
fn output_is_invariant_to_point_order() {
    let cfg = ModelConfig::ladder(2, 4, 6, 2).unwrap();
    let net = TtNet::new(cfg.clone(), 2).unwrap();
    let input = random_input(&cfg, 5, 40);
    let mut shuffled = input.clone();
    shuffled.points.shuffle(&mut rng(41));
    let mut g = Graph::new();
    let a = net.forward(&mut g, &input).unwrap();
    let b = net.forward(&mut g, &shuffled).unwrap();
    for (x, y) in g.value(a).values.iter().zip(&g.value(b).values) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn every_parameter_belongs_to_one_layer_and_is_used() {
    let cfg = ModelConfig::ladder(2, 4, 4, 2).unwrap();
    let net = TtNet::new(cfg.clone(), 3).unwrap();
    assert!(net.params.all_finite());
    for e in net.params.entries() {
        let prefix = e.name.split('.').next().unwrap();
        assert!(prefix.starts_with("layer"), "{}", e.name);
        if e.name.rsplit('.').next().unwrap().starts_with('b') {
            assert!(net.params.slice(net.params.find(&e.name).unwrap()).iter().all(|&v| v == 0.0), "{}", e.name);
        }
    }
    let mut g = Graph::new();
    net.forward(&mut g, &random_input(&cfg, 2, 50)).unwrap();
    assert_eq!(g.used_params().len(), net.params.count());
}

fn zero_conditioning(net: &mut TtNet) {
    let ids: Vec<_> = net
        .params
        .ids()
        .filter(|&id| {
            let n = &net.params.entry(id).name;
            n.contains(".j.w2") || n.contains(".y.w2")
        })
        .collect();
    for id in ids {
        net.params.slice_mut(id).fill(0.0);
    }
}

fn linear_output(net: &TtNet, input: &ModelInput) -> Vec<f64> {
    let mut g = Graph::linear();
    let out = net.forward(&mut g, input).unwrap();
    g.value(out).values.clone()
}

#[test]
fn linear_mode_is_homogeneous() {
    let cfg = ModelConfig::ladder(2, 4, 5, 2).unwrap();
    let mut net = TtNet::new(cfg.clone(), 4).unwrap();
    let input = random_input(&cfg, 3, 60);
    let mut doubled = input.clone();
    doubled.points.iter_mut().for_each(|p| p.coeffs.values.iter_mut().for_each(|v| *v *= 2.0));
    let mut zeroed = input.clone();
    zeroed.points.iter_mut().for_each(|p| p.coeffs.values.fill(0.0));

    // J and Y enter additively, so in general the map is affine in the coefficients
    let (f1, f2, f0) = (linear_output(&net, &input), linear_output(&net, &doubled), linear_output(&net, &zeroed));
    let scale = f1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..f1.len() {
        assert!((f2[i] - 2.0 * f1[i] + f0[i]).abs() < 1e-12 * scale.max(1.0));
    }
    // with the J/Y outputs switched off it is linear
    zero_conditioning(&mut net);
    let (f1, f2) = (linear_output(&net, &input), linear_output(&net, &doubled));
    for i in 0..f1.len() {
        assert!((f2[i] - 2.0 * f1[i]).abs() < 1e-12 * scale.max(1.0));
    }
}

fn small_example() -> (TtNet, PreparedExample) {
    let cfg = DatasetConfig {
        n_in: 1,
        n_out: 2,
        k_bins: 4,
        freq_lo: 200.0,
        freq_hi: 800.0,
        freq_step: 200.0,
        q_max: 4,
        ..DatasetConfig::default()
    };
    let mut ex = PreparedExample::new(&generate_example(&cfg, Split::Train, 3).unwrap()).unwrap();
    ex.input.points.truncate(2);
    let mut net = TtNet::new(ModelConfig::ladder(1, 2, 4, 1).unwrap(), 5).unwrap();
    randomize_biases(&mut net.params, 6);
    (net, ex)
}

#[test]
fn full_model_gradient_check() {
    let (net, ex) = small_example();
    let checks = grad_check(&net, &ex, 20, false, 7).unwrap();
    assert_eq!(checks.len(), 20);
    assert!(max_rel_err(&checks) < 1e-3, "{checks:?}");
}

#[test]
fn linear_mode_gradient_check() {
    let (net, ex) = small_example();
    let checks = grad_check(&net, &ex, 20, true, 8).unwrap();
    assert!(max_rel_err(&checks) < 1e-6, "{checks:?}");
}

#[test]
fn zero_loss_point_has_zero_gradient() {
    let (net, mut ex) = small_example();
    let mut g = Graph::new();
    let out = net.forward(&mut g, &ex.input).unwrap();
    ex.target = g.value(out).clone();
    let (loss, grad) = net.loss_and_grad(&ex, false).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|&v| v == 0.0));
}

#[test]
fn init_is_seeded() {
    let cfg = ModelConfig::ladder(2, 4, 4, 2).unwrap();
    let a = TtNet::new(cfg.clone(), 9).unwrap();
    let b = TtNet::new(cfg.clone(), 9).unwrap();
    let c = TtNet::new(cfg, 10).unwrap();
    assert_eq!(a.params, b.params);
    assert_ne!(a.params, c.params);
    let mut s = ParamStore::new();
    s.add("w", 100, 2, Init::FanIn, &mut rng(0));
    assert!(s.values().iter().all(|v| v.abs() <= 0.1));
}
