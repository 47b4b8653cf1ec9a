use proptest::prelude::*;
use relmap_core::dataset::{Sensor, SensorNetwork};
use relmap_core::geometry::Point;
use relmap_core::graph::{build_graph, haversine};
use relmap_core::model::{GpeFrame, Model, ModelConfig, ModelInput, Normalizer};
use relmap_core::nn::{glu, Adam, AdamConfig, Tensor};
use relmap_core::training::graph_context;

/// Originals at `points`, plus `n_virtual` sensors at centroids of
/// consecutive original triples (inside the hull).
fn network_with_virtual(points: &[(f64, f64)], n_virtual: usize) -> SensorNetwork {
    let sensors = points
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| Sensor::original(format!("s{i:02}"), x, y))
        .collect();
    let base = SensorNetwork::with_default_boundary(sensors).unwrap();
    let virt: Vec<Point> = (0..n_virtual)
        .map(|v| {
            let t = [v, v + 1, v + 2].map(|i| points[i % points.len()]);
            Point::new(
                (t[0].0 + t[1].0 + t[2].0) / 3.0 + 1e-4,
                (t[0].1 + t[1].1 + t[2].1) / 3.0,
            )
        })
        .collect();
    base.with_virtual(&virt).unwrap()
}

fn distinct_points(raw: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for p in raw {
        if out.iter().all(|q| (q.0 - p.0).abs() + (q.1 - p.1).abs() > 1e-3) {
            out.push(p);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn graph_invariants_hold(
        raw in proptest::collection::vec((-1.0..1.0f64, 40.0..41.0f64), 12..30),
        k in 1usize..6,
    ) {
        let pts = distinct_points(raw);
        prop_assume!(pts.len() >= 10);
        let n_virtual = pts.len() / 4;
        let net = network_with_virtual(&pts, n_virtual);
        let g = build_graph(&net, k, None).unwrap();
        let n = net.len();
        let mut max = 0.0f64;
        for i in 0..n {
            prop_assert_eq!(g.a_sub.get(i, i), 0.0);
            prop_assert!(g.a_sub.row(i).len() >= k);
            for j in 0..n {
                let w = g.a_sub.get(i, j);
                prop_assert_eq!(w, g.a_sub.get(j, i));
                prop_assert!((0.0..=1.0).contains(&w));
                max = max.max(w);
                let f = g.a_first.get(i, j);
                prop_assert!(f <= w);
                if !net.sensors()[i].is_original() || !net.sensors()[j].is_original() {
                    prop_assert_eq!(f, 0.0);
                }
            }
        }
        prop_assert_eq!(max, 1.0);

        // Weights fall with great-circle distance along each row.
        let pos = net.positions();
        for i in 0..n {
            let mut row: Vec<(f64, f64)> = g.a_sub.row(i).iter().map(|&(j, w)| (haversine(pos[i], pos[j]), w)).collect();
            row.sort_by(|a, b| a.0.total_cmp(&b.0));
            for pair in row.windows(2) {
                prop_assert!(pair[1].1 <= pair[0].1);
            }
        }
    }

    #[test]
    fn haversine_triangle_inequality(
        a in (-179.0..179.0f64, -80.0..80.0f64),
        b in (-179.0..179.0f64, -80.0..80.0f64),
        c in (-179.0..179.0f64, -80.0..80.0f64),
    ) {
        let (a, b, c) = (Point::new(a.0, a.1), Point::new(b.0, b.1), Point::new(c.0, c.1));
        prop_assert!(haversine(a, c) <= haversine(a, b) + haversine(b, c) + 1e-6);
        prop_assert_eq!(haversine(a, a), 0.0);
    }
}

#[test]
fn adam_steps_approach_the_learning_rate_under_a_fixed_gradient() {
    let cfg = AdamConfig::default();
    let mut params = vec![Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap()];
    let grads = vec![Tensor::from_vec(1, 3, vec![3.0, -0.01, 100.0]).unwrap()];
    let mut opt = Adam::new(cfg, &params);
    let steps = 200;
    for _ in 0..steps {
        opt.step(&mut params, &grads);
    }
    // Bias-corrected moments equal g and g², so each step moves lr·g/(|g|+eps).
    let expected = [1.0, -2.0, 0.5]
        .iter()
        .zip(grads[0].data())
        .map(|(p0, g)| p0 - steps as f64 * cfg.lr * g / (g.abs() + cfg.eps))
        .collect::<Vec<_>>();
    for (got, want) in params[0].data().iter().zip(&expected) {
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
    assert_eq!(opt.steps(), steps);
}

#[test]
fn glu_saturates_to_pass_and_block() {
    let a = Tensor::from_vec(2, 2, vec![1.5, -3.0, 0.25, 7.0]).unwrap();
    let open = glu(&a, &Tensor::full(2, 2, 60.0)).unwrap();
    let shut = glu(&a, &Tensor::full(2, 2, -60.0)).unwrap();
    let half = glu(&a, &Tensor::zeros(2, 2)).unwrap();
    for k in 0..4 {
        assert!((open.data()[k] - a.data()[k]).abs() < 1e-12);
        assert!(shut.data()[k].abs() < 1e-12);
        assert!((half.data()[k] - 0.5 * a.data()[k]).abs() < 1e-15);
    }
}

fn square_network() -> SensorNetwork {
    let pts: Vec<(f64, f64)> = (0..16)
        .map(|i| ((i % 4) as f64 * 0.1, 45.0 + (i / 4) as f64 * 0.1))
        .collect();
    network_with_virtual(&pts, 0)
}

#[test]
fn hidden_input_without_positional_terms_gives_zero_output() {
    let net = square_network();
    let cfg = ModelConfig {
        pna: false,
        gpe: false,
        k: 4,
        ..ModelConfig::default()
    };
    let frame = GpeFrame::fit(&net.positions()).unwrap();
    let model = Model::new(cfg, frame, 10.0, 10.0, Normalizer::identity(), 3).unwrap();
    let ctx = graph_context(&model, &net).unwrap();
    let (n, steps) = (net.len(), 8);
    let input = ModelInput::new(n, steps, vec![0.0; n * steps], vec![false; n * steps], vec![false; n]).unwrap();
    let out = model.predict_normalized(&input, &ctx).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn models_with_the_same_seed_are_identical() {
    let net = square_network();
    let frame = GpeFrame::fit(&net.positions()).unwrap();
    let cfg = ModelConfig {
        k: 4,
        ..ModelConfig::default()
    };
    let a = Model::new(cfg.clone(), frame, 10.0, 10.0, Normalizer::identity(), 9).unwrap();
    let b = Model::new(cfg.clone(), frame, 10.0, 10.0, Normalizer::identity(), 9).unwrap();
    let c = Model::new(cfg, frame, 10.0, 10.0, Normalizer::identity(), 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.params, c.params);
}
