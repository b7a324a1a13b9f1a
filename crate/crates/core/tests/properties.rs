use madpde::benchviz::{pca_fit, read_convergence_csv, write_convergence_csv, ConvergenceRecord, SeriesPoint};
use madpde::binio;
use madpde::cli::apply_set;
use madpde::diffcore::Tape;
use madpde::grf::{sample_grf, GrfSpec};
use madpde::network::{
    coords_from_points, forward, init_siren, Activation, Direction, InputEncoding, LatentVector, NetworkConfig,
    TapedModel, Trainable,
};
use madpde::oracles::{mean_ci, relative_l2};
use madpde::problems::triangle;
use madpde::trainer::{lr_at, AdamState, TrainConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn train_cfg(lr0: f64, total: u64) -> TrainConfig {
    TrainConfig {
        lr0,
        total_iters: total,
        m_r: 1,
        m_bc: 1,
        lambda_bc: 1.0,
        inv_sigma2: 0.0,
        eval_every: 1,
        seed: 0,
        tasks_per_iter: None,
        grad_clip: None,
        resample_every: 1,
        latent_init_sd: 0.1,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relative_l2_is_scale_invariant(
        pairs in prop::collection::vec((-10.0f64..10.0, 0.5f64..10.0), 1..40),
        s in 0.01f64..100.0,
    ) {
        let (p, r): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let a = relative_l2(&p, &r).unwrap();
        let ps: Vec<f64> = p.iter().map(|x| x * s).collect();
        let rs: Vec<f64> = r.iter().map(|x| x * s).collect();
        let b = relative_l2(&ps, &rs).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
        prop_assert_eq!(relative_l2(&r, &r).unwrap(), 0.0);
    }

    #[test]
    fn schedule_is_monotone_and_quantized(lr0 in 1e-5f64..1.0, total in 1u64..5000) {
        let cfg = train_cfg(lr0, total);
        let mut prev = f64::INFINITY;
        for it in 0..total {
            let lr = lr_at(&cfg, it);
            prop_assert!(lr <= prev);
            prop_assert!([1.0, 0.5, 0.25, 0.125].iter().any(|f| lr == lr0 * f));
            prev = lr;
        }
    }

    #[test]
    fn adam_first_step_ignores_gradient_scale(
        g in prop::collection::vec((0.01f64..5.0, any::<bool>()), 1..10),
        c in 0.1f64..100.0,
    ) {
        // away from the epsilon floor the first step is lr * sign(g)
        let g: Vec<f64> = g.into_iter().map(|(m, neg)| if neg { -m } else { m }).collect();
        let mut a = vec![0.0; g.len()];
        let mut b = a.clone();
        AdamState::new(&[("w", g.len())]).step(&mut a, &g, 1e-2).unwrap();
        let gc: Vec<f64> = g.iter().map(|x| x * c).collect();
        AdamState::new(&[("w", g.len())]).step(&mut b, &gc, 1e-2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn container_roundtrip(
        blocks in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 0..20), 0..5),
        note in "[a-z]{0,12}",
    ) {
        let names: Vec<String> = (0..blocks.len()).map(|i| format!("b{i}")).collect();
        let refs: Vec<(&str, &[f64])> = names.iter().map(|n| n.as_str()).zip(blocks.iter().map(|b| b.as_slice())).collect();
        let bytes = binio::encode(b"TESTBLK1", &note, &refs).unwrap();
        let (h, back): (String, _) = binio::decode(b"TESTBLK1", &bytes).unwrap();
        prop_assert_eq!(h, note);
        prop_assert_eq!(back.len(), blocks.len());
        for ((n, v), (name, orig)) in back.iter().zip(names.iter().zip(&blocks)) {
            prop_assert_eq!(n, name);
            prop_assert_eq!(v, orig);
        }
        let mut bad = bytes.clone();
        let k = bad.len() / 2;
        bad[k] ^= 1;
        prop_assert!(binio::decode::<String>(b"TESTBLK1", &bad).is_err());
    }

    #[test]
    fn triangle_samples_stay_in_domain(seed in 0u64..500) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let angles = loop {
            let a = [0; 3].map(|_| rng.random::<f64>() * std::f64::consts::TAU);
            if let Ok(t) = triangle(&a) { break (a, t); }
        };
        let tri = angles.1;
        for _ in 0..20 {
            let p = tri.sample_interior(&mut rng);
            prop_assert!(tri.barycentric(p[0], p[1]).iter().all(|&b| b > 0.0));
            prop_assert!(p[0].hypot(p[1]) < 1.0);
            let q = tri.sample_boundary(&mut rng);
            prop_assert!(tri.distance_to_boundary(q[0], q[1]) < 1e-12);
        }
    }

    #[test]
    fn grf_samples_are_periodic(seed in 0u64..200, x in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = sample_grf(&GrfSpec::burgers(), &mut rng).unwrap();
        prop_assert!((u.evaluate_at(x) - u.evaluate_at(x + 1.0)).abs() < 1e-10);
        let h = sample_grf(&GrfSpec::laplace(), &mut rng).unwrap();
        prop_assert!((h.evaluate_at(x) - h.evaluate_at(x + std::f64::consts::TAU)).abs() < 1e-10);
    }

    #[test]
    fn mean_ci_brackets_mean(v in prop::collection::vec(0.0f64..1.0, 2..30)) {
        let ci = mean_ci(&v).unwrap();
        prop_assert!(ci.lo <= ci.mean && ci.mean <= ci.hi);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        prop_assert!((ci.mean - m).abs() < 1e-12);
    }

    #[test]
    fn set_override_is_readable(key in "[a-z]{1,6}", val in -1e6f64..1e6) {
        let mut root = serde_json::json!({"outer": {"inner": 0}});
        apply_set(&mut root, &format!("outer.{key}={val}")).unwrap();
        prop_assert_eq!(root["outer"][key.as_str()].as_f64().unwrap(), val);
    }

    #[test]
    fn pca_projection_reconstructs_rank_two_data(
        a in prop::collection::vec(-3.0f64..3.0, 6),
        b in prop::collection::vec(-3.0f64..3.0, 6),
    ) {
        // points c + s*u + t*v lie in a 2-D affine plane, so reconstruction is exact
        let u: Vec<f64> = (0..16).map(|j| (j as f64 * 0.4).sin()).collect();
        let v: Vec<f64> = (0..16).map(|j| (j as f64 * 0.9).cos()).collect();
        let data: Vec<Vec<f64>> = a.iter().zip(&b)
            .map(|(s, t)| (0..16).map(|j| 1.0 + s * u[j] + t * v[j]).collect())
            .collect();
        if let Ok(p) = pca_fit(&data) {
            for x in &data {
                let r = p.reconstruct(p.project(x).unwrap());
                let err: f64 = x.iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                prop_assert!(err < 1e-8, "{}", err);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn jets_match_finite_differences(seed in 0u64..1000, x in 0.05f64..0.95, y in 0.05f64..0.95) {
        let cfg = NetworkConfig {
            input_dim: 2,
            latent_dim: 1,
            hidden_layers: 2,
            width: 8,
            output_dim: 1,
            activation: Activation::Sine,
            first_layer_omega: 5.0,
            input_encoding: InputEncoding::PeriodicX,
            output_scale: 1.0,
        };
        let params = init_siren(&cfg, seed);
        let z = LatentVector(vec![0.1]);
        let mut tape = Tape::new();
        let m = TapedModel::register(&mut tape, &cfg, &params, &z, Trainable::ALL).unwrap();
        let jets = m.forward_jets(&mut tape, coords_from_points(&[vec![x, y]]).view(), &[Direction::second(0), Direction::second(1)]).unwrap();
        let f = |a: f64, b: f64| forward(&params, &cfg, &[a, b], &z).unwrap()[0];
        let h = 1e-4;
        let fd = [
            ((f(x + h, y) - f(x - h, y)) / (2.0 * h), (f(x + h, y) - 2.0 * f(x, y) + f(x - h, y)) / (h * h)),
            ((f(x, y + h) - f(x, y - h)) / (2.0 * h), (f(x, y + h) - 2.0 * f(x, y) + f(x, y - h)) / (h * h)),
        ];
        for (axis, (d1, d2)) in fd.iter().enumerate() {
            let a1 = tape.value(jets[0].d1(axis).unwrap())[[0, 0]];
            let a2 = tape.value(jets[0].d2(axis).unwrap())[[0, 0]];
            prop_assert!((a1 - d1).abs() <= 1e-5 * (1.0 + d1.abs()), "d1 {} vs {}", a1, d1);
            prop_assert!((a2 - d2).abs() <= 1e-3 * (1.0 + d2.abs()), "d2 {} vs {}", a2, d2);
        }
    }
}

#[test]
fn convergence_csv_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = ConvergenceRecord::new(3, "mad_l", 1);
    let mut b = ConvergenceRecord::new(4, "from_scratch", 1);
    for i in 0..5u64 {
        let p = SeriesPoint {
            iteration: i * 10,
            rel_l2: 1.0 / (1.0 + i as f64),
            loss: 0.1 * i as f64 + 1e-17,
        };
        a.push(p).unwrap();
        b.push(SeriesPoint { rel_l2: p.rel_l2 * 2.0, ..p }).unwrap();
    }
    let path = dir.path().join("c.csv");
    write_convergence_csv(&path, &[a.clone(), b.clone()]).unwrap();
    assert_eq!(read_convergence_csv(&path).unwrap(), vec![a, b]);
}
