use dcil::constraints::KinematicBounds;
use dcil::dynamics::UnicycleState;
use dcil::policy::{predict_controls, predict_states, HeadKind, NetConfig, PolicyNet, MEASUREMENT_DIM};
use dcil_autodiff::Graph;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> NetConfig {
    NetConfig {
        image_size: 24,
        anchor_row: 16,
        hidden: 12,
        horizon: 4,
        ..NetConfig::default()
    }
}

fn random_input(cfg: &NetConfig, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.image_size * cfg.image_size;
    let image = (0..n).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect();
    let meas = (0..MEASUREMENT_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (image, meas)
}

#[test]
fn default_and_full_scale_shapes() {
    let d = NetConfig::default();
    assert_eq!((d.image_size, d.resolution, d.hidden, d.horizon), (64, 5.0, 200, 10));
    assert_eq!(d.flatten_size().unwrap(), 16 * 13 * 13);
    let p = NetConfig::full_scale();
    assert_eq!((p.image_size, p.resolution), (128, 10.0));
    assert_eq!(p.flatten_size().unwrap(), 16 * 29 * 29);
    // Both cover the same field of view.
    assert_eq!(d.image_size as f64 / d.resolution, p.image_size as f64 / p.resolution);
}

#[test]
fn output_length_follows_the_head() {
    for (head, per_step) in [(HeadKind::Controls, 2), (HeadKind::States, 4)] {
        let cfg = small().with_head(head);
        let net = PolicyNet::new(cfg.clone(), 3).unwrap();
        let (img, m) = random_input(&cfg, 1);
        assert_eq!(net.forward(&img, &m).unwrap().len(), per_step * cfg.horizon);
    }
}

#[test]
fn latent_has_the_hidden_width() {
    let cfg = small();
    let net = PolicyNet::new(cfg.clone(), 0).unwrap();
    let (img, m) = random_input(&cfg, 2);
    let mut g = Graph::new();
    let nodes = net.build(&mut g, &img, &m).unwrap();
    g.forward(&net.params, &Default::default()).unwrap();
    assert_eq!(g.value(nodes.latent).unwrap().data().len(), cfg.hidden);
}

#[test]
fn zero_weights_give_a_zero_latent() {
    let cfg = small();
    let mut net = PolicyNet::new(cfg.clone(), 0).unwrap();
    let ids: Vec<_> = net.params.ids().collect();
    for id in ids {
        net.params.value_mut(id).iter_mut().for_each(|v| *v = 0.0);
    }
    let mut g = Graph::new();
    let nodes = net.build(&mut g, &vec![0.0; 24 * 24], &[0.0; MEASUREMENT_DIM]).unwrap();
    g.forward(&net.params, &Default::default()).unwrap();
    assert!(g.value(nodes.latent).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn input_shapes_are_checked() {
    let net = PolicyNet::new(small(), 0).unwrap();
    assert!(net.forward(&[0.0; 10], &[0.0; MEASUREMENT_DIM]).is_err());
    assert!(net.forward(&vec![0.0; 24 * 24], &[0.0; 4]).is_err());
    assert!(PolicyNet::new(NetConfig { horizon: 0, ..small() }, 0).is_err());
    assert!(PolicyNet::new(NetConfig { image_size: 8, anchor_row: 4, ..small() }, 0).is_err());
}

#[test]
fn initialisation_is_reproducible() {
    let a = PolicyNet::new(small(), 11).unwrap();
    let b = PolicyNet::new(small(), 11).unwrap();
    let c = PolicyNet::new(small(), 12).unwrap();
    let flat = |n: &PolicyNet| n.params.ids().flat_map(|id| n.params.value(id).to_vec()).collect::<Vec<_>>();
    assert_eq!(flat(&a), flat(&b));
    assert_ne!(flat(&a), flat(&c));
}

#[test]
fn checkpoint_round_trip() {
    let cfg = small().with_head(HeadKind::States);
    let net = PolicyNet::new(cfg.clone(), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    net.save(&path, serde_json::json!({"tag": "x"})).unwrap();
    let (back, extra) = PolicyNet::load(&path).unwrap();
    assert_eq!(extra["tag"], "x");
    assert_eq!(back.config, cfg);
    let (img, m) = random_input(&cfg, 9);
    assert_eq!(back.forward(&img, &m).unwrap(), net.forward(&img, &m).unwrap());
}

#[test]
fn latent_gradient_matches_central_differences() {
    let cfg = small();
    let mut net = PolicyNet::new(cfg.clone(), 4).unwrap();
    let (img, m) = random_input(&cfg, 4);
    let latent_sum = |net: &PolicyNet, store: Option<&mut dcil_autodiff::ParamStore>| {
        let mut g = Graph::new();
        let nodes = net.build(&mut g, &img, &m).unwrap();
        let s = g.sum(nodes.latent);
        g.forward(&net.params, &Default::default()).unwrap();
        let sig = g.nonsmooth_signature();
        if let Some(st) = store {
            g.backward_into(s, st).unwrap();
        }
        (g.value(s).unwrap().item(), sig)
    };
    let mut grads = net.params.fresh_copy();
    let (_, sig) = latent_sum(&net, Some(&mut grads));
    let mut checked = 0;
    for name in ["conv1.w", "conv2.w", "conv1.b"] {
        let id = net.params.find(name).unwrap();
        for k in 0..6 {
            let analytic = grads.grad(id)[k];
            let orig = net.params.value(id)[k];
            let eps = 1e-5;
            net.params.value_mut(id)[k] = orig + eps;
            let (fp, sp) = latent_sum(&net, None);
            net.params.value_mut(id)[k] = orig - eps;
            let (fm, sm) = latent_sum(&net, None);
            net.params.value_mut(id)[k] = orig;
            if sp != sig || sm != sig {
                continue;
            }
            let fd = (fp - fm) / (2.0 * eps);
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-8);
            assert!(rel <= 1e-5, "{name}[{k}]: {analytic} vs {fd}");
            checked += 1;
        }
    }
    assert!(checked >= 12);
}

#[test]
fn controls_head_examples() {
    let b = KinematicBounds::default();
    let mid = predict_controls(&[0.0, 0.0], &b);
    assert!((mid[0] - 0.25).abs() < 1e-15 && mid[1].abs() < 1e-15);
    let top = predict_controls(&[1e3, 1e3], &b);
    assert!((top[0] - 1.0).abs() < 1e-6 && (top[1] - 0.7).abs() < 1e-6);
    let bottom = predict_controls(&[-1e3, -1e3], &b);
    assert!((bottom[0] + 0.5).abs() < 1e-6 && (bottom[1] + 0.7).abs() < 1e-6);
}

#[test]
fn state_head_examples() {
    let x0 = UnicycleState::new(0.0, 0.0, 0.3);
    // H = 3: x, y, cos, sin blocks.
    let raw = [1.0, 2.0, 3.0, 0.0, 0.1, 0.2, 0.6, 2.0, 0.0, 0.8, 0.0, 0.0];
    let s = predict_states(&raw, &x0);
    assert_eq!(s.len(), 3);
    assert_eq!((s[1].x, s[1].y), (2.0, 0.1));
    assert!((s[0].phi - 0.8f64.atan2(0.6)).abs() < 1e-15);
    assert_eq!(s[1].phi, 0.0);
    assert_eq!(s[2].phi, s[1].phi);
    let degenerate_first = predict_states(&[1.0, 0.0, 0.0, 0.0], &x0);
    assert_eq!(degenerate_first[0].phi, 0.3);
}

proptest! {
    #[test]
    fn controls_never_leave_the_box(raw in prop::collection::vec(-1e4..1e4f64, 2..40)) {
        let raw = if raw.len() % 2 == 1 { &raw[1..] } else { &raw[..] };
        let b = KinematicBounds::default();
        let u = predict_controls(raw, &b);
        let h = raw.len() / 2;
        for k in 0..h {
            prop_assert!(b.v.contains(u[k], 0.0));
            prop_assert!(b.omega.contains(u[h + k], 0.0));
        }
    }

    #[test]
    fn untrained_controls_stay_in_the_box(seed in 0u64..1000) {
        let cfg = small();
        let net = PolicyNet::new(cfg.clone(), seed).unwrap();
        let (img, m) = random_input(&cfg, seed);
        let u = predict_controls(&net.forward(&img, &m).unwrap(), &KinematicBounds::default());
        prop_assert!(u.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }
}
