use cellroute::nn::ParamSet;
use cellroute::routing::{
    gaussian_signal, propagate_with_bundles, route_view_to_world, route_world_to_view,
};
use cellroute::strn::{view_cell_codes, RoutingBundle, Strn, StrnConfig};
use cellroute::tape::Tape;
use cellroute::{gradcheck, Pose, Tensor, ViewCells};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> StrnConfig {
    StrnConfig {
        world_cells: 12,
        embed_dim: 5,
        cam_dim: 2,
        view_grid: vec![6],
        pose_dim: 4,
        w2c_hidden: 10,
        wce_hidden: 8,
        vce_hidden: 8,
    }
}

fn network(config: StrnConfig, seed: u64) -> (Strn, ParamSet<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let strn = Strn::new(&mut params, config, &mut rng);
    (strn, params)
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    Pose::new(
        rng.random_range(-0.9..0.9),
        rng.random_range(-0.9..0.9),
        rng.random_range(0.0..std::f64::consts::TAU),
    )
}

fn constant_bundle(v: usize, k: usize, act: f64) -> RoutingBundle<f64> {
    RoutingBundle {
        relation: Tensor::full(&[v, k], 0.3),
        frustum_act: Tensor::full(&[k], act),
        pose: Pose::new(0.0, 0.0, 0.0),
    }
}

#[test]
fn view_cell_code_examples() {
    assert_eq!(view_cell_codes::<f64>(&[1]).unwrap().data(), &[0.0]);
    assert_eq!(view_cell_codes::<f64>(&[2]).unwrap().data(), &[-0.5, 0.5]);
    for n in 1..20 {
        let c = view_cell_codes::<f64>(&[n]).unwrap();
        let d = c.data();
        for i in 0..n {
            assert_eq!(d[i], -d[n - 1 - i]);
        }
    }
    assert!(view_cell_codes::<f64>(&[0]).is_err());
}

#[test]
fn routing_distributions_are_normalized() {
    // Both softmax families, 100 random poses; the default layout is used so
    // the check covers the shipped sizes.
    let (strn, params) = network(StrnConfig::default(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let b = strn.strn_forward(&params, &random_pose(&mut rng)).unwrap();
        let (v, k) = (b.relation.shape()[0], b.relation.shape()[1]);
        let r = b.relation.data();
        for kk in 0..k {
            let col: Vec<f64> = (0..v).map(|i| r[i * k + kk]).collect();
            let m = col.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = col.iter().map(|x| (x - m).exp()).sum();
            let s: f64 = col.iter().map(|x| (x - m).exp() / z).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        for i in 0..v {
            let row = &r[i * k..(i + 1) * k];
            let m = row.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            let s: f64 = row.iter().map(|x| (x - m).exp() / z).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        assert!(b.frustum_act.data().iter().all(|&a| a > 0.0 && a < 1.0));
        assert!(b.relation.all_finite());
    }
}

#[test]
fn softmax_routing_through_ops_sums_to_one() {
    // A unit signal routed with all activations at one conserves mass in both
    // directions, which only holds if each softmax sums to one.
    let (strn, params) = network(small_config(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let mut b = strn.strn_forward(&params, &random_pose(&mut rng)).unwrap();
        b.frustum_act = Tensor::ones(&[12]);
        let cells = ViewCells::new(Tensor::ones(&[6, 1]), vec![6]).unwrap();
        let w = route_view_to_world(&cells, &b).unwrap();
        assert!(w.values.data().iter().all(|&x| (x - 1.0).abs() < 1e-9));
        let back = route_world_to_view(&Tensor::ones(&[12, 1]), &b, &[6]).unwrap();
        assert!(back.values.data().iter().all(|&x| (x - 1.0).abs() < 1e-9));
    }
}

#[test]
fn strn_is_deterministic_and_matches_explicit_dot_products() {
    let (strn, params) = network(small_config(), 7);
    let pose = Pose::new(0.2, -0.3, 1.1);
    let a = strn.strn_forward(&params, &pose).unwrap();
    let b = strn.strn_forward(&params, &pose).unwrap();
    assert_eq!(a, b);

    // Independent evaluation of the embeddings, then a plain dot-product loop.
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let feats = tape.constant(strn.pose_features::<f64>(&[pose]).unwrap());
    let (we, _) = strn.world_embeddings(&mut tape, &bound, feats).unwrap();
    let codes = tape.constant(view_cell_codes(&[6]).unwrap());
    let ve = strn.view_embeddings(&mut tape, &bound, codes).unwrap();
    let (we, ve) = (tape.value(we).clone(), tape.value(ve).clone());
    for i in 0..6 {
        for k in 0..12 {
            let dot: f64 = (0..5).map(|e| we.at(&[k, e]) * ve.at(&[i, e])).sum();
            assert!((dot - a.relation.at(&[i, k])).abs() < 1e-12);
        }
    }
}

#[test]
fn view_embeddings_do_not_depend_on_pose() {
    let (strn, params) = network(small_config(), 8);
    let e1 = strn.interpolated_view_codes(&params, 6).unwrap();
    let _ = strn.strn_forward(&params, &Pose::new(0.5, 0.5, 2.0)).unwrap();
    let e2 = strn.interpolated_view_codes(&params, 6).unwrap();
    assert_eq!(e1, e2);
}

#[test]
fn interpolated_view_codes() {
    let (strn, params) = network(small_config(), 9);
    let base = strn.interpolated_view_codes(&params, 6).unwrap();
    let direct = strn.embed_coordinates(&params, view_cell_codes(&[6]).unwrap()).unwrap();
    assert_eq!(base, direct);
    let fine = strn.interpolated_view_codes(&params, 12).unwrap();
    assert_eq!(fine.shape(), &[12, 5]);
    // Cell 1 of 12 is centered at -0.75, the midpoint of coarse cells 0 and 1.
    let mid = strn.embed_coordinates(&params, Tensor::from_f64(&[1, 1], &[-0.75]).unwrap()).unwrap();
    assert_eq!(mid.row(0), fine.row(1));
}

#[test]
fn non_finite_pose_is_rejected() {
    let (strn, params) = network(small_config(), 10);
    let pose = Pose { x: f64::NAN, y: 0.0, cos: 1.0, sin: 0.0 };
    assert!(strn.strn_forward(&params, &pose).is_err());
}

#[test]
fn gradient_reaches_all_three_subnetworks() {
    let (strn, params) = network(small_config(), 11);
    let pose = Pose::new(-0.1, 0.4, 0.3);
    let weights = Tensor::from_fn(&[1, 12, 6], |i| ((i * 7) % 5) as f64 - 2.0);
    let mut checked = 0;
    for net in [&strn.w2c, &strn.wce, &strn.vce] {
        for id in net.param_ids() {
            let x = params.get(id).clone();
            let idx: Vec<usize> = (0..x.len()).step_by(x.len().div_ceil(4)).collect();
            let report = gradcheck::grad_check_at(
                |tape, var| {
                    let bound = params.bind_override(tape, id, var);
                    let r = strn.forward_poses(tape, &bound, &[pose])?;
                    let w = tape.constant(weights.clone());
                    let m = tape.mul(r.relation, w)?;
                    let s = tape.sum_all(m);
                    let a = tape.sum_all(r.frustum_act);
                    tape.add(s, a)
                },
                &x,
                &idx,
                1e-5,
                1e-5,
            )
            .unwrap();
            assert!(report.passed(), "{:?}", report.failures);
            checked += report.checked;
        }
    }
    assert!(checked > 20);
}

#[test]
fn routing_closed_forms() {
    // Constant relation with unit activation: uniform averages both ways.
    let vc = Tensor::from_f64(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 9.0]).unwrap();
    let cells = ViewCells::new(vc, vec![3]).unwrap();
    let w = route_view_to_world(&cells, &constant_bundle(3, 4, 1.0)).unwrap();
    for k in 0..4 {
        assert!((w.values.at(&[k, 0]) - 3.0).abs() < 1e-12);
        assert!((w.values.at(&[k, 1]) - 5.0).abs() < 1e-12);
    }
    let sc = Tensor::from_f64(&[4, 1], &[1.0, 2.0, 3.0, 6.0]).unwrap();
    let q = route_world_to_view(&sc, &constant_bundle(3, 4, 1.0), &[3]).unwrap();
    assert!(q.values.data().iter().all(|&x| (x - 3.0).abs() < 1e-12));
    let zero = route_world_to_view(&Tensor::zeros(&[4, 1]), &constant_bundle(3, 4, 1.0), &[3]).unwrap();
    assert!(zero.values.data().iter().all(|&x| x == 0.0));

    // Vanishing activation annihilates.
    let w = route_view_to_world(&cells, &constant_bundle(3, 4, 0.0)).unwrap();
    assert!(w.values.data().iter().all(|&x| x == 0.0));

    // Saturated relation entries select single cells.
    let mut b = constant_bundle(3, 4, 1.0);
    b.relation = Tensor::zeros(&[3, 4]);
    b.relation.data_mut()[2 * 4 + 1] = 50.0;
    let w = route_view_to_world(&cells, &b).unwrap();
    assert!((w.values.at(&[1, 0]) - 5.0).abs() < 1e-12);
    assert!((w.values.at(&[1, 1]) - 9.0).abs() < 1e-12);
    let q = route_world_to_view(&sc, &b, &[3]).unwrap();
    assert!((q.values.at(&[2, 0]) - 2.0).abs() < 1e-12);
}

#[test]
fn propagation_is_linear_and_uniform_for_constant_relation() {
    let b = constant_bundle(6, 12, 0.7);
    let zero = propagate_with_bundles(&[0.0; 6], &b, &b, &[6]).unwrap();
    assert!(zero.raw.iter().all(|&x| x == 0.0));
    assert!(zero.normalized.iter().all(|&x| x == 0.0));
    let sig = gaussian_signal(0.1, 0.3, 6).unwrap();
    let one = propagate_with_bundles(&sig, &b, &b, &[6]).unwrap();
    for x in &one.normalized {
        assert!((x - 1.0 / 6.0).abs() < 1e-12);
    }
    let (strn, params) = network(small_config(), 12);
    let ba = strn.strn_forward(&params, &Pose::new(0.1, 0.1, 0.5)).unwrap();
    let bb = strn.strn_forward(&params, &Pose::new(-0.4, 0.2, 2.5)).unwrap();
    let s1 = propagate_with_bundles(&sig, &ba, &bb, &[6]).unwrap();
    let scaled: Vec<f64> = sig.iter().map(|v| 2.5 * v).collect();
    let s2 = propagate_with_bundles(&scaled, &ba, &bb, &[6]).unwrap();
    for (a, b) in s1.raw.iter().zip(&s2.raw) {
        assert!((2.5 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
    assert!(propagate_with_bundles(&[-1.0; 6], &ba, &bb, &[6]).is_err());
}

#[test]
fn gaussian_signal_properties() {
    let one_hot = gaussian_signal(view_cell_codes::<f64>(&[8]).unwrap().data()[3], 0.0, 8).unwrap();
    assert_eq!(one_hot.iter().position(|&x| x == 1.0), Some(3));
    let g = gaussian_signal(0.0, 0.4, 8).unwrap();
    assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for i in 0..8 {
        assert!((g[i] - g[7 - i]).abs() < 1e-15);
    }
    assert!(gaussian_signal(1.5, 0.1, 8).is_err());
}
