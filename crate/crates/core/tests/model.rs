mod common;

use caen_core::data::TrainingSample;
use caen_core::model::{ctr_loss, Ablation, CaenModel};
use caen_core::nn::Graph;
use caen_core::tensor::{finite_diff_coords, grad_rel_error, Tensor, DEFAULT_FD_STEP};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run(model: &CaenModel, batch: &[TrainingSample]) -> (Graph, caen_core::model::ForwardOutput) {
    let refs: Vec<&TrainingSample> = batch.iter().collect();
    let mut g = Graph::new(&model.params, false);
    let out = model.forward(&mut g, &refs).unwrap();
    (g, out)
}

fn probs(model: &CaenModel, batch: &[TrainingSample]) -> Vec<f64> {
    let (g, out) = run(model, batch);
    g.value(out.probs).data().to_vec()
}

fn param_row(model: &CaenModel, name: &str, row: usize) -> Vec<f64> {
    let t = model.params.get(model.params.id(name).unwrap());
    let d = t.shape()[1];
    t.data()[row * d..(row + 1) * d].to_vec()
}

#[test]
fn zero_parameters_predict_one_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for a in Ablation::ALL {
        let mut m = model(a, 1);
        m.params.zero_all();
        let batch: Vec<_> = (0..6).map(|_| random_sample(&mut rng)).collect();
        assert!(probs(&m, &batch).iter().all(|p| *p == 0.5), "{a}");
    }
}

#[test]
fn outputs_are_probabilities_for_every_variant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch: Vec<_> = (0..20).map(|_| random_sample(&mut rng)).collect();
    for a in Ablation::ALL {
        let mut m = model(a, 2);
        jitter(&mut m, &mut rng);
        assert!(probs(&m, &batch).iter().all(|p| *p > 0.0 && *p < 1.0));
    }
}

#[test]
fn singleton_state_attention_returns_the_user_embedding() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut m = model(Ablation::Full, 3);
    jitter(&mut m, &mut rng);
    let mut s = sample_with(
        &mut rng,
        &Shape {
            states: 2,
            users: vec![1, 4],
            behaviors: 3,
            changes: 1,
        },
    );
    let u = s.item.states[1].user_ids[0];
    for k in 0..4 {
        s.item.states[1].user_ids[k] = u;
    }
    let (g, out) = run(&m, std::slice::from_ref(&s));
    let aal = g.value(out.aal_out.unwrap());
    assert_eq!(out.aal_rows, vec![(0, 0), (0, 1)]);
    let single = param_row(&m, "emb.user", s.item.states[0].user_ids[0] as usize);
    assert_eq!(&aal.data()[..32], single.as_slice());
    let repeated = param_row(&m, "emb.user", u as usize);
    for (a, b) in aal.data()[32..].iter().zip(&repeated) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn single_state_gets_all_personalized_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = model(Ablation::Full, 4);
    let s = sample_with(
        &mut rng,
        &Shape {
            states: 1,
            users: vec![5],
            behaviors: 1,
            changes: 0,
        },
    );
    let (g, out) = run(&m, std::slice::from_ref(&s));
    for w in out
        .pal
        .unwrap()
        .weights
        .iter()
        .chain(&out.ub.unwrap().weights)
    {
        assert_eq!(g.value(*w).data()[0], 1.0);
        assert!(g.value(*w).data()[1..].iter().all(|x| *x == 0.0));
    }
}

#[test]
fn cold_item_and_empty_history_use_learned_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = model(Ablation::Full, 5);
    let s = sample_with(
        &mut rng,
        &Shape {
            states: 0,
            users: vec![],
            behaviors: 0,
            changes: 0,
        },
    );
    let (g, out) = run(&m, std::slice::from_ref(&s));
    assert_eq!(
        g.value(out.item_repr).data(),
        param_row(&m, "pal.cold_item", 0).as_slice()
    );
    assert_eq!(
        g.value(out.user_repr).data(),
        param_row(&m, "ub.empty", 0).as_slice()
    );
    assert!(g.value(out.frequency).data().iter().all(|x| *x == 0.0));
}

#[test]
fn frequency_branch_distinguishes_rhythm() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut m = model(Ablation::Full, 6);
    jitter(&mut m, &mut rng);
    let mut s = sample_with(
        &mut rng,
        &Shape {
            states: 4,
            users: vec![2, 2, 2, 2],
            behaviors: 2,
            changes: 4,
        },
    );
    s.item.change_timestamps = vec![0, 86_400, 172_800, 259_200];
    let (g, even) = run(&m, std::slice::from_ref(&s));
    let even = g.value(even.frequency).clone();
    s.item.change_timestamps = vec![0, 600, 1200, 259_200];
    let (g, bursty) = run(&m, std::slice::from_ref(&s));
    assert!(g.value(bursty.frequency).max_abs_diff(&even) > 1e-6);

    s.item.change_timestamps = vec![5, 5];
    let refs = [&s];
    let mut g = Graph::new(&m.params, false);
    assert!(m.forward(&mut g, &refs).is_err());
}

#[test]
fn without_changes_full_and_nf_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut full = model(Ablation::Full, 7);
    jitter(&mut full, &mut rng);
    let mut nf = model(Ablation::Nf, 8);
    let copied = nf.copy_matching_params(&full.params);
    assert_eq!(copied, nf.params.len());
    let mut batch: Vec<_> = (0..10).map(|_| random_sample(&mut rng)).collect();
    for s in &mut batch {
        s.item.change_timestamps.clear();
    }
    assert_eq!(probs(&full, &batch), probs(&nf, &batch));
    batch[0].item.change_timestamps = vec![100, 5000];
    assert_ne!(probs(&full, &batch)[0], probs(&nf, &batch)[0]);
}

#[test]
fn nh_matches_full_when_states_hold_one_user() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut full = model(Ablation::Full, 9);
    jitter(&mut full, &mut rng);
    let mut nh = model(Ablation::Nh, 10);
    nh.copy_matching_params(&full.params);
    let batch: Vec<_> = (0..10)
        .map(|_| {
            let states = rng.random_range(1..=8);
            sample_with(
                &mut rng,
                &Shape {
                    states,
                    users: vec![1; states],
                    behaviors: 4,
                    changes: 1,
                },
            )
        })
        .collect();
    let (a, b) = (probs(&full, &batch), probs(&nh, &batch));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn user_order_within_a_state_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut m = model(Ablation::Full, 11);
    jitter(&mut m, &mut rng);
    for _ in 0..20 {
        let s = random_sample(&mut rng);
        let mut p = s.clone();
        for st in p.item.states.iter_mut().filter(|st| !st.is_empty) {
            let n = st.user_mask.iter().filter(|m| **m).count();
            st.user_ids[..n].reverse();
        }
        let (a, b) = (probs(&m, &[s]), probs(&m, &[p]));
        assert!((a[0] - b[0]).abs() < 1e-12);
    }
}

#[test]
fn state_order_matters() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut m = model(Ablation::Full, 12);
    jitter(&mut m, &mut rng);
    let s = sample_with(
        &mut rng,
        &Shape {
            states: 5,
            users: vec![3, 1, 4, 1, 5],
            behaviors: 3,
            changes: 2,
        },
    );
    let mut p = s.clone();
    p.item.states[..5].reverse();
    let (g1, o1) = run(&m, &[s]);
    let (g2, o2) = run(&m, &[p]);
    assert!(g1.value(o1.item_repr).max_abs_diff(g2.value(o2.item_repr)) > 1e-6);
}

#[test]
fn diagnostic_weights_are_simplex_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut m = model(Ablation::Full, 13);
    jitter(&mut m, &mut rng);
    let batch: Vec<_> = (0..16).map(|_| random_sample(&mut rng)).collect();
    let (g, out) = run(&m, &batch);
    for diag in [out.aal, out.pal, out.ub].into_iter().flatten() {
        for w in &diag.weights {
            let w = g.value(*w);
            let keys = *w.shape().last().unwrap();
            for (row, mask) in w.data().chunks(keys).zip(diag.mask.chunks(keys)) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (x, m) in row.iter().zip(mask) {
                    assert!(*x >= 0.0);
                    if !m {
                        assert_eq!(*x, 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn micro_batch_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for a in Ablation::ALL {
        let mut m = model(a, 14);
        jitter(&mut m, &mut rng);
        let batch: Vec<_> = (0..4).map(|_| random_sample(&mut rng)).collect();
        let refs: Vec<&TrainingSample> = batch.iter().collect();
        let labels: Vec<u8> = batch.iter().map(|s| s.label).collect();
        let mut g = Graph::new(&m.params, true);
        let out = m.forward(&mut g, &refs).unwrap();
        let loss = ctr_loss(&mut g, out.probs, &labels).unwrap();
        let grads = g.param_grads(loss).unwrap();

        let mut coords = Vec::new();
        for (p, grad) in grads.iter().enumerate() {
            for _ in 0..3 {
                let nz: Vec<usize> = (0..grad.numel())
                    .filter(|i| grad.data()[*i] != 0.0)
                    .collect();
                let i = if !nz.is_empty() && rng.random_bool(0.7) {
                    nz[rng.random_range(0..nz.len())]
                } else {
                    rng.random_range(0..grad.numel())
                };
                coords.push((p, i));
            }
        }
        let fd = finite_diff_coords(
            |vals: &[Tensor]| {
                let mut g = Graph::from_values(vals, false);
                let out = m
                    .forward(&mut g, &refs)
                    .map_err(|e| caen_core::tensor::TensorError::NonFinite(e.to_string()))?;
                let loss = ctr_loss(&mut g, out.probs, &labels).unwrap();
                g.value(loss).item()
            },
            m.params.values(),
            &coords,
            DEFAULT_FD_STEP,
        )
        .unwrap();
        for ((p, i), f) in coords.iter().zip(fd) {
            let a_val = grads[*p].data()[*i];
            assert!(
                grad_rel_error(a_val, f) < 1e-4,
                "{a} {} [{i}]: backward {a_val} fd {f}",
                m.params.name(caen_core::nn::ParamId(*p))
            );
        }
    }
}
