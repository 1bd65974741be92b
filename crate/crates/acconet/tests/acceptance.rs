//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

mod common;

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};
use rayon::prelude::*;

use acconet::accom::{Accom, AccomConfig};
use acconet::config::ExperimentConfig;
use acconet::data::{augment_eightfold, EpochSampler};
use acconet::decoder::{Bab, BabConfig, BifurcationMode};
use acconet::graph::Graph;
use acconet::loss::{bce_loss, iou_loss, total_loss, LossMode};
use acconet::metrics::{self, EvalPair};
use acconet::model::{AccoNet, Variant};
use acconet::optim::Adam;
use acconet::params::{Init, Initializer, ParamId, ParamStore};
use acconet::schedule::ShapeSchedule;
use acconet::trainer;
use acconet::Scalar;
use common::*;

fn pass(n: u32, what: &str) {
    println!("criterion {n:02} ({what}): PASS");
}

fn binary_target(shape: (usize, usize, usize, usize), seed: u64) -> ArrayD<f64> {
    pseudo_array4::<f64>(shape, seed, 0.0, 1.0)
        .mapv(|v| if v > 0.5 { 1.0 } else { 0.0 })
        .into_dyn()
}

// ---------------------------------------------------------------------------
// 1. Shape schedule: full-scale encoder / coordination / decoder shapes.
// ---------------------------------------------------------------------------
#[test]
fn criterion_01_shape_schedule() {
    let sched = ShapeSchedule::full();
    let mut store = ParamStore::<f32>::new();
    let mut init = Initializer::from_seed(0);
    let net = AccoNet::new(&mut store, &mut init, sched, Variant::Full.flags()).unwrap();
    let img = ArrayD::from_shape_fn(IxDyn(&[1, 3, 256, 256]), |ix| {
        ((ix[1] * 89 + ix[2] * 7 + ix[3] * 3) % 256) as f32 / 255.0
    });
    let mut g = Graph::new(false);
    let out = net.forward(&mut g, &store, img, false).unwrap();
    for t in 1..=5 {
        let (c, h, w) = sched.level_shape(t);
        assert_eq!(g.shape(&out.encoder[t - 1]), vec![1, c, h, w], "encoder level {t}");
        assert_eq!(g.shape(&out.accom[t - 1]), vec![1, c, h, w], "coordination level {t}");
        assert_eq!(
            g.shape(&out.decoder.features[t - 1]),
            vec![1, c, h, w],
            "decoder level {t}"
        );
        assert_eq!(g.shape(&out.decoder.maps[t - 1]), vec![1, 1, 256, 256]);
    }
    assert_eq!(g.shape(&out.decoder.features[2]), vec![1, 256, 64, 64]);
    assert_eq!(g.shape(&out.decoder.features[4]), vec![1, 512, 16, 16]);
    assert_eq!(g.shape(&out.encoder[2]), vec![1, 256, 64, 64]);
    pass(1, "shape schedule");
}

// ---------------------------------------------------------------------------
// 2. Dispatch: branch counts per level, neighbor/upstream wiring errors.
// ---------------------------------------------------------------------------
#[test]
fn criterion_02_dispatch() {
    let sched = ShapeSchedule::micro();
    for (level, want) in [(1usize, 2usize), (2, 3), (3, 3), (4, 3), (5, 2)] {
        let cfg = AccomConfig::for_level(&sched, level, true, true);
        assert_eq!(cfg.branch_count(), want, "level {level} branch count");
    }
    let mut store = ParamStore::<f32>::new();
    let mut init = Initializer::from_seed(2);
    let a1 = Accom::new(&mut store, &mut init, AccomConfig::for_level(&sched, 1, true, true));
    let a5 = Accom::new(&mut store, &mut init, AccomConfig::for_level(&sched, 5, true, true));
    let mut g = Graph::new(false);
    let f1 = g.input(pseudo_array4::<f32>((1, 8, 64, 64), 3, -0.4, 0.6).into_dyn());
    let f2 = g.input(pseudo_array4::<f32>((1, 16, 32, 32), 4, -0.4, 0.6).into_dyn());
    let f4 = g.input(pseudo_array4::<f32>((1, 64, 8, 8), 5, -0.4, 0.6).into_dyn());
    let f5 = g.input(pseudo_array4::<f32>((1, 64, 4, 4), 6, -0.4, 0.6).into_dyn());

    // level 1 runs local + subsequent; a previous feature is rejected
    let (_, branches) = a1.coordinate(&mut g, &store, None, &f1, Some(&f2), false).unwrap();
    assert!(branches.f_loc.is_some() && branches.f_sc.is_some() && branches.f_pc.is_none());
    assert!(a1
        .coordinate(&mut g, &store, Some(&f2), &f1, Some(&f2), false)
        .is_err());
    // level 5 runs local + previous; a subsequent feature is rejected
    let (_, branches) = a5.coordinate(&mut g, &store, Some(&f4), &f5, None, false).unwrap();
    assert!(branches.f_loc.is_some() && branches.f_pc.is_some() && branches.f_sc.is_none());
    assert!(a5
        .coordinate(&mut g, &store, Some(&f4), &f5, Some(&f4), false)
        .is_err());
    // middle levels require both neighbors
    let a3 = Accom::new(&mut store, &mut init, AccomConfig::for_level(&sched, 3, true, true));
    let f3 = g.input(pseudo_array4::<f32>((1, 32, 16, 16), 7, -0.4, 0.6).into_dyn());
    assert!(a3.coordinate(&mut g, &store, None, &f3, Some(&f4), false).is_err());

    // the top decoder block takes no upstream; lower blocks require one
    let bab5 = Bab::new(&mut store, &mut init, BabConfig::for_level(&sched, 5, BifurcationMode::Dilated));
    let bab3 = Bab::new(&mut store, &mut init, BabConfig::for_level(&sched, 3, BifurcationMode::Dilated));
    assert!(bab5.forward(&mut g, &store, &f5, Some(&f5), false).is_err());
    assert!(bab5.forward(&mut g, &store, &f5, None, false).is_ok());
    assert!(bab3.forward(&mut g, &store, &f3, None, false).is_err());
    pass(2, "branch and upstream dispatch");
}

// ---------------------------------------------------------------------------
// 3. Analytic identities (tolerance 1e-6).
// ---------------------------------------------------------------------------
#[test]
fn criterion_03_analytic_identities() {
    let tol = 1e-6;
    let sched = ShapeSchedule::micro();
    // attention maps are exactly one half under zero weights
    let mut store = ParamStore::<f64>::new();
    let mut init = Initializer::from_seed(30);
    let accom = Accom::new(&mut store, &mut init, AccomConfig::for_level(&sched, 2, true, true));
    store.zero_prefix("accom2.ca");
    store.zero_prefix("accom2.sa_local");
    let mut g = Graph::new(false);
    let x = g.input(pseudo_array4::<f64>((2, 16, 8, 8), 31, -0.5, 0.8).into_dyn());
    let cw = accom.channel_attention(&mut g, &store, &x).unwrap();
    let sm = accom.spatial_attention(&mut g, &store, &x).unwrap();
    assert!(g.value(&cw).iter().all(|v| (v - 0.5).abs() <= tol));
    assert!(g.value(&sm).iter().all(|v| (v - 0.5).abs() <= tol));

    // zeroed pyramid fusion drives every branch to zero: integration is the
    // additive identity at each dispatch shape (levels 1, 3, 5)
    for (level, shapes) in [
        (1usize, ((0, 0, 0, 0), (1, 8, 64, 64), (1, 16, 32, 32))),
        (3, ((1, 16, 32, 32), (1, 32, 16, 16), (1, 64, 8, 8))),
        (5, ((1, 64, 8, 8), (1, 64, 4, 4), (0, 0, 0, 0))),
    ] {
        let mut store = ParamStore::<f64>::new();
        let mut init = Initializer::from_seed(32 + level as u64);
        let accom = Accom::new(&mut store, &mut init, AccomConfig::for_level(&sched, level, true, true));
        store.zero_prefix(&format!("accom{level}.pyramid.fuse"));
        let mut g = Graph::new(false);
        let prev = (level >= 2).then(|| g.input(pseudo_array4::<f64>(shapes.0, 41, -0.7, 0.7).into_dyn()));
        let cur = g.input(pseudo_array4::<f64>(shapes.1, 42, -0.7, 0.7).into_dyn());
        let next = (level <= 4).then(|| g.input(pseudo_array4::<f64>(shapes.2, 43, -0.7, 0.7).into_dyn()));
        let (out, _) = accom
            .coordinate(&mut g, &store, prev.as_ref(), &cur, next.as_ref(), false)
            .unwrap();
        let (ov, cv) = (g.value(&out), g.value(&cur));
        for (a, b) in ov.iter().zip(cv.iter()) {
            assert!((a - b).abs() <= tol, "level {level}");
        }
    }

    // uniform 0.5 prediction costs ln 2 per pixel
    let mut g = Graph::new(false);
    let gt = binary_target((2, 1, 8, 8), 44);
    let half = g.input(ArrayD::from_elem(IxDyn(&[2, 1, 8, 8]), 0.5));
    let b = bce_loss(&mut g, &half, &gt).unwrap();
    let got = *g.value(&b).iter().next().unwrap();
    assert!((got - std::f64::consts::LN_2).abs() <= tol);

    // IoU hand cases: perfect overlap, the 2x2 case worth 2/3, no overlap
    let perfect = g.input(gt.clone());
    let i0 = iou_loss(&mut g, &perfect, &gt).unwrap();
    assert!(*g.value(&i0).iter().next().unwrap() <= tol);
    let pred = g.input(
        ArrayD::from_shape_vec(IxDyn(&[1, 1, 2, 2]), vec![1.0, 1.0, 0.0, 0.0]).unwrap(),
    );
    let gt22 = ArrayD::from_shape_vec(IxDyn(&[1, 1, 2, 2]), vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    let i1 = iou_loss(&mut g, &pred, &gt22).unwrap();
    assert!((*g.value(&i1).iter().next().unwrap() - 2.0 / 3.0).abs() <= tol);
    let inv = g.input(gt.mapv(|v| 1.0 - v));
    let i2 = iou_loss(&mut g, &inv, &gt).unwrap();
    assert!(*g.value(&i2).iter().next().unwrap() >= 1.0 - tol);
    pass(3, "analytic identities");
}

// ---------------------------------------------------------------------------
// 4. Oracle equivalence against scalar loop references on <= 4x4 inputs.
// ---------------------------------------------------------------------------
fn oracle_suite<S: Scalar>(tol: f64, training: bool) {
    let sched = ShapeSchedule::custom(16, [2, 2, 2, 3, 3]).unwrap();
    let mut store = ParamStore::<S>::new();
    let mut init = Initializer::from_seed(400);
    let accom = Accom::new(&mut store, &mut init, AccomConfig::for_level(&sched, 3, true, true));
    let params = Params::snapshot(&store);

    let f_cur = pseudo_array4::<S>((2, 2, 4, 4), 401, -0.3, 0.4);
    let f_prev = pseudo_array4::<S>((2, 2, 8, 8), 402, -0.3, 0.4);
    let f_next = pseudo_array4::<S>((2, 3, 2, 2), 403, -0.3, 0.4);

    let mut g = Graph::new(false);
    let cur_v = g.input(f_cur.clone().into_dyn());
    let prev_v = g.input(f_prev.clone().into_dyn());
    let next_v = g.input(f_next.clone().into_dyn());

    let to4 = |g: &Graph<S>, v: &acconet::graph::Val<S>| {
        g.value(v)
            .as_ref()
            .clone()
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap()
    };

    // dilated pyramid
    let f_c = accom.dilated_pyramid(&mut g, &store, &cur_v, training).unwrap();
    let f_c_ref = pyramid_ref(&params, 3, &f_cur, training);
    assert!(
        max_abs_diff(&to4(&g, &f_c), &f_c_ref) < tol,
        "pyramid diff {} (training={training})",
        max_abs_diff(&to4(&g, &f_c), &f_c_ref)
    );

    // channel attention on the fused summary
    let cw = accom.channel_attention(&mut g, &store, &f_c).unwrap();
    let cw_ref = channel_attention_ref(&params, "accom3.ca", &f_c_ref);
    let cw_got = g.value(&cw);
    for (a, b) in cw_got.iter().zip(cw_ref.iter()) {
        assert!(((*a).to_f64() - (*b).to_f64()).abs() < tol, "channel attention");
    }

    // spatial attention
    let sm = accom.spatial_attention(&mut g, &store, &f_c).unwrap();
    let sm_ref = spatial_attention_ref(&params, "accom3.sa_local", &f_c_ref);
    assert!(max_abs_diff(&to4(&g, &sm), &sm_ref) < tol, "spatial attention");

    // local branch composition
    let f_loc = accom.local_branch(&mut g, &store, &f_c, training).unwrap();
    let f_loc_ref = local_branch_ref(&params, 3, &f_c_ref);
    assert!(max_abs_diff(&to4(&g, &f_loc), &f_loc_ref) < tol, "local branch");

    // adjacent branch compositions
    let f_pc = accom.previous_to_current(&mut g, &store, &prev_v, &f_c).unwrap();
    let f_pc_ref = previous_to_current_ref(&params, 3, &f_prev, &f_c_ref);
    assert!(max_abs_diff(&to4(&g, &f_pc), &f_pc_ref) < tol, "previous-to-current");
    let f_sc = accom.subsequent_to_current(&mut g, &store, &next_v, &f_c).unwrap();
    let f_sc_ref = subsequent_to_current_ref(&params, 3, &f_next, &f_c_ref);
    assert!(max_abs_diff(&to4(&g, &f_sc), &f_sc_ref) < tol, "subsequent-to-current");

    // full coordination equals the sum of branch oracles plus the input
    let (out, _) = accom
        .coordinate(&mut g, &store, Some(&prev_v), &cur_v, Some(&next_v), training)
        .unwrap();
    let out_ref = accom_ref(&params, 3, Some(&f_prev), &f_cur, Some(&f_next), training);
    assert!(max_abs_diff(&to4(&g, &out), &out_ref) < tol, "coordination");

    // decoder blocks: cascade + bifurcations + aggregation
    let mut store_d = ParamStore::<S>::new();
    let mut init_d = Initializer::from_seed(500);
    let bab3 = Bab::new(&mut store_d, &mut init_d, BabConfig::for_level(&sched, 3, BifurcationMode::Dilated));
    let bab5 = Bab::new(&mut store_d, &mut init_d, BabConfig::for_level(&sched, 5, BifurcationMode::Dilated));
    let params_d = Params::snapshot(&store_d);
    let f_accom3 = pseudo_array4::<S>((2, 2, 4, 4), 501, -0.3, 0.4);
    let upstream = pseudo_array4::<S>((2, 3, 2, 2), 502, -0.3, 0.4);
    let f_accom5 = pseudo_array4::<S>((2, 3, 1, 1), 503, -0.3, 0.4);
    let mut gd = Graph::new(false);
    let a3 = gd.input(f_accom3.clone().into_dyn());
    let up = gd.input(upstream.clone().into_dyn());
    let a5 = gd.input(f_accom5.clone().into_dyn());
    let y3 = bab3.forward(&mut gd, &store_d, &a3, Some(&up), training).unwrap();
    let y3_ref = bab_ref(&params_d, 3, &f_accom3, Some(&upstream), (5, 3), training);
    assert!(max_abs_diff(&to4(&gd, &y3), &y3_ref) < tol, "decoder block with upstream");
    let y5 = bab5.forward(&mut gd, &store_d, &a5, None, training).unwrap();
    let y5_ref = bab_ref(&params_d, 5, &f_accom5, None, (3, 2), training);
    assert!(max_abs_diff(&to4(&gd, &y5), &y5_ref) < tol, "top decoder block");
}

#[test]
fn criterion_04_oracle_equivalence() {
    oracle_suite::<f32>(1e-6, false);
    oracle_suite::<f64>(1e-10, false);
    // batch-statistics path, double precision
    oracle_suite::<f64>(1e-10, true);
    pass(4, "scalar-reference oracle equivalence");
}

// ---------------------------------------------------------------------------
// 5. Gradient suite: analytic vs central differences on the micro schedule.
// ---------------------------------------------------------------------------

/// Re-initialize at a well-conditioned operating point: healthy weight
/// scales, small positive biases, and positively shifted normalization so
/// max-based poolings have unique, stable selections.
fn condition_for_gradcheck(store: &mut ParamStore<f64>, seed: u64) {
    let mut rng = Initializer::from_seed(seed);
    let names: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
    for name in names {
        let id = store.find(&name).unwrap();
        let shape = store.value(id).shape().to_vec();
        if name.ends_with(".weight") {
            let fan_in = match shape.len() {
                4 => shape[1] * shape[2] * shape[3],
                2 => shape[1],
                _ => 1,
            };
            let w = rng.tensor::<f64>(&shape, Init::HeNormal, fan_in);
            store.set(id, w).unwrap();
        } else if name.ends_with(".bias") {
            store.set(id, ArrayD::from_elem(IxDyn(&shape), 0.05)).unwrap();
        } else if name.ends_with(".beta") {
            store.set(id, ArrayD::from_elem(IxDyn(&shape), 1.0)).unwrap();
        }
    }
}

#[test]
fn criterion_05_gradient_suite() {
    // The micro channel schedule declared at a 16x16 input: the parameter
    // set is exactly the micro one (spatial size does not enter parameter
    // shapes), and the 16x cheaper forwards keep ~17k central-difference
    // probes within a CPU-minutes budget.
    let sched = ShapeSchedule::custom(16, ShapeSchedule::micro().channels).unwrap();
    let mut store = ParamStore::<f64>::new();
    let mut init = Initializer::from_seed(7);
    let net = AccoNet::new(&mut store, &mut init, sched, Variant::Full.flags()).unwrap();
    condition_for_gradcheck(&mut store, 9);
    let images = pseudo_array4::<f64>((1, 3, 16, 16), 21, 0.05, 0.95).into_dyn();
    let target = binary_target((1, 1, 16, 16), 22);

    let loss_of = |store: &ParamStore<f64>, images: &ArrayD<f64>| -> f64 {
        let mut g = Graph::new(false);
        let out = net.forward(&mut g, store, images.clone(), true).unwrap();
        let (_, parts) = total_loss(&mut g, &out.decoder.maps, &target, LossMode::Both).unwrap();
        parts.total
    };

    // analytic gradients
    let mut g = Graph::new(true);
    let out = net.forward(&mut g, &store, images.clone(), true).unwrap();
    let (total, _) = total_loss(&mut g, &out.decoder.maps, &target, LossMode::Both).unwrap();
    let grads = g.backward(&total).unwrap();

    // sample 1% of the trainable parameter elements, uniformly over the
    // global index space
    let trainable: Vec<ParamId> = store.trainable_ids().collect();
    let sizes: Vec<usize> = trainable.iter().map(|&id| store.value(id).len()).collect();
    let total_elems: usize = sizes.iter().sum();
    let n_probes = total_elems.div_ceil(100);
    let mut picked: Vec<(ParamId, usize)> = Vec::with_capacity(n_probes);
    {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let mut seen = HashSet::new();
        while picked.len() < n_probes {
            let global = rng.random_range(0..total_elems);
            if !seen.insert(global) {
                continue;
            }
            let mut acc = global;
            for (k, &sz) in sizes.iter().enumerate() {
                if acc < sz {
                    picked.push((trainable[k], acc));
                    break;
                }
                acc -= sz;
            }
        }
    }
    println!(
        "gradient suite: {} parameter probes over {} trainable elements",
        picked.len(),
        total_elems
    );

    let h = 1e-5;
    let results: Vec<(f64, f64)> = picked
        .par_chunks(64)
        .flat_map_iter(|chunk| {
            let mut probe = store.clone();
            let mut out = Vec::with_capacity(chunk.len());
            for &(id, flat) in chunk {
                let analytic = grads
                    .param(id)
                    .map(|a| a.as_slice().unwrap()[flat])
                    .unwrap_or(0.0);
                let orig = probe.value(id).as_slice().unwrap()[flat];
                probe.value_mut(id).as_slice_mut().unwrap()[flat] = orig + h;
                let up = loss_of(&probe, &images);
                probe.value_mut(id).as_slice_mut().unwrap()[flat] = orig - h;
                let down = loss_of(&probe, &images);
                probe.value_mut(id).as_slice_mut().unwrap()[flat] = orig;
                out.push(((up - down) / (2.0 * h), analytic));
            }
            out
        })
        .collect();

    // Probes where both sides vanish agree trivially; that population is
    // real at this scale (large-dilation taps that only ever see padding,
    // rectifier-dead units). Demand a healthy count of informative probes
    // on top of the relative-error bar.
    let mut checked = 0usize;
    let mut trivial = 0usize;
    for (numeric, analytic) in &results {
        let scale = numeric.abs().max(analytic.abs());
        if scale < 1e-9 {
            trivial += 1;
            continue;
        }
        let rel = (numeric - analytic).abs() / scale.max(1e-8);
        assert!(
            rel < 1e-3,
            "parameter gradient mismatch: numeric {numeric:.3e} analytic {analytic:.3e} rel {rel:.3e}"
        );
        checked += 1;
    }
    println!("gradient suite: {checked} informative probes, {trivial} zero-zero agreements");
    assert!(checked >= 1000, "gradient check would be vacuous ({checked} informative probes)");

    // input gradients at sampled pixels
    let input_grad = grads.wrt(&out.input).expect("input gradient");
    let n_pixels = images.len();
    let input_probes: Vec<usize> = {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2025);
        (0..160).map(|_| rng.random_range(0..n_pixels)).collect()
    };
    let input_results: Vec<(f64, f64)> = input_probes
        .par_iter()
        .map(|&flat| {
            let analytic = input_grad.as_slice().unwrap()[flat];
            let mut plus = images.clone();
            plus.as_slice_mut().unwrap()[flat] += h;
            let up = loss_of(&store, &plus);
            let mut minus = images.clone();
            minus.as_slice_mut().unwrap()[flat] -= h;
            let down = loss_of(&store, &minus);
            ((up - down) / (2.0 * h), analytic)
        })
        .collect();
    let mut input_checked = 0usize;
    for (numeric, analytic) in &input_results {
        let scale = numeric.abs().max(analytic.abs());
        if scale < 1e-9 {
            continue;
        }
        let rel = (numeric - analytic).abs() / scale.max(1e-8);
        assert!(
            rel < 1e-3,
            "input gradient mismatch: numeric {numeric:.3e} analytic {analytic:.3e} rel {rel:.3e}"
        );
        input_checked += 1;
    }
    assert!(input_checked * 2 >= input_results.len());
    pass(5, "finite-difference gradient check");
}

// ---------------------------------------------------------------------------
// 6. Metric oracle: nine metrics vs brute force on 20 random 16x16 pairs.
// ---------------------------------------------------------------------------
#[test]
fn criterion_06_metric_oracle() {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for k in 0..20u64 {
        let p4 = pseudo_array4::<f64>((1, 1, 16, 16), 600 + k, 0.0, 1.0);
        let g4 = pseudo_array4::<f64>((1, 1, 16, 16), 700 + k, 0.0, 1.0);
        preds.push(Array2::from_shape_fn((16, 16), |(i, j)| p4[[0, 0, i, j]]));
        gts.push(Array2::from_shape_fn((16, 16), |(i, j)| g4[[0, 0, i, j]] > 0.55));
    }
    let brute = brute_force_dataset(&preds, &gts);
    let pairs: Vec<EvalPair> = preds
        .iter()
        .zip(gts.iter())
        .map(|(p, g)| EvalPair::new(p.clone(), g.clone()).unwrap())
        .collect();
    let report = metrics::evaluate_pairs(&pairs).unwrap();
    let tol = 1e-6;
    assert!((report.s_measure - brute.s).abs() < tol, "s");
    assert!((report.max_f - brute.max_f).abs() < tol, "max_f");
    assert!((report.mean_f - brute.mean_f).abs() < tol, "mean_f");
    assert!((report.adp_f - brute.adp_f).abs() < tol, "adp_f");
    assert!((report.max_e - brute.max_e).abs() < tol, "max_e");
    assert!((report.mean_e - brute.mean_e).abs() < tol, "mean_e");
    assert!((report.adp_e - brute.adp_e).abs() < tol, "adp_e");
    assert!((report.mae - brute.mae).abs() < 1e-12, "mae");
    for (k, point) in report.pr_curve.iter().enumerate() {
        assert!((point.precision - brute.precision[k]).abs() < 1e-12, "precision[{k}]");
        assert!((point.recall - brute.recall[k]).abs() < 1e-12, "recall[{k}]");
    }
    pass(6, "brute-force metric oracle");
}

// ---------------------------------------------------------------------------
// 7. Overfit sanity: 4 images, <= 200 iterations, >= 90% loss reduction and
//    max F >= 0.95 on the training images (micro scale on CPU).
// ---------------------------------------------------------------------------

/// Synthetic dataset: bright geometric blobs over a darker textured
/// background, masks in lockstep.
fn write_synthetic_split(root: &Path, split: &str, specs: &[(u32, u32, u32)], size: u32) {
    let images = root.join(split).join("images");
    let gts = root.join(split).join("gt");
    std::fs::create_dir_all(&images).unwrap();
    std::fs::create_dir_all(&gts).unwrap();
    for (k, &(cx, cy, r)) in specs.iter().enumerate() {
        let mut img = image::RgbImage::new(size, size);
        let mut mask = image::GrayImage::new(size, size);
        for y in 0..size {
            for x in 0..size {
                let inside =
                    (x as i64 - cx as i64).pow(2) + (y as i64 - cy as i64).pow(2) <= (r as i64).pow(2);
                let texture = ((x * 7 + y * 13 + k as u32 * 29) % 41) as u8;
                if inside {
                    img.put_pixel(x, y, image::Rgb([200 + texture % 40, 180, 120]));
                    mask.put_pixel(x, y, image::Luma([255]));
                } else {
                    img.put_pixel(x, y, image::Rgb([40 + texture, 60, 80]));
                    mask.put_pixel(x, y, image::Luma([0]));
                }
            }
        }
        img.save(images.join(format!("sample_{k:02}.png"))).unwrap();
        mask.save(gts.join(format!("sample_{k:02}.png"))).unwrap();
    }
}

#[test]
fn criterion_07_overfit_sanity() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_split(
        dir.path(),
        "train",
        &[(20, 20, 9), (44, 40, 12), (32, 50, 7), (50, 14, 10)],
        64,
    );
    let cfg = ExperimentConfig {
        data_root: dir.path().to_path_buf(),
        out_dir: dir.path().join("run"),
        micro: true,
        seed: 3,
        lr: 2e-3,
        batch_size: 4,
        epochs: 200,
        decay_epoch: 1000,
        augment: false,
        checkpoint_every: 200,
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let outcome = trainer::train::<f32>(&cfg).unwrap();
    let elapsed = start.elapsed();
    assert!(outcome.loss_trace.len() <= 200, "iteration budget");
    assert!(
        outcome.final_loss <= 0.1 * outcome.initial_loss,
        "loss {:.4} -> {:.4} is less than a 90% reduction",
        outcome.initial_loss,
        outcome.final_loss
    );
    assert!(
        elapsed.as_secs() < 900,
        "micro-scale CPU run exceeded 15 minutes ({elapsed:?})"
    );
    // score the training images themselves
    let maps_dir = dir.path().join("maps");
    trainer::infer::<f32>(&cfg, &outcome.final_checkpoint, &dir.path().join("train/images"), &maps_dir)
        .unwrap();
    let report = metrics::evaluate_dataset(&maps_dir, &dir.path().join("train/gt")).unwrap();
    assert!(
        report.max_f >= 0.95,
        "max F {:.4} below the overfit bar",
        report.max_f
    );
    println!(
        "overfit: loss {:.4} -> {:.4}, max F {:.4}, {elapsed:?}",
        outcome.initial_loss, outcome.final_loss, report.max_f
    );
    pass(7, "overfit sanity");
}

// ---------------------------------------------------------------------------
// 8. Augmentation counts are exact.
// ---------------------------------------------------------------------------
#[test]
fn criterion_08_augmentation_count() {
    assert_eq!(EpochSampler { n_pairs: 1400, augment: true }.len(), 11_200);
    assert_eq!(EpochSampler { n_pairs: 600, augment: true }.len(), 4_800);
    let img = ndarray::Array3::<f64>::from_shape_fn((3, 8, 8), |(c, i, j)| (c + i * j) as f64);
    let mask = Array2::<f64>::from_shape_fn((8, 8), |(i, j)| ((i + j) % 2) as f64);
    assert_eq!(augment_eightfold(&img, &mask).unwrap().len(), 8);
    pass(8, "augmentation counts");
}

// ---------------------------------------------------------------------------
// 9. Ablation plumbing: every named variant trains one step and the set of
//    parameters receiving gradients matches the active modules.
// ---------------------------------------------------------------------------
#[test]
fn criterion_09_ablation_plumbing() {
    let sched = ShapeSchedule::micro();
    let images = pseudo_array4::<f32>((2, 3, 64, 64), 900, 0.0, 1.0).into_dyn();
    let target = binary_target((2, 1, 64, 64), 901).mapv(|v| v as f32);
    let mut full_params: Option<HashSet<String>> = None;
    for variant in Variant::ALL {
        let mut store = ParamStore::<f32>::new();
        let mut init = Initializer::from_seed(11);
        let net = AccoNet::new(&mut store, &mut init, sched, variant.flags()).unwrap();
        let mut g = Graph::new(true);
        let out = net.forward(&mut g, &store, images.clone(), true).unwrap();
        let (total, _) = total_loss(&mut g, &out.decoder.maps, &target, net.flags.loss_mode).unwrap();
        let grads = g.backward(&total).unwrap();
        let touched: HashSet<String> = grads
            .touched_params()
            .into_iter()
            .map(|id| store.name(id).to_string())
            .collect();
        let trainable: HashSet<String> = store
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.name.clone())
            .collect();
        assert_eq!(
            touched, trainable,
            "{}: every active parameter receives a gradient",
            variant.name()
        );
        let has = |needle: &str| trainable.iter().any(|n| n.contains(needle));
        match variant {
            Variant::Full => {
                assert!(has("accom") && has(".bif1.") && has(".aggregate."));
                full_params = Some(trainable.clone());
            }
            Variant::Baseline => {
                assert!(!has("accom") && !has(".bif") && !has(".aggregate."));
            }
            Variant::AccomOnly => {
                assert!(has("accom") && !has(".bif") && !has(".aggregate."));
            }
            Variant::BabOnly => {
                assert!(!has("accom") && has(".bif1."));
            }
            Variant::WithoutLocalBranch => {
                assert!(!has(".pyramid.") && !has(".ca.") && !has(".sa_local."));
                assert!(has(".sa_prev.") && has(".sa_next."));
            }
            Variant::WithoutAdjacentBranches => {
                assert!(has(".pyramid.") && !has(".sa_prev.") && !has(".sa_next."));
            }
            Variant::DirectConnection => {
                assert!(!has(".bif") && has(".aggregate."));
            }
            Variant::NormalConvolution => {
                assert!(has(".bif1.") && has(".aggregate."));
            }
            Variant::BceOnly | Variant::IouOnly => {
                assert_eq!(
                    &trainable,
                    full_params.as_ref().expect("full variant runs first"),
                    "loss-only variants keep the full parameter set"
                );
            }
        }
        // one optimizer step executes
        let mut adam = Adam::<f32>::new();
        adam.step(&mut store, &grads, 1e-4);
    }
    pass(9, "ablation plumbing");
}

// ---------------------------------------------------------------------------
// 10. Pipeline round trip: train -> checkpoint -> infer -> eval, with
//     byte-identical re-inference.
// ---------------------------------------------------------------------------
#[test]
fn criterion_10_pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_split(
        dir.path(),
        "train",
        &[(20, 20, 9), (44, 40, 12), (32, 50, 7), (50, 14, 10)],
        64,
    );
    write_synthetic_split(dir.path(), "test", &[(30, 30, 10), (14, 44, 8)], 64);
    let cfg = ExperimentConfig {
        data_root: dir.path().to_path_buf(),
        out_dir: dir.path().join("run"),
        micro: true,
        seed: 5,
        lr: 1e-3,
        batch_size: 2,
        epochs: 2,
        augment: true,
        ..Default::default()
    };
    let outcome = trainer::train::<f32>(&cfg).unwrap();
    assert!(outcome.final_checkpoint.exists());

    let maps_a = dir.path().join("maps_a");
    let maps_b = dir.path().join("maps_b");
    let test_images = dir.path().join("test/images");
    let written_a =
        trainer::infer::<f32>(&cfg, &outcome.final_checkpoint, &test_images, &maps_a).unwrap();
    let written_b =
        trainer::infer::<f32>(&cfg, &outcome.final_checkpoint, &test_images, &maps_b).unwrap();
    assert_eq!(written_a.len(), 2);
    for (a, b) in written_a.iter().zip(written_b.iter()) {
        let bytes_a = std::fs::read(a).unwrap();
        let bytes_b = std::fs::read(b).unwrap();
        assert_eq!(bytes_a, bytes_b, "re-running inference must be byte-identical");
    }

    // evaluation through the command-line surface
    let eval_out = dir.path().join("eval");
    acconet::cli::run([
        "acconet".to_string(),
        "eval".into(),
        "--pred".into(),
        maps_a.display().to_string(),
        "--gt".into(),
        dir.path().join("test/gt").display().to_string(),
        "--out".into(),
        eval_out.display().to_string(),
    ])
    .unwrap();
    let report = std::fs::read_to_string(eval_out.join("report.txt")).unwrap();
    for key in [
        "s_measure", "max_f", "mean_f", "adp_f", "max_e", "mean_e", "adp_e", "mae",
    ] {
        assert!(report.contains(&format!("{key} = ")), "report missing {key}");
    }
    let pr = std::fs::read_to_string(eval_out.join("pr_curve.csv")).unwrap();
    assert_eq!(pr.lines().count(), 257, "256 thresholds plus header");
    pass(10, "pipeline round trip");
}

// ---------------------------------------------------------------------------
// 11. At-scale reproduction target: documented, not run in CI.
// ---------------------------------------------------------------------------
#[test]
fn criterion_11_long_run_target_documented() {
    let readme = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md"),
    )
    .expect("workspace README");
    assert!(
        readme.contains("at-scale") || readme.contains("At-scale"),
        "README documents the at-scale reproduction target"
    );
    println!("criterion 11 (at-scale reproduction): documented target only, not run in CI");
}
