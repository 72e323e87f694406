//! Acceptance suite. Each test prints one `criterion NN ...: PASS|FAIL` line.
//!
//! Run with `cargo test -p dllab-core --test acceptance -- --nocapture`.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

use dllab_core::autodiff::{forward, logit_jacobian, loss_and_grad, stacked_jacobian, NetObjective, Objective, Quadratic};
use dllab_core::data::{gen_blobs, train_test_split, LabeledBatch};
use dllab_core::experiments::{pearson, run_linearization_sweep, run_megaplot, spearman, ExperimentConfig, Report};
use dllab_core::linearized::{train_linearized, JacobianPath, LinearizedConfig, TaylorModel, TaylorOrder};
use dllab_core::loss::{argmax_rows, loss_value, LossKind};
use dllab_core::metrics::{
    centroid_hessian_overlap, disagreement_normalizer, error_barrier, escape_threshold, function_distance_from_predictions,
    gd_escape_threshold, hessian_spectral_norm, kernel_distance, kernel_distance_grams, kernel_velocity, logit_centroids,
    ntk_gram, path_profile, plane_scan, subspace_overlap, GramBlockMatrix, PlaneRequest,
};
use dllab_core::model::{init_params, Architecture, NetworkSpec};
use dllab_core::params::ParamVector;
use dllab_core::tensor::Tensor;
use dllab_core::trainer::{TrainConfig, Trainer};

fn verdict(n: u32, name: &str, pass: bool, detail: String, elapsed: Duration) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n:02} {name}: {tag} ({detail}; {:.1}s)", elapsed.as_secs_f64());
    assert!(pass, "criterion {n:02} {name} failed: {detail}");
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_batch(rng: &mut ChaCha8Rng, m: usize, dim: usize, classes: usize) -> LabeledBatch {
    let xs = Tensor::new(vec![m, dim], gaussian(rng, m * dim)).unwrap();
    let labels = (0..m).map(|_| rng.random_range(0..classes as u32)).collect();
    LabeledBatch::new(xs, labels, classes).unwrap()
}

/// Kaiming init plus a small perturbation so biases are non-zero.
fn random_params(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> ParamVector {
    let p = init_params(spec, rng.random()).unwrap();
    let noise = gaussian(rng, p.len());
    let v = p.values().iter().zip(&noise).map(|(a, b)| a + 0.1 * b).collect();
    p.with_values(v).unwrap()
}

/// Pre-activations of an MLP computed directly from the flat layout
/// (per layer: weight `[out, in]` row-major, then bias `[out]`).
fn mlp_preactivations(spec: &NetworkSpec, w: &[f64], x: &[f64]) -> Vec<f64> {
    let Architecture::Mlp { hidden } = &spec.arch else { panic!("mlp only") };
    let mut h = x.to_vec();
    let mut off = 0;
    let mut pre = Vec::new();
    for &width in hidden {
        let mut z = vec![0.0; width];
        for (o, zo) in z.iter_mut().enumerate() {
            *zo = (0..h.len()).map(|i| w[off + o * h.len() + i] * h[i]).sum();
        }
        off += width * h.len();
        if spec.bias {
            for (o, zo) in z.iter_mut().enumerate() {
                *zo += w[off + o];
            }
            off += width;
        }
        pre.extend_from_slice(&z);
        h = z.iter().map(|v| v.max(0.0)).collect();
    }
    pre
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    max_abs(a.iter().zip(b).map(|(x, y)| x - y))
}

fn loss_at(spec: &NetworkSpec, p: &ParamVector, w: Vec<f64>, batch: &LabeledBatch, loss: LossKind) -> f64 {
    let logits = forward(spec, &p.with_values(w).unwrap(), &batch.inputs).unwrap();
    loss_value(loss, logits.data(), spec.classes, &batch.labels)
}

fn dense_hessian(obj: &dyn Objective, w: &[f64]) -> DMatrix<f64> {
    let d = w.len();
    let mut h = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        let col = obj.hvp(w, &e).unwrap();
        for i in 0..d {
            h[(i, j)] = col[i];
        }
    }
    h
}

struct Instance {
    spec: NetworkSpec,
    params: ParamVector,
    batch: LabeledBatch,
    loss: LossKind,
}

/// Draws an instance; MLP draws are retried until every pre-activation is
/// at least `margin` away from the ReLU kink.
fn draw_instance(i: usize, rng: &mut ChaCha8Rng, margin: f64) -> (Instance, usize) {
    let loss = if i % 2 == 0 { LossKind::CrossEntropy } else { LossKind::Mse };
    let (spec, m) = match i % 5 {
        0 => (NetworkSpec::mlp(3, &[6], 3), 5),
        1 => (NetworkSpec::mlp(4, &[5, 4], 2), 4),
        2 => (NetworkSpec::mlp(2, &[8, 6], 4).with_bias(i % 3 != 0), 4),
        3 => (NetworkSpec::linear(5, 3), 6),
        _ => (NetworkSpec::mini_cnn([1, 4, 4], &[2, 2, 2], 3), 3),
    };
    let mut rejected = 0;
    loop {
        let batch = random_batch(rng, m, spec.input_dim, spec.classes);
        let params = random_params(&spec, rng);
        let ok = match &spec.arch {
            Architecture::Mlp { hidden } if !hidden.is_empty() => (0..m).all(|r| {
                mlp_preactivations(&spec, params.values(), batch.inputs.row(r)).iter().all(|z| z.abs() > margin)
            }),
            _ => true,
        };
        if ok {
            return (Instance { spec, params, batch, loss }, rejected);
        }
        rejected += 1;
    }
}

#[test]
fn criterion_01_autodiff_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut grad_err, mut jac_err, mut hess_err) = (0.0f64, 0.0f64, 0.0f64);
    let (mut rejected, mut hessians) = (0, 0);
    for i in 0..50 {
        let (inst, rej) = draw_instance(i, &mut rng, 1e-2);
        rejected += rej;
        let Instance { spec, params, batch, loss } = &inst;
        let w = params.values().to_vec();
        let d = w.len();

        let (_, g) = loss_and_grad(spec, params, batch, *loss).unwrap();
        let h = 1e-6;
        let fd: Vec<f64> = (0..d)
            .map(|j| {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[j] += h;
                wm[j] -= h;
                (loss_at(spec, params, wp, batch, *loss) - loss_at(spec, params, wm, batch, *loss)) / (2.0 * h)
            })
            .collect();
        grad_err = grad_err.max(max_abs_diff(g.values(), &fd) / max_abs(g.values().iter().copied()).max(1e-12));

        let k = spec.classes;
        for r in 0..2 {
            let x = batch.inputs.row(r);
            let jac = logit_jacobian(spec, params, x).unwrap();
            let xs = Tensor::new(vec![1, x.len()], x.to_vec()).unwrap();
            let mut fdj = vec![0.0; k * d];
            for j in 0..d {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[j] += h;
                wm[j] -= h;
                let fp = forward(spec, &params.with_values(wp).unwrap(), &xs).unwrap();
                let fm = forward(spec, &params.with_values(wm).unwrap(), &xs).unwrap();
                for c in 0..k {
                    fdj[c * d + j] = (fp.data()[c] - fm.data()[c]) / (2.0 * h);
                }
            }
            for c in 0..k {
                let row = &jac.data()[c * d..(c + 1) * d];
                let scale = max_abs(row.iter().copied()).max(1e-12);
                jac_err = jac_err.max(max_abs_diff(row, &fdj[c * d..(c + 1) * d]) / scale);
            }
        }

        if matches!(&spec.arch, Architecture::Mlp { hidden } if !hidden.is_empty()) && d <= 200 {
            hessians += 1;
            let obj = NetObjective::new(spec, batch, *loss);
            let hv = dense_hessian(&obj, &w);
            let hh = 1e-4;
            let f = |di: usize, si: f64, dj: usize, sj: f64| {
                let mut v = w.clone();
                v[di] += si * hh;
                v[dj] += sj * hh;
                loss_at(spec, params, v, batch, *loss)
            };
            let mut worst = 0.0f64;
            for a in 0..d {
                for b in a..d {
                    let fd = (f(a, 1.0, b, 1.0) - f(a, 1.0, b, -1.0) - f(a, -1.0, b, 1.0) + f(a, -1.0, b, -1.0)) / (4.0 * hh * hh);
                    worst = worst.max((hv[(a, b)] - fd).abs()).max((hv[(b, a)] - fd).abs());
                }
            }
            let scale = hv.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
            hess_err = hess_err.max(worst / scale);
        }
    }
    let elapsed = start.elapsed();
    let pass = grad_err < 1e-6 && jac_err < 1e-6 && hess_err < 1e-5 && elapsed < Duration::from_secs(120);
    verdict(
        1,
        "autodiff correctness",
        pass,
        format!(
            "grad rel err {grad_err:.2e}, jacobian rel err {jac_err:.2e}, hessian err {hess_err:.2e} over {hessians} MLPs, {rejected} near-kink draws redrawn"
        ),
        elapsed,
    );
}

#[test]
fn criterion_02_ntk_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst, mut asym, mut min_ratio) = (0.0f64, 0.0f64, f64::INFINITY);
    for i in 0..10 {
        let spec = match i % 3 {
            0 => NetworkSpec::mlp(3, &[16, 8], 3),
            1 => NetworkSpec::linear(4, 2),
            _ => NetworkSpec::mini_cnn([1, 4, 4], &[2, 3, 2], 2),
        };
        let m = 8;
        let batch = random_batch(&mut rng, m, spec.input_dim, spec.classes);
        let p = random_params(&spec, &mut rng);
        let idx: Vec<usize> = (0..m).collect();
        let gram = ntk_gram(&spec, &p, &batch.inputs, &idx).unwrap();
        let jac = stacked_jacobian(&spec, &p, &batch.inputs).unwrap();
        let j = DMatrix::from_row_slice(jac.rows(), p.len(), jac.data());
        let oracle = &j * j.transpose();
        let n = gram.size();
        let g = DMatrix::from_row_slice(n, n, &gram.values);
        worst = worst.max((&g - &oracle).abs().max());
        asym = asym.max((&g - g.transpose()).abs().max());
        let eig = SymmetricEigen::new(g.clone()).eigenvalues;
        let bound = 1e-8 * gram.trace() / n as f64;
        min_ratio = min_ratio.min(eig.min() / bound);
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-12 && asym == 0.0 && min_ratio > -1.0 && elapsed < Duration::from_secs(60);
    verdict(
        2,
        "ntk oracle equivalence",
        pass,
        format!("max |gram - JJ^T| {worst:.1e}, asymmetry {asym:.1e}, min eig / tolerance {min_ratio:.2e}"),
        elapsed,
    );
}

#[test]
fn criterion_03_kernel_distance_properties() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut self_dist = 0.0f64;
    let mut in_range = true;
    for i in 0..10 {
        let spec = if i % 2 == 0 { NetworkSpec::mlp(3, &[10], 3) } else { NetworkSpec::mini_cnn([1, 4, 4], &[2, 2, 2], 2) };
        let batch = random_batch(&mut rng, 6, spec.input_dim, spec.classes);
        let idx: Vec<usize> = (0..6).collect();
        let a = random_params(&spec, &mut rng);
        let b = random_params(&spec, &mut rng);
        self_dist = self_dist.max(kernel_distance(&spec, &a, &a, &batch.inputs, &idx).unwrap().abs());
        let s = kernel_distance(&spec, &a, &b, &batch.inputs, &idx).unwrap();
        in_range &= (0.0..=1.0).contains(&s);
    }

    // Uniform weight scaling: the linear model's kernel does not depend on
    // the weights; a bias-free two-layer ReLU net's kernel scales by c^2.
    let mut scaling = 0.0f64;
    for spec in [NetworkSpec::linear(4, 3), NetworkSpec::mlp(4, &[12], 3).with_bias(false)] {
        let batch = random_batch(&mut rng, 6, spec.input_dim, spec.classes);
        let idx: Vec<usize> = (0..6).collect();
        let a = random_params(&spec, &mut rng);
        for c in [0.5, 3.0, 17.0] {
            let b = a.with_values(a.values().iter().map(|v| c * v).collect()).unwrap();
            scaling = scaling.max(kernel_distance(&spec, &a, &b, &batch.inputs, &idx).unwrap().abs());
        }
    }

    let eye = GramBlockMatrix::from_dense(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let ones = GramBlockMatrix::from_dense(2, vec![1.0; 4]).unwrap();
    let hand = kernel_distance_grams(&eye, &ones).unwrap();
    let hand_err = (hand - (1.0 - 1.0 / 2f64.sqrt())).abs();

    let pass = self_dist <= 1e-12 && in_range && scaling <= 1e-10 && hand_err <= 1e-12;
    verdict(
        3,
        "kernel-distance properties",
        pass,
        format!("S(w,w) {self_dist:.1e}, range ok {in_range}, scaling {scaling:.1e}, hand case err {hand_err:.1e}"),
        start.elapsed(),
    );
}

fn blobs(seed: u64, m: usize, classes: usize, dim: usize) -> (LabeledBatch, LabeledBatch) {
    let ds = gen_blobs(seed, m, classes, dim, 3.0).unwrap();
    let (train, test) = train_test_split(&ds, m / 4, seed).unwrap();
    (train.examples, test.examples)
}

#[test]
fn criterion_04_linear_model_equivalence() {
    let start = Instant::now();
    let (train, test) = blobs(7, 400, 3, 5);
    let spec = NetworkSpec::linear(5, 3);
    let mut tc = TrainConfig::new(spec.clone(), 0.05, 5.0);
    tc.batch_size = 30;
    let run = Trainer::new(&tc, &train, Some(&test)).unwrap().train(11).unwrap();
    let base = run.checkpoints[0].params(&spec).unwrap();
    let lc = LinearizedConfig {
        order: TaylorOrder::First,
        loss: tc.loss,
        lr: 0.05,
        momentum: 0.9,
        epochs: 5.0,
        cadence: tc.cadence,
        batch_size: tc.batch_size,
        stream_seed: run.seed,
        path: JacobianPath::Recompute,
        ..LinearizedConfig::default()
    };
    let lin = train_linearized(&spec, &base, &train, &test, &lc).unwrap();
    let mut weight_err = 0.0f64;
    let mut compared = 0;
    for (epoch, delta) in &lin.snapshots {
        let w: Vec<f64> = base.values().iter().zip(delta).map(|(a, b)| a + b).collect();
        let ck = run.checkpoint_at(*epoch).unwrap();
        weight_err = weight_err.max(max_abs_diff(&w, &ck.weights));
        compared += 1;
    }
    let idx: Vec<usize> = (0..20).collect();
    let mut velocity = 0.0f64;
    let epochs = run.epochs();
    for pair in epochs.windows(2) {
        let dt = pair[1] - pair[0];
        velocity = velocity.max(kernel_velocity(&run, pair[0], dt, &train.inputs, &idx).unwrap().abs());
    }
    let tm = TaylorModel::new(&spec, base.clone(), TaylorOrder::First).unwrap();
    let j0 = tm.jacobian(train.inputs.row(0)).unwrap();
    let moved = tm.with_delta(lin.snapshots.last().unwrap().1.clone()).unwrap();
    let j1 = moved.jacobian(train.inputs.row(0)).unwrap();
    let jac_drift = max_abs_diff(j0.data(), j1.data());

    let pass = compared >= 15 && weight_err <= 1e-10 && velocity == 0.0 && jac_drift == 0.0;
    verdict(
        4,
        "linear-model equivalence",
        pass,
        format!("{compared} checkpoints, max weight diff {weight_err:.1e}, max kernel velocity {velocity:.1e}, jacobian drift {jac_drift:.1e}"),
        start.elapsed(),
    );
}

/// Logit gap after 10 full-batch GD steps of the network and of its
/// order-1 expansion from the same point.
fn linearization_gap(eta: f64) -> f64 {
    let (train, _) = blobs(5, 160, 3, 4);
    let spec = NetworkSpec::mlp(4, &[16], 3);
    let p0 = init_params(&spec, 9).unwrap();
    let mut w = p0.values().to_vec();
    let mut tm = TaylorModel::new(&spec, p0.clone(), TaylorOrder::First).unwrap();
    let mut delta = vec![0.0; w.len()];
    for _ in 0..10 {
        let (_, g) = loss_and_grad(&spec, &p0.with_values(w.clone()).unwrap(), &train, LossKind::CrossEntropy).unwrap();
        w.iter_mut().zip(g.values()).for_each(|(a, b)| *a -= eta * b);
        tm.set_delta(delta.clone()).unwrap();
        let (_, gl) = tm.loss_and_grad(&train, LossKind::CrossEntropy).unwrap();
        delta.iter_mut().zip(&gl).for_each(|(a, b)| *a -= eta * b);
    }
    tm.set_delta(delta).unwrap();
    let full = forward(&spec, &p0.with_values(w).unwrap(), &train.inputs).unwrap();
    let lin = tm.logits(&train.inputs).unwrap();
    full.data().iter().zip(lin.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn criterion_05_low_lr_linearization() {
    let start = Instant::now();
    let big = linearization_gap(1e-5);
    let small = linearization_gap(1e-6);
    let ratio = big / small;
    let pass = (80.0..=120.0).contains(&ratio);
    verdict(
        5,
        "low-lr convergence of linearization",
        pass,
        format!("gap {big:.3e} at 1e-5, {small:.3e} at 1e-6, ratio {ratio:.2}"),
        start.elapsed(),
    );
}

#[test]
fn criterion_06_escape_threshold_law() {
    let start = Instant::now();
    let mut law_ok = true;
    let mut cases = 0;
    for lambda in [0.5, 1.0, 4.0] {
        for c in [1.9, 2.1] {
            let eta = c / lambda;
            let obj = Quadratic::diagonal(&[lambda]);
            let mut w = vec![1.0];
            for _ in 0..500 {
                let (_, g) = obj.loss_and_grad(&w).unwrap();
                w[0] -= eta * g[0];
            }
            let converged = w[0].abs() < 1e-6;
            let predicted = gd_escape_threshold(eta, lambda) > 0.0;
            let general = escape_threshold(&obj, &[1.0], eta, &[lambda]).unwrap() < 0.0;
            law_ok &= converged == predicted && predicted == general;
            cases += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut sign_ok = 0;
    for i in 0..20 {
        let n = 6;
        let r = gaussian(&mut rng, n * n);
        let mut a = vec![0.0; n * n];
        for x in 0..n {
            for y in 0..n {
                a[x * n + y] = 0.5 * (r[x * n + y] + r[y * n + x]);
            }
        }
        let obj = Quadratic::new(n, a).unwrap();
        let w = gaussian(&mut rng, n);
        let (l0, g) = obj.loss_and_grad(&w).unwrap();
        let delta = if i % 2 == 0 { g.clone() } else { gaussian(&mut rng, n) };
        let eta = [0.05, 0.3, 1.0, 2.5][i % 4];
        let t = escape_threshold(&obj, &w, eta, &delta).unwrap();
        let stepped: Vec<f64> = w.iter().zip(&delta).map(|(a, b)| a - eta * b).collect();
        let change = obj.loss(&stepped).unwrap() - l0;
        if t.signum() == change.signum() {
            sign_ok += 1;
        }
    }
    let pass = law_ok && sign_ok == 20;
    verdict(
        6,
        "escape-threshold law",
        pass,
        format!("scalar law holds on {cases} cases: {law_ok}; one-step sign matches {sign_ok}/20"),
        start.elapsed(),
    );
}

#[test]
fn criterion_07_spectral_norm() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let (mut worst, mut max_iter, mut all_converged) = (0.0f64, 0, true);
    for i in 0..10 {
        let spec = match i % 3 {
            0 => NetworkSpec::mlp(3, &[6], 3),
            1 => NetworkSpec::mlp(2, &[5, 4], 2),
            _ => NetworkSpec::linear(4, 3),
        };
        let loss = if i % 2 == 0 { LossKind::CrossEntropy } else { LossKind::Mse };
        let batch = random_batch(&mut rng, 12, spec.input_dim, spec.classes);
        let p = random_params(&spec, &mut rng);
        let s = hessian_spectral_norm(&spec, &p, &batch, loss).unwrap();
        let obj = NetObjective::new(&spec, &batch, loss);
        let h = dense_hessian(&obj, p.values());
        let sym = (&h + h.transpose()) * 0.5;
        let exact = SymmetricEigen::new(sym).eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max((s.lambda - exact).abs() / exact);
        max_iter = max_iter.max(s.iterations);
        all_converged &= s.converged;
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-3 && max_iter <= 200 && all_converged && elapsed < Duration::from_secs(120);
    verdict(
        7,
        "spectral norm",
        pass,
        format!("max rel err {worst:.2e}, max iterations {max_iter}, all converged {all_converged}"),
        elapsed,
    );
}

#[test]
fn criterion_08_barrier_analytics() {
    let start = Instant::now();
    let (train, test) = blobs(8, 200, 3, 4);
    let spec = NetworkSpec::mlp(4, &[8], 3);
    let a = init_params(&spec, 1).unwrap();
    let b = init_params(&spec, 2).unwrap();
    let same = error_barrier(&spec, &a, &a, &train, &test, LossKind::CrossEntropy, 11).unwrap();
    let zero = same.barriers.train_loss.abs().max(same.barriers.train_err.abs()).max(same.barriers.test_err.abs());

    let (alphas, values) = path_profile(&[-1.0], &[1.0], 21, |w| Ok((w[0] * w[0] - 1.0).powi(2))).unwrap();
    let mid = alphas.iter().position(|&x| x == 0.5).unwrap();
    let well = values.iter().cloned().fold(f64::MIN, f64::max) - 0.5 * (values[0] + values[20]);
    let well_err = (well - 1.0).abs().max((values[mid] - 1.0).abs());

    let direct = |p: &ParamVector, batch: &LabeledBatch| {
        let logits = forward(&spec, p, &batch.inputs).unwrap();
        let pred = argmax_rows(logits.data(), spec.classes);
        let err = pred.iter().zip(&batch.labels).filter(|(x, y)| x != y).count() as f64 / batch.len() as f64;
        (loss_value(LossKind::CrossEntropy, logits.data(), spec.classes, &batch.labels), err)
    };
    let prof = error_barrier(&spec, &a, &b, &train, &test, LossKind::CrossEntropy, 11).unwrap();
    let mut endpoint = 0.0f64;
    // alpha = 0 is the second endpoint
    for (i, p) in [(0, &b), (10, &a)] {
        let (l, _) = direct(p, &train);
        let (_, e) = direct(p, &test);
        endpoint = endpoint.max((prof.train_loss[i] - l).abs()).max((prof.test_err[i] - e).abs());
    }
    let c = init_params(&spec, 3).unwrap();
    let req = PlaneRequest { parent: &a, child_a: &b, child_b: &c, grid: 5, tangent_anchor: None, trajectory: &[] };
    let scan = plane_scan(&spec, &req, &test).unwrap();
    for (u, v, p) in [(0.0, 0.0, &a), (1.0, 0.0, &b), (0.0, 1.0, &c)] {
        let (_, e) = direct(p, &test);
        endpoint = endpoint.max((scan.cell(u, v).unwrap().test_error - e).abs());
    }

    let pass = zero == 0.0 && well_err <= 1e-10 && endpoint <= 1e-12;
    verdict(
        8,
        "barrier analytics",
        pass,
        format!("identical endpoints barrier {zero:.1e}, double well err {well_err:.1e}, endpoint cells err {endpoint:.1e}"),
        start.elapsed(),
    );
}

const TREND_SEEDS: u64 = 5;

fn trend_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.train.seeds = (0..TREND_SEEDS).collect();
    cfg.output.save_checkpoints = false;
    cfg
}

fn megaplot() -> &'static (Report, Duration) {
    static CELL: OnceLock<(Report, Duration)> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let mut cfg = trend_config();
        cfg.spawn.epochs = vec![0.0, 1.0, 2.0, 5.0, 10.0, 20.0];
        (run_megaplot(&cfg).unwrap(), start.elapsed())
    })
}

fn lin_sweep() -> &'static (Report, Duration) {
    static CELL: OnceLock<(Report, Duration)> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let mut cfg = trend_config();
        cfg.linearized.base_epochs = vec![0.0, 2.0, 5.0, 10.0, 20.0];
        (run_linearization_sweep(&cfg).unwrap(), start.elapsed())
    })
}

fn row_value(rows: &Value, key_name: &str, key: f64, field: &str) -> f64 {
    rows.as_array()
        .unwrap()
        .iter()
        .find(|r| r[key_name].as_f64() == Some(key))
        .and_then(|r| r[field].as_f64())
        .unwrap_or(f64::NAN)
}

#[test]
fn criterion_09_chaos_to_stability() {
    let (report, elapsed) = megaplot();
    let b = &report.summary["B"];
    let e = &report.summary["E"];
    let epochs = [0.0, 1.0, 5.0, 10.0];
    let barriers: Vec<f64> = epochs.iter().map(|&t| row_value(b, "spawn_epoch", t, "barrier_test_err_mean")).collect();
    let rho = spearman(&epochs, &barriers).unwrap_or(f64::NAN);
    let fn0 = row_value(e, "spawn_epoch", 0.0, "fn_dist_mean");
    let fn10 = row_value(e, "spawn_epoch", 10.0, "fn_dist_mean");
    let n = row_value(b, "spawn_epoch", 0.0, "barrier_test_err_n");
    let pass = n >= TREND_SEEDS as f64
        && rho <= -0.8
        && barriers[0] > barriers[3]
        && fn10 < fn0
        && *elapsed < Duration::from_secs(15 * 60);
    verdict(
        9,
        "chaos-to-stability trend",
        pass,
        format!("mean barriers {barriers:.4?} at spawn {epochs:?}, spearman {rho:.2}, fn dist {fn0:.3} -> {fn10:.3}, {n} seeds"),
        *elapsed,
    );
}

fn by_base(report: &Report, field: &str, bases: &[f64]) -> Vec<f64> {
    bases.iter().map(|&t| row_value(&report.summary["by_base_epoch"], "base_epoch", t, field)).collect()
}

#[test]
fn criterion_10_data_dependent_ntk_trend() {
    let (report, elapsed) = lin_sweep();
    let bases = [0.0, 2.0, 5.0, 10.0, 20.0];
    let err = by_base(report, "lin_test_err_mean", &bases);
    let rho = spearman(&bases, &err).unwrap_or(f64::NAN);
    let pass = rho <= -0.6 && *elapsed < Duration::from_secs(20 * 60);
    verdict(
        10,
        "data-dependent ntk trend",
        pass,
        format!("mean linearized test err {err:.4?} at base {bases:?}, spearman {rho:.2}, {TREND_SEEDS} seeds"),
        *elapsed,
    );
}

#[test]
fn criterion_11_nonlinear_advantage_trend() {
    let (sweep, t1) = lin_sweep();
    let (mega, t2) = megaplot();
    let bases = [0.0, 2.0, 5.0, 10.0, 20.0];
    let adv = by_base(sweep, "nonlin_advantage_mean", &bases);
    let barrier: Vec<f64> =
        bases.iter().map(|&t| row_value(&mega.summary["B"], "spawn_epoch", t, "barrier_test_err_mean")).collect();
    let r = pearson(&adv, &barrier).unwrap_or(f64::NAN);
    let pass = adv[0] > adv[3] && r > 0.0;
    verdict(
        11,
        "nonlinear-advantage trend",
        pass,
        format!("mean advantage {adv:.4?} at base {bases:?}, barrier {barrier:.4?}, pearson {r:.2}"),
        *t1 + *t2,
    );
}

#[test]
fn criterion_12_function_distance_normalization() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1212);
    let n = 10_000;
    let mut worst = 0.0f64;
    let mut draws = Vec::new();
    for (k, p, q) in [(2usize, 0.3, 0.3), (10, 0.2, 0.4), (5, 0.5, 0.1), (3, 0.25, 0.25)] {
        let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..k as u32)).collect();
        let predict = |err: f64, rng: &mut ChaCha8Rng| -> Vec<u32> {
            labels
                .iter()
                .map(|&y| {
                    if rng.random::<f64>() < err {
                        (y + rng.random_range(1..k as u32)) % k as u32
                    } else {
                        y
                    }
                })
                .collect()
        };
        let a = predict(p, &mut rng);
        let b = predict(q, &mut rng);
        let dist = function_distance_from_predictions(&a, &b, &labels, k).unwrap();
        worst = worst.max((dist - 1.0).abs());
        draws.push(dist);
    }

    let labels = vec![0u32; 4];
    let k2 = function_distance_from_predictions(&[0, 0, 1, 1], &[0, 1, 0, 1], &labels, 2).unwrap();
    // 900 examples, 90 errors each, 10 shared errors with different wrong
    // classes: disagreement 170 / 900.
    let labels = vec![0u32; 900];
    let mut a = vec![0u32; 900];
    let mut b = vec![0u32; 900];
    a[..90].iter_mut().for_each(|v| *v = 1);
    b[80..170].iter_mut().for_each(|v| *v = 1);
    b[80..90].iter_mut().for_each(|v| *v = 2);
    let k10 = function_distance_from_predictions(&a, &b, &labels, 10).unwrap();
    let z10 = disagreement_normalizer(0.1, 0.1, 10);
    let hand = (k2 - 1.0).abs().max((k10 - 1.0).abs()).max((z10 - 170.0 / 900.0).abs());

    let pass = worst <= 0.05 && hand <= 1e-10;
    verdict(
        12,
        "function-distance normalization",
        pass,
        format!("monte carlo distances {draws:.3?}, hand cases err {hand:.1e}"),
        start.elapsed(),
    );
}

fn small_experiment() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data.n_train = 120;
    cfg.data.n_test = 80;
    cfg.model.hidden = vec![12];
    cfg.optim.batch_size = 20;
    cfg.train.epochs = 4.0;
    cfg.train.seeds = vec![3, 4];
    cfg.spawn.epochs = vec![0.0, 2.0];
    cfg.metrics.kernel_subsample = 12;
    cfg.metrics.alphas = 5;
    cfg
}

#[test]
fn criterion_13_reproducibility() {
    let start = Instant::now();
    let cfg = small_experiment();
    let dir = tempfile::tempdir().unwrap();
    let first = run_megaplot(&cfg).unwrap();
    let second = run_megaplot(&cfg).unwrap();
    first.write_to(&dir.path().join("a")).unwrap();
    second.write_to(&dir.path().join("b")).unwrap();
    let mut csv_same = !first.panels.is_empty();
    for name in first.panels.keys() {
        let rel = format!("panels/{name}.csv");
        let x = std::fs::read(dir.path().join("a").join(&rel)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(&rel)).unwrap();
        csv_same &= x == y;
    }

    let (train, test) = blobs(13, 300, 3, 4);
    let mut tc = TrainConfig::new(NetworkSpec::mlp(4, &[16], 3), 0.05, 3.0);
    tc.batch_size = 25;
    let trainer = Trainer::new(&tc, &train, Some(&test)).unwrap();
    let run = trainer.train(21).unwrap();
    let mut resumed_same = true;
    let mut compared = 0;
    for start_at in [1, run.checkpoints.len() / 2] {
        let saved = dir.path().join("resume.ckpt");
        run.checkpoints[start_at].save(&saved).unwrap();
        let loaded = dllab_core::trainer::Checkpoint::load(&saved).unwrap();
        let resumed = trainer.resume(&loaded).unwrap();
        let tail = &run.checkpoints[start_at..];
        resumed_same &= resumed.checkpoints.len() == tail.len();
        for (x, y) in tail.iter().zip(&resumed.checkpoints) {
            resumed_same &= x.encode() == y.encode();
            compared += 1;
        }
    }

    let pass = csv_same && resumed_same;
    verdict(
        13,
        "reproducibility",
        pass,
        format!("{} panels byte-identical: {csv_same}; {compared} resumed checkpoints bit-exact: {resumed_same}", first.panels.len()),
        start.elapsed(),
    );
}

/// Mean share of a random direction captured by the centroid span.
fn random_overlap_baseline(centroids: &[Vec<f64>], d: usize, rng: &mut ChaCha8Rng) -> f64 {
    let trials = 200;
    (0..trials).map(|_| subspace_overlap(&gaussian(rng, d), centroids)).sum::<f64>() / trials as f64
}

#[test]
fn criterion_14_centroid_hessian_overlap() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1414);

    // Centred inputs with every squared norm below 1, so the bias block
    // carries the top curvature.
    let (train, test) = blobs(14, 400, 3, 4);
    let dim = train.input_dim();
    let m = train.len();
    let mut mean = vec![0.0; dim];
    for i in 0..m {
        mean.iter_mut().zip(train.inputs.row(i)).for_each(|(a, b)| *a += b / m as f64);
    }
    let mut xs: Vec<f64> = (0..m).flat_map(|i| train.inputs.row(i).iter().zip(&mean).map(|(a, b)| a - b).collect::<Vec<_>>()).collect();
    let radius = xs.chunks(dim).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
    xs.iter_mut().for_each(|v| *v /= 1.05 * radius);
    let centred = LabeledBatch::new(Tensor::new(vec![m, dim], xs).unwrap(), train.labels.clone(), 3).unwrap();
    let spec = NetworkSpec::linear(dim, 3);
    let mut tc = TrainConfig::new(spec.clone(), 0.1, 5.0);
    tc.loss = LossKind::Mse;
    let run = Trainer::new(&tc, &centred, None).unwrap().train(2).unwrap();
    let linear = centroid_hessian_overlap(&spec, &run.final_params().unwrap(), &centred, LossKind::Mse).unwrap();

    let spec = NetworkSpec::mlp(dim, &[16], 3);
    let tc = TrainConfig::new(spec.clone(), 0.05, 10.0);
    let run = Trainer::new(&tc, &train, Some(&test)).unwrap().train(3).unwrap();
    let params = run.final_params().unwrap();
    let mlp = centroid_hessian_overlap(&spec, &params, &train, LossKind::CrossEntropy).unwrap();
    let d = params.len();
    let mu = logit_centroids(&spec, &params, &train.inputs).unwrap();
    let centroids: Vec<Vec<f64>> = mu.data().chunks(d).map(<[f64]>::to_vec).collect();
    let baseline = random_overlap_baseline(&centroids, d, &mut rng);
    let k_over_d = 3.0 / d as f64;

    let pass = (linear.overlap - 1.0).abs() <= 1e-6 && linear.converged && mlp.overlap >= 3.0 * baseline && mlp.converged;
    verdict(
        14,
        "centroid-hessian overlap",
        pass,
        format!(
            "linear overlap {:.9}, mlp overlap {:.3} vs random baseline {baseline:.4} (K/d {k_over_d:.4})",
            linear.overlap, mlp.overlap
        ),
        start.elapsed(),
    );
}
