//! Landscape and tangent-kernel measurements on trained networks.

mod barrier;
mod curvature;
mod distance;
mod export;
mod kernel;
mod plane;

pub use barrier::{
    alpha_grid, barrier_of, error_barrier, interpolate, path_profile, BarrierProfile, Barriers, DEFAULT_ALPHAS,
};
pub use curvature::{
    centroid_alignment, centroid_hessian_overlap, centroid_residuals, escape_threshold, gd_escape_threshold,
    hessian_spectral_norm, logit_centroids, orthonormal_basis, power_iteration, spectral_norm_of, subspace_overlap,
    top_eigenpairs, EigenEstimate, Overlap, SpectralNorm, Stopping, POWER_MAX_ITER, POWER_TOL,
};
pub use distance::{
    disagreement_normalizer, function_distance, function_distance_from_predictions, pattern_distance, relu_distance,
    relu_distance_per_layer, weight_distance,
};
pub use export::{decode_predictions, encode_predictions, export_predictions, read_predictions, PREDICTIONS_MAGIC};
pub use kernel::{
    kernel_distance, kernel_distance_grams, kernel_velocity, ntk_gram, ntk_gram_with_cap, GramBlockMatrix, GRAM_CAP,
};
pub use plane::{
    plane_coords, plane_point, plane_scan, Plane, PlaneCell, PlaneRequest, PlaneScan, Projection, PLANE_CSV_HEADER,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{evaluate, Objective, Quadratic};
    use crate::data::{gen_blobs, LabeledBatch};
    use crate::error::Error;
    use crate::loss::LossKind;
    use crate::model::{init_params, NetworkSpec};
    use crate::params::{norm, ParamVector};
    use crate::tensor::Tensor;

    fn xs() -> Tensor<f64> {
        Tensor::from_rows(&[vec![1.0, 2.0, -1.0], vec![0.5, -0.3, 2.0], vec![-1.5, 0.2, 0.7]]).unwrap()
    }

    #[test]
    fn linear_gram_blocks_are_scaled_identities() {
        let spec = NetworkSpec::linear(3, 2).with_bias(false);
        let p = init_params(&spec, 1).unwrap();
        let x = xs();
        let g = ntk_gram(&spec, &p, &x, &[0, 1, 2]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let ip: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
                let blk = g.block(i, j);
                assert_eq!(blk, vec![ip, 0.0, 0.0, ip]);
            }
        }
    }

    #[test]
    fn single_logit_gram_is_squared_jacobian_norm() {
        let spec = NetworkSpec::mlp(3, &[4], 1);
        let p = init_params(&spec, 2).unwrap();
        let x = xs();
        let g = ntk_gram(&spec, &p, &x, &[1]).unwrap();
        let j = crate::autodiff::logit_jacobian(&spec, &p, x.row(1)).unwrap();
        assert!((g.get(0, 0) - norm(j.data()).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn gram_memory_guard() {
        let spec = NetworkSpec::linear(3, 2);
        let p = init_params(&spec, 2).unwrap();
        assert!(matches!(
            ntk_gram_with_cap(&spec, &p, &xs(), &[0, 1, 2], 4),
            Err(Error::MemoryGuard { size: 6, cap: 4 })
        ));
    }

    #[test]
    fn hand_computed_kernel_distance() {
        let a = GramBlockMatrix::from_dense(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = GramBlockMatrix::from_dense(2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let expected = 1.0 - 2.0 / (2f64.sqrt() * 2.0);
        assert!((kernel_distance_grams(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert_eq!(kernel_distance_grams(&a, &a).unwrap(), 0.0);
        let z = GramBlockMatrix::from_dense(2, vec![0.0; 4]).unwrap();
        assert!(matches!(kernel_distance_grams(&a, &z), Err(Error::DegenerateKernel)));
    }

    #[test]
    fn kernel_distance_ignores_linear_weight_scale() {
        let spec = NetworkSpec::linear(3, 2);
        let p = init_params(&spec, 3).unwrap();
        let q = p.with_values(p.values().iter().map(|v| 3.5 * v).collect()).unwrap();
        assert!(kernel_distance(&spec, &p, &q, &xs(), &[0, 1, 2]).unwrap().abs() < 1e-10);
    }

    #[test]
    fn identical_endpoints_have_no_barrier() {
        let ds = gen_blobs(1, 40, 2, 3, 2.0).unwrap().examples;
        let spec = NetworkSpec::mlp(3, &[5], 2);
        let p = init_params(&spec, 1).unwrap();
        let prof = error_barrier(&spec, &p, &p, &ds, &ds, LossKind::CrossEntropy, DEFAULT_ALPHAS).unwrap();
        assert_eq!(prof.barriers, Barriers { train_loss: 0.0, train_err: 0.0, test_err: 0.0 });
        assert_eq!(prof.alphas.len(), 25);
    }

    #[test]
    fn endpoints_match_direct_evaluation() {
        let ds = gen_blobs(1, 40, 2, 3, 2.0).unwrap().examples;
        let spec = NetworkSpec::mlp(3, &[5], 2);
        let (a, b) = (init_params(&spec, 1).unwrap(), init_params(&spec, 2).unwrap());
        let prof = error_barrier(&spec, &a, &b, &ds, &ds, LossKind::CrossEntropy, 9).unwrap();
        let ea = evaluate(&spec, &a, &ds, LossKind::CrossEntropy).unwrap();
        let eb = evaluate(&spec, &b, &ds, LossKind::CrossEntropy).unwrap();
        assert_eq!(prof.train_loss[8], ea.loss);
        assert_eq!(prof.train_loss[0], eb.loss);
        assert!(prof.barriers.train_loss >= 0.0);
    }

    #[test]
    fn double_well_barrier() {
        let (alphas, vals) = path_profile(&[1.0], &[-1.0], 25, |w| Ok((w[0] * w[0] - 1.0).powi(2))).unwrap();
        assert_eq!(alphas[12], 0.5);
        assert!((barrier_of(&vals) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn convex_path_barrier_is_not_positive() {
        let q = Quadratic::new(2, vec![2.0, 0.5, 0.5, 1.0]).unwrap();
        let (_, vals) = path_profile(&[1.0, 0.0], &[-1.0, 0.0], 25, |w| q.loss(w)).unwrap();
        assert!(barrier_of(&vals) <= 1e-15);
    }

    #[test]
    fn sign_flipped_first_layer_gives_complementary_patterns() {
        let spec = NetworkSpec::mlp(3, &[6], 2).with_bias(false);
        let a = init_params(&spec, 4).unwrap();
        let mut w = a.values().to_vec();
        for v in &mut w[..18] {
            *v = -*v;
        }
        let b = a.with_values(w).unwrap();
        assert_eq!(relu_distance_per_layer(&spec, &a, &b, &xs()).unwrap(), vec![1.0]);
        assert_eq!(relu_distance(&spec, &a, &a, &xs()).unwrap(), 0.0);
    }

    #[test]
    fn normalizer_hand_cases() {
        let labels = vec![0u32; 4];
        // p = p' = 0.5 with K = 2 and half the predictions disagreeing
        let a = [0, 0, 1, 1];
        let b = [0, 1, 0, 1];
        assert!((disagreement_normalizer(0.5, 0.5, 2) - 0.5).abs() < 1e-15);
        assert!((function_distance_from_predictions(&a, &b, &labels, 2).unwrap() - 1.0).abs() < 1e-12);
        let z = disagreement_normalizer(0.1, 0.1, 10);
        assert!((z - (0.09 + 0.09 + 0.01 * 8.0 / 9.0)).abs() < 1e-15);
        assert!((0.188_888_888_888_888_9 / z - 1.0).abs() < 1e-10);
    }

    #[test]
    fn perfect_classifiers() {
        let labels = [0u32, 1, 1];
        assert_eq!(function_distance_from_predictions(&labels, &labels, &labels, 2).unwrap(), 0.0);
        assert_eq!(function_distance_from_predictions(&[0, 1, 1], &[0, 1, 1], &[0, 1, 1], 3).unwrap(), 0.0);
        let k1 = [0u32, 0, 0];
        assert!(matches!(
            function_distance_from_predictions(&k1, &[0, 0, 1], &k1, 2),
            Ok(_)
        ));
    }

    #[test]
    fn weight_distance_basics() {
        assert_eq!(weight_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(weight_distance(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn centroid_alignment_self_is_one() {
        let spec = NetworkSpec::mlp(3, &[6], 2);
        let a = init_params(&spec, 4).unwrap();
        assert!((centroid_alignment(&spec, &a, &a, &xs()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn head_negation_flips_only_lower_layer_gradients() {
        let spec = NetworkSpec::mlp(3, &[6], 1).with_bias(false);
        let a = init_params(&spec, 9).unwrap();
        let mut w = a.values().to_vec();
        for v in &mut w[18..] {
            *v = -*v;
        }
        let b = a.with_values(w).unwrap();
        let mu = logit_centroids(&spec, &a, &xs()).unwrap();
        let lower = norm(&mu.data()[..18]).powi(2);
        let head = norm(&mu.data()[18..]).powi(2);
        let expected = (head - lower) / (head + lower);
        assert!((centroid_alignment(&spec, &a, &b, &xs()).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn disjoint_units_give_orthogonal_centroids() {
        let spec = NetworkSpec::mlp(1, &[2], 1).with_bias(false);
        let a = ParamVector::new(spec.layout(), vec![1.0, -1.0, 1.0, 0.0]).unwrap();
        let b = ParamVector::new(spec.layout(), vec![-1.0, 1.0, 0.0, 1.0]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(centroid_alignment(&spec, &a, &b, &x).unwrap().abs() < 1e-10);
        let dead = ParamVector::new(spec.layout(), vec![-1.0, -1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(centroid_alignment(&spec, &a, &dead, &x), Err(Error::ZeroCentroid(0))));
    }

    #[test]
    fn residuals_average_to_zero() {
        let spec = NetworkSpec::mlp(3, &[4], 2);
        let p = init_params(&spec, 1).unwrap();
        let r = centroid_residuals(&spec, &p, &xs()).unwrap();
        let d = p.len();
        for k in 0..2 {
            for j in 0..d {
                let s: f64 = (0..3).map(|n| r.data()[(n * 2 + k) * d + j]).sum();
                assert!(s.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spectral_norm_of_quadratics() {
        let s = spectral_norm_of(&Quadratic::diagonal(&[3.0, 1.0]), &[0.2, -0.4], 0).unwrap();
        assert!((s.lambda - 3.0).abs() < 1e-3 && s.converged && s.iterations <= 200);
        let s = spectral_norm_of(&Quadratic::diagonal(&[1.0; 5]), &[0.0; 5], 0).unwrap();
        assert!((s.lambda - 1.0).abs() < 1e-9);
        let s = spectral_norm_of(&Quadratic::diagonal(&[-5.0, 1.0]), &[0.0; 2], 1).unwrap();
        assert!((s.lambda - 5.0).abs() < 1e-3);
    }

    #[test]
    fn deflation_finds_second_eigenvalue() {
        let q = Quadratic::diagonal(&[4.0, 2.0, 0.5]);
        let pairs = top_eigenpairs(&q, &[0.0; 3], 2, 3, Stopping::Residual(1e-9), 2000).unwrap();
        assert!((pairs[0].value - 4.0).abs() < 1e-6);
        assert!((pairs[1].value - 2.0).abs() < 1e-6);
    }

    #[test]
    fn escape_threshold_hand_case() {
        let q = Quadratic::diagonal(&[1.0]);
        let e = escape_threshold(&q, &[1.0], 0.1, &[1.0]).unwrap();
        assert!((e - 0.1 * (0.1 - 2.0)).abs() < 1e-9);
        assert_eq!(escape_threshold(&q, &[1.0], 0.0, &[1.0]).unwrap(), 0.0);
        assert_eq!(gd_escape_threshold(0.0, 7.0), 2.0);
        assert!(matches!(escape_threshold(&q, &[0.0], 0.1, &[1.0]), Err(Error::ZeroGradient)));
    }

    #[test]
    fn escape_threshold_is_scaled_loss_change_on_quadratics() {
        let q = Quadratic::new(2, vec![3.0, 1.0, 1.0, 2.0]).unwrap();
        let w = [0.7, -0.4];
        let delta = [0.3, 0.9];
        let eta = 0.8;
        let (l0, g) = q.loss_and_grad(&w).unwrap();
        let l1 = q.loss(&[w[0] - eta * delta[0], w[1] - eta * delta[1]]).unwrap();
        let e = escape_threshold(&q, &w, eta, &delta).unwrap();
        let gg = g[0] * g[0] + g[1] * g[1];
        assert!((e * gg / 2.0 - (l1 - l0)).abs() < 1e-8);
    }

    #[test]
    fn full_span_overlap_is_one() {
        let v = [0.3, -1.2, 0.5];
        let span = vec![vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 2.0]];
        assert!((subspace_overlap(&v, &span) - 1.0).abs() < 1e-12);
        assert!((subspace_overlap(&v, &[vec![0.0, 0.0, 1.0]]) - 0.25 / v.iter().map(|x| x * x).sum::<f64>()).abs() < 1e-12);
    }

    fn plane_fixture() -> (NetworkSpec, LabeledBatch, ParamVector, ParamVector, ParamVector) {
        let ds = gen_blobs(5, 60, 3, 4, 2.0).unwrap().examples;
        let spec = NetworkSpec::mlp(4, &[6], 3);
        let (p, a, b) = (init_params(&spec, 1).unwrap(), init_params(&spec, 2).unwrap(), init_params(&spec, 3).unwrap());
        (spec, ds, p, a, b)
    }

    #[test]
    fn plane_anchor_cells_match_networks() {
        let (spec, ds, p, a, b) = plane_fixture();
        let traj = vec![plane_point(p.values(), a.values(), b.values(), 0.25, -0.3)];
        let req = PlaneRequest { parent: &p, child_a: &a, child_b: &b, grid: 9, tangent_anchor: None, trajectory: &traj };
        let scan = plane_scan(&spec, &req, &ds).unwrap();
        assert_eq!(scan.cells.len(), 81);
        for (u, v, w) in [(0.0, 0.0, &p), (1.0, 0.0, &a), (0.0, 1.0, &b)] {
            let direct = evaluate(&spec, w, &ds, LossKind::CrossEntropy).unwrap().error;
            assert_eq!(scan.cell(u, v).unwrap().test_error, direct);
        }
        assert_eq!(scan.cell(1.0, 0.0).unwrap().fn_dist, 0.0);
        let pr = &scan.projections[0];
        assert!((pr.u - 0.25).abs() < 1e-10 && (pr.v + 0.3).abs() < 1e-10 && pr.residual < 1e-10);
        assert!(scan.to_csv().starts_with("u,v,test_error,fn_dist,taylor_error\n"));
    }

    #[test]
    fn collinear_anchors_rejected() {
        let (spec, ds, p, a, _) = plane_fixture();
        let mid = p.with_values(plane_point(p.values(), a.values(), a.values(), 0.5, 0.0)).unwrap();
        let req = PlaneRequest { parent: &p, child_a: &a, child_b: &mid, grid: 5, tangent_anchor: None, trajectory: &[] };
        assert!(matches!(plane_scan(&spec, &req, &ds), Err(Error::DegeneratePlane)));
    }

    #[test]
    fn linear_model_tangent_plane_is_exact() {
        let ds = gen_blobs(5, 60, 3, 4, 2.0).unwrap().examples;
        let spec = NetworkSpec::linear(4, 3);
        let (p, a, b) = (init_params(&spec, 1).unwrap(), init_params(&spec, 2).unwrap(), init_params(&spec, 3).unwrap());
        let req = PlaneRequest { parent: &p, child_a: &a, child_b: &b, grid: 5, tangent_anchor: Some(&a), trajectory: &[] };
        let scan = plane_scan(&spec, &req, &ds).unwrap();
        for c in &scan.cells {
            assert_eq!(c.taylor_error, Some(c.test_error));
        }
    }

    #[test]
    fn predictions_round_trip() {
        let (spec, ds, p, _, _) = plane_fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.dlpr");
        let probs = export_predictions(&spec, &p, &ds, &path).unwrap();
        let back = read_predictions(&path).unwrap();
        assert_eq!(back, probs);
        assert_eq!(back.rows(), ds.len());
        for r in 0..back.rows() {
            assert!((back.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
