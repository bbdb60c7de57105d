use nalgebra::DVector;

/// Proximal map of `v -> (sigma/2) |v|_1^2`: `argmin_v 1/2 |v - w|^2 + sigma/2 |v|_1^2`.
///
/// The minimizer is a soft threshold at `t = sigma |v|_1`, i.e. the root of
/// `t = sigma * sum_i max(|w_i| - t, 0)`, found exactly from the sorted magnitudes.
pub fn prox_squared_l1(w: &DVector<f64>, sigma: f64) -> DVector<f64> {
    if sigma <= 0.0 {
        return w.clone();
    }
    let t = threshold(w, sigma);
    w.map(|x| x.signum() * (x.abs() - t).max(0.0))
}

fn threshold(w: &DVector<f64>, sigma: f64) -> f64 {
    let mut mags: Vec<f64> = w.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut partial = 0.0;
    let mut t = 0.0;
    for (k, &a) in mags.iter().enumerate() {
        if a <= 0.0 {
            break;
        }
        partial += a;
        let cand = sigma * partial / (1.0 + sigma * (k + 1) as f64);
        // cand is the root if exactly the k+1 largest entries exceed it
        let next = mags.get(k + 1).copied().unwrap_or(0.0);
        t = cand;
        if cand >= next {
            break;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn objective(v: &DVector<f64>, w: &DVector<f64>, sigma: f64) -> f64 {
        0.5 * (v - w).norm_squared() + 0.5 * sigma * v.lp_norm(1).powi(2)
    }

    #[test]
    fn zero_weight_is_identity() {
        let w = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_eq!(prox_squared_l1(&w, 0.0), w);
    }

    #[test]
    fn single_entry_closed_form() {
        let w = DVector::from_vec(vec![3.0]);
        let v = prox_squared_l1(&w, 2.0);
        assert!((v[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn worked_example() {
        // sorted |w| = 4, 1; with sigma = 1 the threshold 4/2 = 2 exceeds 1, so only one survives
        let w = DVector::from_vec(vec![1.0, -4.0]);
        let v = prox_squared_l1(&w, 1.0);
        assert_eq!(v, DVector::from_vec(vec![0.0, -2.0]));
    }

    #[test]
    fn brute_force_grid_search_in_two_dimensions() {
        let w = DVector::from_vec(vec![0.8, -0.5]);
        let sigma = 0.7;
        let v = prox_squared_l1(&w, sigma);
        let best = objective(&v, &w, sigma);
        let n = 801;
        for i in 0..n {
            for j in 0..n {
                let c = DVector::from_vec(vec![
                    -1.0 + 2.0 * i as f64 / (n - 1) as f64,
                    -1.0 + 2.0 * j as f64 / (n - 1) as f64,
                ]);
                assert!(objective(&c, &w, sigma) >= best - 1e-14);
            }
        }
    }

    proptest! {
        #[test]
        fn optimality_against_random_perturbations(
            w in proptest::collection::vec(-5.0f64..5.0, 1..14),
            sigma in 0.0f64..10.0,
            dirs in proptest::collection::vec(-1.0f64..1.0, 14),
        ) {
            let w = DVector::from_vec(w);
            let v = prox_squared_l1(&w, sigma);
            let f = objective(&v, &w, sigma);
            for scale in [1e-1, 1e-3, 1e-6] {
                let d = DVector::from_fn(w.len(), |i, _| dirs[i] * scale);
                prop_assert!(objective(&(&v + &d), &w, sigma) >= f - 1e-12);
            }
        }

        #[test]
        fn shrinks_and_preserves_signs(
            w in proptest::collection::vec(-5.0f64..5.0, 1..14),
            sigma in 0.0f64..10.0,
        ) {
            let w = DVector::from_vec(w);
            let v = prox_squared_l1(&w, sigma);
            for i in 0..w.len() {
                prop_assert!(v[i].abs() <= w[i].abs());
                prop_assert!(v[i] == 0.0 || v[i].signum() == w[i].signum());
            }
        }

        #[test]
        fn nonexpansive(
            a in proptest::collection::vec(-5.0f64..5.0, 5),
            b in proptest::collection::vec(-5.0f64..5.0, 5),
            sigma in 0.0f64..10.0,
        ) {
            let a = DVector::from_vec(a);
            let b = DVector::from_vec(b);
            let d = (prox_squared_l1(&a, sigma) - prox_squared_l1(&b, sigma)).norm();
            prop_assert!(d <= (a - b).norm() + 1e-12);
        }
    }
}
