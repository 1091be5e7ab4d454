//! Occupancy-style BCE on signed distances plus gradient regularizers.

use crate::geom::Vec3;

const LOG_FLOOR: f64 = 1e-12;

/// `S(x) = 1 / (1 + exp(x/σ))`: close to 1 inside solids, 0 outside.
pub fn squash(d: f64, sigma: f64) -> f64 {
    let x = d / sigma;
    if x >= 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// BCE between squashed prediction and target, with both logs floored at `1e-12`.
/// Returns the loss and its derivative with respect to `d_p`.
pub fn loss_bce(d_p: f64, d_gt: f64, sigma: f64) -> (f64, f64) {
    let x = d_p / sigma;
    let t = squash(d_gt, sigma);
    let floor = -LOG_FLOOR.ln();
    // −log S(d_p) = softplus(x), −log(1 − S(d_p)) = softplus(−x)
    let (a, b) = (softplus(x), softplus(-x));
    let s_p = squash(d_p, sigma);
    let (la, ga) = if a < floor { (a, 1.0 - s_p) } else { (floor, 0.0) };
    let (lb, gb) = if b < floor { (b, -s_p) } else { (floor, 0.0) };
    let loss = t * la + (1.0 - t) * lb;
    let grad = (t * ga + (1.0 - t) * gb) / sigma;
    (loss, grad)
}

/// `(1 − ‖g‖)²` and its gradient with respect to `g`.
pub fn loss_eikonal(g: Vec3) -> (f64, Vec3) {
    let n = g.norm();
    let loss = (1.0 - n) * (1.0 - n);
    let grad = if n > 0.0 { g * (-2.0 * (1.0 - n) / n) } else { Vec3::ZERO };
    (loss, grad)
}

/// `‖g − g′‖²` and its gradients with respect to `g` and `g′`.
pub fn loss_smooth(g: Vec3, g_eps: Vec3) -> (f64, Vec3, Vec3) {
    let d = g - g_eps;
    (d.norm_squared(), d * 2.0, d * -2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_closed_forms() {
        let (l, g) = loss_bce(0.0, 0.0, 0.025);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(g.abs() < 1e-15);
        let s = 0.025;
        assert!(loss_bce(-10.0 * s, -10.0 * s, s).0 < 1e-3);
    }

    #[test]
    fn bce_minimized_at_target() {
        let sigma = 0.025;
        for &d_gt in &[-0.05, -0.01, 0.0, 0.013, 0.04] {
            let step = sigma / 100.0;
            let best = (-800..=800)
                .map(|i| i as f64 * step)
                .min_by(|a, b| loss_bce(*a, d_gt, sigma).0.total_cmp(&loss_bce(*b, d_gt, sigma).0))
                .unwrap();
            assert!((best - d_gt).abs() <= step, "d_gt {d_gt}: argmin {best}");
        }
    }

    #[test]
    fn bce_gradient_matches_difference() {
        let sigma = 0.03;
        for &(dp, dg) in &[(0.01, -0.02), (-0.1, 0.05), (0.2, 0.2), (0.0, 0.07)] {
            let h = 1e-7;
            let fd = (loss_bce(dp + h, dg, sigma).0 - loss_bce(dp - h, dg, sigma).0) / (2.0 * h);
            let g = loss_bce(dp, dg, sigma).1;
            assert!((fd - g).abs() < 1e-5 * (1.0 + g.abs()), "{fd} vs {g}");
        }
    }

    #[test]
    fn bce_log_floor_saturates() {
        let (l, g) = loss_bce(10.0, -10.0, 0.01);
        assert!((l + LOG_FLOOR.ln()).abs() < 1e-9);
        assert_eq!(g, 0.0);
    }

    #[test]
    fn regularizer_values() {
        assert_eq!(loss_eikonal(Vec3::X).0, 0.0);
        assert_eq!(loss_eikonal(Vec3::ZERO).0, 1.0);
        let g = Vec3::new(0.3, -0.2, 0.9);
        assert_eq!(loss_smooth(g, g).0, 0.0);
        let (_, de) = loss_eikonal(Vec3::new(2.0, 0.0, 0.0));
        assert!((de.x - 2.0).abs() < 1e-15);
    }
}
