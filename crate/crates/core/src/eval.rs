//! Accuracy / completeness / F1 between two surfaces, via sampled point sets.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{TriangleMesh, Vec3};
use crate::samples::SurfaceSampler;

/// Balanced 3-d tree over a point set, stored implicitly: the median of each
/// range sits at its midpoint and splits on the axis recorded for it.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Result<KdTree> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("cannot build a KD-tree over zero points".into()));
        }
        let mut pts = points.to_vec();
        let mut axes = vec![0u8; pts.len()];
        let mut stack = vec![(0usize, pts.len())];
        while let Some((lo, hi)) = stack.pop() {
            if hi - lo <= 1 {
                continue;
            }
            let slice = &pts[lo..hi];
            let b = crate::geom::Aabb::from_points(slice.iter());
            let axis = b.extent().max_axis();
            let mid = lo + (hi - lo) / 2;
            pts[lo..hi].select_nth_unstable_by(mid - lo, |a, b| a[axis].total_cmp(&b[axis]));
            axes[mid] = axis as u8;
            stack.push((lo, mid));
            stack.push((mid + 1, hi));
        }
        Ok(KdTree { points: pts, axes })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Exact nearest stored point and its distance. Ties keep the first point
    /// found, so distances (not identities) are what is reproducible.
    pub fn nearest(&self, q: Vec3) -> (Vec3, f64) {
        let mut best = (f64::INFINITY, 0usize);
        self.search(q, 0, self.points.len(), &mut best);
        (self.points[best.1], best.0.sqrt())
    }

    fn search(&self, q: Vec3, lo: usize, hi: usize, best: &mut (f64, usize)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = self.points[mid];
        let d2 = (p - q).norm_squared();
        if d2 < best.0 {
            *best = (d2, mid);
        }
        if hi - lo == 1 {
            return;
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, best);
        if diff * diff < best.0 {
            self.search(q, far.0, far.1, best);
        }
    }
}

/// `n` area-weighted uniform points on `mesh`.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    let sampler = SurfaceSampler::new(mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| sampler.sample(&mut rng).0).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Percent of predicted samples within `threshold` of the ground truth.
    pub accuracy: f64,
    /// Percent of ground-truth samples within `threshold` of the prediction.
    pub completeness: f64,
    pub f1: f64,
    pub threshold: f64,
    pub samples: usize,
    pub seed: u64,
    /// Mean predicted → ground-truth distance (m).
    pub mean_pred_to_gt: f64,
    /// Mean ground-truth → predicted distance (m).
    pub mean_gt_to_pred: f64,
}

/// Harmonic mean of two percentages; zero when both are.
pub fn f1_score(accuracy: f64, completeness: f64) -> f64 {
    if accuracy + completeness == 0.0 {
        0.0
    } else {
        2.0 * accuracy * completeness / (accuracy + completeness)
    }
}

/// Percent of `from` within `threshold` of `to`, and the mean distance.
pub fn coverage(from: &[Vec3], to: &KdTree, threshold: f64) -> (f64, f64) {
    if from.is_empty() {
        return (0.0, 0.0);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for &p in from {
        let d = to.nearest(p).1;
        sum += d;
        if d <= threshold {
            hits += 1;
        }
    }
    (100.0 * hits as f64 / from.len() as f64, sum / from.len() as f64)
}

/// Metrics between point sets already sampled from the two surfaces.
pub fn metrics_from_samples(pred: &[Vec3], gt: &[Vec3], threshold: f64, seed: u64) -> Result<MetricsReport> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::InvalidArgument("metrics need samples from both surfaces".into()));
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {threshold}")));
    }
    let (acc, m_pg) = coverage(pred, &KdTree::build(gt)?, threshold);
    let (comp, m_gp) = coverage(gt, &KdTree::build(pred)?, threshold);
    Ok(MetricsReport {
        accuracy: acc,
        completeness: comp,
        f1: f1_score(acc, comp),
        threshold,
        samples: pred.len(),
        seed,
        mean_pred_to_gt: m_pg,
        mean_gt_to_pred: m_gp,
    })
}

/// Samples `n` points from each mesh with the same seed and compares them.
/// An empty prediction scores zero everywhere.
pub fn compute_metrics(pred: &TriangleMesh, gt: &TriangleMesh, n: usize, threshold: f64, seed: u64) -> Result<MetricsReport> {
    if n < 1 {
        return Err(Error::InvalidArgument("at least one sample per surface is required".into()));
    }
    if gt.is_empty() {
        return Err(Error::InvalidArgument("ground-truth mesh is empty".into()));
    }
    if pred.is_empty() {
        return Ok(MetricsReport {
            accuracy: 0.0,
            completeness: 0.0,
            f1: 0.0,
            threshold,
            samples: n,
            seed,
            mean_pred_to_gt: f64::INFINITY,
            mean_gt_to_pred: f64::INFINITY,
        });
    }
    let p = sample_surface(pred, n, seed)?;
    let g = sample_surface(gt, n, seed)?;
    metrics_from_samples(&p, &g, threshold, seed)
}

pub const CSV_HEADER: &str = "scene,accuracy,completeness,f1,threshold,n,seed";

impl MetricsReport {
    pub fn csv_row(&self, scene: &str) -> String {
        format!(
            "{scene},{:.4},{:.4},{:.4},{},{},{}",
            self.accuracy, self.completeness, self.f1, self.threshold, self.samples, self.seed
        )
    }
}

/// CSV with header, one row per `(scene, report)`.
pub fn metrics_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for (scene, r) in rows {
        s.push_str(&r.csv_row(scene));
        s.push('\n');
    }
    s
}

/// Fixed-width table for terminals.
pub fn metrics_table(rows: &[(String, MetricsReport)]) -> String {
    let mut s = format!("{:<24} {:>8} {:>8} {:>8}\n", "scene", "Accu.", "Comp.", "F1");
    for (scene, r) in rows {
        let _ = writeln!(s, "{:<24} {:>8.2} {:>8.2} {:>8.2}", scene, r.accuracy, r.completeness, r.f1);
    }
    s
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::geom::MeshSdf;

    fn brute(points: &[Vec3], q: Vec3) -> f64 {
        points.iter().map(|p| (*p - q).norm_squared()).fold(f64::INFINITY, f64::min).sqrt()
    }

    #[test]
    fn kd_tree_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..1000)
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let tree = KdTree::build(&pts).unwrap();
        for _ in 0..1000 {
            let q = Vec3::new(rng.gen_range(-0.2..1.2), rng.gen_range(-0.2..1.2), rng.gen_range(-0.2..1.2));
            assert_eq!(tree.nearest(q).1.to_bits(), brute(&pts, q).to_bits());
        }
        assert_eq!(tree.nearest(pts[17]).1, 0.0);
        let single = KdTree::build(&[Vec3::X]).unwrap();
        assert_eq!(single.nearest(Vec3::ZERO), (Vec3::X, 1.0));
        assert!(KdTree::build(&[]).is_err());
    }

    #[test]
    fn surface_samples_follow_area() {
        // areas 1 and 3
        let m = TriangleMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(10.0, 0.0, 0.0),
                Vec3::new(13.0, 0.0, 0.0),
                Vec3::new(10.0, 2.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let n = 40_000;
        let s = sample_surface(&m, n, 5).unwrap();
        let first = s.iter().filter(|p| p.x < 5.0).count() as f64;
        let (mu, sd) = (n as f64 * 0.25, (n as f64 * 0.25 * 0.75).sqrt());
        assert!((first - mu).abs() < 3.0 * sd);
    }

    #[test]
    fn samples_lie_on_surface() {
        let cube = TriangleMesh::cuboid(Vec3::ZERO, Vec3::splat(1.0));
        let sdf = MeshSdf::new(&cube).unwrap();
        for p in sample_surface(&cube, 500, 2).unwrap() {
            assert!(sdf.distance(p).abs() <= 1e-9);
        }
        let one = sample_surface(&cube, 1, 3).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn f1_reproduces_published_rows() {
        assert!((f1_score(84.3, 65.8) - 73.9).abs() < 0.05);
        assert!((f1_score(92.1, 66.2) - 77.0).abs() < 0.05);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn identical_and_shifted_surfaces() {
        let plane = TriangleMesh::cuboid(Vec3::ZERO, Vec3::new(1.0, 1.0, 0.01));
        let r = compute_metrics(&plane, &plane, 2000, 0.025, 1).unwrap();
        assert_eq!((r.accuracy, r.completeness, r.f1), (100.0, 100.0, 100.0));
        let far = plane.translated(Vec3::new(0.0, 0.0, 0.05 + 0.01));
        let r = compute_metrics(&far, &plane, 2000, 0.025, 1).unwrap();
        assert_eq!((r.accuracy, r.completeness, r.f1), (0.0, 0.0, 0.0));
        assert!(compute_metrics(&plane, &plane, 0, 0.025, 1).is_err());
    }

    #[test]
    fn csv_layout() {
        let plane = TriangleMesh::cuboid(Vec3::ZERO, Vec3::new(1.0, 1.0, 0.01));
        let r = compute_metrics(&plane, &plane, 100, 0.025, 7).unwrap();
        let csv = metrics_csv(&[("x".into(), r)]);
        assert_eq!(csv, "scene,accuracy,completeness,f1,threshold,n,seed\nx,100.0000,100.0000,100.0000,0.025,100,7\n");
    }
}
