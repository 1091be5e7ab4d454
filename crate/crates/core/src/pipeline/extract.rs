//! Visibility routing and surface extraction.

use serde::{Deserialize, Serialize};

use super::mc::{marching_cubes, SdfGrid};
use crate::error::{Error, Result};
use crate::geom::{Aabb, TriangleMesh, Vec3};
use crate::nn::Field;
use crate::octree::OctreeFeatureVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointClass {
    Visible,
    Invisible,
}

/// Invisible when strictly more than `alpha` levels return no feature.
pub fn classify_point(volume: &OctreeFeatureVolume, p: Vec3, alpha: u32) -> PointClass {
    if volume.missing_layers(p) > alpha {
        PointClass::Invisible
    } else {
        PointClass::Visible
    }
}

/// Anything that maps points to signed distances given a feature volume.
pub trait SdfDecoder {
    /// One value per point; `None` where the decoder has no input.
    fn decode(&self, volume: &OctreeFeatureVolume, points: &[Vec3]) -> Result<Vec<Option<f64>>>;
}

impl SdfDecoder for Field<'_> {
    fn decode(&self, volume: &OctreeFeatureVolume, points: &[Vec3]) -> Result<Vec<Option<f64>>> {
        self.predict(volume, points)
    }
}

/// Closure-backed decoder, handy for analytic fields.
pub struct FnDecoder<F: Fn(Vec3) -> f64>(pub F);

impl<F: Fn(Vec3) -> f64> SdfDecoder for FnDecoder<F> {
    fn decode(&self, _volume: &OctreeFeatureVolume, points: &[Vec3]) -> Result<Vec<Option<f64>>> {
        Ok(points.iter().map(|&p| Some((self.0)(p))).collect())
    }
}

/// Which decoder answers invisible points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Routing {
    /// Invisible points go to the inpainter.
    Full,
    /// Invisible points are treated as free space (ablation without the inpainter).
    GeoOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractParams {
    pub bounds: Aabb,
    pub grid_res: f64,
    pub alpha: u32,
    /// Value assigned to points no decoder answers.
    pub free_space: f64,
    pub routing: Routing,
}

/// Per-route counts of a routed evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RouteCounts {
    pub visible: usize,
    pub invisible: usize,
    pub uncovered: usize,
}

struct Routes {
    visible: Vec<usize>,
    invisible: Vec<usize>,
    counts: RouteCounts,
}

fn route(volume: &OctreeFeatureVolume, points: &[Vec3], alpha: u32) -> Routes {
    let levels = volume.layout().levels;
    let mut r = Routes {
        visible: Vec::new(),
        invisible: Vec::new(),
        counts: RouteCounts::default(),
    };
    for (i, &p) in points.iter().enumerate() {
        let missing = volume.missing_layers(p);
        // coverage is nested, so any coarse level present means level 0 is
        if missing > levels {
            r.counts.uncovered += 1;
        } else if missing > alpha {
            r.counts.invisible += 1;
            r.invisible.push(i);
        } else {
            r.counts.visible += 1;
            r.visible.push(i);
        }
    }
    r
}

fn gather(points: &[Vec3], idx: &[usize]) -> Vec<Vec3> {
    idx.iter().map(|&i| points[i]).collect()
}

/// Writes decoded values into `out`; returns the indices the decoder skipped.
fn decode_into(
    decoder: &dyn SdfDecoder,
    volume: &OctreeFeatureVolume,
    points: &[Vec3],
    idx: &[usize],
    out: &mut [f64],
) -> Result<Vec<usize>> {
    let vals = decoder.decode(volume, &gather(points, idx))?;
    let mut skipped = Vec::new();
    for (&i, v) in idx.iter().zip(vals) {
        match v {
            Some(d) => out[i] = d,
            None => skipped.push(i),
        }
    }
    Ok(skipped)
}

fn check_finite(points: &[Vec3], values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("decoded SDF at {:?} is {}", points[i], values[i]))),
        None => Ok(()),
    }
}

/// Signed distances at `points` with visibility routing. Visible points read
/// the geometry decoder; invisible points read the inpainter (or free space in
/// the ablation); points without coarse coverage are free space.
pub fn routed_sdf(
    volume: &OctreeFeatureVolume,
    geo: &dyn SdfDecoder,
    inpainter: &dyn SdfDecoder,
    points: &[Vec3],
    alpha: u32,
    free_space: f64,
    routing: Routing,
) -> Result<(Vec<f64>, RouteCounts)> {
    let mut routes = route(volume, points, alpha);
    let mut out = vec![free_space; points.len()];
    let fallback = decode_into(geo, volume, points, &routes.visible, &mut out)?;
    if routing == Routing::Full {
        routes.invisible.extend(fallback);
        decode_into(inpainter, volume, points, &routes.invisible, &mut out)?;
    }
    check_finite(points, &out)?;
    Ok((out, routes.counts))
}

/// Both routings from one pass over the decoders: `(full, geo_only, counts)`.
pub fn routed_sdf_pair(
    volume: &OctreeFeatureVolume,
    geo: &dyn SdfDecoder,
    inpainter: &dyn SdfDecoder,
    points: &[Vec3],
    alpha: u32,
    free_space: f64,
) -> Result<(Vec<f64>, Vec<f64>, RouteCounts)> {
    let mut routes = route(volume, points, alpha);
    let mut geo_only = vec![free_space; points.len()];
    let fallback = decode_into(geo, volume, points, &routes.visible, &mut geo_only)?;
    let mut full = geo_only.clone();
    routes.invisible.extend(fallback);
    decode_into(inpainter, volume, points, &routes.invisible, &mut full)?;
    check_finite(points, &full)?;
    Ok((full, geo_only, routes.counts))
}

/// Routed SDF grid over `params.bounds`, then Marching Cubes.
pub fn extract_surface(
    volume: &OctreeFeatureVolume,
    geo: &dyn SdfDecoder,
    inpainter: &dyn SdfDecoder,
    params: &ExtractParams,
) -> Result<(TriangleMesh, RouteCounts)> {
    let mut grid = SdfGrid::covering(&params.bounds, params.grid_res)?;
    let points = grid.points();
    let (values, counts) = routed_sdf(
        volume,
        geo,
        inpainter,
        &points,
        params.alpha,
        params.free_space,
        params.routing,
    )?;
    grid.values = values;
    Ok((marching_cubes(&grid)?, counts))
}
