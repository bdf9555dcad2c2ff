//! Per-frame and aggregate garment metrics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::collision::CollisionReport;
use crate::geometry::Vec3;
use crate::mesh::{uniform_laplacian, TriMesh};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("vertex counts differ: {0} vs {1}")]
    CountMismatch(usize, usize),
    #[error("no frames to aggregate")]
    Empty,
}

/// Mean per-vertex Euclidean error in millimeters (inputs in meters).
pub fn mpve(pred: &[Vec3], truth: &[Vec3]) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::CountMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b).norm()).sum();
    Ok(1000.0 * sum / pred.len() as f64)
}

/// Sum of squared depths over penetrating vertices (`f < 0`), in m^2.
pub fn penetration_energy(f: &[f64]) -> f64 {
    f.iter().filter(|v| **v < 0.0).fold(0.0, |acc, v| acc + v * v)
}

/// `vertices` plus their one-ring neighbors, sorted.
pub fn one_ring_region(mesh: &TriMesh, vertices: &[usize]) -> Vec<usize> {
    let mut out: BTreeSet<usize> = vertices.iter().copied().collect();
    for &v in vertices {
        out.extend(mesh.neighbors(v).iter().copied());
    }
    out.into_iter().collect()
}

/// Mean `|L(pred)_i - L(truth)_i|` over `region`, in millimeters; `None`
/// for an empty region.
pub fn local_laplacian_error(
    mesh: &TriMesh,
    pred: &[Vec3],
    truth: &[Vec3],
    region: &[usize],
) -> Result<Option<f64>, MetricsError> {
    if pred.len() != truth.len() || pred.len() != mesh.vertex_count() {
        return Err(MetricsError::CountMismatch(pred.len(), truth.len()));
    }
    if region.is_empty() {
        return Ok(None);
    }
    let lp = uniform_laplacian(mesh, pred);
    let lt = uniform_laplacian(mesh, truth);
    let sum: f64 = region.iter().map(|&i| (lp[i] - lt[i]).norm()).sum();
    Ok(Some(1000.0 * sum / region.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub mpve_mm: f64,
    pub vertex_count: usize,
    pub vf_vertices: usize,
    pub vf_triangles: usize,
    pub ee_triangles: usize,
    pub collision_free: bool,
    pub pen_energy: f64,
    pub lap_err_mm: Option<f64>,
}

impl FrameMetrics {
    pub fn from_report(mpve_mm: f64, vertex_count: usize, report: &CollisionReport, pen_energy: f64, lap_err_mm: Option<f64>) -> Self {
        Self {
            mpve_mm,
            vertex_count,
            vf_vertices: report.vf_vertices.len(),
            vf_triangles: report.vf_triangles.len(),
            ee_triangles: report.ee_triangles.len(),
            collision_free: report.is_collision_free(),
            pen_energy,
            lap_err_mm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub frames: usize,
    pub mpve_mm: f64,
    /// Penetrating vertices over all vertices, percent.
    pub vfcp_pct: f64,
    /// Frames free of both VF and EE collisions, percent.
    pub cfmp_pct: f64,
    pub avg_vf: f64,
    pub avg_ee: f64,
    pub pen_energy: f64,
    /// Mean over frames where the region is non-empty; `None` if none are.
    pub lap_err_mm: Option<f64>,
}

pub fn aggregate(frames: &[FrameMetrics]) -> Result<MetricsSummary, MetricsError> {
    if frames.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = frames.len() as f64;
    let total_vertices: usize = frames.iter().map(|f| f.vertex_count).sum();
    let vf: usize = frames.iter().map(|f| f.vf_vertices).sum();
    let lap: Vec<f64> = frames.iter().filter_map(|f| f.lap_err_mm).collect();
    Ok(MetricsSummary {
        frames: frames.len(),
        mpve_mm: frames.iter().map(|f| f.mpve_mm).sum::<f64>() / n,
        vfcp_pct: if total_vertices > 0 {
            100.0 * vf as f64 / total_vertices as f64
        } else {
            0.0
        },
        cfmp_pct: 100.0 * frames.iter().filter(|f| f.collision_free).count() as f64 / n,
        avg_vf: frames.iter().map(|f| f.vf_triangles as f64).sum::<f64>() / n,
        avg_ee: frames.iter().map(|f| f.ee_triangles as f64).sum::<f64>() / n,
        pen_energy: frames.iter().map(|f| f.pen_energy).fold(0.0, |a, e| a + e) / n,
        lap_err_mm: (!lap.is_empty()).then(|| lap.iter().sum::<f64>() / lap.len() as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Uniform bins over `[0, upper]`; `upper` defaults to the data maximum.
/// Values at the upper edge land in the last bin.
pub fn histogram(values: &[f64], bins: usize, upper: Option<f64>) -> Histogram {
    let bins = bins.max(1);
    let max = upper.unwrap_or_else(|| values.iter().copied().fold(0.0, f64::max));
    let top = if max > 0.0 { max } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|i| top * i as f64 / bins as f64).collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = ((v / top) * bins as f64).floor();
        let idx = if idx.is_nan() || idx < 0.0 { 0 } else { (idx as usize).min(bins - 1) };
        counts[idx] += 1;
    }
    Histogram { edges, counts }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mpve_of_uniform_offset() {
        let truth = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        let pred: Vec<Vec3> = truth.iter().map(|v| v + Vec3::new(0.001, 0.0, 0.0)).collect();
        assert!((mpve(&pred, &truth).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(mpve(&truth, &truth).unwrap(), 0.0);
        assert!(mpve(&truth[..2], &truth).is_err());
    }

    #[test]
    fn energy_of_a_2mm_penetration() {
        assert!((penetration_energy(&[0.5, -0.002, 0.0]) - 4e-6).abs() < 1e-18);
        assert_eq!(penetration_energy(&[0.1, 0.0]), 0.0);
    }

    fn frame(free: bool) -> FrameMetrics {
        FrameMetrics {
            mpve_mm: 1.0,
            vertex_count: 10,
            vf_vertices: if free { 0 } else { 1 },
            vf_triangles: if free { 0 } else { 2 },
            ee_triangles: 0,
            collision_free: free,
            pen_energy: 0.0,
            lap_err_mm: None,
        }
    }

    #[test]
    fn cfmp_counts_clean_frames() {
        let mut frames: Vec<FrameMetrics> = (0..8).map(|_| frame(true)).collect();
        frames.push(frame(false));
        frames.push(frame(false));
        let s = aggregate(&frames).unwrap();
        assert!((s.cfmp_pct - 80.0).abs() < 1e-12);
        assert!((s.vfcp_pct - 2.0).abs() < 1e-12);
        assert!((s.avg_vf - 0.4).abs() < 1e-12);
        assert_eq!(s.lap_err_mm, None);
        assert_eq!(aggregate(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn all_clean_frames() {
        let s = aggregate(&[frame(true), frame(true)]).unwrap();
        assert_eq!((s.vfcp_pct, s.avg_vf, s.avg_ee, s.cfmp_pct), (0.0, 0.0, 0.0, 100.0));
    }

    #[test]
    fn histogram_counts_sum_to_input() {
        let h = histogram(&[0.0, 0.5, 1.0, 0.25], 4, None);
        assert_eq!(h.counts, vec![1, 1, 1, 1]);
        assert_eq!(h.edges.len(), 5);
        let zeros = histogram(&[0.0, 0.0], 50, None);
        assert_eq!(zeros.counts.iter().sum::<usize>(), 2);
    }
}
