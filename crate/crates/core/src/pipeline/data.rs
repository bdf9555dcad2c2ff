//! Synthetic garment frames: a wrinkled offset shell around the body,
//! pushed clear of it with the exact SDF and kept only when both collision
//! detectors agree it is clean.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::body::{BodyModel, FrameParams, BETA_DIM, THETA_DIM};
use super::{substream, PipelineError};
use crate::collision::{detect_intersections, detect_vf, CONTACT_TOL};
use crate::geometry::Vec3;
use crate::mesh::{MeshError, TriMesh};
use crate::sdf::ExactSdf;
use crate::shapes;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarmentModel {
    pub subdivisions: usize,
    /// Directions with `|d_z| <= band` are kept: an open tube around the torso.
    pub band: f64,
    /// Mean normal offset from the body, meters.
    pub offset: f64,
    /// Wrinkle amplitude at `gamma[0] = 1`, meters.
    pub wrinkle_amplitude: f64,
    /// Wrinkle frequencies along the height and around the torso.
    pub wrinkle_frequency: [f64; 2],
    /// Minimum body clearance enforced on ground truth, meters.
    pub clearance: f64,
    /// Per-vertex Gaussian noise, meters.
    pub noise: f64,
    /// Noise redraws before the parameters are redrawn.
    pub max_attempts: u32,
}

impl Default for GarmentModel {
    fn default() -> Self {
        Self {
            subdivisions: 3,
            band: 0.55,
            offset: 0.0035,
            wrinkle_amplitude: 0.005,
            wrinkle_frequency: [3.0, 4.0],
            clearance: 0.0005,
            noise: 0.0003,
            max_attempts: 4,
        }
    }
}

/// Fixed garment topology; `mesh` holds the unit directions as positions.
#[derive(Debug, Clone)]
pub struct GarmentTemplate {
    pub mesh: TriMesh,
}

impl GarmentTemplate {
    pub fn directions(&self) -> &[Vec3] {
        self.mesh.vertices()
    }

    pub fn vertex_count(&self) -> usize {
        self.mesh.vertex_count()
    }

    /// The template topology with the given positions.
    pub fn with_positions(&self, positions: Vec<Vec3>) -> Result<TriMesh, MeshError> {
        self.mesh.with_vertices(positions)
    }
}

impl GarmentModel {
    pub fn template(&self) -> Result<GarmentTemplate, MeshError> {
        let sphere = shapes::icosphere(1.0, self.subdivisions);
        let keep: Vec<bool> = sphere.vertices().iter().map(|d| d.z.abs() <= self.band).collect();
        let mut remap = vec![usize::MAX; keep.len()];
        let mut vertices = Vec::new();
        for (i, v) in sphere.vertices().iter().enumerate() {
            if keep[i] {
                remap[i] = vertices.len();
                vertices.push(*v);
            }
        }
        let faces = sphere
            .faces()
            .iter()
            .filter(|f| f.iter().all(|&v| keep[v]))
            .map(|f| [remap[f[0]], remap[f[1]], remap[f[2]]])
            .collect();
        Ok(GarmentTemplate {
            mesh: TriMesh::new(vertices, faces)?,
        })
    }

    /// Signed wrinkle height at direction `d`.
    pub fn wrinkle(&self, d: &Vec3, gamma: &[f64; 3]) -> f64 {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let amp = self.wrinkle_amplitude * (0.5 * (gamma[0] + 1.0)).max(0.0);
        let [ku, kv] = self.wrinkle_frequency;
        let around = d.y.atan2(d.x);
        amp * (ku * std::f64::consts::PI * d.z + half_pi * gamma[1]).sin() * (kv * around + half_pi * gamma[2]).cos()
    }

    /// Offset shell before noise and projection.
    pub fn shell(&self, body: &BodyModel, template: &GarmentTemplate, params: &FrameParams) -> Vec<Vec3> {
        template
            .directions()
            .iter()
            .map(|d| {
                let (p, n) = body.ellipsoid_point(d, &params.beta);
                body.deform(&(p + n * (self.offset + self.wrinkle(d, &params.gamma))), params)
            })
            .collect()
    }
}

/// Moves every vertex below `clearance` onto that level set along the exact
/// gradient, repeating while any vertex is still short by more than 1e-9.
pub fn project_clear(body: &ExactSdf, positions: &mut [Vec3], clearance: f64) {
    for _ in 0..8 {
        let sd = body.signed_distances(positions);
        let mut worst: f64 = 0.0;
        for (p, s) in positions.iter_mut().zip(&sd) {
            if s.value < clearance {
                worst = worst.max(clearance - s.value);
                *p -= s.gradient * (s.value - clearance);
            }
        }
        if worst < 1e-9 {
            return;
        }
    }
}

/// Body SDF and ground-truth garment for one parameter set, or a
/// generation error if the projected garment still collides.
pub fn generate_frame<R: Rng + ?Sized>(
    spec: &DatasetSpec,
    template: &GarmentTemplate,
    params: &FrameParams,
    rng: &mut R,
) -> Result<(ExactSdf, Vec<Vec3>), PipelineError> {
    let body = ExactSdf::new(spec.body.mesh(params)).map_err(|e| PipelineError::Generation(e.to_string()))?;
    let mut positions = spec.garment.shell(&spec.body, template, params);
    if spec.garment.noise > 0.0 {
        let normal = Normal::new(0.0, spec.garment.noise).map_err(|e| PipelineError::Config(e.to_string()))?;
        for p in positions.iter_mut() {
            *p += Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        }
    }
    project_clear(&body, &mut positions, spec.garment.clearance);
    let vf = detect_vf(&positions, &body, CONTACT_TOL);
    if !vf.is_empty() {
        return Err(PipelineError::Generation(format!("{} vertices inside after projection", vf.len())));
    }
    let garment = template.with_positions(positions)?;
    let (pairs, _) = detect_intersections(&garment, body.mesh(), body.bvh(), CONTACT_TOL);
    if !pairs.is_empty() {
        return Err(PipelineError::Generation(format!("{} intersecting triangle pairs", pairs.len())));
    }
    Ok((body, garment.vertices().to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub body: BodyModel,
    pub garment: GarmentModel,
    pub train_frames: usize,
    /// Test frames drawn from the training distribution.
    pub test_near: usize,
    /// Test frames with at least one parameter outside `[-1, 1]`.
    pub test_far: usize,
    /// Parameter range for far test frames.
    pub far_range: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            body: BodyModel::default(),
            garment: GarmentModel::default(),
            train_frames: 2000,
            test_near: 200,
            test_far: 100,
            far_range: 1.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Near,
    Far,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Near => "near",
            Split::Far => "far",
        }
    }
}

/// Everything needed to regenerate one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub id: usize,
    pub split: Split,
    pub params: FrameParams,
    /// Parameter redraws before this frame was accepted.
    pub redraw: u32,
    /// Noise attempt that produced a clean frame.
    pub attempt: u32,
}

#[derive(Debug, Clone)]
pub struct GarmentFrame {
    pub record: FrameRecord,
    pub body: ExactSdf,
    /// Ground-truth garment positions (collision free).
    pub garment: Vec<Vec3>,
    /// Raw backbone input: `(beta, theta, gamma)`.
    pub features: Vec<f64>,
    /// Distance to the nearest training frame in normalized parameter
    /// space; zero for training frames.
    pub distance: f64,
}

impl GarmentFrame {
    pub fn params(&self) -> &FrameParams {
        &self.record.params
    }
}

/// Per-block scales (shape, pose, style) that give each block unit
/// variance over the training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockScales {
    pub beta: f64,
    pub theta: f64,
    pub gamma: f64,
}

impl BlockScales {
    pub fn fit(params: &[FrameParams]) -> Self {
        fn block_std(rows: Vec<Vec<f64>>) -> f64 {
            let n = rows.len().max(1) as f64;
            let dims = rows.first().map_or(0, Vec::len);
            let mut var = 0.0;
            for k in 0..dims {
                let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
                var += rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n;
            }
            let s = (var / dims.max(1) as f64).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        }
        Self {
            beta: block_std(params.iter().map(|p| p.beta.to_vec()).collect()),
            theta: block_std(params.iter().map(|p| p.theta.to_vec()).collect()),
            gamma: block_std(params.iter().map(|p| p.gamma.to_vec()).collect()),
        }
    }

    pub fn normalize(&self, p: &FrameParams) -> Vec<f64> {
        let mut v = p.to_vec();
        for (i, x) in v.iter_mut().enumerate() {
            *x /= if i < BETA_DIM {
                self.beta
            } else if i < BETA_DIM + THETA_DIM {
                self.theta
            } else {
                self.gamma
            };
        }
        v
    }
}

/// Euclidean distance from each query to its nearest training frame in
/// block-normalized parameter space.
pub fn parameter_distances(train: &[FrameParams], queries: &[FrameParams], scales: &BlockScales) -> Vec<f64> {
    let train: Vec<Vec<f64>> = train.iter().map(|p| scales.normalize(p)).collect();
    queries
        .iter()
        .map(|q| {
            let q = scales.normalize(q);
            train
                .iter()
                .map(|t| t.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub seed: u64,
    pub template: GarmentTemplate,
    pub scales: BlockScales,
    pub train: Vec<GarmentFrame>,
    pub test: Vec<GarmentFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub spec: DatasetSpec,
    pub frames: Vec<FrameRecord>,
}

const MANIFEST_FORMAT: &str = "refu-dataset";
const MAX_REDRAWS: u32 = 16;

fn draw_params(spec: &DatasetSpec, seed: u64, split: Split, id: usize, redraw: u32) -> FrameParams {
    let mut rng = substream(seed, &format!("params/{}/{id}/{redraw}", split.name()));
    match split {
        Split::Train | Split::Near => FrameParams::uniform(&mut rng, 1.0),
        Split::Far => loop {
            let p = FrameParams::uniform(&mut rng, spec.far_range);
            if p.to_vec().iter().any(|v| v.abs() > 1.0) {
                break p;
            }
        },
    }
}

fn noise_rng(seed: u64, split: Split, id: usize, redraw: u32, attempt: u32) -> rand_chacha::ChaCha8Rng {
    substream(seed, &format!("noise/{}/{id}/{redraw}/{attempt}", split.name()))
}

fn build_frame(
    spec: &DatasetSpec,
    template: &GarmentTemplate,
    seed: u64,
    split: Split,
    id: usize,
) -> Result<(FrameRecord, ExactSdf, Vec<Vec3>), PipelineError> {
    for redraw in 0..MAX_REDRAWS {
        let params = draw_params(spec, seed, split, id, redraw);
        for attempt in 0..spec.garment.max_attempts.max(1) {
            let mut rng = noise_rng(seed, split, id, redraw, attempt);
            match generate_frame(spec, template, &params, &mut rng) {
                Ok((body, garment)) => {
                    let record = FrameRecord {
                        id,
                        split,
                        params,
                        redraw,
                        attempt,
                    };
                    return Ok((record, body, garment));
                }
                Err(PipelineError::Generation(msg)) => {
                    log::info!("{} frame {id}: {msg}; regenerating", split.name());
                }
                Err(e) => return Err(e),
            }
        }
    }
    Err(PipelineError::Generation(format!(
        "{} frame {id}: no clean frame after {MAX_REDRAWS} parameter draws",
        split.name()
    )))
}

fn rebuild_frame(
    spec: &DatasetSpec,
    template: &GarmentTemplate,
    seed: u64,
    record: &FrameRecord,
) -> Result<(ExactSdf, Vec<Vec3>), PipelineError> {
    let mut rng = noise_rng(seed, record.split, record.id, record.redraw, record.attempt);
    generate_frame(spec, template, &record.params, &mut rng)
}

fn assemble(
    spec: DatasetSpec,
    seed: u64,
    template: GarmentTemplate,
    built: Vec<(FrameRecord, ExactSdf, Vec<Vec3>)>,
) -> Dataset {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (record, body, garment) in built {
        let frame = GarmentFrame {
            record,
            body,
            garment,
            features: record.params.to_vec(),
            distance: 0.0,
        };
        if record.split == Split::Train {
            train.push(frame);
        } else {
            test.push(frame);
        }
    }
    let train_params: Vec<FrameParams> = train.iter().map(|f| f.record.params).collect();
    let scales = BlockScales::fit(&train_params);
    let test_params: Vec<FrameParams> = test.iter().map(|f| f.record.params).collect();
    for (f, d) in test.iter_mut().zip(parameter_distances(&train_params, &test_params, &scales)) {
        f.distance = d;
    }
    Dataset {
        spec,
        seed,
        template,
        scales,
        train,
        test,
    }
}

/// Generates the training and test frames. Frames are independent given
/// the seed, so the result does not depend on thread count.
pub fn gen_synthetic_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset, PipelineError> {
    let template = spec.garment.template()?;
    let jobs: Vec<(Split, usize)> = (0..spec.train_frames)
        .map(|i| (Split::Train, i))
        .chain((0..spec.test_near).map(|i| (Split::Near, i)))
        .chain((0..spec.test_far).map(|i| (Split::Far, i)))
        .collect();
    let built = jobs
        .par_iter()
        .map(|&(split, id)| build_frame(spec, &template, seed, split, id))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(spec.clone(), seed, template, built))
}

impl Dataset {
    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            seed: self.seed,
            spec: self.spec.clone(),
            frames: self.train.iter().chain(&self.test).map(|f| f.record).collect(),
        }
    }

    /// Rebuilds the frames listed in a manifest without redoing the
    /// accept/reject search.
    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self, PipelineError> {
        if manifest.format != MANIFEST_FORMAT {
            return Err(PipelineError::Config(format!("unknown dataset format {:?}", manifest.format)));
        }
        let template = manifest.spec.garment.template()?;
        let built = manifest
            .frames
            .par_iter()
            .map(|r| rebuild_frame(&manifest.spec, &template, manifest.seed, r).map(|(b, g)| (*r, b, g)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(assemble(manifest.spec.clone(), manifest.seed, template, built))
    }

    pub fn vertex_count(&self) -> usize {
        self.template.vertex_count()
    }

    pub fn garment_mesh(&self, positions: &[Vec3]) -> Result<TriMesh, MeshError> {
        self.template.with_positions(positions.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> DatasetSpec {
        DatasetSpec {
            train_frames: 6,
            test_near: 2,
            test_far: 2,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn template_is_an_open_band() {
        let t = GarmentModel::default().template().unwrap();
        assert!(t.vertex_count() > 200 && t.vertex_count() <= 1000);
        assert!(!t.mesh.is_watertight());
        assert!(t.mesh.isolated_vertices().is_empty());
    }

    #[test]
    fn generated_frames_are_collision_free_and_reproducible() {
        let spec = small_spec();
        let a = gen_synthetic_dataset(&spec, 11).unwrap();
        let b = gen_synthetic_dataset(&spec, 11).unwrap();
        assert_eq!(a.train.len(), 6);
        assert_eq!(a.test.len(), 4);
        for (fa, fb) in a.train.iter().chain(&a.test).zip(b.train.iter().chain(&b.test)) {
            assert_eq!(fa.garment, fb.garment);
            assert!(detect_vf(&fa.garment, &fa.body, CONTACT_TOL).is_empty());
        }
        let c = Dataset::from_manifest(&a.manifest()).unwrap();
        assert_eq!(c.test[3].garment, a.test[3].garment);
        assert!(a.test.iter().all(|f| f.distance > 0.0));
    }

    #[test]
    fn plain_offset_shell_sits_on_the_offset_level_set() {
        let mut spec = small_spec();
        spec.garment.wrinkle_amplitude = 0.0;
        spec.garment.noise = 0.0;
        spec.garment.offset = 0.004;
        spec.garment.clearance = 0.004;
        let template = spec.garment.template().unwrap();
        let params = FrameParams {
            beta: [0.3, -0.5],
            theta: [0.8, -0.2, 0.4],
            gamma: [0.0; 3],
        };
        let mut rng = substream(0, "test");
        let (body, garment) = generate_frame(&spec, &template, &params, &mut rng).unwrap();
        let min = body.signed_distances(&garment).iter().map(|s| s.value).fold(f64::INFINITY, f64::min);
        assert!((min - 0.004).abs() < 1e-6, "{min}");
    }

    #[test]
    fn block_scales_give_unit_variance() {
        let mut rng = substream(3, "scales");
        let params: Vec<FrameParams> = (0..2000).map(|_| FrameParams::uniform(&mut rng, 1.0)).collect();
        let s = BlockScales::fit(&params);
        // Uniform on [-1, 1] has standard deviation 1/sqrt(3).
        for v in [s.beta, s.theta, s.gamma] {
            assert!((v - 1.0 / 3f64.sqrt()).abs() < 0.03, "{v}");
        }
        let d = parameter_distances(&params[..10], &params[..1], &s);
        assert_eq!(d, vec![0.0]);
    }
}
