//! Gaussian primitives, rigid agents, pinhole cameras and observation designs.
//!
//! World frame is right-handed with z up. Cameras look down their local −z
//! axis with +y up and +x right; image rows grow downward.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{fibonacci_sphere, Direction, ShConfig, TemporalBasis, TemporalSpec};
use crate::error::{LabError, Result};
use crate::seeds;

pub const CHANNELS: usize = 3;

fn vec3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn arr3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Quaternion stored as (w, x, y, z); must have unit norm within 1e-10.
fn unit_quaternion(q: &[f64; 4]) -> Result<UnitQuaternion<f64>> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-10 {
        return Err(LabError::Domain(format!("quaternion {q:?} has norm {norm}")));
    }
    Ok(UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3])))
}

fn quat_array(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianGeometry {
    pub mean: [f64; 3],
    /// (w, x, y, z)
    pub rotation: [f64; 4],
    pub scale: [f64; 3],
    pub opacity: f64,
}

impl GaussianGeometry {
    pub fn validate(&self) -> Result<()> {
        unit_quaternion(&self.rotation)?;
        if self.scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(LabError::Domain(format!("scales must be positive: {:?}", self.scale)));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(LabError::Domain(format!("opacity {} outside [0, 1]", self.opacity)));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Domain("non-finite mean".into()));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Result<Matrix3<f64>> {
        Ok(unit_quaternion(&self.rotation)?.to_rotation_matrix().into_inner())
    }
}

/// Σ = R S Sᵀ Rᵀ.
pub fn covariance_of(geom: &GaussianGeometry) -> Result<Matrix3<f64>> {
    geom.validate()?;
    let r = geom.rotation_matrix()?;
    let s = Matrix3::from_diagonal(&vec3(&geom.scale));
    let m = r * s;
    let cov = m * m.transpose();
    Ok((cov + cov.transpose()) * 0.5)
}

/// Appearance coefficients of one primitive.
///
/// `spatial[ch]` holds the time-invariant SH coefficients s_lm in (l, m)
/// row-major order. `temporal[ch]` holds the time-varying coefficients,
/// index `j · (L+1)² + lm` for varying basis function j (ascending n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub spatial: Vec<Vec<f64>>,
    pub temporal: Vec<Vec<f64>>,
}

impl Appearance {
    pub fn zeros(sh_terms: usize, varying: usize) -> Self {
        Appearance {
            spatial: vec![vec![0.0; sh_terms]; CHANNELS],
            temporal: vec![vec![0.0; sh_terms * varying]; CHANNELS],
        }
    }

    pub fn validate(&self, sh_terms: usize, varying: usize) -> Result<()> {
        if self.spatial.len() != CHANNELS || self.temporal.len() != CHANNELS {
            return Err(LabError::Shape(format!("appearance needs {CHANNELS} channels")));
        }
        for ch in 0..CHANNELS {
            if self.spatial[ch].len() != sh_terms || self.temporal[ch].len() != sh_terms * varying {
                return Err(LabError::Shape(format!(
                    "channel {ch}: expected {sh_terms} spatial and {} temporal coefficients",
                    sh_terms * varying
                )));
            }
            if self.spatial[ch].iter().chain(&self.temporal[ch]).any(|v| !v.is_finite()) {
                return Err(LabError::Domain("non-finite appearance coefficient".into()));
            }
        }
        Ok(())
    }

    /// Colour from precomputed SH values and varying-basis values.
    pub fn color(&self, sh: &[f64], varying: &[f64]) -> [f64; CHANNELS] {
        let terms = sh.len();
        let mut out = [0.0; CHANNELS];
        for (ch, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (lm, y) in sh.iter().enumerate() {
                let mut coeff = self.spatial[ch][lm];
                for (j, psi) in varying.iter().enumerate() {
                    coeff += psi * self.temporal[ch][j * terms + lm];
                }
                acc += y * coeff;
            }
            *slot = acc;
        }
        out
    }

    /// Full α_nlm coefficients per channel (n-major), for [`crate::basis::eval_4dsh`].
    pub fn full_coefficients(&self, basis: &TemporalBasis, terms: usize) -> Vec<Vec<f64>> {
        let varying = basis.varying_count();
        (0..CHANNELS)
            .map(|ch| {
                let mut full = vec![0.0; basis.count * terms];
                for lm in 0..terms {
                    let course: Vec<f64> =
                        (0..varying).map(|j| self.temporal[ch][j * terms + lm]).collect();
                    let composed = basis.compose(self.spatial[ch][lm], &course);
                    for (n, a) in composed.into_iter().enumerate() {
                        full[n * terms + lm] = a;
                    }
                }
                full
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub geometry: GaussianGeometry,
    pub appearance: Appearance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    /// (w, x, y, z)
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: [1.0, 0.0, 0.0, 0.0],
            translation: [0.0; 3],
        }
    }

    pub fn from_parts(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: quat_array(&rotation),
            translation: arr3(&translation),
        }
    }

    pub fn from_yaw(yaw: f64, translation: [f64; 3]) -> Self {
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
        RigidTransform::from_parts(q, vec3(&translation))
    }

    pub fn quaternion(&self) -> Result<UnitQuaternion<f64>> {
        unit_quaternion(&self.rotation)
    }

    pub fn rotation_matrix(&self) -> Result<Matrix3<f64>> {
        Ok(self.quaternion()?.to_rotation_matrix().into_inner())
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        Ok(self.rotation_matrix()? * p + vec3(&self.translation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseKeyframe {
    pub time: f64,
    pub transform: RigidTransform,
}

/// Keyframed rigid motion; rotations slerp, translations interpolate linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseTrack {
    pub keyframes: Vec<PoseKeyframe>,
}

impl PoseTrack {
    pub fn stationary(transform: RigidTransform, horizon: f64) -> Self {
        PoseTrack {
            keyframes: vec![
                PoseKeyframe {
                    time: 0.0,
                    transform: transform.clone(),
                },
                PoseKeyframe {
                    time: horizon,
                    transform,
                },
            ],
        }
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        let (Some(first), Some(last)) = (self.keyframes.first(), self.keyframes.last()) else {
            return Err(LabError::config("agents.track", "pose track has no keyframes"));
        };
        if first.time > 0.0 || last.time < horizon {
            return Err(LabError::config(
                "agents.track",
                format!("track covers [{}, {}], horizon is {horizon}", first.time, last.time),
            ));
        }
        for w in self.keyframes.windows(2) {
            if w[1].time <= w[0].time {
                return Err(LabError::config("agents.track", "keyframe times must increase"));
            }
        }
        for k in &self.keyframes {
            k.transform.quaternion()?;
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> Result<RigidTransform> {
        let first = self.keyframes.first().ok_or_else(|| LabError::Domain("empty pose track".into()))?;
        let last = self.keyframes.last().unwrap();
        if t < first.time || t > last.time {
            return Err(LabError::Domain(format!(
                "time {t} outside pose track [{}, {}]",
                first.time, last.time
            )));
        }
        let idx = self.keyframes.partition_point(|k| k.time <= t);
        if idx == 0 {
            return Ok(first.transform.clone());
        }
        if idx >= self.keyframes.len() {
            return Ok(last.transform.clone());
        }
        let a = &self.keyframes[idx - 1];
        let b = &self.keyframes[idx];
        let w = (t - a.time) / (b.time - a.time);
        if w == 0.0 {
            return Ok(a.transform.clone());
        }
        let qa = a.transform.quaternion()?;
        let qb = b.transform.quaternion()?;
        // slerp drifts off unit norm for nearly equal rotations.
        let q = UnitQuaternion::new_normalize(qa.slerp(&qb, w).into_inner());
        let ta = vec3(&a.transform.translation);
        let tb = vec3(&b.transform.translation);
        Ok(RigidTransform::from_parts(q, ta + (tb - ta) * w))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub name: String,
    pub track: PoseTrack,
    /// Primitives in the agent-local frame.
    pub primitives: Vec<Primitive>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub horizon: f64,
    pub sh: ShConfig,
    pub temporal: TemporalBasis,
    pub statics: Vec<Primitive>,
    pub agents: Vec<Agent>,
}

/// A primitive resolved into the world frame at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldPrimitive {
    pub index: usize,
    pub mean: Vector3<f64>,
    pub covariance: Matrix3<f64>,
    pub opacity: f64,
}

impl SceneGraph {
    pub fn validate(&self) -> Result<()> {
        if (self.temporal.horizon - self.horizon).abs() > 1e-12 {
            return Err(LabError::config("temporal.horizon", "must equal the scene horizon"));
        }
        let terms = self.sh.term_count();
        let varying = self.temporal.varying_count();
        for p in self.primitives() {
            p.geometry.validate()?;
            p.appearance.validate(terms, varying)?;
        }
        for a in &self.agents {
            a.track.validate(self.horizon)?;
        }
        Ok(())
    }

    /// Primitives in global order: statics first, then each agent's.
    pub fn primitives(&self) -> impl Iterator<Item = &Primitive> {
        self.statics
            .iter()
            .chain(self.agents.iter().flat_map(|a| a.primitives.iter()))
    }

    fn primitives_mut(&mut self) -> impl Iterator<Item = &mut Primitive> {
        self.statics
            .iter_mut()
            .chain(self.agents.iter_mut().flat_map(|a| a.primitives.iter_mut()))
    }

    pub fn primitive_count(&self) -> usize {
        self.statics.len() + self.agents.iter().map(|a| a.primitives.len()).sum::<usize>()
    }

    pub fn is_static(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn layout(&self) -> ParameterLayout {
        ParameterLayout {
            primitives: self.primitive_count(),
            sh_terms: self.sh.term_count(),
            varying: self.temporal.varying_count(),
        }
    }

    /// θ in serialization order: per primitive, per channel, spatial then temporal.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout().total());
        for p in self.primitives() {
            for ch in 0..CHANNELS {
                out.extend_from_slice(&p.appearance.spatial[ch]);
                out.extend_from_slice(&p.appearance.temporal[ch]);
            }
        }
        out
    }

    pub fn with_parameters(&self, theta: &[f64]) -> Result<SceneGraph> {
        let layout = self.layout();
        if theta.len() != layout.total() {
            return Err(LabError::Shape(format!(
                "parameter vector has {} entries, layout needs {}",
                theta.len(),
                layout.total()
            )));
        }
        let mut out = self.clone();
        let s = layout.sh_terms;
        let v = layout.sh_terms * layout.varying;
        let mut it = theta.iter().copied();
        for p in out.primitives_mut() {
            for ch in 0..CHANNELS {
                for slot in p.appearance.spatial[ch].iter_mut().take(s) {
                    *slot = it.next().unwrap();
                }
                for slot in p.appearance.temporal[ch].iter_mut().take(v) {
                    *slot = it.next().unwrap();
                }
            }
        }
        Ok(out)
    }

    /// Static primitives pass through; agent primitives move rigidly with T(t).
    pub fn resolve_world(&self, t: f64) -> Result<Vec<WorldPrimitive>> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(LabError::Domain(format!("time {t} outside [0, {}]", self.horizon)));
        }
        let mut out = Vec::with_capacity(self.primitive_count());
        for p in &self.statics {
            out.push(WorldPrimitive {
                index: out.len(),
                mean: vec3(&p.geometry.mean),
                covariance: covariance_of(&p.geometry)?,
                opacity: p.geometry.opacity,
            });
        }
        for a in &self.agents {
            let pose = a.track.at(t)?;
            let r = pose.rotation_matrix()?;
            for p in &a.primitives {
                let cov = covariance_of(&p.geometry)?;
                let c = r * cov * r.transpose();
                out.push(WorldPrimitive {
                    index: out.len(),
                    mean: pose.apply(&vec3(&p.geometry.mean))?,
                    covariance: (c + c.transpose()) * 0.5,
                    opacity: p.geometry.opacity,
                });
            }
        }
        Ok(out)
    }

    /// Centroid of all primitive means at t = 0.
    pub fn centroid(&self) -> Result<Vector3<f64>> {
        let world = self.resolve_world(0.0)?;
        if world.is_empty() {
            return Ok(Vector3::zeros());
        }
        Ok(world.iter().map(|p| p.mean).sum::<Vector3<f64>>() / world.len() as f64)
    }
}

/// Column/parameter layout shared by θ, Jacobians and fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterLayout {
    pub primitives: usize,
    pub sh_terms: usize,
    /// Time-varying basis functions per SH term (N − 1).
    pub varying: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientKind {
    Spatial,
    Temporal,
}

impl ParameterLayout {
    pub fn spatial_per_channel(&self) -> usize {
        self.sh_terms
    }

    pub fn temporal_per_channel(&self) -> usize {
        self.sh_terms * self.varying
    }

    pub fn per_primitive(&self) -> usize {
        CHANNELS * (self.spatial_per_channel() + self.temporal_per_channel())
    }

    pub fn total(&self) -> usize {
        self.primitives * self.per_primitive()
    }

    /// Offset in θ of (primitive, channel, kind, index).
    pub fn offset(&self, primitive: usize, channel: usize, kind: CoefficientKind, index: usize) -> usize {
        let per_channel = self.spatial_per_channel() + self.temporal_per_channel();
        let base = primitive * self.per_primitive() + channel * per_channel;
        match kind {
            CoefficientKind::Spatial => base + index,
            CoefficientKind::Temporal => base + self.spatial_per_channel() + index,
        }
    }

    /// Inverse of [`ParameterLayout::offset`].
    pub fn describe(&self, offset: usize) -> (usize, usize, CoefficientKind, usize) {
        let per_channel = self.spatial_per_channel() + self.temporal_per_channel();
        let primitive = offset / self.per_primitive();
        let rest = offset % self.per_primitive();
        let channel = rest / per_channel;
        let idx = rest % per_channel;
        if idx < self.spatial_per_channel() {
            (primitive, channel, CoefficientKind::Spatial, idx)
        } else {
            (primitive, channel, CoefficientKind::Temporal, idx - self.spatial_per_channel())
        }
    }

    /// Spatial and temporal coefficients of one channel, primitive-major
    /// (the column order of the channel-shared Jacobian blocks).
    pub fn split_channel(&self, theta: &[f64], channel: usize) -> (Vec<f64>, Vec<f64>) {
        let s = self.spatial_per_channel();
        let v = self.temporal_per_channel();
        let mut spatial = Vec::with_capacity(self.primitives * s);
        let mut temporal = Vec::with_capacity(self.primitives * v);
        for k in 0..self.primitives {
            let a = self.offset(k, channel, CoefficientKind::Spatial, 0);
            spatial.extend_from_slice(&theta[a..a + s]);
            temporal.extend_from_slice(&theta[a + s..a + s + v]);
        }
        (spatial, temporal)
    }

    /// Writes one channel's blocks back into θ.
    pub fn merge_channel(&self, theta: &mut [f64], channel: usize, spatial: &[f64], temporal: &[f64]) {
        let s = self.spatial_per_channel();
        let v = self.temporal_per_channel();
        for k in 0..self.primitives {
            let a = self.offset(k, channel, CoefficientKind::Spatial, 0);
            theta[a..a + s].copy_from_slice(&spatial[k * s..(k + 1) * s]);
            theta[a + s..a + s + v].copy_from_slice(&temporal[k * v..(k + 1) * v]);
        }
    }

    /// Indices into θ of every spatial coefficient, in θ order.
    pub fn spatial_indices(&self) -> Vec<usize> {
        (0..self.total())
            .filter(|&i| self.describe(i).2 == CoefficientKind::Spatial)
            .collect()
    }

    pub fn temporal_indices(&self) -> Vec<usize> {
        (0..self.total())
            .filter(|&i| self.describe(i).2 == CoefficientKind::Temporal)
            .collect()
    }
}

/// Unit vector from a primitive toward the camera centre.
pub fn viewing_direction(mean: &Vector3<f64>, camera_center: &Vector3<f64>) -> Result<Direction> {
    let d = camera_center - mean;
    if d.norm() == 0.0 {
        return Err(LabError::DegenerateGeometry(
            "camera centre coincides with primitive mean".into(),
        ));
    }
    Direction::from_vector(&d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(LabError::config("camera.intrinsics", "focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(LabError::config("camera.intrinsics", "image size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub center: [f64; 3],
    /// Rows are the camera x, y, z axes expressed in world coordinates.
    pub axes: [[f64; 3]; 3],
    pub intrinsics: Intrinsics,
}

impl Camera {
    /// Camera at `center` looking toward `target`.
    pub fn look_at(center: Vector3<f64>, target: Vector3<f64>, intrinsics: Intrinsics) -> Result<Self> {
        let forward = target - center;
        if forward.norm() == 0.0 {
            return Err(LabError::DegenerateGeometry("camera centre equals look target".into()));
        }
        Camera::look_along(center, forward, intrinsics)
    }

    pub fn look_along(center: Vector3<f64>, forward: Vector3<f64>, intrinsics: Intrinsics) -> Result<Self> {
        let f = forward.normalize();
        let mut up = Vector3::z();
        if f.dot(&up).abs() > 0.99 {
            up = Vector3::y();
        }
        let x = f.cross(&up).normalize();
        let z = -f;
        let y = z.cross(&x);
        Ok(Camera {
            center: arr3(&center),
            axes: [arr3(&x), arr3(&y), arr3(&z)],
            intrinsics,
        })
    }

    pub fn center(&self) -> Vector3<f64> {
        vec3(&self.center)
    }

    /// World-to-camera rotation.
    pub fn rotation(&self) -> Matrix3<f64> {
        let a = &self.axes;
        Matrix3::new(
            a[0][0], a[0][1], a[0][2], a[1][0], a[1][1], a[1][2], a[2][0], a[2][1], a[2][2],
        )
    }

    /// Extrinsic E (world → camera) as a rigid transform.
    pub fn extrinsic(&self) -> RigidTransform {
        let r = self.rotation();
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
        RigidTransform::from_parts(q, -(r * self.center()))
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * (p - self.center())
    }

    pub fn forward(&self) -> Vector3<f64> {
        -vec3(&self.axes[2])
    }
}

/// One query context z = (u, v, t, E, K).
#[derive(Debug, Clone, PartialEq)]
pub struct QueryContext {
    pub pixel: [u32; 2],
    pub time: f64,
    pub extrinsic: RigidTransform,
    pub intrinsic: Matrix3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub time: f64,
    pub camera: Camera,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    FullManifold,
    Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "path", rename_all = "snake_case")]
pub enum TrajectoryPath {
    /// Counter-clockwise circle with optional vertical undulation; the
    /// camera looks at `center`.
    Circular {
        center: [f64; 3],
        radius: f64,
        height: f64,
        undulation: f64,
        undulation_cycles: f64,
        revolutions: f64,
    },
    /// Straight drive at constant heading; the camera looks at `target`.
    Linear {
        start: [f64; 3],
        end: [f64; 3],
        target: [f64; 3],
    },
}

/// Ego pose along a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehiclePose {
    pub position: Vector3<f64>,
    pub heading: Vector3<f64>,
    pub look_target: Vector3<f64>,
}

impl TrajectoryPath {
    pub fn pose(&self, t: f64, horizon: f64) -> VehiclePose {
        match *self {
            TrajectoryPath::Circular {
                center,
                radius,
                height,
                undulation,
                undulation_cycles,
                revolutions,
            } => {
                let c = vec3(&center);
                let angle = 2.0 * PI * revolutions * t / horizon;
                let z = height + undulation * (2.0 * PI * undulation_cycles * t / horizon).sin();
                VehiclePose {
                    position: c + Vector3::new(radius * angle.cos(), radius * angle.sin(), z),
                    heading: Vector3::new(-angle.sin(), angle.cos(), 0.0),
                    look_target: c,
                }
            }
            TrajectoryPath::Linear { start, end, target } => {
                let a = vec3(&start);
                let b = vec3(&end);
                let dir = b - a;
                let flat = Vector3::new(dir.x, dir.y, 0.0);
                let heading = if flat.norm() > 0.0 { flat.normalize() } else { Vector3::x() };
                VehiclePose {
                    position: a + dir * (t / horizon),
                    heading,
                    look_target: vec3(&target),
                }
            }
        }
    }
}

/// Which pixels of each view are observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelGrid {
    pub stride: u32,
}

impl PixelGrid {
    pub fn pixels(&self, intr: &Intrinsics) -> Vec<[u32; 2]> {
        let stride = self.stride.max(1) as usize;
        let mut out = Vec::new();
        for v in (0..intr.height).step_by(stride) {
            for u in (0..intr.width).step_by(stride) {
                out.push([u, v]);
            }
        }
        out
    }
}

/// Camera hardware shared by every view of a design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub intrinsics: Intrinsics,
    pub pixel_stride: u32,
    /// Yaw spacing between mounted cameras when more than one is used.
    pub camera_spacing_deg: f64,
}

/// Off-trajectory displacement used for novel-view evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseOffset {
    /// Horizontal displacement along the camera's right axis (metres).
    pub lateral: f64,
    /// Extra yaw applied to every camera (degrees).
    pub yaw_deg: f64,
}

/// Ordered views × pixels. Row order everywhere is view-major, then pixel,
/// then channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationDesign {
    pub kind: DesignKind,
    pub views: Vec<View>,
    pub pixels: Vec<[u32; 2]>,
    pub cameras_per_time: usize,
    pub path: Option<TrajectoryPath>,
}

/// Uniform periodic time grid t_i = i·T/n (T itself excluded).
pub fn time_grid(horizon: f64, steps: usize) -> Vec<f64> {
    (0..steps).map(|i| horizon * i as f64 / steps as f64).collect()
}

fn yaw_rotate(v: &Vector3<f64>, yaw: f64) -> Vector3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), yaw) * v
}

pub fn make_trajectory_design(
    horizon: f64,
    camera_count: usize,
    timesteps: usize,
    path: TrajectoryPath,
    rig: &CameraRig,
    offset: Option<&PoseOffset>,
) -> Result<ObservationDesign> {
    if timesteps < 2 {
        return Err(LabError::config("design.timesteps", "need at least 2 timesteps"));
    }
    if camera_count < 1 {
        return Err(LabError::config("design.cameras", "need at least 1 camera"));
    }
    rig.intrinsics.validate()?;
    let mut views = Vec::with_capacity(timesteps * camera_count);
    for t in time_grid(horizon, timesteps) {
        let pose = path.pose(t, horizon);
        let mut position = pose.position;
        let mut forward = pose.look_target - pose.position;
        if let Some(off) = offset {
            let right = forward.cross(&Vector3::z());
            if right.norm() > 0.0 {
                position += right.normalize() * off.lateral;
            }
            forward = yaw_rotate(&forward, off.yaw_deg.to_radians());
        }
        for j in 0..camera_count {
            let yaw = (j as f64 - (camera_count as f64 - 1.0) / 2.0) * rig.camera_spacing_deg.to_radians();
            let camera = Camera::look_along(position, yaw_rotate(&forward, yaw), rig.intrinsics)?;
            views.push(View { time: t, camera });
        }
    }
    Ok(ObservationDesign {
        kind: DesignKind::Trajectory,
        views,
        pixels: PixelGrid { stride: rig.pixel_stride }.pixels(&rig.intrinsics),
        cameras_per_time: camera_count,
        path: Some(path),
    })
}

/// Every timestep paired with the same set of Fibonacci directions; cameras
/// sit at `radius` from `target` and look at it.
pub fn make_full_design(
    horizon: f64,
    timesteps: usize,
    directions: usize,
    target: [f64; 3],
    radius: f64,
    rig: &CameraRig,
) -> Result<ObservationDesign> {
    if timesteps < 1 || directions < 1 {
        return Err(LabError::config("design", "timesteps and directions must be ≥ 1"));
    }
    rig.intrinsics.validate()?;
    let centre = vec3(&target);
    let dirs = if directions == 1 {
        vec![Direction::new(1.0, 0.0, 0.25)?]
    } else {
        fibonacci_sphere(directions)
    };
    let mut views = Vec::with_capacity(timesteps * directions);
    for t in time_grid(horizon, timesteps) {
        for d in &dirs {
            let camera = Camera::look_at(centre + d.as_vector() * radius, centre, rig.intrinsics)?;
            views.push(View { time: t, camera });
        }
    }
    Ok(ObservationDesign {
        kind: if directions == 1 {
            DesignKind::Trajectory
        } else {
            DesignKind::FullManifold
        },
        views,
        pixels: PixelGrid { stride: rig.pixel_stride }.pixels(&rig.intrinsics),
        cameras_per_time: directions,
        path: None,
    })
}

impl ObservationDesign {
    pub fn rows(&self) -> usize {
        self.views.len() * self.pixels.len()
    }

    pub fn entries(&self) -> usize {
        self.rows() * CHANNELS
    }

    /// Query contexts in design order.
    pub fn contexts(&self) -> Vec<QueryContext> {
        let mut out = Vec::with_capacity(self.rows());
        for view in &self.views {
            let e = view.camera.extrinsic();
            let k = view.camera.intrinsics.matrix();
            for px in &self.pixels {
                out.push(QueryContext {
                    pixel: *px,
                    time: view.time,
                    extrinsic: e.clone(),
                    intrinsic: k,
                });
            }
        }
        out
    }

    /// Distinct view times in order of first appearance.
    pub fn times(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for v in &self.views {
            if !out.contains(&v.time) {
                out.push(v.time);
            }
        }
        out
    }

    /// True when each time has exactly `cameras_per_time` poses and repeated
    /// timestamps never disagree on the pose set.
    pub fn satisfies_sof(&self) -> bool {
        for t in self.times() {
            let poses: Vec<&Camera> = self.views.iter().filter(|v| v.time == t).map(|v| &v.camera).collect();
            if poses.len() != self.cameras_per_time {
                return false;
            }
        }
        self.kind == DesignKind::Trajectory
    }

    /// `(t, d)` samples of viewing directions from `point` to every camera.
    pub fn direction_samples(&self, point: &Vector3<f64>) -> Result<Vec<(f64, Direction)>> {
        self.views
            .iter()
            .map(|v| Ok((v.time, viewing_direction(point, &v.camera.center())?)))
            .collect()
    }

    pub fn select_views(&self, keep: impl Fn(usize, &View) -> bool) -> ObservationDesign {
        ObservationDesign {
            kind: self.kind,
            views: self
                .views
                .iter()
                .enumerate()
                .filter(|(i, v)| keep(*i, v))
                .map(|(_, v)| v.clone())
                .collect(),
            pixels: self.pixels.clone(),
            cameras_per_time: self.cameras_per_time,
            path: self.path,
        }
    }

    /// Smallest camera-centre distance from any view here to any view of `other`.
    pub fn min_pose_distance(&self, other: &ObservationDesign) -> f64 {
        let mut best = f64::INFINITY;
        for a in &self.views {
            for b in &other.views {
                best = best.min((a.camera.center() - b.camera.center()).norm());
            }
        }
        best
    }

    /// Largest camera-centre distance from `point`.
    pub fn max_camera_distance(&self, point: &Vector3<f64>) -> f64 {
        self.views
            .iter()
            .map(|v| (v.camera.center() - point).norm())
            .fold(0.0, f64::max)
    }
}

/// Random unit quaternion (w, x, y, z).
fn random_rotation<R: Rng>(rng: &mut R) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            let u = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
            return quat_array(&u);
        }
    }
}

/// A cluster of random primitives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveCloud {
    pub count: usize,
    pub region_min: [f64; 3],
    pub region_max: [f64; 3],
    pub scale_range: [f64; 2],
    pub opacity_range: [f64; 2],
    /// Range of the DC coefficient s_00 per channel.
    pub dc_range: [f64; 2],
    /// Standard deviation of l ≥ 1 coefficients.
    pub view_dependent_std: f64,
}

impl PrimitiveCloud {
    fn validate(&self, field: &str) -> Result<()> {
        for i in 0..3 {
            if self.region_min[i] > self.region_max[i] {
                return Err(LabError::config(field, "region_min exceeds region_max"));
            }
        }
        if !(self.scale_range[0] > 0.0 && self.scale_range[0] <= self.scale_range[1]) {
            return Err(LabError::config(field, "scale_range must be positive and ordered"));
        }
        if !(0.0 <= self.opacity_range[0] && self.opacity_range[0] <= self.opacity_range[1] && self.opacity_range[1] <= 1.0) {
            return Err(LabError::config(field, "opacity_range must lie in [0, 1]"));
        }
        if self.dc_range[0] > self.dc_range[1] || self.view_dependent_std < 0.0 {
            return Err(LabError::config(field, "invalid coefficient ranges"));
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R, terms: usize, varying: usize) -> Vec<Primitive> {
        let spread = Normal::new(0.0, self.view_dependent_std.max(0.0)).unwrap();
        let uniform = |rng: &mut R, lo: f64, hi: f64| if hi > lo { rng.random_range(lo..hi) } else { lo };
        (0..self.count)
            .map(|_| {
                let mean = std::array::from_fn(|i| uniform(rng, self.region_min[i], self.region_max[i]));
                let rotation = random_rotation(rng);
                let scale = std::array::from_fn(|_| uniform(rng, self.scale_range[0], self.scale_range[1]));
                let opacity = uniform(rng, self.opacity_range[0], self.opacity_range[1]);
                let mut appearance = Appearance::zeros(terms, varying);
                for ch in 0..CHANNELS {
                    appearance.spatial[ch][0] = uniform(rng, self.dc_range[0], self.dc_range[1]);
                    for lm in 1..terms {
                        appearance.spatial[ch][lm] = spread.sample(rng);
                    }
                }
                Primitive {
                    geometry: GaussianGeometry {
                        mean,
                        rotation,
                        scale,
                        opacity,
                    },
                    appearance,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum EventShape {
    /// Repeated pulses clip(sin(2π·cycles·t/T), 0)² inside [start, end]·T.
    Pulses { cycles: f64, start: f64, end: f64 },
    /// Raised-cosine bump over [start, end]·T.
    Bump { start: f64, end: f64 },
}

impl EventShape {
    fn value(&self, u: f64) -> f64 {
        match *self {
            EventShape::Pulses { cycles, start, end } => {
                if u < start || u > end {
                    0.0
                } else {
                    (2.0 * PI * cycles * u).sin().max(0.0).powi(2)
                }
            }
            EventShape::Bump { start, end } => {
                if u <= start || u >= end {
                    0.0
                } else {
                    let w = (u - start) / (end - start);
                    0.5 * (1.0 - (2.0 * PI * w).cos())
                }
            }
        }
    }
}

/// A time-varying appearance event planted on one agent primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecipe {
    /// Primitive index within its agent.
    pub primitive: usize,
    pub shape: EventShape,
    /// Colour change between `peak_time` and `rest_time` seen along any
    /// direction (the event only touches the l = 0 course).
    pub delta_rgb: [f64; 3],
    /// Fractions of the horizon.
    pub peak_time: f64,
    pub rest_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "motion", rename_all = "snake_case")]
pub enum AgentMotion {
    Parked { position: [f64; 3], yaw_deg: f64 },
    /// Rides along an ego path keeping `offset` in the ego frame
    /// (x along heading, y to the left).
    FollowPath {
        path: TrajectoryPath,
        offset: [f64; 2],
        keyframes: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecipe {
    pub name: String,
    pub motion: AgentMotion,
    pub cloud: PrimitiveCloud,
    #[serde(default)]
    pub events: Vec<EventRecipe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecipe {
    pub name: String,
    pub horizon: f64,
    pub sh_degree: usize,
    pub temporal: TemporalSpec,
    pub statics: PrimitiveCloud,
    #[serde(default)]
    pub agents: Vec<AgentRecipe>,
}

/// Serialized scene: recipe, seed, every primitive and θ*.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDocument {
    pub recipe: SceneRecipe,
    pub seed: u64,
    pub scene: SceneGraph,
    pub theta_layout: String,
    pub theta: Vec<f64>,
}

pub const THETA_LAYOUT: &str =
    "per primitive (statics, then agents), per channel (r, g, b): spatial s_lm in (l, m) row-major order, then temporal coefficients ascending n, each n in (l, m) row-major order";

impl SceneDocument {
    pub fn new(recipe: SceneRecipe, seed: u64, scene: SceneGraph) -> Self {
        let theta = scene.parameters();
        SceneDocument {
            recipe,
            seed,
            scene,
            theta_layout: THETA_LAYOUT.to_string(),
            theta,
        }
    }
}

fn fit_event(shape: &EventShape, basis: &TemporalBasis, peak: f64, rest: f64) -> Result<(f64, Vec<f64>)> {
    // Least-squares projection of the shape on a dense grid, then scaled so
    // the represented function changes by exactly 1 between peak and rest.
    let samples = 2048;
    let grid: Vec<f64> = (0..samples).map(|i| basis.horizon * i as f64 / samples as f64).collect();
    let design = nalgebra::DMatrix::from_fn(samples, basis.count, |i, n| basis.eval_all(grid[i])[n]);
    let target = nalgebra::DVector::from_iterator(samples, grid.iter().map(|t| shape.value(t / basis.horizon)));
    let (pinv, _) = crate::linalg::pinv(&design)?;
    let coeffs = pinv * target;
    let eval = |t: f64| basis.eval_all(t).iter().zip(coeffs.iter()).map(|(p, a)| p * a).sum::<f64>();
    let swing = eval(peak * basis.horizon) - eval(rest * basis.horizon);
    if swing.abs() < 1e-6 {
        return Err(LabError::config(
            "events",
            "event shape does not change between peak and rest once projected on the temporal basis",
        ));
    }
    let scaled: Vec<f64> = coeffs.iter().map(|a| a / swing).collect();
    Ok(basis.decompose(&scaled))
}

/// Generates a scene from a recipe; returns the scene and θ*.
pub fn synth_scene(recipe: &SceneRecipe, seed: u64) -> Result<(SceneGraph, Vec<f64>)> {
    if !(recipe.horizon > 0.0) {
        return Err(LabError::config("horizon", "must be positive"));
    }
    let sh = ShConfig::new(recipe.sh_degree).map_err(|e| LabError::config("sh_degree", e.to_string()))?;
    let temporal = TemporalBasis::new(recipe.temporal.kind, recipe.temporal.count, recipe.temporal.horizon)?;
    if (temporal.horizon - recipe.horizon).abs() > 1e-12 {
        return Err(LabError::config("temporal.horizon", "must equal the scene horizon"));
    }
    let terms = sh.term_count();
    let varying = temporal.varying_count();
    recipe.statics.validate("statics")?;
    let mut rng = seeds::stream(seed, "scene.statics", 0);
    let statics = recipe.statics.sample(&mut rng, terms, varying);
    let mut agents = Vec::new();
    for (ai, ar) in recipe.agents.iter().enumerate() {
        ar.cloud.validate("agents.cloud")?;
        let mut rng = seeds::stream(seed, "scene.agent", ai as u64);
        let mut primitives = ar.cloud.sample(&mut rng, terms, varying);
        for ev in &ar.events {
            let Some(p) = primitives.get_mut(ev.primitive) else {
                return Err(LabError::config(
                    "agents.events.primitive",
                    format!("agent {} has no primitive {}", ar.name, ev.primitive),
                ));
            };
            if varying == 0 {
                return Err(LabError::config("temporal.count", "events need at least 2 temporal functions"));
            }
            let (constant, course) = fit_event(&ev.shape, &temporal, ev.peak_time, ev.rest_time)?;
            let y00 = crate::basis::eval_sh(&sh, 0, 0, &Direction::new(0.0, 0.0, 1.0)?)?;
            for ch in 0..CHANNELS {
                let amp = ev.delta_rgb[ch] / y00;
                p.appearance.spatial[ch][0] += amp * constant;
                for (j, c) in course.iter().enumerate() {
                    p.appearance.temporal[ch][j * terms] += amp * c;
                }
            }
        }
        let track = match &ar.motion {
            AgentMotion::Parked { position, yaw_deg } => {
                PoseTrack::stationary(RigidTransform::from_yaw(yaw_deg.to_radians(), *position), recipe.horizon)
            }
            AgentMotion::FollowPath {
                path,
                offset,
                keyframes,
            } => {
                let count = (*keyframes).max(2);
                let keyframes = (0..count)
                    .map(|i| {
                        let t = recipe.horizon * i as f64 / (count - 1) as f64;
                        let pose = path.pose(t, recipe.horizon);
                        let left = Vector3::z().cross(&pose.heading);
                        let position = pose.position + pose.heading * offset[0] + left * offset[1];
                        let yaw = pose.heading.y.atan2(pose.heading.x);
                        PoseKeyframe {
                            time: t,
                            transform: RigidTransform::from_yaw(yaw, arr3(&position)),
                        }
                    })
                    .collect();
                PoseTrack { keyframes }
            }
        };
        agents.push(Agent {
            name: ar.name.clone(),
            track,
            primitives,
        });
    }
    let scene = SceneGraph {
        horizon: recipe.horizon,
        sh,
        temporal,
        statics,
        agents,
    };
    scene.validate()?;
    let theta = scene.parameters();
    Ok((scene, theta))
}
