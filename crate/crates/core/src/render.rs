//! Brute-force splat renderer: EWA projection, Gaussian footprints and
//! front-to-back alpha blending of 4D appearance colours.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::scene::{viewing_direction, Camera, ObservationDesign, SceneGraph, View, WorldPrimitive, CHANNELS};
use crate::seeds;

/// Added to the diagonal of every projected covariance (px²).
pub const COVARIANCE_INFLATION: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub mean: Vector2<f64>,
    /// Projected covariance including the diagonal inflation.
    pub covariance: Matrix2<f64>,
    /// Projected covariance before inflation.
    pub covariance_raw: Matrix2<f64>,
    pub depth: f64,
    pub index: usize,
}

/// Pinhole projection with the local-affine (EWA) covariance; `None` when
/// the primitive is not in front of the camera.
pub fn project(prim: &WorldPrimitive, camera: &Camera) -> Option<Splat2D> {
    let r = camera.rotation();
    let pc = r * (prim.mean - camera.center());
    let depth = -pc.z;
    if depth <= 0.0 {
        return None;
    }
    let k = &camera.intrinsics;
    // Coordinates with y down and z forward: (x, −y, −z).
    let flip = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    let w = flip * r;
    let x = pc.x;
    let y = -pc.y;
    let mean = Vector2::new(k.cx + k.fx * x / depth, k.cy + k.fy * y / depth);
    let jac = nalgebra::Matrix2x3::new(
        k.fx / depth,
        0.0,
        -k.fx * x / (depth * depth),
        0.0,
        k.fy / depth,
        -k.fy * y / (depth * depth),
    );
    let cov_cam = w * prim.covariance * w.transpose();
    let raw = jac * cov_cam * jac.transpose();
    let raw = (raw + raw.transpose()) * 0.5;
    Some(Splat2D {
        mean,
        covariance: raw + Matrix2::identity() * COVARIANCE_INFLATION,
        covariance_raw: raw,
        depth,
        index: prim.index,
    })
}

/// exp(−½ δᵀ Σ⁻¹ δ) for δ = (u, v) − μ.
pub fn gaussian_weight(splat: &Splat2D, u: f64, v: f64) -> Result<f64> {
    let inv = splat
        .covariance
        .try_inverse()
        .ok_or_else(|| LabError::Numeric(format!("singular 2D covariance for primitive {}", splat.index)))?;
    let d = Vector2::new(u, v) - splat.mean;
    let m = (d.transpose() * inv * d)[(0, 0)];
    Ok((-0.5 * m).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelRender {
    pub color: [f64; CHANNELS],
    /// (primitive index, ω_k) in front-to-back order.
    pub weights: Vec<(usize, f64)>,
}

/// Per-view quantities shared by every pixel of the view.
#[derive(Debug, Clone)]
pub struct ViewRender {
    pub time: f64,
    /// Depth-sorted splats (ties broken by primitive index).
    pub splats: Vec<Splat2D>,
    inverse: Vec<Matrix2<f64>>,
    /// SH values of each primitive's viewing direction, by primitive index.
    pub sh: Vec<Vec<f64>>,
    /// Time-varying basis values at `time`.
    pub varying: Vec<f64>,
    /// Colour of each primitive at (t, d_k), by primitive index.
    pub colors: Vec<[f64; CHANNELS]>,
}

impl ViewRender {
    pub fn new(scene: &SceneGraph, view: &View) -> Result<Self> {
        let world = scene.resolve_world(view.time)?;
        Self::from_world(scene, &world, &view.camera, view.time)
    }

    pub fn from_world(scene: &SceneGraph, world: &[WorldPrimitive], camera: &Camera, time: f64) -> Result<Self> {
        let mut splats: Vec<Splat2D> = world.iter().filter_map(|p| project(p, camera)).collect();
        splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
        let inverse = splats
            .iter()
            .map(|s| {
                s.covariance
                    .try_inverse()
                    .ok_or_else(|| LabError::Numeric(format!("singular 2D covariance for primitive {}", s.index)))
            })
            .collect::<Result<Vec<_>>>()?;
        let varying = scene.temporal.varying_all(time);
        let center = camera.center();
        let mut sh = Vec::with_capacity(world.len());
        let mut colors = Vec::with_capacity(world.len());
        for (p, prim) in world.iter().zip(scene.primitives()) {
            let d = viewing_direction(&p.mean, &center)?;
            let y = scene.sh.eval_all(&d);
            colors.push(prim.appearance.color(&y, &varying));
            sh.push(y);
        }
        Ok(ViewRender {
            time,
            splats,
            inverse,
            sh,
            varying,
            colors,
        })
    }

    /// Front-to-back blending weights ω_k = p_k α_k ∏_{j<k}(1 − p_j α_j).
    pub fn weights(&self, world_opacity: &[f64], pixel: [u32; 2]) -> Vec<(usize, f64)> {
        let at = Vector2::new(pixel[0] as f64, pixel[1] as f64);
        let mut transmittance = 1.0;
        let mut out = Vec::new();
        for (s, inv) in self.splats.iter().zip(&self.inverse) {
            let d = at - s.mean;
            let m = (d.transpose() * inv * d)[(0, 0)];
            let a = (-0.5 * m).exp() * world_opacity[s.index];
            let w = a * transmittance;
            if w > 0.0 {
                out.push((s.index, w));
            }
            transmittance *= 1.0 - a;
        }
        out
    }

    pub fn pixel(&self, world_opacity: &[f64], pixel: [u32; 2]) -> PixelRender {
        let weights = self.weights(world_opacity, pixel);
        let mut color = [0.0; CHANNELS];
        for &(k, w) in &weights {
            for (ch, c) in color.iter_mut().enumerate() {
                *c += w * self.colors[k][ch];
            }
        }
        PixelRender { color, weights }
    }
}

pub fn opacities(scene: &SceneGraph) -> Vec<f64> {
    scene.primitives().map(|p| p.geometry.opacity).collect()
}

/// Renders one pixel of one query.
pub fn render_pixel(scene: &SceneGraph, camera: &Camera, time: f64, pixel: [u32; 2]) -> Result<PixelRender> {
    let view = View {
        time,
        camera: camera.clone(),
    };
    Ok(ViewRender::new(scene, &view)?.pixel(&opacities(scene), pixel))
}

/// Rendered observation vectors in design order (view, pixel, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
    pub sigma: f64,
}

/// Clean rendering of every design entry.
pub fn render_clean(scene: &SceneGraph, design: &ObservationDesign) -> Result<Vec<f64>> {
    let alpha = opacities(scene);
    let per_view: Vec<Vec<f64>> = design
        .views
        .par_iter()
        .map(|view| {
            let vr = ViewRender::new(scene, view)?;
            let mut out = Vec::with_capacity(design.pixels.len() * CHANNELS);
            for px in &design.pixels {
                out.extend_from_slice(&vr.pixel(&alpha, *px).color);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_view.concat())
}

/// Clean rendering plus i.i.d. N(0, σ²) noise drawn from the `noise` stream of `seed`.
pub fn render_design(scene: &SceneGraph, design: &ObservationDesign, sigma: f64, seed: u64) -> Result<Observations> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(LabError::Domain(format!("noise sigma {sigma} must be ≥ 0")));
    }
    let clean = render_clean(scene, design)?;
    let noisy = add_noise(&clean, sigma, seed);
    Ok(Observations { clean, noisy, sigma })
}

pub fn add_noise(clean: &[f64], sigma: f64, seed: u64) -> Vec<f64> {
    if sigma == 0.0 {
        return clean.to_vec();
    }
    let mut rng = seeds::stream(seed, "noise", 0);
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    clean.iter().map(|c| c + normal.sample(&mut rng)).collect()
}

/// Full-resolution RGB image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[f64; CHANNELS]>,
}

pub fn render_image(scene: &SceneGraph, camera: &Camera, time: f64) -> Result<Image> {
    let view = View {
        time,
        camera: camera.clone(),
    };
    let vr = ViewRender::new(scene, &view)?;
    let alpha = opacities(scene);
    let k = camera.intrinsics;
    let pixels = (0..k.height)
        .flat_map(|v| (0..k.width).map(move |u| [u, v]))
        .map(|px| vr.pixel(&alpha, px).color)
        .collect();
    Ok(Image {
        width: k.width,
        height: k.height,
        pixels,
    })
}

/// PSNR in dB of colours clamped to [0, 1]; `f64::INFINITY` when identical.
pub fn psnr(reference: &[f64], estimate: &[f64]) -> f64 {
    assert_eq!(reference.len(), estimate.len());
    if reference.is_empty() {
        return f64::INFINITY;
    }
    let mse = reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| {
            let d = a.clamp(0.0, 1.0) - b.clamp(0.0, 1.0);
            d * d
        })
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{ShConfig, TemporalBasis};
    use crate::scene::{Appearance, GaussianGeometry, Intrinsics, Primitive};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn intr() -> Intrinsics {
        Intrinsics {
            fx: 20.0,
            fy: 20.0,
            cx: 16.0,
            cy: 12.0,
            width: 32,
            height: 24,
        }
    }

    fn world(mean: [f64; 3], sigma: f64) -> WorldPrimitive {
        WorldPrimitive {
            index: 0,
            mean: Vector3::new(mean[0], mean[1], mean[2]),
            covariance: Matrix3::identity() * sigma * sigma,
            opacity: 1.0,
        }
    }

    fn axis_camera() -> Camera {
        // Looks along +x from the origin.
        Camera::look_at(Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), intr()).unwrap()
    }

    #[test]
    fn on_axis_projection_hits_principal_point() {
        let s = project(&world([10.0, 0.0, 0.0], 0.5), &axis_camera()).unwrap();
        assert_abs_diff_eq!(s.mean.x, 16.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.mean.y, 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.depth, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn isotropic_covariance_scales_with_focal_over_depth() {
        let s = project(&world([10.0, 0.0, 0.0], 0.5), &axis_camera()).unwrap();
        let expect = (20.0 * 0.5 / 10.0f64).powi(2);
        assert!((s.covariance_raw - Matrix2::identity() * expect).norm() < 1e-12);
        let far = project(&world([20.0, 0.0, 0.0], 0.5), &axis_camera()).unwrap();
        assert_abs_diff_eq!(far.covariance_raw[(0, 0)] / s.covariance_raw[(0, 0)], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(s.covariance[(0, 0)], expect + COVARIANCE_INFLATION, epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_is_skipped() {
        assert!(project(&world([-3.0, 0.0, 0.0], 0.5), &axis_camera()).is_none());
    }

    #[test]
    fn gaussian_weight_examples() {
        let s = project(&world([10.0, 0.0, 0.0], 0.5), &axis_camera()).unwrap();
        assert_eq!(gaussian_weight(&s, s.mean.x, s.mean.y).unwrap(), 1.0);
        let sd = s.covariance[(0, 0)].sqrt();
        assert_abs_diff_eq!(gaussian_weight(&s, s.mean.x + sd, s.mean.y).unwrap(), (-0.5f64).exp(), epsilon = 1e-12);
        assert!(gaussian_weight(&s, s.mean.x + 6.0 * sd, s.mean.y).unwrap() < 1e-7);
        let mut bad = s.clone();
        bad.covariance = Matrix2::zeros();
        assert!(matches!(gaussian_weight(&bad, 0.0, 0.0), Err(LabError::Numeric(_))));
    }

    fn scene_with(prims: Vec<([f64; 3], f64, f64)>) -> SceneGraph {
        let sh = ShConfig::new(1).unwrap();
        let temporal = TemporalBasis::fourier(3, 1.0).unwrap();
        let statics = prims
            .into_iter()
            .map(|(mean, scale, opacity)| {
                let mut appearance = Appearance::zeros(4, 2);
                for ch in 0..3 {
                    appearance.spatial[ch][0] = 1.0 + ch as f64;
                    appearance.spatial[ch][1] = 0.2;
                    appearance.temporal[ch][0] = 0.3;
                }
                Primitive {
                    geometry: GaussianGeometry {
                        mean,
                        rotation: [1.0, 0.0, 0.0, 0.0],
                        scale: [scale; 3],
                        opacity,
                    },
                    appearance,
                }
            })
            .collect();
        SceneGraph {
            horizon: 1.0,
            sh,
            temporal,
            statics,
            agents: vec![],
        }
    }

    fn centre_pixel(scene: &SceneGraph, t: f64) -> PixelRender {
        render_pixel(scene, &axis_camera(), t, [16, 12]).unwrap()
    }

    #[test]
    fn single_opaque_primitive_at_its_mean_has_unit_weight() {
        let scene = scene_with(vec![([10.0, 0.0, 0.0], 0.5, 1.0)]);
        let r = centre_pixel(&scene, 0.3);
        assert_eq!(r.weights, vec![(0, 1.0)]);
        let vr = ViewRender::new(&scene, &View { time: 0.3, camera: axis_camera() }).unwrap();
        for ch in 0..3 {
            assert_abs_diff_eq!(r.color[ch], vr.colors[0][ch], epsilon = 1e-15);
        }
    }

    #[test]
    fn co_located_half_opaque_pair_blends() {
        let scene = scene_with(vec![([10.0, 0.0, 0.0], 0.5, 0.5), ([10.0, 0.0, 0.0], 0.5, 0.5)]);
        let r = centre_pixel(&scene, 0.0);
        assert_eq!(r.weights, vec![(0, 0.5), (1, 0.25)]);
    }

    #[test]
    fn opaque_occluder_hides_rear_primitive() {
        let scene = scene_with(vec![([12.0, 0.0, 0.0], 0.5, 1.0), ([8.0, 0.0, 0.0], 0.5, 1.0)]);
        let r = centre_pixel(&scene, 0.0);
        assert_eq!(r.weights, vec![(1, 1.0)]);
    }

    #[test]
    fn empty_scene_renders_black() {
        let scene = scene_with(vec![]);
        let r = centre_pixel(&scene, 0.0);
        assert_eq!(r.color, [0.0; 3]);
        assert!(r.weights.is_empty());
    }

    fn small_design() -> ObservationDesign {
        let rig = crate::scene::CameraRig {
            intrinsics: intr(),
            pixel_stride: 2,
            camera_spacing_deg: 30.0,
        };
        crate::scene::make_full_design(1.0, 3, 4, [10.0, 0.0, 0.0], 6.0, &rig).unwrap()
    }

    #[test]
    fn noise_free_and_seeded_noise() {
        let scene = scene_with(vec![([10.0, 0.0, 0.0], 0.5, 0.8)]);
        let design = small_design();
        let o = render_design(&scene, &design, 0.0, 1).unwrap();
        assert_eq!(o.clean, o.noisy);
        let a = render_design(&scene, &design, 0.1, 9).unwrap();
        let b = render_design(&scene, &design, 0.1, 9).unwrap();
        assert_eq!(a.noisy, b.noisy);
        assert!(render_design(&scene, &design, -1.0, 9).is_err());
    }

    #[test]
    fn empirical_noise_std_matches_sigma() {
        let clean = vec![0.5; 10_000];
        let noisy = add_noise(&clean, 0.02, 4);
        let n = noisy.len() as f64;
        let mean = noisy.iter().sum::<f64>() / n;
        let var = noisy.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() / 0.02 - 1.0).abs() < 0.05);
    }

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        assert_eq!(psnr(&[0.2, 0.4], &[0.2, 0.4]), f64::INFINITY);
        assert_abs_diff_eq!(psnr(&[0.0], &[0.1]), 20.0, epsilon = 1e-9);
        // Clamped before comparison.
        assert_eq!(psnr(&[1.0], &[1.7]), f64::INFINITY);
    }

    proptest! {
        #[test]
        fn weights_are_bounded_and_sum_below_one(
            seed in 0u64..500,
            u in 0u32..32,
            v in 0u32..24,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let prims: Vec<([f64; 3], f64, f64)> = (0..6)
                .map(|_| {
                    ([rng.random_range(6.0..14.0), rng.random_range(-2.0..2.0), rng.random_range(-1.5..1.5)],
                     rng.random_range(0.1..0.8), rng.random_range(0.0..1.0))
                })
                .collect();
            let scene = scene_with(prims);
            let r = render_pixel(&scene, &axis_camera(), 0.5, [u, v]).unwrap();
            let total: f64 = r.weights.iter().map(|w| w.1).sum();
            prop_assert!(r.weights.iter().all(|w| (0.0..=1.0).contains(&w.1)));
            prop_assert!(total <= 1.0 + 1e-9);
        }
    }
}
