//! Internal-camera rendering of the skin, its markers and, for transparent
//! skins, the external scene seen through them.
//!
//! A frame is composed per pixel as
//! `(albedo * (1 - alpha) * ring_shading + alpha * ambient * transmitted) * (1 - marker)`.
//! The geometric parts (rasterized skin, ring-light shading and transmitted
//! radiance) do not depend on the optical mode, so [`RenderPass`] computes
//! them once and composes any number of sensor variants from them.

use std::sync::Arc;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::FisheyeCamera;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::mechanics::DeformationState;
use crate::sensor::{SensorModel, SensorSpec, SkinMode, Vec3};
use crate::stimulus::Placement;

/// Reflectance of the skin's inner surface.
pub const SKIN_ALBEDO: f64 = 0.9;

pub type Rgb = [f64; 3];

/// Tileable RGB texture laid on the background plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    pub width: u32,
    pub height: u32,
    /// Linear RGB in [0, 1], row-major.
    pub texels: Vec<Rgb>,
    /// Side length of one texture tile on the plane.
    pub tile_mm: f64,
}

impl Texture {
    pub fn from_frame(frame: &Frame, tile_mm: f64) -> Self {
        Texture {
            width: frame.width,
            height: frame.height,
            texels: frame
                .pixels
                .chunks_exact(3)
                .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
                .collect(),
            tile_mm,
        }
    }

    fn sample(&self, x: f64, y: f64) -> Rgb {
        let fx = (x / self.tile_mm).rem_euclid(1.0);
        let fy = (y / self.tile_mm).rem_euclid(1.0);
        let i = ((fx * self.width as f64) as u32).min(self.width - 1);
        let j = ((fy * self.height as f64) as u32).min(self.height - 1);
        self.texels[(j * self.width + i) as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Background {
    SolidColor(Rgb),
    Checker { a: Rgb, b: Rgb, cell_mm: f64 },
    TexturedPlane(Arc<Texture>),
}

impl Background {
    fn radiance(&self, x: f64, y: f64) -> Rgb {
        match self {
            Background::SolidColor(c) => *c,
            Background::Checker { a, b, cell_mm } => {
                let parity = ((x / cell_mm).floor() + (y / cell_mm).floor()) as i64;
                if parity.rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
            Background::TexturedPlane(t) => t.sample(x, y),
        }
    }
}

/// A placed stimulus visible through a transparent skin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    pub placement: Placement,
    pub albedo: Rgb,
}

/// Everything outside the skin.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualScene {
    pub background: Background,
    /// Distance of the background plane beyond the dome apex.
    pub background_distance_mm: f64,
    /// Relative irradiance of the external light, in [0, 2].
    pub ambient_light: f64,
    pub object: Option<SceneObject>,
}

impl Default for VisualScene {
    fn default() -> Self {
        VisualScene {
            background: Background::SolidColor([0.5, 0.5, 0.5]),
            background_distance_mm: 15.0,
            ambient_light: 1.0,
            object: None,
        }
    }
}

impl VisualScene {
    pub fn validate(&self) -> Result<()> {
        if !(self.background_distance_mm > 0.0 && self.background_distance_mm.is_finite()) {
            return Err(Error::config("background_distance_mm", "must be positive"));
        }
        if !(0.0..=2.0).contains(&self.ambient_light) {
            return Err(Error::config("ambient_light", "must lie in [0, 2]"));
        }
        if let Background::Checker { cell_mm, .. } = self.background {
            if !(cell_mm > 0.0) {
                return Err(Error::config("cell_mm", "must be positive"));
            }
        }
        if let Background::TexturedPlane(t) = &self.background {
            if t.width == 0 || t.height == 0 || !(t.tile_mm > 0.0) {
                return Err(Error::config("texture", "empty texture or non-positive tile size"));
            }
        }
        Ok(())
    }
}

const NO_TRIANGLE: u32 = u32::MAX;

/// Mode-independent per-pixel quantities for one contact state and scene.
#[derive(Debug, Clone)]
pub struct RenderPass {
    camera: FisheyeCamera,
    /// Ring-light shading of the skin, `None` where no skin is visible.
    shading: Vec<Option<f64>>,
    /// Attenuated external radiance along each pixel ray (before alpha and ambient).
    transmitted: Vec<Rgb>,
    ambient: f64,
    pin_tips: Vec<Vec3>,
    geometry: (f64, usize),
}

impl RenderPass {
    /// Prepares a pass from which every sensor variant sharing `spec`'s
    /// geometry, lighting and image size can be composed.
    pub fn new(
        model: &SensorModel,
        state: &DeformationState,
        scene: &VisualScene,
        spec: &SensorSpec,
    ) -> Result<Self> {
        Self::build(model, state, scene, spec, true)
    }

    fn build(
        model: &SensorModel,
        state: &DeformationState,
        scene: &VisualScene,
        spec: &SensorSpec,
        with_transmission: bool,
    ) -> Result<Self> {
        scene.validate()?;
        if state.node_positions.len() != model.node_count() {
            return Err(Error::Contract(format!(
                "deformation has {} nodes, model has {}",
                state.node_positions.len(),
                model.node_count()
            )));
        }
        let camera = FisheyeCamera::from_spec(spec);
        let (w, h) = (camera.width as usize, camera.height as usize);
        let positions = &state.node_positions;
        let normals = &state.node_normals;

        // rasterize with a nearest-distance depth test
        let mut tri_id = vec![NO_TRIANGLE; w * h];
        let mut bary = vec![[0.0f64; 3]; w * h];
        let mut depth = vec![f64::INFINITY; w * h];
        let projected: Vec<_> = positions.iter().map(|p| camera.project(p)).collect();
        for (t, tri) in model.triangles.iter().enumerate() {
            let q = [projected[tri[0]], projected[tri[1]], projected[tri[2]]];
            if q.iter().any(|p| p.out_of_view) {
                continue;
            }
            let area = (q[1].u - q[0].u) * (q[2].v - q[0].v) - (q[2].u - q[0].u) * (q[1].v - q[0].v);
            if area.abs() < 1e-12 {
                continue;
            }
            let min_u = q.iter().map(|p| p.u).fold(f64::INFINITY, f64::min);
            let max_u = q.iter().map(|p| p.u).fold(f64::NEG_INFINITY, f64::max);
            let min_v = q.iter().map(|p| p.v).fold(f64::INFINITY, f64::min);
            let max_v = q.iter().map(|p| p.v).fold(f64::NEG_INFINITY, f64::max);
            let x0 = (min_u - 0.5).ceil().max(0.0) as usize;
            let x1 = ((max_u - 0.5).floor().min(w as f64 - 1.0)).max(-1.0) as isize;
            let y0 = (min_v - 0.5).ceil().max(0.0) as usize;
            let y1 = ((max_v - 0.5).floor().min(h as f64 - 1.0)).max(-1.0) as isize;
            for y in y0 as isize..=y1 {
                let pv = y as f64 + 0.5;
                for x in x0 as isize..=x1 {
                    let pu = x as f64 + 0.5;
                    let b1 = ((pu - q[0].u) * (q[2].v - q[0].v) - (q[2].u - q[0].u) * (pv - q[0].v)) / area;
                    let b2 = ((q[1].u - q[0].u) * (pv - q[0].v) - (pu - q[0].u) * (q[1].v - q[0].v)) / area;
                    let b0 = 1.0 - b1 - b2;
                    const EPS: f64 = -1e-9;
                    if b0 < EPS || b1 < EPS || b2 < EPS {
                        continue;
                    }
                    let p = positions[tri[0]] * b0 + positions[tri[1]] * b1 + positions[tri[2]] * b2;
                    let d = p.norm();
                    let idx = y as usize * w + x as usize;
                    if d < depth[idx] {
                        depth[idx] = d;
                        tri_id[idx] = t as u32;
                        bary[idx] = [b0, b1, b2];
                    }
                }
            }
        }

        let lights: Vec<Vec3> = (0..spec.ring_light_count)
            .map(|k| {
                let phi = 2.0 * std::f64::consts::PI * k as f64 / spec.ring_light_count as f64;
                Vec3::new(spec.ring_light_radius_mm * phi.cos(), spec.ring_light_radius_mm * phi.sin(), 0.0)
            })
            .collect();
        let r2 = spec.dome_radius_mm * spec.dome_radius_mm;
        let light_norm = spec.ring_light_intensity / spec.ring_light_count.max(1) as f64;

        let see_through = with_transmission && scene.ambient_light > 0.0;
        let range = spec.external_visibility_range_mm;
        let plane_z = spec.dome_radius_mm + scene.background_distance_mm;

        let mut shading = vec![None; w * h];
        let mut transmitted = vec![[0.0; 3]; w * h];
        for idx in 0..w * h {
            let t = tri_id[idx];
            if t == NO_TRIANGLE {
                continue;
            }
            let tri = model.triangles[t as usize];
            let [b0, b1, b2] = bary[idx];
            let p = positions[tri[0]] * b0 + positions[tri[1]] * b1 + positions[tri[2]] * b2;
            let outward = (normals[tri[0]] * b0 + normals[tri[1]] * b1 + normals[tri[2]] * b2).normalize();
            let inward = -outward;
            let mut s = 0.0;
            for l in &lights {
                let to_light = l - p;
                let d2 = to_light.norm_squared();
                let cos = inward.dot(&to_light) / d2.sqrt();
                if cos > 0.0 {
                    s += cos * r2 / d2;
                }
            }
            shading[idx] = Some(s * light_norm);

            if see_through {
                let dir = p.normalize();
                transmitted[idx] = external_radiance(scene, &p, &dir, plane_z, range);
            }
        }

        Ok(RenderPass {
            camera,
            shading,
            transmitted,
            ambient: scene.ambient_light,
            pin_tips: state.pin_tips.clone(),
            geometry: (spec.dome_radius_mm, model.node_count()),
        })
    }

    /// Composes the frame seen by the sensor variant `spec`. The spec must share
    /// the geometry and image size the pass was built with.
    pub fn frame(&self, spec: &SensorSpec) -> Result<Frame> {
        if spec.image_size_px != (self.camera.width, self.camera.height)
            || spec.dome_radius_mm != self.geometry.0
        {
            return Err(Error::Contract("spec geometry differs from the render pass".into()));
        }
        if spec.has_pins && self.pin_tips.len() != spec.expected_pin_count() {
            return Err(Error::Contract(format!(
                "spec expects {} pins, deformation has {}",
                spec.expected_pin_count(),
                self.pin_tips.len()
            )));
        }
        let (w, h) = (self.camera.width as usize, self.camera.height as usize);
        let alpha = match spec.skin_mode {
            SkinMode::Opaque => 0.0,
            SkinMode::Transparent => spec.transparency_alpha,
        };
        let reflect = SKIN_ALBEDO * (1.0 - alpha);
        let through = alpha * self.ambient;

        let mut rgb = vec![[0.0f64; 3]; w * h];
        for idx in 0..w * h {
            if let Some(s) = self.shading[idx] {
                let base = reflect * s;
                let mut px = [base; 3];
                if through > 0.0 {
                    for (c, t) in px.iter_mut().zip(&self.transmitted[idx]) {
                        *c += through * t;
                    }
                }
                rgb[idx] = px;
            }
        }

        if spec.has_pins {
            let cover = marker_coverage(&self.camera, &self.pin_tips, spec.marker_radius_mm);
            for (px, c) in rgb.iter_mut().zip(&cover) {
                if *c > 0.0 {
                    for v in px.iter_mut() {
                        *v *= 1.0 - c;
                    }
                }
            }
        }

        let mut frame = Frame::new(w as u32, h as u32);
        for (out, px) in frame.pixels.chunks_exact_mut(3).zip(&rgb) {
            for (o, v) in out.iter_mut().zip(px) {
                *o = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        Ok(frame)
    }
}

/// Radiance reaching the skin along `dir` from the stimulus or the background
/// plane, faded linearly to zero at `range`.
fn external_radiance(scene: &VisualScene, p: &Vec3, dir: &Vec3, plane_z: f64, range: f64) -> Rgb {
    let mut hit_t = f64::INFINITY;
    let mut radiance = [0.0; 3];
    if dir.z > 0.0 {
        let t = (plane_z - p.z) / dir.z;
        if t >= 0.0 {
            hit_t = t;
            let q = p + dir * t;
            radiance = scene.background.radiance(q.x, q.y);
        }
    }
    if let Some(obj) = &scene.object {
        if let Some(t) = obj.placement.march(p, dir, hit_t.min(range)) {
            hit_t = t;
            let q = p + dir * t;
            let (_, n) = obj.placement.sdf_with_grad(&q);
            let facing = n.dot(&-dir).max(0.0);
            let ao = ambient_occlusion(&obj.placement, &q, &n);
            let k = ao * (0.5 + 0.5 * facing);
            radiance = [obj.albedo[0] * k, obj.albedo[1] * k, obj.albedo[2] * k];
        }
    }
    if hit_t >= range {
        return [0.0; 3];
    }
    let fade = 1.0 - hit_t / range;
    [radiance[0] * fade, radiance[1] * fade, radiance[2] * fade]
}

/// Distance-field ambient occlusion: samples along the normal that find the
/// surface closer than their offset darken the point.
fn ambient_occlusion(placement: &Placement, q: &Vec3, n: &Vec3) -> f64 {
    let mut occ = 0.0;
    let mut weight = 1.0;
    for i in 1..=5 {
        let h = 0.3 * i as f64;
        let d = placement.sdf(&(q + n * h));
        occ += weight * (h - d).max(0.0);
        weight *= 0.6;
    }
    (1.0 - 0.6 * occ).clamp(0.0, 1.0)
}

/// Fraction of each pixel covered by a marker disk (4x4 supersampling).
pub fn marker_coverage(camera: &FisheyeCamera, tips: &[Vec3], marker_radius_mm: f64) -> Vec<f64> {
    let (w, h) = (camera.width as usize, camera.height as usize);
    let mut cover = vec![0.0f64; w * h];
    for tip in tips {
        let Some((u, v, r)) = marker_disk(camera, tip, marker_radius_mm) else {
            continue;
        };
        let x0 = (u - r).floor().max(0.0) as usize;
        let x1 = ((u + r).ceil() as isize).min(w as isize - 1);
        let y0 = (v - r).floor().max(0.0) as usize;
        let y1 = ((v + r).ceil() as isize).min(h as isize - 1);
        let r2 = r * r;
        for y in y0 as isize..=y1 {
            for x in x0 as isize..=x1 {
                let mut hits = 0;
                for sy in 0..4 {
                    let py = y as f64 + (sy as f64 + 0.5) / 4.0 - v;
                    for sx in 0..4 {
                        let px = x as f64 + (sx as f64 + 0.5) / 4.0 - u;
                        if px * px + py * py <= r2 {
                            hits += 1;
                        }
                    }
                }
                let idx = y as usize * w + x as usize;
                cover[idx] = cover[idx].max(hits as f64 / 16.0);
            }
        }
    }
    cover
}

/// Image center and radius (px) of the disk drawn for one pin tip.
pub fn marker_disk(camera: &FisheyeCamera, tip: &Vec3, marker_radius_mm: f64) -> Option<(f64, f64, f64)> {
    let p = camera.project(tip);
    if p.out_of_view {
        return None;
    }
    let r = camera.focal_px * FisheyeCamera::angular_radius(marker_radius_mm, tip.norm());
    Some((p.u, p.v, r))
}

/// Renders one frame of `spec`'s sensor variant.
pub fn render(
    model: &SensorModel,
    state: &DeformationState,
    scene: &VisualScene,
    spec: &SensorSpec,
) -> Result<Frame> {
    let transparent = spec.skin_mode == SkinMode::Transparent;
    RenderPass::build(model, state, scene, spec, transparent)?.frame(spec)
}

/// Adds zero-mean Gaussian noise with standard deviation `sigma` intensity levels.
pub fn add_pixel_noise(frame: &mut Frame, sigma: f64, seed: u64) {
    if !(sigma > 0.0) {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    for v in frame.pixels.iter_mut() {
        let n: f64 = normal.sample(&mut rng);
        *v = (*v as f64 + n).round().clamp(0.0, 255.0) as u8;
    }
}
