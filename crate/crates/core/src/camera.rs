//! Equidistant fisheye camera at the dome center, looking along +z toward the apex.

use crate::sensor::{SensorSpec, Vec3};

/// Equidistant fisheye model: image radius is proportional to the ray angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisheyeCamera {
    pub width: u32,
    pub height: u32,
    /// Pixels per radian of ray angle.
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
    pub half_fov_rad: f64,
}

/// Result of projecting a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Ray angle from the optical axis.
    pub angle: f64,
    /// True when the point is behind the camera plane or outside the field of view.
    pub out_of_view: bool,
}

impl FisheyeCamera {
    pub fn from_spec(spec: &SensorSpec) -> Self {
        let (w, h) = spec.image_size_px;
        let half_fov = spec.camera_fov_deg.to_radians() / 2.0;
        let max_radius = w.min(h) as f64 / 2.0;
        FisheyeCamera {
            width: w,
            height: h,
            focal_px: max_radius / half_fov,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            half_fov_rad: half_fov,
        }
    }

    /// Largest image radius inside the field of view.
    pub fn max_radius_px(&self) -> f64 {
        self.focal_px * self.half_fov_rad
    }

    pub fn project(&self, p: &Vec3) -> Projection {
        let rho = p.x.hypot(p.y);
        let angle = rho.atan2(p.z);
        let r = self.focal_px * angle;
        let (u, v) = if rho > 0.0 {
            (self.cx + r * p.x / rho, self.cy + r * p.y / rho)
        } else {
            (self.cx, self.cy)
        };
        Projection {
            u,
            v,
            angle,
            out_of_view: p.z <= 0.0 || angle > self.half_fov_rad,
        }
    }

    /// Unit ray through an image location (pixel-center convention: pixel `i`
    /// covers `[i, i + 1)`).
    pub fn unproject(&self, u: f64, v: f64) -> Vec3 {
        let du = u - self.cx;
        let dv = v - self.cy;
        let r = du.hypot(dv);
        if r == 0.0 {
            return Vec3::new(0.0, 0.0, 1.0);
        }
        let angle = r / self.focal_px;
        let s = angle.sin();
        Vec3::new(s * du / r, s * dv / r, angle.cos())
    }

    /// Angular size (radians) of a sphere of radius `size` at distance `dist`.
    pub fn angular_radius(size: f64, dist: f64) -> f64 {
        (size / dist).clamp(-1.0, 1.0).asin()
    }
}
