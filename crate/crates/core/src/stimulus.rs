//! Rigid stimuli as signed-distance functions, and their placement against the sensor.
//!
//! Every stimulus is described in its own local frame: the contact face is the
//! plane `z = 0` and the solid lies on `z <= 0`. Placing a stimulus turns the
//! local frame upside down over the dome so the face points back at the apex.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensor::{SensorModel, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stimulus {
    /// Parallel ridges along local y. `line_spacing_mm` is the groove width
    /// between ridges; 0 gives a solid flat board.
    GratingBoard {
        line_spacing_mm: f64,
        ridge_width_mm: f64,
        groove_depth_mm: f64,
    },
    /// Cube occupying `x in [-side, 0]`, `|y| <= side / 2`; its straight edge runs
    /// along the local y axis through the origin.
    SquareEdge { side_mm: f64 },
    /// Ball touching the face plane at the origin.
    Sphere { radius_mm: f64 },
    /// Half space `z <= 0`.
    FlatPlate,
}

impl Stimulus {
    pub fn grating(line_spacing_mm: f64) -> Self {
        Stimulus::GratingBoard {
            line_spacing_mm,
            ridge_width_mm: 1.0,
            groove_depth_mm: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str| Err(Error::config(field, "must be a positive finite number"));
        match *self {
            Stimulus::GratingBoard {
                line_spacing_mm,
                ridge_width_mm,
                groove_depth_mm,
            } => {
                if !(line_spacing_mm >= 0.0 && line_spacing_mm.is_finite()) {
                    return Err(Error::config("line_spacing_mm", "must be >= 0"));
                }
                if !(ridge_width_mm > 0.0 && ridge_width_mm.is_finite()) {
                    return bad("ridge_width_mm");
                }
                if !(groove_depth_mm > 0.0 && groove_depth_mm.is_finite()) {
                    return bad("groove_depth_mm");
                }
            }
            Stimulus::SquareEdge { side_mm } if !(side_mm > 0.0 && side_mm.is_finite()) => {
                return bad("side_mm")
            }
            Stimulus::Sphere { radius_mm } if !(radius_mm > 0.0 && radius_mm.is_finite()) => {
                return bad("radius_mm")
            }
            _ => {}
        }
        Ok(())
    }

    /// Signed distance in the local frame (negative inside).
    pub fn sdf(&self, p: &Vec3) -> f64 {
        self.sdf_with_grad(p).0
    }

    /// Signed distance and its gradient in the local frame.
    pub fn sdf_with_grad(&self, p: &Vec3) -> (f64, Vec3) {
        match *self {
            Stimulus::FlatPlate => (p.z, Vec3::z()),
            Stimulus::Sphere { radius_mm } => {
                let d = Vec3::new(p.x, p.y, p.z + radius_mm);
                let len = d.norm();
                let g = if len > 0.0 { d / len } else { Vec3::z() };
                (len - radius_mm, g)
            }
            Stimulus::SquareEdge { side_mm } => {
                let h = side_mm / 2.0;
                let (d, g) = box_sdf(&Vec3::new(p.x + h, p.y, p.z + h), &Vec3::new(h, h, h));
                (d, g)
            }
            Stimulus::GratingBoard {
                line_spacing_mm,
                ridge_width_mm,
                groove_depth_mm,
            } => {
                if line_spacing_mm == 0.0 {
                    return (p.z, Vec3::z());
                }
                let period = line_spacing_mm + ridge_width_mm;
                let xm = p.x - period * (p.x / period).round();
                let (ridge, rg) = box_sdf_2d(
                    xm,
                    p.z + groove_depth_mm / 2.0,
                    ridge_width_mm / 2.0,
                    groove_depth_mm / 2.0,
                );
                let base = p.z + groove_depth_mm;
                if ridge <= base {
                    (ridge, Vec3::new(rg.0, 0.0, rg.1))
                } else {
                    (base, Vec3::z())
                }
            }
        }
    }
}

fn box_sdf_2d(x: f64, z: f64, hx: f64, hz: f64) -> (f64, (f64, f64)) {
    let qx = x.abs() - hx;
    let qz = z.abs() - hz;
    let sx = if x < 0.0 { -1.0 } else { 1.0 };
    let sz = if z < 0.0 { -1.0 } else { 1.0 };
    if qx > 0.0 || qz > 0.0 {
        let ox = qx.max(0.0);
        let oz = qz.max(0.0);
        let len = ox.hypot(oz);
        (len, (sx * ox / len, sz * oz / len))
    } else if qx > qz {
        (qx, (sx, 0.0))
    } else {
        (qz, (0.0, sz))
    }
}

fn box_sdf(p: &Vec3, half: &Vec3) -> (f64, Vec3) {
    let q = p.abs() - half;
    let sign = Vec3::new(p.x.signum(), p.y.signum(), p.z.signum());
    let outside = q.map(|v| v.max(0.0));
    let out_len = outside.norm();
    if out_len > 0.0 {
        (out_len, sign.component_mul(&outside) / out_len)
    } else {
        let axis = q.imax();
        let mut g = Vec3::zeros();
        g[axis] = sign[axis];
        (q[axis], g)
    }
}

/// Pose of a stimulus relative to the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StimulusPose {
    pub x_mm: f64,
    pub y_mm: f64,
    /// Press depth past first touch (negative leaves a gap).
    pub z_mm: f64,
    /// Rotation about the sensor axis.
    pub theta_deg: f64,
    /// Tangential displacement applied after the initial press.
    pub shear_mm: (f64, f64),
}

impl Default for StimulusPose {
    fn default() -> Self {
        StimulusPose {
            x_mm: 0.0,
            y_mm: 0.0,
            z_mm: 0.0,
            theta_deg: 0.0,
            shear_mm: (0.0, 0.0),
        }
    }
}

impl StimulusPose {
    pub fn press(z_mm: f64) -> Self {
        StimulusPose { z_mm, ..Default::default() }
    }

    pub fn has_shear(&self) -> bool {
        self.shear_mm != (0.0, 0.0)
    }
}

/// A stimulus placed in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub stimulus: Stimulus,
    /// Horizontal translation of the local origin in the sensor frame.
    pub offset: (f64, f64),
    pub cos_t: f64,
    pub sin_t: f64,
    /// Sensor-frame height of the stimulus face.
    pub face_z: f64,
}

impl Placement {
    /// Places the stimulus at the pose's horizontal offset and rotation with the
    /// face at `face_z`. Shear is not applied.
    pub fn raw(stimulus: Stimulus, pose: &StimulusPose, face_z: f64) -> Self {
        let t = pose.theta_deg.to_radians();
        Placement {
            stimulus,
            offset: (pose.x_mm, pose.y_mm),
            cos_t: t.cos(),
            sin_t: t.sin(),
            face_z,
        }
    }

    /// Places the stimulus with its face calibrated against first touch on the
    /// undeformed skin, pressed `pose.z_mm` past it. Shear is not applied.
    pub fn pressed(model: &SensorModel, stimulus: Stimulus, pose: &StimulusPose) -> Self {
        let touch = first_touch(model, stimulus, pose);
        Self::raw(stimulus, pose, touch - pose.z_mm)
    }

    /// Final placement of a pose: pressed, then moved by the shear offset.
    pub fn at_pose(model: &SensorModel, stimulus: Stimulus, pose: &StimulusPose) -> Self {
        Self::pressed(model, stimulus, pose).shifted(pose.shear_mm.0, pose.shear_mm.1)
    }

    pub fn shifted(&self, dx: f64, dy: f64) -> Self {
        Placement {
            offset: (self.offset.0 + dx, self.offset.1 + dy),
            ..*self
        }
    }

    /// Moves the stimulus `dz` further away from the camera.
    pub fn lifted(&self, dz: f64) -> Self {
        Placement {
            face_z: self.face_z + dz,
            ..*self
        }
    }

    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        let qx = p.x - self.offset.0;
        let qy = p.y - self.offset.1;
        let rx = self.cos_t * qx + self.sin_t * qy;
        let ry = -self.sin_t * qx + self.cos_t * qy;
        Vec3::new(rx, -ry, self.face_z - p.z)
    }

    /// Maps a local vector (not a point) back to the sensor frame.
    pub fn vector_to_world(&self, v: &Vec3) -> Vec3 {
        let rx = v.x;
        let ry = -v.y;
        Vec3::new(
            self.cos_t * rx - self.sin_t * ry,
            self.sin_t * rx + self.cos_t * ry,
            -v.z,
        )
    }

    pub fn local_to_world(&self, l: &Vec3) -> Vec3 {
        let h = self.vector_to_world(&Vec3::new(l.x, l.y, 0.0));
        Vec3::new(h.x + self.offset.0, h.y + self.offset.1, self.face_z - l.z)
    }

    pub fn sdf(&self, p: &Vec3) -> f64 {
        self.stimulus.sdf(&self.to_local(p))
    }

    /// Distance and sensor-frame gradient (outward surface normal direction).
    pub fn sdf_with_grad(&self, p: &Vec3) -> (f64, Vec3) {
        let (d, g) = self.stimulus.sdf_with_grad(&self.to_local(p));
        (d, self.vector_to_world(&g))
    }

    /// Sphere-traces a ray; returns the hit distance if the surface is reached
    /// before `max_t`.
    pub fn march(&self, origin: &Vec3, dir: &Vec3, max_t: f64) -> Option<f64> {
        let mut t = 0.0;
        for _ in 0..128 {
            let d = self.sdf(&(origin + dir * t));
            if d < 1e-4 {
                return Some(t);
            }
            t += d;
            if t > max_t {
                return None;
            }
        }
        None
    }
}

/// Sensor-frame face height at which the stimulus first touches the undeformed skin.
pub fn first_touch(model: &SensorModel, stimulus: Stimulus, pose: &StimulusPose) -> f64 {
    let min_sdf = |face: f64| {
        let pl = Placement::raw(stimulus, pose, face);
        model
            .rest_nodes
            .iter()
            .map(|p| pl.sdf(p))
            .fold(f64::INFINITY, f64::min)
    };
    let top = model.rest_nodes.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
    let bottom = model.rest_nodes.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    // every stimulus lies on the local z <= 0 side, so a face above the apex never touches
    let mut hi = top + 1e-6;
    let mut lo = bottom - 1.0;
    if min_sdf(lo) >= 0.0 {
        return lo;
    }
    for _ in 0..80 {
        let mid = 0.5 * (hi + lo);
        if min_sdf(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
