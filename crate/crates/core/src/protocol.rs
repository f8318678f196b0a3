//! Data-collection protocols and their seeded parameter draws.
//!
//! Random numbers come from ChaCha8 (`rand_chacha`), keyed by the 64-bit
//! protocol seed (little-endian in the first 8 key bytes, rest zero) with the
//! stream id set to `sample_index + attempt * 2^32`. A uniform double is
//! `(next_u64() >> 11) * 2^-53`; a uniform integer below `n` is
//! `floor(uniform * n)`. Draw order within a sample is fixed per protocol.

use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanics::{ContactWrench, SolverParams};
use crate::stimulus::{Stimulus, StimulusPose};

pub const RNG_NAME: &str = "chacha8";
pub const RNG_VERSION: &str = "rand_chacha-0.10";

/// The seven grating line spacings (mm).
pub const GRATING_CLASSES_MM: [f64; 7] = [0.0, 0.5, 1.0, 1.25, 1.5, 1.75, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Grating,
    Pose,
    Force,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Grating, Task::Pose, Task::Force];

    pub fn name(self) -> &'static str {
        match self {
            Task::Grating => "grating",
            Task::Pose => "pose",
            Task::Force => "force",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grating" => Ok(Task::Grating),
            "pose" => Ok(Task::Pose),
            "force" => Ok(Task::Force),
            other => Err(Error::config("task", format!("unknown task `{other}` (expected grating|pose|force)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GratingProtocol {
    pub samples_per_class: usize,
    pub paper_samples_per_class: usize,
    pub classes_mm: Vec<f64>,
    pub ridge_width_mm: f64,
    pub groove_depth_mm: f64,
    pub x_jitter_mm: f64,
    pub theta_jitter_deg: f64,
    pub depth_range_mm: (f64, f64),
    /// Fractions of (train, validation, test).
    pub split: (f64, f64, f64),
}

impl Default for GratingProtocol {
    fn default() -> Self {
        GratingProtocol {
            samples_per_class: 100,
            paper_samples_per_class: 500,
            classes_mm: GRATING_CLASSES_MM.to_vec(),
            ridge_width_mm: 1.0,
            groove_depth_mm: 1.0,
            x_jitter_mm: 1.0,
            theta_jitter_deg: 5.0,
            depth_range_mm: (0.3, 0.8),
            split: (0.7, 0.2, 0.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseProtocol {
    pub samples: usize,
    pub paper_samples: usize,
    pub x_range_mm: (f64, f64),
    pub z_range_mm: (f64, f64),
    pub theta_range_deg: (f64, f64),
    /// Press depth past first touch at label z = 0; depth = offset + z.
    pub depth_offset_mm: f64,
    pub edge_side_mm: f64,
    pub split: (f64, f64, f64),
}

impl Default for PoseProtocol {
    fn default() -> Self {
        PoseProtocol {
            samples: 600,
            paper_samples: 3000,
            x_range_mm: (-5.0, 5.0),
            z_range_mm: (-1.0, 1.0),
            theta_range_deg: (-45.0, 45.0),
            depth_offset_mm: 1.25,
            edge_side_mm: 40.0,
            split: (0.75, 0.0, 0.25),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForceProtocol {
    pub samples: usize,
    pub paper_samples: usize,
    pub indenter_radius_mm: f64,
    /// Indenter centre offsets, uniform in this square.
    pub xy_range_mm: (f64, f64),
    pub depth_range_mm: (f64, f64),
    pub max_shear_mm: f64,
    pub ambient_range: (f64, f64),
    /// Accepted label ranges; draws outside them are redrawn.
    pub fxy_range_n: (f64, f64),
    pub fz_range_n: (f64, f64),
    /// Every n-th sample (index % n == 0) is pressed without shear; 0 disables.
    pub zero_shear_every: usize,
    pub split: (f64, f64, f64),
}

impl Default for ForceProtocol {
    fn default() -> Self {
        ForceProtocol {
            samples: 600,
            paper_samples: 3000,
            indenter_radius_mm: 25.0,
            xy_range_mm: (-4.0, 4.0),
            depth_range_mm: (0.9, 1.8),
            max_shear_mm: 0.5,
            ambient_range: (0.5, 1.5),
            fxy_range_n: (-0.5, 0.5),
            fz_range_n: (0.4, 1.2),
            zero_shear_every: 4,
            split: (0.75, 0.0, 0.25),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub grating: GratingProtocol,
    pub pose: PoseProtocol,
    pub force: ForceProtocol,
}

fn check_range(field: &str, r: (f64, f64)) -> Result<()> {
    if r.0.is_finite() && r.1.is_finite() && r.0 <= r.1 {
        Ok(())
    } else {
        Err(Error::config(field, format!("invalid range ({}, {})", r.0, r.1)))
    }
}

fn check_split(field: &str, s: (f64, f64, f64)) -> Result<()> {
    let parts = [s.0, s.1, s.2];
    if parts.iter().any(|p| !(*p >= 0.0)) || ((s.0 + s.1 + s.2) - 1.0).abs() > 1e-9 {
        return Err(Error::config(field, "ratios must be >= 0 and sum to 1"));
    }
    Ok(())
}

impl ProtocolConfig {
    pub fn validate(&self, solver: &SolverParams) -> Result<()> {
        let (lo, hi) = solver.depth_range_mm;
        let within = |field: &str, a: f64, b: f64| {
            if a >= lo && b <= hi {
                Ok(())
            } else {
                Err(Error::config(field, format!("press depths [{a}, {b}] exceed solver safe range [{lo}, {hi}]")))
            }
        };
        let g = &self.grating;
        if g.classes_mm.is_empty() || g.classes_mm.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::config("grating.classes_mm", "needs at least one spacing >= 0"));
        }
        check_range("grating.depth_range_mm", g.depth_range_mm)?;
        within("grating.depth_range_mm", g.depth_range_mm.0, g.depth_range_mm.1)?;
        check_split("grating.split", g.split)?;
        Stimulus::grating(1.0).validate()?;

        let p = &self.pose;
        check_range("pose.x_range_mm", p.x_range_mm)?;
        check_range("pose.z_range_mm", p.z_range_mm)?;
        check_range("pose.theta_range_deg", p.theta_range_deg)?;
        within(
            "pose.depth_offset_mm",
            p.depth_offset_mm + p.z_range_mm.0,
            p.depth_offset_mm + p.z_range_mm.1,
        )?;
        check_split("pose.split", p.split)?;

        let f = &self.force;
        check_range("force.xy_range_mm", f.xy_range_mm)?;
        check_range("force.depth_range_mm", f.depth_range_mm)?;
        within("force.depth_range_mm", f.depth_range_mm.0, f.depth_range_mm.1)?;
        check_range("force.ambient_range", f.ambient_range)?;
        if f.ambient_range.0 < 0.0 || f.ambient_range.1 > 2.0 {
            return Err(Error::config("force.ambient_range", "must lie within [0, 2]"));
        }
        if !(f.max_shear_mm >= 0.0 && f.max_shear_mm <= solver.max_shear_mm) {
            return Err(Error::config("force.max_shear_mm", "must lie in [0, solver max_shear_mm]"));
        }
        if !(f.indenter_radius_mm > 0.0) {
            return Err(Error::config("force.indenter_radius_mm", "must be positive"));
        }
        check_range("force.fxy_range_n", f.fxy_range_n)?;
        check_range("force.fz_range_n", f.fz_range_n)?;
        check_split("force.split", f.split)?;
        Ok(())
    }
}

/// Seeded per-sample generator (see the module docs for the exact recipe).
pub struct SampleRng(ChaCha8Rng);

impl SampleRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream);
        SampleRng(rng)
    }

    pub fn for_sample(seed: u64, index: usize, attempt: u32) -> Self {
        Self::new(seed, stream_id(index, attempt))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.unit() * n as f64) as usize).min(n.saturating_sub(1))
    }
}

pub fn stream_id(index: usize, attempt: u32) -> u64 {
    index as u64 + ((attempt as u64) << 32)
}

/// Ground-truth labels of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Label {
    Grating { class: usize, spacing_mm: f64 },
    Pose { x_mm: f64, z_mm: f64, theta_deg: f64 },
    Force { fx: f64, fy: f64, fz: f64, px: f64, py: f64, pz: f64 },
}

/// Contact parameters drawn for one sample, before solving.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub stimulus: Stimulus,
    pub pose: StimulusPose,
    pub ambient_light: f64,
    /// Labels known before solving (force labels come from the solve).
    pub label: Label,
}

impl ProtocolConfig {
    /// Sample `index` of a grating dataset is of class `index % classes`.
    pub fn draw(&self, task: Task, index: usize, rng: &mut SampleRng, ambient: f64) -> Draw {
        match task {
            Task::Grating => {
                let g = &self.grating;
                let class = index % g.classes_mm.len();
                let spacing = g.classes_mm[class];
                let x = rng.uniform(-g.x_jitter_mm, g.x_jitter_mm);
                let theta = rng.uniform(-g.theta_jitter_deg, g.theta_jitter_deg);
                let depth = rng.uniform(g.depth_range_mm.0, g.depth_range_mm.1);
                Draw {
                    stimulus: Stimulus::GratingBoard {
                        line_spacing_mm: spacing,
                        ridge_width_mm: g.ridge_width_mm,
                        groove_depth_mm: g.groove_depth_mm,
                    },
                    pose: StimulusPose {
                        x_mm: x,
                        theta_deg: theta,
                        ..StimulusPose::press(depth)
                    },
                    ambient_light: ambient,
                    label: Label::Grating { class, spacing_mm: spacing },
                }
            }
            Task::Pose => {
                let p = &self.pose;
                let x = rng.uniform(p.x_range_mm.0, p.x_range_mm.1);
                let z = rng.uniform(p.z_range_mm.0, p.z_range_mm.1);
                let theta = rng.uniform(p.theta_range_deg.0, p.theta_range_deg.1);
                Draw {
                    stimulus: Stimulus::SquareEdge { side_mm: p.edge_side_mm },
                    pose: StimulusPose {
                        x_mm: x,
                        theta_deg: theta,
                        ..StimulusPose::press(p.depth_offset_mm + z)
                    },
                    ambient_light: ambient,
                    label: Label::Pose {
                        x_mm: x,
                        z_mm: z,
                        theta_deg: theta,
                    },
                }
            }
            Task::Force => {
                let f = &self.force;
                let x = rng.uniform(f.xy_range_mm.0, f.xy_range_mm.1);
                let y = rng.uniform(f.xy_range_mm.0, f.xy_range_mm.1);
                let depth = rng.uniform(f.depth_range_mm.0, f.depth_range_mm.1);
                // shear uniform over the disk of radius max_shear_mm
                let mut r = f.max_shear_mm * rng.unit().sqrt();
                let phi = rng.uniform(0.0, 2.0 * std::f64::consts::PI);
                let ambient = rng.uniform(f.ambient_range.0, f.ambient_range.1);
                if f.zero_shear_every > 0 && index % f.zero_shear_every == 0 {
                    r = 0.0;
                }
                Draw {
                    stimulus: Stimulus::Sphere { radius_mm: f.indenter_radius_mm },
                    pose: StimulusPose {
                        x_mm: x,
                        y_mm: y,
                        z_mm: depth,
                        theta_deg: 0.0,
                        shear_mm: (r * phi.cos(), r * phi.sin()),
                    },
                    ambient_light: ambient,
                    label: Label::Force {
                        fx: 0.0,
                        fy: 0.0,
                        fz: 0.0,
                        px: 0.0,
                        py: 0.0,
                        pz: 0.0,
                    },
                }
            }
        }
    }

    /// Force labels from a solved wrench, or `None` when they fall outside
    /// the accepted ranges.
    pub fn force_label(&self, w: &ContactWrench) -> Option<Label> {
        let f = &self.force;
        let inside = |v: f64, r: (f64, f64)| v >= r.0 && v <= r.1;
        if w.in_contact && inside(w.fx, f.fxy_range_n) && inside(w.fy, f.fxy_range_n) && inside(w.fz, f.fz_range_n) {
            Some(Label::Force {
                fx: w.fx,
                fy: w.fy,
                fz: w.fz,
                px: w.px,
                py: w.py,
                pz: w.pz,
            })
        } else {
            None
        }
    }
}
