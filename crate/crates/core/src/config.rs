//! Single-file configuration (TOML or JSON) covering every stage.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::mechanics::SolverParams;
use crate::optics::{Background, Rgb, Texture, VisualScene};
use crate::perception::FeatureConfig;
use crate::protocol::ProtocolConfig;
use crate::sensor::{vitactip_preset, SensorSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackgroundConfig {
    Solid { rgb: Rgb },
    Checker { a: Rgb, b: Rgb, cell_mm: f64 },
    Textured { path: String, tile_mm: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub background: BackgroundConfig,
    pub background_distance_mm: f64,
    /// Ambient light for protocols that do not vary it.
    pub ambient_light: f64,
    /// Color of the stimulus seen through transparent skins.
    pub object_albedo: Rgb,
    /// Standard deviation of additive Gaussian pixel noise, in intensity levels (0 = off).
    pub pixel_noise_std: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            background: BackgroundConfig::Solid { rgb: [0.45, 0.5, 0.55] },
            background_distance_mm: 15.0,
            ambient_light: 1.0,
            object_albedo: [0.9, 0.6, 0.3],
            pixel_noise_std: 0.0,
        }
    }
}

impl RenderConfig {
    /// Scene without any stimulus at the given ambient level.
    pub fn scene(&self, ambient_light: f64) -> Result<VisualScene> {
        let background = match &self.background {
            BackgroundConfig::Solid { rgb } => Background::SolidColor(*rgb),
            BackgroundConfig::Checker { a, b, cell_mm } => Background::Checker {
                a: *a,
                b: *b,
                cell_mm: *cell_mm,
            },
            BackgroundConfig::Textured { path, tile_mm } => {
                let frame = Frame::load_png(Path::new(path))?;
                Background::TexturedPlane(Arc::new(Texture::from_frame(&frame, *tile_mm)))
            }
        };
        let scene = VisualScene {
            background,
            background_distance_mm: self.background_distance_mm,
            ambient_light,
            object: None,
        };
        scene.validate()?;
        Ok(scene)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    /// Neighbours used by the classifier.
    pub k: usize,
    /// Ridge weights tried on the validation split (ascending).
    pub lambda_grid: Vec<f64>,
    /// Fraction of the training split held out to choose the ridge weight.
    pub validation_fraction: f64,
    pub split_seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            k: 5,
            lambda_grid: vec![0.1, 1.0, 10.0, 100.0, 1000.0],
            validation_fraction: 0.2,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Geometry, lighting and material shared by all variants; the optical
    /// fields of each variant are derived from it.
    pub sensor: SensorSpec,
    pub solver: SolverParams,
    pub render: RenderConfig,
    pub features: FeatureConfig,
    pub protocol: ProtocolConfig,
    pub tasks: TaskConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            sensor: vitactip_preset(),
            solver: SolverParams {
                // pose presses reach depth_offset + 1 mm
                depth_range_mm: (-2.5, 2.5),
                ..SolverParams::default()
            },
            render: RenderConfig::default(),
            features: FeatureConfig::default(),
            protocol: ProtocolConfig::default(),
            tasks: TaskConfig::default(),
        }
    }
}

impl Config {
    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Config = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?
        } else {
            toml::from_str(&text).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        self.solver.validate()?;
        self.protocol.validate(&self.solver)?;
        if self.tasks.k == 0 {
            return Err(Error::config("tasks.k", "must be >= 1"));
        }
        if self.tasks.lambda_grid.is_empty() || self.tasks.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::config("tasks.lambda_grid", "must be a non-empty list of values >= 0"));
        }
        if !(0.0..1.0).contains(&self.tasks.validation_fraction) {
            return Err(Error::config("tasks.validation_fraction", "must lie in [0, 1)"));
        }
        if !(self.render.pixel_noise_std >= 0.0) {
            return Err(Error::config("render.pixel_noise_std", "must be >= 0"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }
}
