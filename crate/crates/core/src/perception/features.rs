//! Fixed-length feature vectors from a frame and its rest reference.

use serde::{Deserialize, Serialize};

use super::tracking::{track_markers, DisplacementField};
use crate::camera::FisheyeCamera;
use crate::conversion::{disk_mask, Converter, MarkerSet};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::sensor::{build_sensor, SensorMode, SensorSpec};

pub const GRID: usize = 16;

/// Marker masks are drawn at this multiple of the detected radius.
const MASK_SCALE: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Largest marker displacement accepted by the tracker.
    pub gate_px: f64,
    /// Side of the square region sampled by the visual grid, as a fraction of
    /// the skin's image diameter.
    pub grid_extent: f64,
    /// How markers are treated in the visual block of fused modes.
    pub marker_handling: MarkerHandling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerHandling {
    /// Average the frame as rendered.
    Keep,
    /// Inpaint detected markers before averaging.
    Inpaint,
    /// Leave pixels under rest or deformed markers out of the averages.
    Exclude,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            gate_px: 15.0,
            grid_extent: 0.6,
            marker_handling: MarkerHandling::Keep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// Fewer than half of the expected markers were found in the frame.
    pub degraded: bool,
}

/// Per-dataset reference derived from the rest frame.
#[derive(Debug, Clone)]
pub struct RestReference {
    pub markers: MarkerSet,
    pub frame: Frame,
    /// Pixels hidden by rest markers (empty without pins).
    pub marker_mask: Vec<bool>,
}

/// Precomputed layout for one sensor variant.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    mode: SensorMode,
    config: FeatureConfig,
    converter: Converter,
    /// Analytic rest projection of every pin, in pin order.
    pin_uv: Vec<(f64, f64)>,
    /// Pixel bounds of the visual grid: x0, y0, side.
    grid: (f64, f64, f64),
}

impl FeatureExtractor {
    pub fn new(spec: &SensorSpec, mode: SensorMode, config: &FeatureConfig) -> Result<Self> {
        if !(config.gate_px > 0.0) {
            return Err(Error::config("gate_px", "must be positive"));
        }
        if !(config.grid_extent > 0.0 && config.grid_extent <= 4.0) {
            return Err(Error::config("grid_extent", "must lie in (0, 4]"));
        }
        let spec = mode.apply_to(spec, spec.transparency_alpha);
        let camera = FisheyeCamera::from_spec(&spec);
        let model = build_sensor(&spec)?;
        let pin_uv = model
            .pin_tip_rest
            .iter()
            .map(|t| {
                let p = camera.project(t);
                (p.u, p.v)
            })
            .collect();
        let skin_radius = camera.focal_px * spec.cap_half_angle_rad().min(camera.half_fov_rad);
        let side = 2.0 * skin_radius * config.grid_extent;
        Ok(FeatureExtractor {
            mode,
            config: config.clone(),
            converter: Converter::new(&spec)?,
            pin_uv,
            grid: (camera.cx - side / 2.0, camera.cy - side / 2.0, side),
        })
    }

    pub fn mode(&self) -> SensorMode {
        self.mode
    }

    pub fn converter(&self) -> &Converter {
        &self.converter
    }

    pub fn pin_block_len(&self) -> usize {
        if self.mode.has_pins() {
            3 * self.pin_uv.len()
        } else {
            0
        }
    }

    pub fn visual_block_len(&self) -> usize {
        if self.mode.is_transparent() {
            GRID * GRID * 3
        } else {
            0
        }
    }

    pub fn len(&self) -> usize {
        self.pin_block_len() + self.visual_block_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rest markers and their mask, computed once per dataset and reused for
    /// every sample.
    pub fn rest_reference(&self, rest: &Frame) -> RestReference {
        let (markers, marker_mask) = if self.mode.has_pins() {
            let m = self.converter.detect_markers(rest);
            let mask = disk_mask(rest.width as usize, rest.height as usize, &m, MASK_SCALE);
            (m, mask)
        } else {
            (MarkerSet::default(), Vec::new())
        };
        let frame = self.visual_source(rest, &markers);
        RestReference {
            markers,
            frame,
            marker_mask,
        }
    }

    fn visual_source(&self, frame: &Frame, markers: &MarkerSet) -> Frame {
        if self.config.marker_handling == MarkerHandling::Inpaint && self.mode.has_pins() {
            self.converter.remove_markers(frame, markers)
        } else {
            frame.clone()
        }
    }

    pub fn extract(&self, frame: &Frame, rest: &Frame) -> Result<FeatureVector> {
        self.extract_with_reference(frame, &self.rest_reference(rest))
    }

    /// Pin block: per pin (du, dv, present), ordered by the analytic rest
    /// projection. Visual block: 16x16 mean (frame - rest) per channel, taken
    /// over the pixels not covered by a rest or deformed marker.
    pub fn extract_with_reference(&self, frame: &Frame, rest: &RestReference) -> Result<FeatureVector> {
        frame.same_size(&rest.frame)?;
        let mut values = Vec::with_capacity(self.len());
        let mut degraded = false;
        let mut deformed = MarkerSet::default();
        if self.mode.has_pins() {
            deformed = self.converter.detect_markers(frame);
            degraded = 2 * deformed.len() < self.pin_uv.len();
            let field = track_markers(&rest.markers, &deformed, self.config.gate_px);
            values.extend(self.pin_block(&rest.markers, &field));
        }
        if self.mode.is_transparent() {
            let mut hidden = Vec::new();
            if self.config.marker_handling == MarkerHandling::Exclude && self.mode.has_pins() {
                hidden = rest.marker_mask.clone();
                let mask = disk_mask(frame.width as usize, frame.height as usize, &deformed, MASK_SCALE);
                hidden.iter_mut().zip(mask).for_each(|(h, m)| *h |= m);
            }
            let visual = self.visual_source(frame, &deformed);
            values.extend(self.visual_block(&visual, &rest.frame, &hidden));
        }
        debug_assert_eq!(values.len(), self.len());
        Ok(FeatureVector { values, degraded })
    }

    fn pin_block(&self, rest_markers: &MarkerSet, field: &DisplacementField) -> Vec<f64> {
        let mut by_rest = vec![None; rest_markers.len()];
        for m in &field.matches {
            by_rest[m.rest_index] = Some((m.du, m.dv));
        }
        let mut out = vec![0.0; 3 * self.pin_uv.len()];
        for (k, &(u, v)) in self.pin_uv.iter().enumerate() {
            let nearest = rest_markers
                .centroids
                .iter()
                .enumerate()
                .map(|(i, c)| (i, (c.0 - u).hypot(c.1 - v)))
                .filter(|&(_, d)| d <= 2.0)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((i, _)) = nearest {
                if let Some((du, dv)) = by_rest[i] {
                    out[3 * k] = du;
                    out[3 * k + 1] = dv;
                    out[3 * k + 2] = 1.0;
                }
            }
        }
        out
    }

    fn visual_block(&self, frame: &Frame, rest: &Frame, hidden: &[bool]) -> Vec<f64> {
        let (x0, y0, side) = self.grid;
        let cell = side / GRID as f64;
        let mut sums = vec![0.0; GRID * GRID * 3];
        let mut counts = vec![0usize; GRID * GRID];
        let xa = x0.floor().max(0.0) as u32;
        let ya = y0.floor().max(0.0) as u32;
        let xb = ((x0 + side).ceil() as u32).min(frame.width);
        let yb = ((y0 + side).ceil() as u32).min(frame.height);
        for y in ya..yb {
            let gy = ((y as f64 + 0.5 - y0) / cell).floor();
            if gy < 0.0 || gy >= GRID as f64 {
                continue;
            }
            for x in xa..xb {
                let gx = ((x as f64 + 0.5 - x0) / cell).floor();
                if gx < 0.0 || gx >= GRID as f64 {
                    continue;
                }
                if hidden.get((y * frame.width + x) as usize) == Some(&true) {
                    continue;
                }
                let g = gy as usize * GRID + gx as usize;
                let (a, b) = (frame.get(x, y), rest.get(x, y));
                for c in 0..3 {
                    sums[3 * g + c] += a[c] as f64 - b[c] as f64;
                }
                counts[g] += 1;
            }
        }
        for g in 0..GRID * GRID {
            if counts[g] > 0 {
                for c in 0..3 {
                    sums[3 * g + c] /= counts[g] as f64;
                }
            }
        }
        sums
    }
}
