//! Sensor variants and the discretized dome skin shared by mechanics and rendering.
//!
//! The skin is a spherical cap meshed from a planar hexagonal lattice mapped onto
//! the sphere with an azimuthal-equidistant map. The pin lattice is a coarse
//! sublattice of the mesh lattice, so every pin base is exactly a mesh vertex.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Skin optical mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkinMode {
    Opaque,
    Transparent,
}

/// The three sensor variants under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorMode {
    /// Opaque skin with pins.
    TacTip,
    /// Transparent skin, no pins.
    ViTac,
    /// Transparent skin with pins.
    ViTacTip,
}

impl SensorMode {
    pub const ALL: [SensorMode; 3] = [SensorMode::TacTip, SensorMode::ViTac, SensorMode::ViTacTip];

    pub fn name(self) -> &'static str {
        match self {
            SensorMode::TacTip => "tactip",
            SensorMode::ViTac => "vitac",
            SensorMode::ViTacTip => "vitactip",
        }
    }

    pub fn preset(self) -> SensorSpec {
        match self {
            SensorMode::TacTip => tactip_preset(),
            SensorMode::ViTac => vitac_preset(),
            SensorMode::ViTacTip => vitactip_preset(),
        }
    }

    pub fn has_pins(self) -> bool {
        !matches!(self, SensorMode::ViTac)
    }

    pub fn is_transparent(self) -> bool {
        !matches!(self, SensorMode::TacTip)
    }

    /// Rewrites the optical fields of `base` so that it describes this variant,
    /// leaving every geometric and mechanical field untouched.
    pub fn apply_to(self, base: &SensorSpec, transparency_alpha: f64) -> SensorSpec {
        let mut spec = base.clone();
        spec.has_pins = self.has_pins();
        if self.is_transparent() {
            spec.skin_mode = SkinMode::Transparent;
            spec.transparency_alpha = transparency_alpha;
        } else {
            spec.skin_mode = SkinMode::Opaque;
            spec.transparency_alpha = 0.0;
        }
        spec
    }
}

impl fmt::Display for SensorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SensorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tactip" => Ok(SensorMode::TacTip),
            "vitac" => Ok(SensorMode::ViTac),
            "vitactip" => Ok(SensorMode::ViTacTip),
            other => Err(Error::config(
                "sensor",
                format!("unknown sensor `{other}` (expected tactip|vitac|vitactip)"),
            )),
        }
    }
}

/// Geometric, optical and material description of one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSpec {
    pub dome_radius_mm: f64,
    pub skin_thickness_mm: f64,
    /// Number of hex-packed rings around the apex pin.
    pub pin_rings: u32,
    /// Center-to-center distance between neighbouring pins, measured along the skin.
    pub pin_spacing_mm: f64,
    pub pin_length_mm: f64,
    pub marker_radius_mm: f64,
    pub skin_mode: SkinMode,
    pub has_pins: bool,
    pub transparency_alpha: f64,
    pub camera_fov_deg: f64,
    pub image_size_px: (u32, u32),
    pub ring_light_radius_mm: f64,
    pub ring_light_intensity: f64,
    pub ring_light_count: u32,
    pub external_visibility_range_mm: f64,
    /// In-plane membrane stiffness of the skin (N/mm).
    pub membrane_stiffness_n_per_mm: f64,
    /// Gel foundation stiffness per unit skin area (N/mm^3).
    pub gel_stiffness_n_per_mm3: f64,
    /// Laplacian bending regularizer weight relative to the edge spring constant.
    pub bending_ratio: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        vitactip_preset()
    }
}

fn base_spec() -> SensorSpec {
    SensorSpec {
        dome_radius_mm: 20.0,
        skin_thickness_mm: 1.0,
        pin_rings: 6,
        pin_spacing_mm: 2.5,
        pin_length_mm: 2.0,
        marker_radius_mm: 0.5,
        skin_mode: SkinMode::Transparent,
        has_pins: true,
        transparency_alpha: 0.6,
        camera_fov_deg: 160.0,
        image_size_px: (256, 256),
        ring_light_radius_mm: 6.0,
        ring_light_intensity: 1.0,
        ring_light_count: 12,
        external_visibility_range_mm: 20.0,
        membrane_stiffness_n_per_mm: 1.0,
        gel_stiffness_n_per_mm3: 0.1,
        bending_ratio: 0.02,
    }
}

/// Opaque skin with pins.
pub fn tactip_preset() -> SensorSpec {
    SensorSpec {
        skin_mode: SkinMode::Opaque,
        has_pins: true,
        transparency_alpha: 0.0,
        ..base_spec()
    }
}

/// Transparent skin without pins.
pub fn vitac_preset() -> SensorSpec {
    SensorSpec {
        skin_mode: SkinMode::Transparent,
        has_pins: false,
        ..base_spec()
    }
}

/// Transparent skin with pins.
pub fn vitactip_preset() -> SensorSpec {
    SensorSpec {
        skin_mode: SkinMode::Transparent,
        has_pins: true,
        ..base_spec()
    }
}

impl SensorSpec {
    pub fn mode(&self) -> Option<SensorMode> {
        match (self.skin_mode, self.has_pins) {
            (SkinMode::Opaque, true) => Some(SensorMode::TacTip),
            (SkinMode::Transparent, false) => Some(SensorMode::ViTac),
            (SkinMode::Transparent, true) => Some(SensorMode::ViTacTip),
            (SkinMode::Opaque, false) => None,
        }
    }

    /// Mesh lattice edge length: the coarsest integer subdivision of the pin
    /// spacing with edges of at most 0.5 mm and at most one marker radius, so a
    /// marker footprint always holds its base vertex and its six neighbours.
    pub fn mesh_edge_mm(&self) -> f64 {
        self.pin_spacing_mm / self.mesh_subdivisions() as f64
    }

    pub fn mesh_subdivisions(&self) -> usize {
        let limit = self.marker_radius_mm.min(0.5);
        (self.pin_spacing_mm / limit - 1e-9).ceil().max(1.0) as usize
    }

    /// Planar (unrolled) radius of the skin cap.
    pub fn cap_arc_radius_mm(&self) -> f64 {
        (self.pin_rings as f64 + 1.0) * self.pin_spacing_mm
    }

    /// Polar half-angle of the skin cap seen from the dome center.
    pub fn cap_half_angle_rad(&self) -> f64 {
        self.cap_arc_radius_mm() / self.dome_radius_mm
    }

    pub fn expected_pin_count(&self) -> usize {
        if self.has_pins {
            let k = self.pin_rings as usize;
            1 + 3 * k * (k + 1)
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(field: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be a positive finite number, got {v}")))
            }
        }
        positive("dome_radius_mm", self.dome_radius_mm)?;
        positive("skin_thickness_mm", self.skin_thickness_mm)?;
        positive("pin_spacing_mm", self.pin_spacing_mm)?;
        positive("pin_length_mm", self.pin_length_mm)?;
        positive("marker_radius_mm", self.marker_radius_mm)?;
        positive("external_visibility_range_mm", self.external_visibility_range_mm)?;
        positive("membrane_stiffness_n_per_mm", self.membrane_stiffness_n_per_mm)?;
        positive("gel_stiffness_n_per_mm3", self.gel_stiffness_n_per_mm3)?;
        if !(self.bending_ratio >= 0.0 && self.bending_ratio.is_finite()) {
            return Err(Error::config("bending_ratio", "must be >= 0"));
        }
        if self.skin_thickness_mm + self.pin_length_mm >= self.dome_radius_mm {
            return Err(Error::config(
                "pin_length_mm",
                "skin thickness plus pin length must be smaller than the dome radius",
            ));
        }
        if self.marker_radius_mm >= self.pin_spacing_mm / 2.0 {
            return Err(Error::config(
                "marker_radius_mm",
                format!(
                    "markers overlap at rest: radius {} >= half pin spacing {}",
                    self.marker_radius_mm,
                    self.pin_spacing_mm / 2.0
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.transparency_alpha) {
            return Err(Error::config("transparency_alpha", "must lie in [0, 1]"));
        }
        match self.skin_mode {
            SkinMode::Opaque if self.transparency_alpha != 0.0 => {
                return Err(Error::config("transparency_alpha", "opaque skin requires alpha = 0"))
            }
            _ => {}
        }
        if !(self.camera_fov_deg > 0.0 && self.camera_fov_deg <= 180.0) {
            return Err(Error::config("camera_fov_deg", "must lie in (0, 180]"));
        }
        if self.image_size_px.0 < 32 || self.image_size_px.1 < 32 {
            return Err(Error::config("image_size_px", "both dimensions must be >= 32"));
        }
        if !(self.ring_light_intensity >= 0.0 && self.ring_light_intensity.is_finite()) {
            return Err(Error::config("ring_light_intensity", "must be >= 0"));
        }
        if !(self.ring_light_radius_mm >= 0.0 && self.ring_light_radius_mm < self.dome_radius_mm) {
            return Err(Error::config("ring_light_radius_mm", "must lie in [0, dome_radius_mm)"));
        }
        if self.ring_light_count == 0 {
            return Err(Error::config("ring_light_count", "must be >= 1"));
        }
        if self.cap_half_angle_rad() >= PI / 2.0 {
            return Err(Error::config(
                "pin_rings",
                "skin cap would extend past the dome equator; reduce pin_rings or pin_spacing_mm",
            ));
        }
        let pin_field = self.pin_rings as f64 * self.pin_spacing_mm / self.dome_radius_mm;
        if self.has_pins && pin_field >= self.camera_fov_deg.to_radians() / 2.0 {
            return Err(Error::config("pin_rings", "outer pins fall outside the camera field of view"));
        }
        Ok(())
    }
}

/// Discretized skin and pins for one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub spec: SensorSpec,
    pub rest_nodes: Vec<Vec3>,
    /// Unrolled planar coordinates of every node (mm), before mapping onto the dome.
    pub planar: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<[usize; 2]>,
    pub edge_rest_length: Vec<f64>,
    pub edge_stiffness: Vec<f64>,
    /// Lumped (one third of incident triangles) rest area per node.
    pub node_area: Vec<f64>,
    /// Rim nodes, held fixed by the sensor body.
    pub clamped: Vec<bool>,
    /// CSR adjacency: neighbours of node `i` are `adjacency[adjacency_offsets[i]..adjacency_offsets[i + 1]]`.
    pub adjacency_offsets: Vec<usize>,
    pub adjacency: Vec<usize>,
    pub pin_base_index: Vec<usize>,
    pub pin_tip_rest: Vec<Vec3>,
    pub bending_stiffness: f64,
}

impl SensorModel {
    pub fn node_count(&self) -> usize {
        self.rest_nodes.len()
    }

    pub fn pin_count(&self) -> usize {
        self.pin_base_index.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[self.adjacency_offsets[i]..self.adjacency_offsets[i + 1]]
    }

    /// Area-weighted outward vertex normals of the mesh at the given positions.
    pub fn vertex_normals(&self, positions: &[Vec3]) -> Vec<Vec3> {
        let mut normals = vec![Vec3::zeros(); positions.len()];
        for t in &self.triangles {
            let (a, b, c) = (positions[t[0]], positions[t[1]], positions[t[2]]);
            // cross product magnitude is twice the area, so this is area-weighted
            let n = (b - a).cross(&(c - a));
            for &i in t {
                normals[i] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    /// Pin tips for a skin configuration: each pin is a rigid rod along the
    /// inward vertex normal, starting on the inner skin surface.
    pub fn pin_tips(&self, positions: &[Vec3], normals: &[Vec3]) -> Vec<Vec3> {
        let depth = self.spec.skin_thickness_mm + self.spec.pin_length_mm;
        self.pin_base_index
            .iter()
            .map(|&i| positions[i] - normals[i] * depth)
            .collect()
    }
}

/// Maps an unrolled planar point onto the dome (azimuthal-equidistant).
pub fn unrolled_to_dome(radius: f64, x: f64, y: f64) -> Vec3 {
    let rho = x.hypot(y);
    if rho == 0.0 {
        return Vec3::new(0.0, 0.0, radius);
    }
    let polar = rho / radius;
    let s = polar.sin();
    Vec3::new(radius * s * x / rho, radius * s * y / rho, radius * polar.cos())
}

/// Integer lattice coordinates of the hex-packed pin layout, ring by ring.
pub fn hex_pin_layout(rings: u32) -> Vec<(i64, i64)> {
    let k = rings as i64;
    let mut pins = Vec::with_capacity(1 + 3 * (k * (k + 1)) as usize);
    for ring in 0..=k {
        let mut this_ring: Vec<(i64, i64, f64)> = Vec::new();
        for b in -k..=k {
            for a in -k..=k {
                let dist = a.abs().max(b.abs()).max((a + b).abs());
                if dist == ring {
                    let x = a as f64 + 0.5 * b as f64;
                    let y = b as f64 * 3f64.sqrt() / 2.0;
                    let mut ang = y.atan2(x);
                    if ang < 0.0 {
                        ang += 2.0 * PI;
                    }
                    this_ring.push((a, b, ang));
                }
            }
        }
        this_ring.sort_by(|p, q| p.2.total_cmp(&q.2));
        pins.extend(this_ring.into_iter().map(|(a, b, _)| (a, b)));
    }
    pins
}

/// Builds the discretized sensor. Pure: equal specs give bit-identical models.
pub fn build_sensor(spec: &SensorSpec) -> Result<SensorModel> {
    spec.validate()?;
    let radius = spec.dome_radius_mm;
    let n_sub = spec.mesh_subdivisions() as i64;
    let edge = spec.mesh_edge_mm();
    let rho_max = spec.cap_arc_radius_mm();
    let half_w = (2.0 * rho_max / edge).ceil() as i64 + 2;
    let width = (2 * half_w + 1) as usize;
    let lattice_xy = |i: i64, j: i64| -> (f64, f64) {
        (
            (i as f64 + 0.5 * j as f64) * edge,
            j as f64 * edge * 3f64.sqrt() / 2.0,
        )
    };

    let mut index_of = vec![usize::MAX; width * width];
    let slot = |i: i64, j: i64| -> Option<usize> {
        if i.abs() > half_w || j.abs() > half_w {
            None
        } else {
            Some((j + half_w) as usize * width + (i + half_w) as usize)
        }
    };
    let tol = 1e-9 * edge;
    let mut coords: Vec<(i64, i64)> = Vec::new();
    for j in -half_w..=half_w {
        for i in -half_w..=half_w {
            let (x, y) = lattice_xy(i, j);
            if x.hypot(y) <= rho_max + tol {
                coords.push((i, j));
            }
        }
    }
    for (k, &(i, j)) in coords.iter().enumerate() {
        index_of[slot(i, j).unwrap()] = k;
    }
    let lookup = |i: i64, j: i64| slot(i, j).map(|s| index_of[s]).filter(|&k| k != usize::MAX);

    let mut triangles = Vec::new();
    for &(i, j) in &coords {
        let p = lookup(i, j).unwrap();
        if let (Some(a), Some(b)) = (lookup(i + 1, j), lookup(i, j + 1)) {
            triangles.push([p, a, b]);
        }
        if let (Some(a), Some(b), Some(c)) = (lookup(i + 1, j), lookup(i + 1, j + 1), lookup(i, j + 1)) {
            triangles.push([a, b, c]);
        }
        let _ = p;
    }

    // drop vertices that ended up in no triangle and reindex
    let mut used = vec![false; coords.len()];
    for t in &triangles {
        for &v in t {
            used[v] = true;
        }
    }
    let mut remap = vec![usize::MAX; coords.len()];
    let mut kept = Vec::new();
    for (k, &u) in used.iter().enumerate() {
        if u {
            remap[k] = kept.len();
            kept.push(coords[k]);
        }
    }
    for t in &mut triangles {
        for v in t.iter_mut() {
            *v = remap[*v];
        }
    }
    let coords = kept;
    let n = coords.len();
    let relookup = |i: i64, j: i64| lookup(i, j).map(|k| remap[k]).filter(|&k| k != usize::MAX);

    let planar: Vec<[f64; 2]> = coords
        .iter()
        .map(|&(i, j)| {
            let (x, y) = lattice_xy(i, j);
            [x, y]
        })
        .collect();
    let rest_nodes: Vec<Vec3> = planar.iter().map(|p| unrolled_to_dome(radius, p[0], p[1])).collect();

    let mut edges: Vec<[usize; 2]> = triangles
        .iter()
        .flat_map(|t| [[t[0], t[1]], [t[1], t[2]], [t[2], t[0]]])
        .map(|[a, b]| if a < b { [a, b] } else { [b, a] })
        .collect();
    edges.sort_unstable();
    edges.dedup();

    let spring = spec.membrane_stiffness_n_per_mm * 3f64.sqrt() / 2.0;
    let edge_rest_length: Vec<f64> = edges
        .iter()
        .map(|e| (rest_nodes[e[1]] - rest_nodes[e[0]]).norm())
        .collect();
    let edge_stiffness = vec![spring; edges.len()];

    let mut node_area = vec![0.0; n];
    for t in &triangles {
        let area = 0.5
            * (rest_nodes[t[1]] - rest_nodes[t[0]])
                .cross(&(rest_nodes[t[2]] - rest_nodes[t[0]]))
                .norm();
        for &v in t {
            node_area[v] += area / 3.0;
        }
    }

    const HEX_DIRS: [(i64, i64); 6] = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)];
    let clamped: Vec<bool> = coords
        .iter()
        .map(|&(i, j)| HEX_DIRS.iter().any(|&(di, dj)| relookup(i + di, j + dj).is_none()))
        .collect();

    let mut adjacency_offsets = Vec::with_capacity(n + 1);
    let mut adjacency = Vec::with_capacity(6 * n);
    let mut degree = vec![0usize; n];
    for e in &edges {
        degree[e[0]] += 1;
        degree[e[1]] += 1;
    }
    let mut lists: Vec<Vec<usize>> = degree.iter().map(|&d| Vec::with_capacity(d)).collect();
    for e in &edges {
        lists[e[0]].push(e[1]);
        lists[e[1]].push(e[0]);
    }
    adjacency_offsets.push(0);
    for mut l in lists {
        l.sort_unstable();
        adjacency.extend(l);
        adjacency_offsets.push(adjacency.len());
    }

    let mut model = SensorModel {
        spec: spec.clone(),
        rest_nodes,
        planar,
        triangles,
        edges,
        edge_rest_length,
        edge_stiffness,
        node_area,
        clamped,
        adjacency_offsets,
        adjacency,
        pin_base_index: Vec::new(),
        pin_tip_rest: Vec::new(),
        bending_stiffness: spec.bending_ratio * spring,
    };

    if spec.has_pins {
        let pin_base_index = hex_pin_layout(spec.pin_rings)
            .into_iter()
            .map(|(a, b)| {
                relookup(a * n_sub, b * n_sub).ok_or_else(|| {
                    Error::config("pin_rings", "pin lattice point is not a mesh vertex")
                })
            })
            .collect::<Result<Vec<_>>>()?;
        model.pin_base_index = pin_base_index;
        let normals = model.vertex_normals(&model.rest_nodes);
        model.pin_tip_rest = model.pin_tips(&model.rest_nodes, &normals);
    }
    Ok(model)
}
