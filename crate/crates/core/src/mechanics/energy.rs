//! Total potential energy of the skin and its gradient.

use nalgebra::Matrix3;

use crate::sensor::{SensorModel, Vec3};
use crate::stimulus::Placement;

/// Tangential friction spring tying a contact node to the point of the
/// stimulus it stuck to during the press.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrictionAnchor {
    pub node: usize,
    /// Sensor-frame anchor position (moves with the stimulus).
    pub anchor: Vec3,
    /// Contact normal frozen at the end of the press; the spring acts in its tangent plane.
    pub normal: Vec3,
    /// Coulomb limit on the spring force (model force units).
    pub cap: f64,
}

/// Material and contact constants, all in model units (multiplied by the
/// force scale to obtain newtons).
#[derive(Debug, Clone, Copy)]
pub struct EnergyTerms {
    pub penalty: f64,
    pub friction: f64,
    pub scale: f64,
}

/// Per-node contact data at one configuration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NodeContact {
    pub penetration: f64,
    pub normal: Vec3,
}

#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    pub energy: f64,
    pub gradient: Vec<Vec3>,
    pub contact: Vec<NodeContact>,
}

/// Reusable buffers for repeated evaluations against one placement.
///
/// Besides the Laplacian scratch it remembers, per node, the last position at
/// which the stimulus distance was found positive. The distance field is
/// 1-Lipschitz, so a node that has moved less than that distance is still
/// outside and its query can be skipped without changing the result.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    lap: Vec<Vec3>,
    clear_at: Vec<Vec3>,
    clearance: Vec<f64>,
}

impl Workspace {
    pub fn new(nodes: usize) -> Self {
        Workspace {
            lap: vec![Vec3::zeros(); nodes],
            clear_at: vec![Vec3::zeros(); nodes],
            clearance: vec![0.0; nodes],
        }
    }
}

/// Tangential projector `I - n n^T`.
pub fn tangent_projector(n: &Vec3) -> Matrix3<f64> {
    Matrix3::identity() - n * n.transpose()
}

/// Huber-regularized friction potential and the force pulling the node toward the anchor.
pub fn friction_force(anchor: &FrictionAnchor, stiffness: f64, position: &Vec3) -> (f64, Vec3) {
    let delta = tangent_projector(&anchor.normal) * (anchor.anchor - position);
    let r = delta.norm();
    if r == 0.0 {
        return (0.0, Vec3::zeros());
    }
    if stiffness * r <= anchor.cap {
        (0.5 * stiffness * r * r, delta * stiffness)
    } else if stiffness > 0.0 {
        let c = anchor.cap;
        (c * r - c * c / (2.0 * stiffness), delta * (c / r))
    } else {
        (0.0, Vec3::zeros())
    }
}

pub struct EnergyModel<'a> {
    pub model: &'a SensorModel,
    pub placement: Placement,
    pub terms: EnergyTerms,
    pub anchors: &'a [FrictionAnchor],
}

impl<'a> EnergyModel<'a> {
    /// Energy, gradient with respect to node displacements, and contact data.
    /// Clamped nodes get a zero gradient.
    pub fn evaluate(&self, displacement: &[Vec3]) -> Evaluation {
        let mut out = Evaluation::default();
        self.evaluate_into(displacement, &mut out, &mut Workspace::new(self.model.node_count()));
        out
    }

    /// Like [`evaluate`](Self::evaluate) but reuses `out` and `ws`. A workspace
    /// must only be shared between evaluations of the same placement.
    pub fn evaluate_into(&self, displacement: &[Vec3], out: &mut Evaluation, ws: &mut Workspace) {
        let m = self.model;
        let n = m.node_count();
        out.gradient.clear();
        out.gradient.resize(n, Vec3::zeros());
        out.contact.clear();
        out.contact.resize(n, NodeContact::default());
        if ws.lap.len() != n {
            *ws = Workspace::new(n);
        }
        let gradient = &mut out.gradient;
        let mut energy = 0.0;

        for ((e, &rest), &k) in m.edges.iter().zip(&m.edge_rest_length).zip(&m.edge_stiffness) {
            let d = (m.rest_nodes[e[1]] + displacement[e[1]]) - (m.rest_nodes[e[0]] + displacement[e[0]]);
            let len = d.norm();
            let stretch = len - rest;
            energy += 0.5 * k * stretch * stretch;
            let f = d * (k * stretch / len);
            gradient[e[0]] -= f;
            gradient[e[1]] += f;
        }

        let kb = m.bending_stiffness;
        if kb > 0.0 {
            let mut sum = 0.0;
            for i in 0..n {
                let l = laplacian_at(m, displacement, i);
                sum += l.norm_squared();
                ws.lap[i] = l;
            }
            energy += 0.5 * kb * sum;
            for (i, g) in gradient.iter_mut().enumerate() {
                *g += laplacian_at(m, &ws.lap, i) * kb;
            }
        }

        let gel = m.spec.gel_stiffness_n_per_mm3;
        for i in 0..n {
            let u = displacement[i];
            let ka = gel * m.node_area[i];
            energy += 0.5 * ka * u.norm_squared();
            gradient[i] += u * ka;

            let p = m.rest_nodes[i] + u;
            if ws.clearance[i] > 0.0 && (p - ws.clear_at[i]).norm() < ws.clearance[i] {
                continue;
            }
            let (d, g) = self.placement.sdf_with_grad(&p);
            if d < 0.0 {
                let pen = -d;
                let kn = self.terms.penalty * m.node_area[i];
                energy += 0.5 * kn * pen * pen;
                gradient[i] -= g * (kn * pen);
                out.contact[i] = NodeContact { penetration: pen, normal: g };
                ws.clearance[i] = 0.0;
            } else {
                ws.clearance[i] = d;
                ws.clear_at[i] = p;
            }
        }

        let kt_density = self.terms.friction;
        for a in self.anchors {
            let kt = kt_density * m.node_area[a.node];
            let (e, f) = friction_force(a, kt, &(m.rest_nodes[a.node] + displacement[a.node]));
            energy += e;
            gradient[a.node] -= f;
        }

        let s = self.terms.scale;
        for (g, &fixed) in gradient.iter_mut().zip(&m.clamped) {
            if fixed {
                *g = Vec3::zeros();
            } else {
                *g *= s;
            }
        }
        out.energy = energy * s;
    }

    /// Approximate 3x3 diagonal Hessian blocks of the elastic terms (springs,
    /// bending, gel), in model units.
    pub fn elastic_blocks(&self, displacement: &[Vec3]) -> Vec<Matrix3<f64>> {
        let m = self.model;
        let n = m.node_count();
        let mut blocks = vec![Matrix3::zeros(); n];
        for (e, &k) in m.edges.iter().zip(&m.edge_stiffness) {
            let d = (m.rest_nodes[e[1]] + displacement[e[1]]) - (m.rest_nodes[e[0]] + displacement[e[0]]);
            let dir = d.normalize();
            let b = dir * dir.transpose() * k;
            blocks[e[0]] += b;
            blocks[e[1]] += b;
        }
        let kb = m.bending_stiffness;
        let gel = m.spec.gel_stiffness_n_per_mm3;
        for i in 0..n {
            let deg = m.neighbors(i).len() as f64;
            let diag = kb * (deg * deg + deg) + gel * m.node_area[i];
            blocks[i] += Matrix3::identity() * diag;
        }
        blocks
    }
}

/// Umbrella graph Laplacian `(L v)_i = sum_j (v_j - v_i)` over mesh neighbours.
pub fn laplacian(model: &SensorModel, v: &[Vec3]) -> Vec<Vec3> {
    (0..model.node_count()).map(|i| laplacian_at(model, v, i)).collect()
}

#[inline]
fn laplacian_at(model: &SensorModel, v: &[Vec3], i: usize) -> Vec3 {
    let nb = model.neighbors(i);
    let mut acc = Vec3::zeros();
    for &j in nb {
        acc += v[j];
    }
    acc - v[i] * nb.len() as f64
}
