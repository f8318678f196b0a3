//! Quasi-static contact between the skin and a rigid stimulus.
//!
//! The skin minimizes elastic energy (edge springs, a Laplacian bending
//! regularizer, and a gel foundation holding each node to its rest position)
//! plus a quadratic penetration penalty. Shear is a second stage in which
//! nodes that were in contact after the press are tied to the moving stimulus
//! by tangential springs with a Coulomb cap.

mod energy;
mod fdcheck;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

pub use energy::{
    friction_force, laplacian, EnergyModel, EnergyTerms, Evaluation, FrictionAnchor, NodeContact, Workspace,
};
pub use fdcheck::{finite_diff_check, FdCheck};

use crate::error::{Error, Result};
use crate::sensor::{SensorModel, Vec3};
use crate::stimulus::{Placement, Stimulus, StimulusPose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    /// Penetration penalty per unit node area (model units, N/mm^3 before scaling).
    pub kn: f64,
    /// Coulomb friction coefficient.
    pub mu: f64,
    /// Tangential stick stiffness per unit node area.
    pub kt: f64,
    /// Convergence threshold on the largest nodal residual force (N).
    pub tol: f64,
    pub max_iters: usize,
    /// Preconditioned step length.
    pub step_size: f64,
    /// Converts model force units to newtons.
    pub force_scale: f64,
    pub depth_range_mm: (f64, f64),
    pub max_shear_mm: f64,
    /// Largest press increment; deeper presses are applied in equal steps.
    pub load_step_mm: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            kn: 40.0,
            mu: 0.6,
            kt: 2.0,
            tol: 1e-6,
            max_iters: 5000,
            step_size: 0.8,
            force_scale: DEFAULT_FORCE_SCALE,
            depth_range_mm: (-2.0, 2.0),
            max_shear_mm: 3.0,
            load_step_mm: 0.25,
        }
    }
}

/// Makes a centered 1 mm flat press on the default sensor read 0.8 N.
/// Regenerate with `vitactip calibrate`.
pub const DEFAULT_FORCE_SCALE: f64 = 0.125_369_64;

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let check = |field: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(field, "out of range"))
            }
        };
        check("kn", self.kn > 0.0 && self.kn.is_finite())?;
        check("mu", self.mu >= 0.0 && self.mu.is_finite())?;
        check("kt", self.kt >= 0.0 && self.kt.is_finite())?;
        check("tol", self.tol > 0.0)?;
        check("max_iters", self.max_iters > 0)?;
        check("step_size", self.step_size > 0.0 && self.step_size <= 2.0)?;
        check("force_scale", self.force_scale > 0.0 && self.force_scale.is_finite())?;
        check("depth_range_mm", self.depth_range_mm.0 < self.depth_range_mm.1)?;
        check("max_shear_mm", self.max_shear_mm >= 0.0)?;
        check("load_step_mm", self.load_step_mm > 0.0)?;
        Ok(())
    }

    fn terms(&self) -> EnergyTerms {
        EnergyTerms {
            penalty: self.kn,
            friction: self.kt,
            scale: self.force_scale,
        }
    }

    pub fn validate_pose(&self, pose: &StimulusPose) -> Result<()> {
        let (lo, hi) = self.depth_range_mm;
        if !(pose.z_mm >= lo && pose.z_mm <= hi) {
            return Err(Error::Validation(format!(
                "press depth {} mm outside safe range [{lo}, {hi}]",
                pose.z_mm
            )));
        }
        let shear = pose.shear_mm.0.hypot(pose.shear_mm.1);
        if !(shear <= self.max_shear_mm) {
            return Err(Error::Validation(format!(
                "shear {shear} mm exceeds maximum {}",
                self.max_shear_mm
            )));
        }
        if ![pose.x_mm, pose.y_mm, pose.theta_deg].iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("pose contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Skin state produced by one contact solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationState {
    pub node_displacements: Vec<Vec3>,
    pub node_positions: Vec<Vec3>,
    pub node_normals: Vec<Vec3>,
    pub node_area: Vec<f64>,
    pub pin_tips: Vec<Vec3>,
    /// Penetration depth per node, zero outside the stimulus.
    pub penetration: Vec<f64>,
    /// Outward stimulus normal at contact nodes (zero elsewhere).
    pub contact_normal: Vec<Vec3>,
    /// Tangential stretch of the friction spring per node (zero when not anchored).
    pub friction_stretch: Vec<Vec3>,
    pub solver_residual: f64,
    pub iterations: usize,
}

impl DeformationState {
    /// The undeformed skin.
    pub fn rest(model: &SensorModel) -> Self {
        let n = model.node_count();
        let normals = model.vertex_normals(&model.rest_nodes);
        DeformationState {
            node_displacements: vec![Vec3::zeros(); n],
            node_positions: model.rest_nodes.clone(),
            pin_tips: model.pin_tip_rest.clone(),
            node_normals: normals,
            node_area: model.node_area.clone(),
            penetration: vec![0.0; n],
            contact_normal: vec![Vec3::zeros(); n],
            friction_stretch: vec![Vec3::zeros(); n],
            solver_residual: 0.0,
            iterations: 0,
        }
    }

    fn from_displacements(model: &SensorModel, u: Vec<Vec3>) -> Self {
        let positions: Vec<Vec3> = model.rest_nodes.iter().zip(&u).map(|(r, d)| r + d).collect();
        let normals = model.vertex_normals(&positions);
        let pin_tips = model.pin_tips(&positions, &normals);
        let n = u.len();
        DeformationState {
            node_displacements: u,
            node_positions: positions,
            node_normals: normals,
            node_area: model.node_area.clone(),
            pin_tips,
            penetration: vec![0.0; n],
            contact_normal: vec![Vec3::zeros(); n],
            friction_stretch: vec![Vec3::zeros(); n],
            solver_residual: 0.0,
            iterations: 0,
        }
    }

    pub fn max_penetration(&self) -> f64 {
        self.penetration.iter().cloned().fold(0.0, f64::max)
    }
}

/// Ground-truth contact wrench: force on the sensor skin and the contact centroid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactWrench {
    pub fx: f64,
    pub fy: f64,
    /// Compressive force along the sensor axis (>= 0).
    pub fz: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub in_contact: bool,
}

/// Per-node compressive force along the sensor axis.
fn axial_force(kn: f64, scale: f64, area: f64, pen: f64, normal: &Vec3) -> f64 {
    // the stimulus pushes the skin along its outward normal, toward the camera (-z)
    (kn * scale * area * pen * -normal.z).max(0.0)
}

/// Sums the contact forces and the penetration-weighted contact centroid.
pub fn compute_wrench(state: &DeformationState, params: &SolverParams) -> ContactWrench {
    let mut w = ContactWrench::default();
    let mut weight = 0.0;
    let mut centroid = Vec3::zeros();
    let kt = params.kt * params.force_scale;
    for i in 0..state.penetration.len() {
        let pen = state.penetration[i];
        if pen <= 0.0 {
            continue;
        }
        let area = state.node_area[i];
        let fz_i = axial_force(params.kn, params.force_scale, area, pen, &state.contact_normal[i]);
        w.fz += fz_i;
        let stretch = state.friction_stretch[i];
        let mut ft = stretch * (kt * area);
        let cap = params.mu * fz_i;
        let mag = ft.norm();
        if mag > cap {
            ft = if cap > 0.0 { ft * (cap / mag) } else { Vec3::zeros() };
        }
        w.fx += ft.x;
        w.fy += ft.y;
        weight += pen;
        centroid += state.node_positions[i] * pen;
    }
    if weight > 0.0 {
        centroid /= weight;
        w.px = centroid.x;
        w.py = centroid.y;
        w.pz = centroid.z;
        w.in_contact = true;
    }
    w
}

/// Diagnostics of one minimization.
#[derive(Debug, Clone, Default)]
pub struct SolveTrace {
    /// Energy after every accepted iteration, per stage.
    pub energies: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
}

/// Solves the press (and, with shear, the shear stage) and returns the
/// deformed skin with its contact wrench.
pub fn solve_contact(
    model: &SensorModel,
    stimulus: &Stimulus,
    pose: &StimulusPose,
    params: &SolverParams,
) -> Result<(DeformationState, ContactWrench)> {
    solve_contact_traced(model, stimulus, pose, params, None)
}

pub fn solve_contact_traced(
    model: &SensorModel,
    stimulus: &Stimulus,
    pose: &StimulusPose,
    params: &SolverParams,
    mut trace: Option<&mut SolveTrace>,
) -> Result<(DeformationState, ContactWrench)> {
    params.validate()?;
    params.validate_pose(pose)?;
    stimulus.validate()?;

    let press = Placement::pressed(model, *stimulus, pose);
    let sheared = press.shifted(pose.shear_mm.0, pose.shear_mm.1);

    let total = model.node_count();
    let mut touching = 0;
    let mut any_press = false;
    for p in &model.rest_nodes {
        if press.sdf(p) < 0.0 {
            any_press = true;
        }
        if sheared.sdf(p) < 0.0 || press.sdf(p) < 0.0 {
            touching += 1;
        }
    }
    if 2 * touching > total {
        return Err(Error::InfeasiblePose {
            intersecting: touching,
            total,
        });
    }
    if !any_press {
        // a stimulus that never touches during the press carries no friction anchors,
        // so the shear stage is a plain frictionless solve
        if !(0..total).any(|i| sheared.sdf(&model.rest_nodes[i]) < 0.0) {
            let state = DeformationState::rest(model);
            return Ok((state, ContactWrench::default()));
        }
    }

    let terms = params.terms();
    // press in increments so skin nodes are not pinched against steep walls
    let deepest = pose.z_mm.max(0.0);
    let increments = ((deepest / params.load_step_mm).ceil() as usize).max(1);
    let mut u = vec![Vec3::zeros(); total];
    let mut iters = 0;
    let mut eval = Evaluation::default();
    for k in 1..=increments {
        let lift = deepest * (increments - k) as f64 / increments as f64;
        let energy = EnergyModel {
            model,
            placement: press.lifted(lift),
            terms,
            anchors: &[],
        };
        let tol = if k == increments { params.tol } else { params.tol * 100.0 };
        let (next, e, it) = minimize(&energy, u, params, tol, trace.as_deref_mut())?;
        u = next;
        eval = e;
        iters += it;
    }

    let (u, eval, iters2, anchors) = if pose.has_shear() {
        let anchors: Vec<FrictionAnchor> = eval
            .contact
            .iter()
            .enumerate()
            .filter(|(_, c)| c.penetration > 0.0)
            .map(|(i, c)| FrictionAnchor {
                node: i,
                anchor: model.rest_nodes[i] + u[i] + Vec3::new(pose.shear_mm.0, pose.shear_mm.1, 0.0),
                normal: c.normal,
                cap: params.mu
                    * axial_force(params.kn, 1.0, model.node_area[i], c.penetration, &c.normal),
            })
            .collect();
        let energy = EnergyModel {
            model,
            placement: sheared,
            terms,
            anchors: &anchors,
        };
        let (u, eval, iters) = minimize(&energy, u, params, params.tol, trace.as_deref_mut())?;
        (u, eval, iters, anchors)
    } else {
        (u, eval, 0, Vec::new())
    };

    let residual = max_residual(&eval.gradient);
    let mut state = DeformationState::from_displacements(model, u);
    for (i, c) in eval.contact.iter().enumerate() {
        state.penetration[i] = c.penetration;
        state.contact_normal[i] = c.normal;
    }
    for a in &anchors {
        let delta = energy::tangent_projector(&a.normal) * (a.anchor - state.node_positions[a.node]);
        state.friction_stretch[a.node] = delta;
    }
    state.solver_residual = residual;
    state.iterations = iters + iters2;
    let wrench = compute_wrench(&state, params);
    Ok((state, wrench))
}

fn max_residual(gradient: &[Vec3]) -> f64 {
    gradient.iter().map(|g| g.norm()).fold(0.0, f64::max)
}

/// Damped (heavy-ball) projected gradient descent with a block-Jacobi
/// preconditioner and one energy evaluation per iteration.
///
/// A step that would raise the energy is rejected: first the momentum is
/// dropped, then the step length is halved, so accepted iterates have
/// non-increasing energy. Momentum also restarts when the new gradient opposes
/// the last step. Clamped nodes are projected back to zero displacement.
fn minimize(
    energy: &EnergyModel<'_>,
    start: Vec<Vec3>,
    params: &SolverParams,
    tol: f64,
    trace: Option<&mut SolveTrace>,
) -> Result<(Vec<Vec3>, Evaluation, usize)> {
    let model = energy.model;
    let n = model.node_count();
    let scale = energy.terms.scale;
    let kn = energy.terms.penalty;
    let kt = energy.terms.friction;

    let mut base_blocks = energy.elastic_blocks(&start);
    for a in energy.anchors {
        let p = energy::tangent_projector(&a.normal);
        base_blocks[a.node] += p * (kt * model.node_area[a.node]);
    }
    let base_inv: Vec<Matrix3<f64>> = base_blocks
        .iter()
        .map(|b| b.try_inverse().unwrap_or_else(Matrix3::identity) / scale)
        .collect();

    let precondition = |eval: &Evaluation, out: &mut [Vec3]| {
        for i in 0..n {
            if model.clamped[i] {
                out[i] = Vec3::zeros();
                continue;
            }
            let inv = &base_inv[i];
            let g = eval.gradient[i];
            let mut d = inv * g;
            let c = eval.contact[i];
            if c.penetration > 0.0 {
                // Sherman-Morrison update for the penalty's rank-one normal stiffness
                let w = kn * model.node_area[i] * scale;
                let an = inv * c.normal;
                let denom = 1.0 + w * c.normal.dot(&an);
                d -= an * (w * an.dot(&g) / denom);
            }
            out[i] = d;
        }
    };

    let mut ws = Workspace::new(n);
    let mut energies = Vec::new();
    let mut u = start;
    let mut eval_u = Evaluation::default();
    energy.evaluate_into(&u, &mut eval_u, &mut ws);
    energies.push(eval_u.energy);
    let mut residual = max_residual(&eval_u.gradient);

    let mut previous = u.clone();
    let mut candidate = vec![Vec3::zeros(); n];
    let mut eval_c = Evaluation::default();
    let mut dir = vec![Vec3::zeros(); n];
    let mut momentum_t = 1.0f64;
    let mut step = params.step_size;
    let mut iters = 0;

    if residual >= tol {
        precondition(&eval_u, &mut dir);
    }
    while residual >= tol && iters < params.max_iters {
        iters += 1;
        let next_t = 0.5 * (1.0 + (1.0 + 4.0 * momentum_t * momentum_t).sqrt());
        let beta = (momentum_t - 1.0) / next_t;
        for i in 0..n {
            candidate[i] = if model.clamped[i] {
                Vec3::zeros()
            } else {
                u[i] - dir[i] * step + (u[i] - previous[i]) * beta
            };
        }
        energy.evaluate_into(&candidate, &mut eval_c, &mut ws);

        let slack = 1e-14 * eval_u.energy.abs();
        if !(eval_c.energy <= eval_u.energy + slack) {
            if beta > 0.0 {
                momentum_t = 1.0;
            } else {
                step *= 0.5;
                if step < 1e-8 {
                    break;
                }
            }
            continue;
        }

        let mut opposing = 0.0;
        for i in 0..n {
            opposing += eval_c.gradient[i].dot(&(candidate[i] - u[i]));
        }
        std::mem::swap(&mut previous, &mut u);
        std::mem::swap(&mut u, &mut candidate);
        std::mem::swap(&mut eval_u, &mut eval_c);
        energies.push(eval_u.energy);
        residual = max_residual(&eval_u.gradient);
        momentum_t = if opposing > 0.0 { 1.0 } else { next_t };
        step = (step * 1.25).min(params.step_size);
        if momentum_t == 1.0 {
            previous.copy_from_slice(&u);
        }
        precondition(&eval_u, &mut dir);
    }

    if let Some(t) = trace {
        t.energies.push(energies);
        t.iterations.push(iters);
    }
    if residual >= tol {
        return Err(Error::NonConvergence {
            iterations: iters,
            residual,
        });
    }
    Ok((u, eval_u, iters))
}

/// Force scale that makes a centered flat press of `depth_mm` read `target_n`.
///
/// Forces are linear in the scale when every energy term shares it, so a
/// single unit-scale solve suffices.
pub fn calibrate_force_scale(
    model: &SensorModel,
    params: &SolverParams,
    depth_mm: f64,
    target_n: f64,
) -> Result<f64> {
    let unit = SolverParams {
        force_scale: 1.0,
        tol: params.tol / params.force_scale,
        ..params.clone()
    };
    let (_, wrench) = solve_contact(model, &Stimulus::FlatPlate, &StimulusPose::press(depth_mm), &unit)?;
    if wrench.fz <= 0.0 {
        return Err(Error::Validation("calibration press produced no force".into()));
    }
    Ok(target_n / wrench.fz)
}
