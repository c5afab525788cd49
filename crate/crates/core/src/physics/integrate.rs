use super::solver::{ImplicitSystem, SolveStats};
use super::sparse::BlockMatrix;
use super::{internal_forces, ClothModel, ClothState, SimParams, Stiffness};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Quantities of a forward step reused by its adjoint.
#[derive(Clone, Debug)]
pub struct StepCache {
    pub hessian: BlockMatrix,
    /// Undamped solution `v'` of the implicit system (flat).
    pub undamped_velocity: Vec<f64>,
    pub stats: SolveStats,
}

/// Gradients with respect to the inputs of one step.
#[derive(Clone, Debug)]
pub struct StepAdjoint {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    /// With respect to `(Y, B, S)` themselves, not their logarithms.
    pub stiffness: [f64; 3],
    /// With respect to the Newton external forces.
    pub external: Vec<f64>,
}

fn flat(v: &[Vec3]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

fn unflat(v: &[f64]) -> Vec<Vec3> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// One backward-Euler step with external forces `external` (newtons).
pub fn step(model: &ClothModel, state: &ClothState, k: &Stiffness, external: &[Vec3], damping: f64, dt: f64) -> Result<ClothState> {
    step_with_cache(model, state, k, external, damping, dt).map(|(s, _)| s)
}

pub fn step_with_cache(
    model: &ClothModel,
    state: &ClothState,
    k: &Stiffness,
    external: &[Vec3],
    damping: f64,
    dt: f64,
) -> Result<(ClothState, StepCache)> {
    let n = model.num_vertices();
    if state.positions.len() != n || external.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "model has {n} vertices, state {} and forces {}",
            state.positions.len(),
            external.len()
        )));
    }
    let x = &state.positions;
    let hessian = model.hessian(x, k);
    let internal = internal_forces(model, x, k).forces;
    let mut rhs = vec![0.0; 3 * n];
    for i in 0..n {
        if model.pinned[i] {
            continue;
        }
        for d in 0..3 {
            rhs[3 * i + d] = model.masses[i] * state.velocities[i][d] + dt * (internal[i][d] + external[i][d]);
        }
    }
    let system = ImplicitSystem { hessian: &hessian, masses: &model.masses, dt2: dt * dt, pinned: &model.pinned };
    let (v_star, stats) = system.solve(&rhs)?;
    let mut next = ClothState { positions: x.clone(), velocities: vec![[0.0; 3]; n], time_index: state.time_index + 1 };
    for i in 0..n {
        if model.pinned[i] {
            continue;
        }
        for d in 0..3 {
            let v = damping * v_star[3 * i + d];
            next.velocities[i][d] = v;
            next.positions[i][d] += dt * v;
        }
    }
    if !next.is_finite() {
        return Err(Error::NonFinite(format!("state after step {}", next.time_index)));
    }
    Ok((next, StepCache { hessian, undamped_velocity: v_star, stats }))
}

/// Pulls the adjoints of `(x', v')` back through one step.
#[allow(clippy::too_many_arguments)]
pub fn step_backward(
    model: &ClothModel,
    state: &ClothState,
    k: &Stiffness,
    cache: &StepCache,
    damping: f64,
    dt: f64,
    grad_positions: &[f64],
    grad_velocities: &[f64],
) -> Result<StepAdjoint> {
    let n = model.num_vertices();
    let dt2 = dt * dt;
    let mut gv_star = vec![0.0; 3 * n];
    for i in 0..n {
        if model.pinned[i] {
            continue;
        }
        for d in 0..3 {
            let j = 3 * i + d;
            gv_star[j] = damping * (grad_velocities[j] + dt * grad_positions[j]);
        }
    }
    let system = ImplicitSystem { hessian: &cache.hessian, masses: &model.masses, dt2, pinned: &model.pinned };
    let (lambda, _) = system.solve(&gv_star)?;

    let mut velocities = vec![0.0; 3 * n];
    let mut external = vec![0.0; 3 * n];
    for i in 0..n {
        if model.pinned[i] {
            continue;
        }
        for d in 0..3 {
            let j = 3 * i + d;
            velocities[j] = model.masses[i] * lambda[j];
            external[j] = dt * lambda[j];
        }
    }

    let mut positions = grad_positions.to_vec();
    let mut h_gf = vec![0.0; 3 * n];
    cache.hessian.matvec(&external, &mut h_gf);
    for (p, h) in positions.iter_mut().zip(&h_gf) {
        *p -= h;
    }
    let units = model.unit_gradients(&state.positions);
    let mut stiffness = [0.0; 3];
    for (t, g) in units.iter().enumerate() {
        stiffness[t] = -flat(g).iter().zip(&external).map(|(a, b)| a * b).sum::<f64>();
    }
    let (gx, gk) =
        model.hessian_contraction_gradient(&state.positions, k, &unflat(&lambda), &unflat(&cache.undamped_velocity));
    for (p, g) in positions.iter_mut().zip(gx.iter().flatten()) {
        *p -= dt2 * g;
    }
    for t in 0..3 {
        stiffness[t] -= dt2 * gk[t];
    }
    Ok(StepAdjoint { positions, velocities, stiffness, external })
}

/// Runs `n_frames` frames from `initial`, returning `n_frames + 1` states.
pub fn simulate(model: &ClothModel, params: &SimParams, initial: &ClothState, n_frames: usize) -> Result<Vec<ClothState>> {
    params.validate()?;
    let n = model.num_vertices();
    if params.n_force_frames(n) < n_frames {
        return Err(Error::DimensionMismatch(format!(
            "{n_frames} frames requested but only {} force slices",
            params.n_force_frames(n)
        )));
    }
    let k = params.stiffness();
    let mut states = Vec::with_capacity(n_frames + 1);
    states.push(initial.clone());
    let mut s = initial.clone();
    for f in 0..n_frames {
        let ext = params.external_forces(f, &model.masses);
        for _ in 0..params.substeps_per_frame {
            s = step(model, &s, &k, &ext, params.damping, params.dt)?;
        }
        states.push(s.clone());
    }
    Ok(states)
}
