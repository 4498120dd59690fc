//! As-rigid-as-possible deformation with hard handle constraints.
//!
//! The energy over a deformation graph with rest positions `p` and current
//! positions `v` is
//!
//! ```text
//! E(v) = Σ_i Σ_{j ∈ N(i)} w_ij ‖(v_i − v_j) − R_i (p_i − p_j)‖²
//! ```
//!
//! minimised by alternating a local rotation fit per vertex with a global
//! linear solve over the free vertices. Handle vertices are eliminated
//! from the system, so they sit exactly on their targets. The energy is
//! non-increasing across both steps; the solver asserts that on every
//! iteration.
//!
//! [`GlobalMode::Jacobi`] replaces the global solve with a per-vertex
//! neighbour-averaging update, `v_i ← (1/|N(i)|) Σ_j (R_i p_j + v_j − R_j p_j)`,
//! kept for comparison with the solve-based update. It is not a descent
//! method and carries no monotonicity guarantee.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};
use crate::mesh::{build_adjacency, Adjacency, TriMesh, VertexWeights, WeightScheme};
use crate::sparse::{SparseSystem, SpdFactor};
use crate::transform::fit_rotation;

/// How the position update of each iteration is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GlobalMode {
    /// Sparse solve of the stationarity system over free vertices.
    #[default]
    Solve,
    /// Literal neighbour-averaging sweep (see module docs).
    Jacobi,
}

/// Solver settings.
#[derive(Debug, Clone)]
pub struct ArapConfig {
    pub max_iters: usize,
    /// Stop when the relative energy change between iterations drops below
    /// this value.
    pub energy_rel_tol: f64,
    pub weights: WeightScheme,
    pub global_mode: GlobalMode,
}

impl Default for ArapConfig {
    fn default() -> Self {
        ArapConfig {
            max_iters: 100,
            energy_rel_tol: 1e-6,
            weights: WeightScheme::Uniform,
            global_mode: GlobalMode::Solve,
        }
    }
}

/// Energies below this (mm²) are treated as converged-to-zero; relative
/// change is meaningless down there.
const ENERGY_FLOOR: f64 = 1e-14;

/// Rest shape, current positions, per-vertex rotations and handle targets
/// of an in-progress deformation.
#[derive(Debug, Clone)]
pub struct DeformState {
    rest: Vec<Point3<f64>>,
    current: Vec<Point3<f64>>,
    rotations: Vec<Matrix3<f64>>,
    handles: BTreeMap<usize, Point3<f64>>,
    adjacency: Adjacency,
    weights: VertexWeights,
}

impl DeformState {
    /// Starts a deformation: current positions are the rest positions with
    /// handles snapped to their targets, rotations are identity.
    pub fn new(
        rest: Vec<Point3<f64>>,
        adjacency: Adjacency,
        weights: VertexWeights,
        handles: BTreeMap<usize, Point3<f64>>,
    ) -> Result<Self> {
        let n = rest.len();
        if adjacency.vertex_count() != n || weights.vertex_count() != n {
            return Err(Error::Structural(format!(
                "deformation graph sizes disagree: {} positions, {} adjacency, {} weights",
                n,
                adjacency.vertex_count(),
                weights.vertex_count()
            )));
        }
        for (&i, t) in &handles {
            if i >= n {
                return Err(Error::Structural(format!(
                    "handle vertex {i} out of range 0..{n}"
                )));
            }
            if !t.iter().all(|v| v.is_finite()) {
                return Err(Error::Structural(format!(
                    "handle {i} has a non-finite target"
                )));
            }
        }
        let mut current = rest.clone();
        for (&i, &t) in &handles {
            current[i] = t;
        }
        Ok(DeformState {
            rotations: vec![Matrix3::identity(); n],
            rest,
            current,
            handles,
            adjacency,
            weights,
        })
    }

    pub fn positions(&self) -> &[Point3<f64>] {
        &self.current
    }

    pub fn rotations(&self) -> &[Matrix3<f64>] {
        &self.rotations
    }

    pub fn handles(&self) -> &BTreeMap<usize, Point3<f64>> {
        &self.handles
    }

    /// Deformation energy in mm² (see module docs).
    pub fn energy(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.rest.len() {
            for (&j, &w) in self
                .adjacency
                .neighbors(i)
                .iter()
                .zip(self.weights.weights(i))
            {
                let cur = self.current[i] - self.current[j];
                let rest = self.rotations[i] * (self.rest[i] - self.rest[j]);
                acc += w * (cur - rest).norm_squared();
            }
        }
        acc
    }

    /// Local step: refit every vertex rotation to map its rest spokes onto
    /// the current spokes. Optimal for the energy with positions held
    /// fixed, so the energy cannot increase.
    pub fn local_step(&mut self) {
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut w = Vec::new();
        for i in 0..self.rest.len() {
            let neighbors = self.adjacency.neighbors(i);
            if neighbors.is_empty() {
                continue; // isolated vertex: keep previous rotation
            }
            src.clear();
            dst.clear();
            w.clear();
            for (&j, &wij) in neighbors.iter().zip(self.weights.weights(i)) {
                src.push(self.rest[i] - self.rest[j]);
                dst.push(self.current[i] - self.current[j]);
                w.push(wij);
            }
            let fit = fit_rotation(&src, &dst, &w)
                .expect("spoke fit inputs are constructed consistent");
            self.rotations[i] = fit.rotation;
        }
    }

    /// Jacobi-style position sweep (see module docs); free vertices only,
    /// all updates computed from the previous positions.
    pub fn jacobi_step(&mut self) {
        let old = self.current.clone();
        for i in 0..self.rest.len() {
            if self.handles.contains_key(&i) {
                continue;
            }
            let neighbors = self.adjacency.neighbors(i);
            if neighbors.is_empty() {
                continue;
            }
            let mut acc = Vector3::zeros();
            for &j in neighbors {
                acc += self.rotations[i] * self.rest[j].coords + old[j].coords
                    - self.rotations[j] * self.rest[j].coords;
            }
            self.current[i] = Point3::from(acc / neighbors.len() as f64);
        }
    }
}

/// Pre-factored global system for a fixed graph + handle set. Rebuilding
/// is only needed when the topology, weights or handle *set* change —
/// not when rotations or targets do.
pub struct GlobalFactor {
    factor: SpdFactor,
    free: Vec<usize>,
    slot: Vec<Option<usize>>,
}

/// Assembles and factors the free-vertex stationarity system
/// `Σ_j w_ij (v_i − v_j) = Σ_j w_ij (R_i + R_j)/2 (p_i − p_j)`.
pub fn build_global_factor(state: &DeformState) -> Result<GlobalFactor> {
    let n = state.rest.len();
    if state.handles.is_empty() {
        return Err(Error::UnderConstrained(
            "deformation needs at least one handle; otherwise the solution \
             is only defined up to a rigid motion"
                .into(),
        ));
    }
    // every connected component needs an anchor, or its block is singular
    let (comp, count) = state.adjacency.components();
    let mut anchored = vec![false; count];
    for &i in state.handles.keys() {
        anchored[comp[i]] = true;
    }
    for i in 0..n {
        if !anchored[comp[i]] {
            return Err(Error::UnderConstrained(format!(
                "connected component containing vertex {i} has no handle"
            )));
        }
    }

    let mut slot = vec![None; n];
    let mut free = Vec::new();
    for i in 0..n {
        if !state.handles.contains_key(&i) {
            slot[i] = Some(free.len());
            free.push(i);
        }
    }
    let mut system = SparseSystem::new(free.len());
    for (row, &i) in free.iter().enumerate() {
        let mut diag = 0.0;
        for (&j, &w) in state
            .adjacency
            .neighbors(i)
            .iter()
            .zip(state.weights.weights(i))
        {
            diag += w;
            if let Some(col) = slot[j] {
                system.add(row, col, -w);
            }
        }
        system.add(row, row, diag);
    }
    let factor = system.factor()?;
    Ok(GlobalFactor { factor, free, slot })
}

/// Global step: solves for the free positions with rotations held fixed.
/// Exact minimiser of the energy in the positions, so the energy cannot
/// increase.
pub fn global_step(state: &mut DeformState, global: &GlobalFactor) {
    let m = global.free.len();
    let mut rhs = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    for (row, &i) in global.free.iter().enumerate() {
        let mut acc = Vector3::zeros();
        for (&j, &w) in state
            .adjacency
            .neighbors(i)
            .iter()
            .zip(state.weights.weights(i))
        {
            let rot = (state.rotations[i] + state.rotations[j]) * 0.5;
            acc += w * (rot * (state.rest[i] - state.rest[j]));
            if global.slot[j].is_none() {
                // handle neighbour: its position is a constant on the rhs
                acc += w * state.current[j].coords;
            }
        }
        for k in 0..3 {
            rhs[k][row] = acc[k];
        }
    }
    let sol: Vec<Vec<f64>> = rhs.iter().map(|b| global.factor.solve(b)).collect();
    for (row, &i) in global.free.iter().enumerate() {
        state.current[i] = Point3::new(sol[0][row], sol[1][row], sol[2][row]);
    }
}

/// Deformation outcome: final positions, the energy after each iteration
/// (index 0 is the energy before the first iteration), and whether the
/// relative-change tolerance was reached within the budget.
#[derive(Debug, Clone)]
pub struct ArapResult {
    pub positions: Vec<Point3<f64>>,
    pub energy_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ArapResult {
    /// Renders the energy trace as `iteration,energy_mm2` CSV.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,energy_mm2\n");
        for (i, e) in self.energy_trace.iter().enumerate() {
            out.push_str(&format!("{i},{e}\n"));
        }
        out
    }
}

/// Runs the full local/global alternation on an arbitrary deformation
/// graph. `weights` must be built against `adjacency`.
pub fn arap_deform_graph(
    rest: &[Point3<f64>],
    adjacency: &Adjacency,
    weights: &VertexWeights,
    handles: &BTreeMap<usize, Point3<f64>>,
    config: &ArapConfig,
) -> Result<ArapResult> {
    if config.max_iters == 0 {
        return Err(Error::Parameter("iteration budget must be positive".into()));
    }
    if !(config.energy_rel_tol >= 0.0) {
        return Err(Error::Parameter(format!(
            "energy tolerance must be non-negative, got {}",
            config.energy_rel_tol
        )));
    }
    let mut state = DeformState::new(
        rest.to_vec(),
        adjacency.clone(),
        weights.clone(),
        handles.clone(),
    )?;
    let global = match config.global_mode {
        GlobalMode::Solve => Some(build_global_factor(&state)?),
        GlobalMode::Jacobi => {
            if handles.is_empty() {
                return Err(Error::UnderConstrained(
                    "deformation needs at least one handle".into(),
                ));
            }
            None
        }
    };

    let mut trace = vec![state.energy()];
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..config.max_iters {
        iterations += 1;
        let before = *trace.last().unwrap();
        state.local_step();
        let after_local = state.energy();
        match &global {
            Some(global) => {
                debug_assert!(
                    after_local <= before * (1.0 + 1e-9) + 1e-12,
                    "local step increased energy: {before} -> {after_local}"
                );
                global_step(&mut state, global);
                let after = state.energy();
                assert!(
                    after <= after_local * (1.0 + 1e-9) + 1e-12,
                    "global step increased energy: {after_local} -> {after}"
                );
                trace.push(after);
            }
            None => {
                state.jacobi_step();
                trace.push(state.energy());
            }
        }
        let after = *trace.last().unwrap();
        if after <= ENERGY_FLOOR {
            converged = true;
            break;
        }
        if matches!(config.global_mode, GlobalMode::Solve) {
            let rel = (before - after).abs() / before.max(ENERGY_FLOOR);
            if rel < config.energy_rel_tol {
                converged = true;
                break;
            }
        }
    }

    Ok(ArapResult {
        positions: state.positions().to_vec(),
        energy_trace: trace,
        iterations,
        converged,
    })
}

/// Convenience wrapper: deforms a mesh using its own connectivity.
pub fn arap_deform(
    mesh: &TriMesh,
    handles: &BTreeMap<usize, Point3<f64>>,
    config: &ArapConfig,
) -> Result<(TriMesh, ArapResult)> {
    let adjacency = build_adjacency(mesh);
    let weights = VertexWeights::build(mesh, &adjacency, config.weights)?;
    let result = arap_deform_graph(mesh.vertices(), &adjacency, &weights, handles, config)?;
    let deformed = mesh.with_positions(result.positions.clone())?;
    Ok((deformed, result))
}

/// Parses a handle file of the form
/// `{"handles": [{"vertex": 12, "target": [x, y, z]}, ...]}`.
pub fn load_handles(path: &std::path::Path) -> Result<BTreeMap<usize, Point3<f64>>> {
    #[derive(serde::Deserialize)]
    struct Entry {
        vertex: usize,
        target: [f64; 3],
    }
    #[derive(serde::Deserialize)]
    struct File {
        handles: Vec<Entry>,
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed: File = serde_json::from_str(&text).map_err(|e| {
        Error::parse(
            path,
            crate::registration::byte_offset(&text, e.line(), e.column()),
            e.to_string(),
        )
    })?;
    let mut handles = BTreeMap::new();
    for entry in parsed.handles {
        let t = Point3::new(entry.target[0], entry.target[1], entry.target[2]);
        if handles.insert(entry.vertex, t).is_some() {
            return Err(Error::Structural(format!(
                "vertex {} appears twice in the handle file",
                entry.vertex
            )));
        }
    }
    Ok(handles)
}

/// Writes handles in the format accepted by [`load_handles`].
pub fn save_handles(
    handles: &BTreeMap<usize, Point3<f64>>,
    path: &std::path::Path,
) -> Result<()> {
    #[derive(serde::Serialize)]
    struct Entry {
        vertex: usize,
        target: [f64; 3],
    }
    #[derive(serde::Serialize)]
    struct File {
        handles: Vec<Entry>,
    }
    let file = File {
        handles: handles
            .iter()
            .map(|(&vertex, t)| Entry {
                vertex,
                target: [t.x, t.y, t.z],
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file).expect("handles serialise");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
