//! Fits a template surface to a wrap target by minimising a weighted sum
//! of a point-fitting term and a bending regulariser:
//!
//! ```text
//! E(X) = w_fit · Σ_i w_i A_i ‖x_i − t_i‖²  +  w_reg · Σ_i A_i ‖Δx_i − R_i Δx̂_i‖²
//! ```
//!
//! where `X̂ = M` is the rest surface, `Δ` the cotangent Laplacian and
//! `A_i` the mixed Voronoi areas, both taken from the rest surface so the
//! per-iteration problem stays quadratic. Targets `t_i` come from three
//! correspondence classes against the wrap `W`, each with a fixed weight.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};
use crate::mesh::{build_adjacency, laplacian, Adjacency, TriMesh, VertexWeights, WeightScheme};
use crate::registration::LandmarkSet;
use crate::sparse::SparseSystem;
use crate::spatial::WrapSurface;
use crate::transform::fit_rotation;

/// Classification of a vertex-to-wrap correspondence. The weight is a
/// property of the class, not of the instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrespondenceKind {
    /// Plain nearest point on the wrap surface.
    ClosestPoint,
    /// A user-pinned landmark pair.
    Fixed,
    /// The vertex penetrates the wrap interior beyond the margin; the
    /// target is the nearest point on the surface, strongly weighted.
    Collision,
}

impl CorrespondenceKind {
    pub fn weight(self) -> f64 {
        match self {
            CorrespondenceKind::ClosestPoint => 0.1,
            CorrespondenceKind::Fixed => 1.0,
            CorrespondenceKind::Collision => 100.0,
        }
    }
}

/// One vertex-to-target attachment for the fitting term.
#[derive(Debug, Clone)]
pub struct Correspondence {
    pub vertex: usize,
    pub target: Point3<f64>,
    pub kind: CorrespondenceKind,
}

impl Correspondence {
    pub fn weight(&self) -> f64 {
        self.kind.weight()
    }
}

/// Settings for [`fit_surface`].
#[derive(Debug, Clone)]
pub struct SkinFitConfig {
    /// Weight of the point-fitting term.
    pub w_fit: f64,
    /// Weight of the bending regulariser.
    pub w_reg: f64,
    /// Outer iterations (correspondence refresh + rotation refit + solve).
    pub outer_iters: usize,
    /// Accuracy required of each inner linear solve (relative residual).
    pub inner_tol: f64,
    /// A vertex counts as colliding only when it is inside the wrap and
    /// farther than this from its surface.
    pub margin_mm: f64,
    /// Laplacian weights for the bending term.
    pub weights: WeightScheme,
}

impl Default for SkinFitConfig {
    fn default() -> Self {
        SkinFitConfig {
            w_fit: 1.0,
            w_reg: 1.0,
            outer_iters: 20,
            inner_tol: 1e-8,
            margin_mm: 0.0,
            weights: WeightScheme::Cotangent,
        }
    }
}

/// Outer iterations stop early once the relative energy change drops
/// below this.
const OUTER_REL_TOL: f64 = 1e-6;

/// Energies below this (mm²·mm²-scale) are treated as zero.
const ENERGY_FLOOR: f64 = 1e-14;

/// Slack used when deciding whether a vertex is clearly off the surface;
/// parity tests are skipped for anything closer than this.
const SURFACE_EPS: f64 = 1e-9;

/// Per-outer-iteration bookkeeping. `energy_before`/`energy_after` are
/// evaluated against the same frozen correspondences and rotations, so
/// `energy_after ≤ energy_before` always holds.
#[derive(Debug, Clone)]
pub struct SkinFitIteration {
    pub iteration: usize,
    pub energy_before: f64,
    pub energy_after: f64,
    pub fit_term: f64,
    pub reg_term: f64,
    pub collision_count: usize,
}

/// Result of [`fit_surface`].
#[derive(Debug)]
pub struct SkinFitResult {
    pub mesh: TriMesh,
    pub iterations: Vec<SkinFitIteration>,
    pub converged: bool,
}

impl SkinFitResult {
    /// Energy trace as `iteration,energy_mm2` CSV; row 0 is the energy
    /// before the first solve, row k the energy after iteration k.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,energy_mm2\n");
        if let Some(first) = self.iterations.first() {
            out.push_str(&format!("0,{}\n", first.energy_before));
        }
        for it in &self.iterations {
            out.push_str(&format!("{},{}\n", it.iteration, it.energy_after));
        }
        out
    }
}

/// Builds the per-vertex correspondence list for positions `x` against the
/// wrap surface: a ClosestPoint entry per vertex, upgraded to Collision for
/// vertices strictly inside the wrap beyond `margin_mm`, and replaced by
/// Fixed entries where `fixed` pins a vertex.
pub fn build_correspondences(
    x: &[Point3<f64>],
    wrap: &WrapSurface,
    fixed: &BTreeMap<usize, Point3<f64>>,
    margin_mm: f64,
) -> Result<Vec<Correspondence>> {
    if !(margin_mm >= 0.0 && margin_mm.is_finite()) {
        return Err(Error::Parameter(format!(
            "collision margin must be non-negative, got {margin_mm}"
        )));
    }
    for &v in fixed.keys() {
        if v >= x.len() {
            return Err(Error::Structural(format!(
                "fixed correspondence vertex {v} out of range 0..{}",
                x.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(x.len());
    for (i, p) in x.iter().enumerate() {
        if let Some(&target) = fixed.get(&i) {
            out.push(Correspondence {
                vertex: i,
                target,
                kind: CorrespondenceKind::Fixed,
            });
            continue;
        }
        let (surface_point, dist) = wrap.closest_point(p);
        // points on (or numerically at) the surface are never collisions,
        // which also keeps the parity test away from its degenerate case
        let kind = if dist > margin_mm + SURFACE_EPS && wrap.contains(p)? {
            CorrespondenceKind::Collision
        } else {
            CorrespondenceKind::ClosestPoint
        };
        out.push(Correspondence {
            vertex: i,
            target: surface_point,
            kind,
        });
    }
    Ok(out)
}

/// Exact evaluation of the bending term
/// `Σ_i A_i ‖Δx_i − R_i Δx̂_i‖²` with supplied rotations.
pub fn bending_energy(
    x: &[Point3<f64>],
    x_hat: &[Point3<f64>],
    adjacency: &Adjacency,
    weights: &VertexWeights,
    rotations: &[Matrix3<f64>],
) -> f64 {
    assert_eq!(x.len(), x_hat.len());
    assert_eq!(x.len(), rotations.len());
    let lap_x = laplacian(adjacency, weights, x);
    let lap_hat = laplacian(adjacency, weights, x_hat);
    let mut acc = 0.0;
    for i in 0..x.len() {
        acc += weights.area(i) * (lap_x[i] - rotations[i] * lap_hat[i]).norm_squared();
    }
    acc
}

fn fitting_energy(x: &[Point3<f64>], correspondences: &[Correspondence], areas: &VertexWeights) -> f64 {
    correspondences
        .iter()
        .map(|c| c.weight() * areas.area(c.vertex) * (x[c.vertex] - c.target).norm_squared())
        .sum()
}

/// Refits each vertex rotation from its rest one-ring spokes onto the
/// current ones (the same estimator the deformation module uses); this
/// aligns the Laplacians as a consequence.
fn fit_ring_rotations(
    x: &[Point3<f64>],
    x_hat: &[Point3<f64>],
    adjacency: &Adjacency,
    weights: &VertexWeights,
    rotations: &mut [Matrix3<f64>],
) {
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut w = Vec::new();
    for i in 0..x.len() {
        let neighbors = adjacency.neighbors(i);
        if neighbors.is_empty() {
            continue;
        }
        src.clear();
        dst.clear();
        w.clear();
        for (&j, &wij) in neighbors.iter().zip(weights.weights(i)) {
            src.push(x_hat[i] - x_hat[j]);
            dst.push(x[i] - x[j]);
            w.push(wij);
        }
        rotations[i] = fit_rotation(&src, &dst, &w)
            .expect("ring fit inputs are constructed consistent")
            .rotation;
    }
}

/// Resolves fixed landmark pairs: each landmark in `on_template` pins the
/// nearest template vertex to the same-named landmark in `on_wrap`.
pub fn resolve_fixed_pairs(
    template: &TriMesh,
    on_template: &LandmarkSet,
    on_wrap: &LandmarkSet,
) -> Result<BTreeMap<usize, Point3<f64>>> {
    on_template.validate()?;
    on_wrap.validate()?;
    let mut out = BTreeMap::new();
    for lm in &on_template.landmarks {
        let target = on_wrap
            .get(&lm.name)
            .ok_or_else(|| Error::Lookup(format!("landmark {:?} missing from wrap set", lm.name)))?
            .position;
        let vertex = template
            .vertices()
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (*a - lm.position)
                    .norm_squared()
                    .total_cmp(&(*b - lm.position).norm_squared())
            })
            .map(|(i, _)| i)
            .ok_or_else(|| Error::Structural("template mesh has no vertices".into()))?;
        if out.insert(vertex, target).is_some() {
            return Err(Error::Structural(format!(
                "landmark {:?} resolves to template vertex {vertex}, already pinned by another landmark",
                lm.name
            )));
        }
    }
    Ok(out)
}

/// Runs the alternating fit of template `m` to wrap `w`; see module docs.
pub fn fit_surface(
    m: &TriMesh,
    w: &TriMesh,
    config: &SkinFitConfig,
    fixed: &BTreeMap<usize, Point3<f64>>,
) -> Result<SkinFitResult> {
    if !(config.w_fit >= 0.0 && config.w_reg >= 0.0) {
        return Err(Error::Parameter(format!(
            "energy weights must be non-negative, got w_fit = {}, w_reg = {}",
            config.w_fit, config.w_reg
        )));
    }
    if config.w_fit == 0.0 && config.w_reg == 0.0 {
        return Err(Error::Parameter(
            "at least one of w_fit and w_reg must be positive".into(),
        ));
    }
    if config.outer_iters == 0 {
        return Err(Error::Parameter("outer iteration budget must be positive".into()));
    }

    let wrap = WrapSurface::new(w)?;
    let adjacency = build_adjacency(m);
    let weights = VertexWeights::build(m, &adjacency, config.weights)?;
    let x_hat = m.vertices().to_vec();
    let n = x_hat.len();

    // rest Laplacian rows, reused for the matrix and the rhs of every solve
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            let mut row = Vec::with_capacity(adjacency.neighbors(i).len() + 1);
            let mut diag = 0.0;
            for (&j, &wij) in adjacency.neighbors(i).iter().zip(weights.weights(i)) {
                row.push((j, wij));
                diag -= wij;
            }
            row.push((i, diag));
            row
        })
        .collect();

    let lap_hat = laplacian(&adjacency, &weights, &x_hat);
    let mut x = x_hat.clone();
    let mut rotations = vec![Matrix3::identity(); n];
    let mut iterations: Vec<SkinFitIteration> = Vec::with_capacity(config.outer_iters);
    let mut converged = false;

    for iteration in 1..=config.outer_iters {
        let correspondences = build_correspondences(&x, &wrap, fixed, config.margin_mm)?;
        let collision_count = correspondences
            .iter()
            .filter(|c| c.kind == CorrespondenceKind::Collision)
            .count();
        fit_ring_rotations(&x, &x_hat, &adjacency, &weights, &mut rotations);

        let energy_of = |pos: &[Point3<f64>]| {
            let fit = fitting_energy(pos, &correspondences, &weights);
            let reg = bending_energy(pos, &x_hat, &adjacency, &weights, &rotations);
            (
                config.w_fit * fit + config.w_reg * reg,
                config.w_fit * fit,
                config.w_reg * reg,
            )
        };
        let (energy_before, _, _) = energy_of(&x);

        // assemble S = w_reg·LᵀAL + w_fit·D and the matching right-hand
        // sides; everything except the targets is frozen at rest
        let mut system = SparseSystem::new(n);
        let mut rhs = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        if config.w_reg > 0.0 {
            for i in 0..n {
                let a_i = weights.area(i);
                let c_i: Vector3<f64> = rotations[i] * lap_hat[i];
                for &(p, vp) in &rows[i] {
                    for &(q, vq) in &rows[i] {
                        system.add(p, q, config.w_reg * a_i * vp * vq);
                    }
                    for k in 0..3 {
                        rhs[k][p] += config.w_reg * a_i * vp * c_i[k];
                    }
                }
            }
        }
        for c in &correspondences {
            let d = config.w_fit * c.weight() * weights.area(c.vertex);
            system.add(c.vertex, c.vertex, d);
            for k in 0..3 {
                rhs[k][c.vertex] += d * c.target[k];
            }
        }

        let factor = system.factor()?;
        let mut next = vec![Point3::origin(); n];
        for k in 0..3 {
            let sol = factor.solve(&rhs[k]);
            let res = factor.relative_residual(&sol, &rhs[k]);
            if !(res < config.inner_tol) {
                return Err(Error::Degenerate(format!(
                    "inner solve missed tolerance: relative residual {res:.3e}"
                )));
            }
            for i in 0..n {
                next[i][k] = sol[i];
            }
        }
        x = next;

        let (energy_after, fit_term, reg_term) = energy_of(&x);
        assert!(
            energy_after <= energy_before * (1.0 + 1e-9) + 1e-12,
            "quadratic solve increased the energy: {energy_before} -> {energy_after}"
        );
        iterations.push(SkinFitIteration {
            iteration,
            energy_before,
            energy_after,
            fit_term,
            reg_term,
            collision_count,
        });

        if energy_after <= ENERGY_FLOOR {
            converged = true;
            break;
        }
        if iterations.len() >= 2 {
            let prev = iterations[iterations.len() - 2].energy_after;
            if (prev - energy_after).abs() / prev.max(ENERGY_FLOOR) < OUTER_REL_TOL {
                converged = true;
                break;
            }
        }
    }

    Ok(SkinFitResult {
        mesh: m.with_positions(x)?,
        iterations,
        converged,
    })
}
