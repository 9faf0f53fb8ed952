//! Robust Levenberg–Marquardt over the whole situational graph.
//!
//! Every factor is wrapped in a Huber kernel on its whitened error and
//! linearized with iteratively reweighted least squares. The damped normal
//! equations `(H + λ·diag(H)) δ = −g` are solved with a sparse Cholesky
//! factorization; variables are ordered keyframes, planes, rooms, floors.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Factor, FactorGraph, FactorKind, GraphError, Linearization, VariableId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub huber_delta: f64,
    /// Stop once an accepted step decreases the cost by less than this fraction.
    pub relative_tolerance: f64,
    /// Evaluate factors on the rayon pool. Results do not depend on this flag.
    pub parallel: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            initial_lambda: 1e-4,
            huber_delta: 1.0,
            relative_tolerance: 1e-8,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    /// Cost after the initial evaluation and after every accepted step.
    pub cost_history: Vec<f64>,
}

/// Huber cost `ρ(e²)` and IRLS weight for a whitened squared error.
pub fn huber(squared_error: f64, delta: f64) -> (f64, f64) {
    let e = squared_error.sqrt();
    if e <= delta {
        (squared_error, 1.0)
    } else {
        (2.0 * delta * e - delta * delta, delta / e)
    }
}

/// Column layout of the normal equations.
#[derive(Clone, Debug)]
pub struct Ordering {
    offsets: BTreeMap<VariableId, usize>,
    dim: usize,
}

impl Ordering {
    /// Every variable touched by at least one factor, in id order.
    pub fn new(graph: &FactorGraph) -> Self {
        let mut used = BTreeMap::new();
        for (_, f) in graph.factors() {
            for (id, _) in f.variables() {
                used.insert(id, 0usize);
            }
        }
        let mut dim = 0;
        for (id, off) in used.iter_mut() {
            *off = dim;
            dim += id.kind.dim();
        }
        Self { offsets: used, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn offset(&self, id: VariableId) -> Option<usize> {
        self.offsets.get(&id).copied()
    }

    pub fn variables(&self) -> impl Iterator<Item = (&VariableId, &usize)> {
        self.offsets.iter()
    }
}

/// Gauss–Newton system `H δ = −g` at the current estimate.
pub struct NormalEquations {
    pub ordering: Ordering,
    pub hessian: CscMatrix<f64>,
    pub gradient: DVector<f64>,
    pub cost: f64,
}

impl NormalEquations {
    pub fn dense_hessian(&self) -> DMatrix<f64> {
        let n = self.ordering.dim();
        let mut h = DMatrix::zeros(n, n);
        for (i, j, v) in self.hessian.triplet_iter() {
            h[(i, j)] += *v;
        }
        h
    }
}

fn linearize_all(factors: &[&Factor], graph: &FactorGraph, parallel: bool) -> Result<Vec<Linearization>, GraphError> {
    if parallel {
        factors.par_iter().map(|f| f.linearize(graph)).collect()
    } else {
        factors.iter().map(|f| f.linearize(graph)).collect()
    }
}

fn total_cost(factors: &[&Factor], graph: &FactorGraph, delta: f64, parallel: bool) -> Result<f64, GraphError> {
    let eval = |f: &&Factor| -> Result<f64, GraphError> {
        let r = f.residual(graph)?;
        let info = information_of(f);
        let e2 = (r.transpose() * info * &r)[0];
        Ok(huber(e2, delta).0)
    };
    let costs: Vec<f64> = if parallel {
        factors.par_iter().map(eval).collect::<Result<_, _>>()?
    } else {
        factors.iter().map(eval).collect::<Result<_, _>>()?
    };
    // fixed-order reduction
    Ok(0.5 * costs.iter().sum::<f64>())
}

fn information_of(f: &Factor) -> DMatrix<f64> {
    fn d<const N: usize>(m: &nalgebra::SMatrix<f64, N, N>) -> DMatrix<f64> {
        DMatrix::from_column_slice(N, N, m.as_slice())
    }
    match f {
        Factor::Odometry(b) | Factor::Loop(b) => d(&b.information),
        Factor::PosePlane(p) => d(&p.information),
        Factor::RoomPlanePair(p) => DMatrix::from_element(1, 1, p.information),
        Factor::RoomPrior(p) => DMatrix::from_element(1, 1, p.information),
        Factor::FloorRoom(p) => d(&p.information),
        Factor::PoseAnchor(p) => d(&p.information),
    }
}

fn assemble(ordering: Ordering, lins: &[Linearization], delta: f64) -> NormalEquations {
    let n = ordering.dim();
    let mut coo = CooMatrix::new(n, n);
    let mut gradient = DVector::zeros(n);
    let mut cost = 0.0;
    for lin in lins {
        let (rho, w) = huber(lin.squared_error(), delta);
        cost += 0.5 * rho;
        let omega = &lin.information * w;
        let weighted_r = &omega * &lin.residual;
        for (vi, ji) in &lin.jacobians {
            let oi = ordering.offsets[vi];
            let gi = ji.transpose() * &weighted_r;
            for k in 0..gi.len() {
                gradient[oi + k] += gi[k];
            }
            let jt_omega = ji.transpose() * &omega;
            for (vj, jj) in &lin.jacobians {
                let oj = ordering.offsets[vj];
                let block = &jt_omega * jj;
                for c in 0..block.ncols() {
                    for r in 0..block.nrows() {
                        let v = block[(r, c)];
                        if v != 0.0 {
                            coo.push(oi + r, oj + c, v);
                        }
                    }
                }
            }
        }
    }
    // keep the full diagonal in the pattern so damping can always be applied
    for i in 0..n {
        coo.push(i, i, 0.0);
    }
    NormalEquations {
        ordering,
        hessian: CscMatrix::from(&coo),
        gradient,
        cost,
    }
}

/// Builds the robust Gauss–Newton system at the current estimate.
pub fn build_normal_equations(graph: &FactorGraph, cfg: &OptimizerConfig) -> Result<NormalEquations, GraphError> {
    let factors: Vec<&Factor> = graph.factors().map(|(_, f)| f).collect();
    let lins = linearize_all(&factors, graph, cfg.parallel)?;
    Ok(assemble(Ordering::new(graph), &lins, cfg.huber_delta))
}

fn damped(h: &CscMatrix<f64>, lambda: f64) -> CscMatrix<f64> {
    let mut m = h.clone();
    let (offsets, indices, values) = m.csc_data_mut();
    for col in 0..offsets.len() - 1 {
        for k in offsets[col]..offsets[col + 1] {
            if indices[k] == col {
                values[k] += lambda * values[k];
            }
        }
    }
    m
}

fn apply_step(graph: &FactorGraph, ordering: &Ordering, step: &DVector<f64>) -> FactorGraph {
    let mut next = graph.clone();
    for (id, &off) in ordering.variables() {
        let v = graph.variable(*id).expect("ordered variable exists");
        let dim = id.kind.dim();
        let updated = v.plus(&step.as_slice()[off..off + dim]).normalized();
        next.set_variable(*id, updated).expect("kind preserved by update");
    }
    next
}

/// Jointly refines every variable referenced by a factor.
///
/// Variables without factors are left untouched. A graph with no pose anchor
/// has a gauge freedom and is rejected with [`GraphError::SingularSystem`].
pub fn optimize(graph: &mut FactorGraph, cfg: &OptimizerConfig) -> Result<OptReport, GraphError> {
    if graph.count_factors(FactorKind::PoseAnchor) == 0 {
        return Err(GraphError::SingularSystem);
    }
    let factors: Vec<Factor> = graph.factors().map(|(_, f)| f.clone()).collect();
    let refs: Vec<&Factor> = factors.iter().collect();
    let ordering = Ordering::new(graph);

    let mut lambda = cfg.initial_lambda;
    let mut iterations = 0;
    let mut converged = false;
    let mut system = assemble(
        ordering.clone(),
        &linearize_all(&refs, graph, cfg.parallel)?,
        cfg.huber_delta,
    );
    let initial_cost = system.cost;
    let mut cost = initial_cost;
    let mut cost_history = vec![cost];
    let mut failed_factorizations = 0;

    while iterations < cfg.max_iterations {
        if cost == 0.0 || system.gradient.amax() < 1e-14 {
            converged = true;
            break;
        }
        iterations += 1;
        let chol = match CscCholesky::factor(&damped(&system.hessian, lambda)) {
            Ok(c) => c,
            Err(_) => {
                failed_factorizations += 1;
                if failed_factorizations > 8 {
                    return Err(GraphError::SingularSystem);
                }
                lambda *= 10.0;
                continue;
            }
        };
        let rhs = DMatrix::from_column_slice(ordering.dim(), 1, (-&system.gradient).as_slice());
        let step = DVector::from_column_slice(chol.solve(&rhs).as_slice());
        if step.iter().any(|v| !v.is_finite()) {
            return Err(GraphError::SingularSystem);
        }
        let candidate = apply_step(graph, &ordering, &step);
        let new_cost = total_cost(&refs, &candidate, cfg.huber_delta, cfg.parallel)?;
        if new_cost < cost {
            let decrease = (cost - new_cost) / cost;
            *graph = candidate;
            cost = new_cost;
            cost_history.push(cost);
            lambda = (lambda * 0.1).max(1e-12);
            if decrease < cfg.relative_tolerance {
                converged = true;
                break;
            }
            system = assemble(
                ordering.clone(),
                &linearize_all(&refs, graph, cfg.parallel)?,
                cfg.huber_delta,
            );
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                // no descent direction left at machine precision
                converged = true;
                break;
            }
        }
    }

    Ok(OptReport {
        iterations,
        initial_cost,
        final_cost: cost,
        converged,
        cost_history,
    })
}
