use nalgebra::{DMatrix, DVector, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::factors::{between_linearized, imu_linearized, prior_linearized, NavState};
use super::solver::Envelope;
use super::{find, imu_information, union, Factor, FactorGraph, GraphError, Values, VariableId, VariableKind};
use crate::geometry::Twist6;
use crate::imu::ImuBias;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeParams {
    pub initial_lambda: f64,
    /// multiplier on rejection, divisor on acceptance
    pub lambda_factor: f64,
    pub max_iterations: usize,
    /// stop once an accepted step lowers chi2 by less than this fraction
    pub tolerance: f64,
    /// Huber threshold on the whitened between-pose residual norm
    pub huber_threshold: Option<f64>,
}

impl Default for OptimizeParams {
    fn default() -> Self {
        Self {
            initial_lambda: 1e-4,
            lambda_factor: 10.0,
            max_iterations: 100,
            tolerance: 1e-10,
            huber_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizeStats {
    pub iterations: usize,
    pub accepted_steps: usize,
    pub initial_chi2: f64,
    pub final_chi2: f64,
    /// damping of every attempted step, in order
    pub lambda_trace: Vec<f64>,
    /// chi2 at the start and after each accepted step
    pub chi2_trace: Vec<f64>,
    pub converged: bool,
}

/// Values and statistics returned by [`optimize`].
pub type Solution = (Values, OptimizeStats);

const LAMBDA_MAX: f64 = 1e10;
const LAMBDA_MIN: f64 = 1e-12;

/// Levenberg–Marquardt over the graph's initial values. Poses are updated
/// by right retraction, velocities and biases additively, and a step is
/// kept only if it lowers chi2. Aliased poses are copied from their
/// canonical pose in the returned values.
pub fn optimize(graph: &FactorGraph, params: &OptimizeParams) -> Result<Solution, GraphError> {
    check_gauge(graph)?;
    let layout = Layout::new(graph);
    let infos: Vec<Option<SMatrix<f64, 9, 9>>> = graph
        .factors()
        .iter()
        .map(|f| match f {
            Factor::Imu { preintegrated, .. } => imu_information(preintegrated),
            _ => None,
        })
        .collect();
    let problem = Problem { graph, layout: &layout, infos: &infos, huber: params.huber_threshold };

    let mut values = graph.initial.clone();
    let mut chi2 = problem.cost(&values)?;
    let mut stats = OptimizeStats {
        initial_chi2: chi2,
        chi2_trace: vec![chi2],
        ..Default::default()
    };
    let mut lambda = params.initial_lambda;

    'outer: for iteration in 0..params.max_iterations {
        if chi2 < 1e-20 {
            stats.converged = true;
            break;
        }
        stats.iterations = iteration + 1;
        let (hessian, gradient) = problem.normal_equations(&values)?;
        loop {
            if lambda > LAMBDA_MAX {
                // no descent direction left at this linearization
                stats.converged = true;
                break 'outer;
            }
            stats.lambda_trace.push(lambda);
            let mut damped = hessian.clone();
            for r in 0..damped.dim() {
                let d = damped.diagonal(r);
                damped.set_diagonal(r, d + lambda * d.max(1e-6));
            }
            let Some(factored) = damped.factor() else {
                lambda *= params.lambda_factor;
                continue;
            };
            let rhs: Vec<f64> = gradient.iter().map(|g| -g).collect();
            let dx = factored.solve(&rhs);
            let trial = layout.retract(&values, &dx);
            let trial_chi2 = problem.cost(&trial).unwrap_or(f64::INFINITY);
            if trial_chi2 < chi2 {
                let decrease = (chi2 - trial_chi2) / chi2;
                values = trial;
                chi2 = trial_chi2;
                stats.accepted_steps += 1;
                stats.chi2_trace.push(chi2);
                lambda = (lambda / params.lambda_factor).max(LAMBDA_MIN);
                if decrease < params.tolerance || chi2 < 1e-20 {
                    stats.converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= params.lambda_factor;
        }
    }
    stats.final_chi2 = chi2;
    Ok((values, stats))
}

impl FactorGraph {
    /// Total (robust) chi2 of `values` under this graph's factors.
    pub fn chi2(&self, values: &Values, huber_threshold: Option<f64>) -> Result<f64, GraphError> {
        let layout = Layout::new(self);
        let infos: Vec<_> = self
            .factors()
            .iter()
            .map(|f| match f {
                Factor::Imu { preintegrated, .. } => imu_information(preintegrated),
                _ => None,
            })
            .collect();
        Problem { graph: self, layout: &layout, infos: &infos, huber: huber_threshold }.cost(values)
    }
}

/// Every component of the pose-connectivity graph needs a pose prior.
fn check_gauge(graph: &FactorGraph) -> Result<(), GraphError> {
    let n = graph.num_poses();
    let mut parent: Vec<usize> = (0..n).collect();
    let mut anchored = vec![false; n];
    for f in graph.factors() {
        match f {
            Factor::BetweenPose { i, j, .. } => union(&mut parent, *i, *j),
            Factor::Imu { pose_i, pose_j, .. } => union(&mut parent, *pose_i, *pose_j),
            _ => {}
        }
    }
    for f in graph.factors() {
        if let Factor::PriorPose { pose, .. } = f {
            let root = find(&mut parent, *pose);
            anchored[root] = true;
        }
    }
    for k in 0..n {
        if graph.canonical(k) == k {
            let root = find(&mut parent, k);
            if !anchored[root] {
                return Err(GraphError::GaugeFree { pose: k });
            }
        }
    }
    Ok(())
}

/// Column offsets of the active variables, ordered by pose index with
/// biases last.
struct Layout {
    pose: Vec<Option<usize>>,
    vel: Vec<Option<usize>>,
    bias: Vec<Option<usize>>,
    alias: Vec<usize>,
    dim: usize,
}

impl Layout {
    fn new(graph: &FactorGraph) -> Self {
        let n = graph.num_poses();
        let mut vel_used = vec![false; n];
        let mut bias_used = vec![false; graph.initial.biases.len()];
        for f in graph.factors() {
            for v in f.variables() {
                match v.kind {
                    VariableKind::Velocity => vel_used[v.index] = true,
                    VariableKind::Bias => bias_used[v.index] = true,
                    VariableKind::Pose => {}
                }
            }
        }
        let mut dim = 0;
        let mut pose = vec![None; n];
        let mut vel = vec![None; n];
        for k in 0..n {
            if graph.canonical(k) == k {
                pose[k] = Some(dim);
                dim += 6;
            }
            if vel_used[k] {
                vel[k] = Some(dim);
                dim += 3;
            }
        }
        let bias = bias_used
            .iter()
            .map(|used| {
                used.then(|| {
                    dim += 6;
                    dim - 6
                })
            })
            .collect();
        Self {
            pose,
            vel,
            bias,
            alias: graph.alias_map().to_vec(),
            dim,
        }
    }

    fn offset(&self, v: &VariableId) -> (usize, usize) {
        match v.kind {
            VariableKind::Pose => (self.pose[v.index].expect("canonical pose"), 6),
            VariableKind::Velocity => (self.vel[v.index].expect("active velocity"), 3),
            VariableKind::Bias => (self.bias[v.index].expect("active bias"), 6),
        }
    }

    fn retract(&self, values: &Values, dx: &[f64]) -> Values {
        let mut out = values.clone();
        for (k, off) in self.pose.iter().enumerate() {
            if let Some(o) = off {
                out.poses[k] = values.poses[k].retract(&Twist6(Vector6::from_column_slice(&dx[*o..*o + 6])));
            }
        }
        for (k, a) in self.alias.iter().enumerate() {
            out.poses[k] = out.poses[*a];
        }
        for (k, off) in self.vel.iter().enumerate() {
            if let Some(o) = off {
                out.velocities[k] += Vector3::from_column_slice(&dx[*o..*o + 3]);
            }
        }
        for (k, off) in self.bias.iter().enumerate() {
            if let Some(o) = off {
                let b = &values.biases[k];
                out.biases[k] = ImuBias::new(
                    b.gyro + Vector3::from_column_slice(&dx[*o..*o + 3]),
                    b.accel + Vector3::from_column_slice(&dx[*o + 3..*o + 6]),
                );
            }
        }
        out
    }
}

/// One linearized factor: residual, information and a Jacobian block per
/// variable (blocks may repeat a variable).
struct Linear {
    residual: DVector<f64>,
    information: DMatrix<f64>,
    blocks: Vec<(VariableId, DMatrix<f64>)>,
}

struct Problem<'a> {
    graph: &'a FactorGraph,
    layout: &'a Layout,
    infos: &'a [Option<SMatrix<f64, 9, 9>>],
    huber: Option<f64>,
}

impl Problem<'_> {
    fn linearize(&self, index: usize, values: &Values) -> Linear {
        let pose = |index| VariableId { kind: VariableKind::Pose, index };
        let vel = |index| VariableId { kind: VariableKind::Velocity, index };
        let bias = |index| VariableId { kind: VariableKind::Bias, index };
        match &self.graph.factors()[index] {
            Factor::PriorPose { pose: p, measured, information } => {
                let (r, j) = prior_linearized(&values.poses[*p], measured);
                Linear {
                    residual: dvec(&r),
                    information: dmat(information),
                    blocks: vec![(pose(*p), dmat(&j))],
                }
            }
            Factor::BetweenPose { i, j, measured, information } => {
                let (r, ji, jj) = between_linearized(&values.poses[*i], &values.poses[*j], measured);
                Linear {
                    residual: dvec(&r),
                    information: dmat(information),
                    blocks: vec![(pose(*i), dmat(&ji)), (pose(*j), dmat(&jj))],
                }
            }
            Factor::Imu {
                pose_i,
                vel_i,
                pose_j,
                vel_j,
                bias_segment,
                preintegrated,
                gravity,
            } => {
                let si = NavState { pose: values.poses[*pose_i], velocity: values.velocities[*vel_i] };
                let sj = NavState { pose: values.poses[*pose_j], velocity: values.velocities[*vel_j] };
                let lin = imu_linearized(&si, &sj, &values.biases[*bias_segment], preintegrated, gravity);
                Linear {
                    residual: dvec(&lin.residual),
                    information: dmat(&self.infos[index].expect("checked when added")),
                    blocks: vec![
                        (pose(*pose_i), dmat(&lin.d_pose_i)),
                        (vel(*vel_i), dmat(&lin.d_vel_i)),
                        (pose(*pose_j), dmat(&lin.d_pose_j)),
                        (vel(*vel_j), dmat(&lin.d_vel_j)),
                        (bias(*bias_segment), dmat(&lin.d_bias)),
                    ],
                }
            }
            Factor::BiasPrior { segment, bias: b, information } => {
                let est = &values.biases[*segment];
                let r = Vector6::from_iterator(
                    (est.gyro - b.gyro).iter().chain((est.accel - b.accel).iter()).copied(),
                );
                Linear {
                    residual: dvec(&r),
                    information: dmat(information),
                    blocks: vec![(bias(*segment), DMatrix::identity(6, 6))],
                }
            }
            Factor::BetweenBias { segment_i, segment_j, information } => {
                let (bi, bj) = (&values.biases[*segment_i], &values.biases[*segment_j]);
                let r = Vector6::from_iterator(
                    (bj.gyro - bi.gyro).iter().chain((bj.accel - bi.accel).iter()).copied(),
                );
                Linear {
                    residual: dvec(&r),
                    information: dmat(information),
                    blocks: vec![
                        (bias(*segment_i), -DMatrix::identity(6, 6)),
                        (bias(*segment_j), DMatrix::identity(6, 6)),
                    ],
                }
            }
            Factor::PriorVelocity { index: k, velocity, information } => Linear {
                residual: dvec(&(values.velocities[*k] - velocity)),
                information: dmat(information),
                blocks: vec![(vel(*k), DMatrix::identity(3, 3))],
            },
        }
    }

    /// Robust weight and cost contribution of a factor given `rᵀΩr`.
    fn robust(&self, factor: &Factor, s: f64) -> (f64, f64) {
        match (factor, self.huber) {
            (Factor::BetweenPose { .. }, Some(k)) if s > k * k => {
                let norm = s.sqrt();
                (k / norm, 2.0 * k * norm - k * k)
            }
            _ => (1.0, s),
        }
    }

    fn cost(&self, values: &Values) -> Result<f64, GraphError> {
        let mut total = 0.0;
        for (index, f) in self.graph.factors().iter().enumerate() {
            let lin = self.linearize(index, values);
            let s = lin.residual.dot(&(&lin.information * &lin.residual));
            if !s.is_finite() {
                return Err(GraphError::NonFiniteResidual { factor: index });
            }
            total += self.robust(f, s).1;
        }
        Ok(total)
    }

    fn normal_equations(&self, values: &Values) -> Result<(Envelope, Vec<f64>), GraphError> {
        let lins: Vec<Linear> = (0..self.graph.factors().len())
            .map(|k| self.linearize(k, values))
            .collect();

        let mut first: Vec<usize> = Vec::with_capacity(self.layout.dim);
        {
            let mut block_start = vec![0; self.layout.dim];
            let mut mark = |off: Option<usize>, size| {
                if let Some(o) = off {
                    for r in o..o + size {
                        block_start[r] = o;
                    }
                }
            };
            for k in 0..self.layout.pose.len() {
                mark(self.layout.pose[k], 6);
                mark(self.layout.vel[k], 3);
            }
            for b in &self.layout.bias {
                mark(*b, 6);
            }
            first.extend(block_start);
        }
        for lin in &lins {
            let lo = lin.blocks.iter().map(|(v, _)| self.layout.offset(v).0).min().unwrap_or(0);
            for (v, _) in &lin.blocks {
                let (o, size) = self.layout.offset(v);
                for r in o..o + size {
                    first[r] = first[r].min(lo);
                }
            }
        }

        let mut h = Envelope::new(first);
        let mut g = vec![0.0; self.layout.dim];
        for (index, lin) in lins.iter().enumerate() {
            let s = lin.residual.dot(&(&lin.information * &lin.residual));
            if !s.is_finite() {
                return Err(GraphError::NonFiniteResidual { factor: index });
            }
            let w = self.robust(&self.graph.factors()[index], s).0;
            let omega = &lin.information * w;
            let weighted: Vec<DMatrix<f64>> = lin.blocks.iter().map(|(_, j)| j.transpose() * &omega).collect();
            for (a, (va, _)) in lin.blocks.iter().enumerate() {
                let (oa, _) = self.layout.offset(va);
                let ga = &weighted[a] * &lin.residual;
                for (r, v) in ga.iter().enumerate() {
                    g[oa + r] += v;
                }
                for (vb, jb) in &lin.blocks {
                    let (ob, _) = self.layout.offset(vb);
                    let block = &weighted[a] * jb;
                    for r in 0..block.nrows() {
                        for c in 0..block.ncols() {
                            if oa + r >= ob + c {
                                h.add(oa + r, ob + c, block[(r, c)]);
                            }
                        }
                    }
                }
            }
        }
        Ok((h, g))
    }
}

fn dvec<const D: usize>(v: &SMatrix<f64, D, 1>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

fn dmat<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}
