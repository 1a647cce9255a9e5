//! Stage driver. Every stage reads its inputs from disk and writes durable
//! artifacts into the output directory, so any stage can be rerun or
//! resumed on its own.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Matrix3, Matrix6, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{PathsConfig, RunConfig};
use crate::covis::{proxy_correspondences, read_rig, select_image_pairs, write_covis_csv, write_rig, RigCalibration};
use crate::edges::{
    filter_constraints, propose_edges, read_candidates, read_constraints, register_edges, scan_path,
    write_candidates, write_constraints, write_filter_report, FailureKind, IcpConstraint, ScanDirectory, ScanSource,
};
use crate::eval::{evaluate_ate, evaluate_rpe};
use crate::geometry::Pose3;
use crate::graph::{export_g2o, optimize, Factor, FactorGraph, OptimizeStats, Values};
use crate::imu::{
    assign_bias_segments, detect_stationary_icp, detect_stationary_imu, intersect_intervals, preintegrate_span,
    time_to_pose_intervals, ImuBias, ImuSample, StationaryInterval, GRAVITY,
};
use crate::io::{self, read_imu_csv, read_text, write_imu_csv, write_text, FormatError, Trajectory};
use crate::parallel::Execution;
use crate::registration::icp_point_to_plane;
use crate::sim::scenes::Scene;

pub const CANDIDATES: &str = "candidates.csv";
pub const CONSTRAINTS: &str = "constraints.txt";
pub const REGISTER_FAILURES: &str = "register_failures.csv";
pub const FILTERED: &str = "filtered.txt";
pub const FILTER_REPORT: &str = "filter_report.csv";
pub const ICP_CHAIN: &str = "icp_chain.tum";
pub const STATIONARY: &str = "stationary.csv";
pub const INITIAL_GRAPH: &str = "graph_initial.g2o";
pub const OPTIMIZED: &str = "optimized.tum";
pub const GRAPH: &str = "graph.g2o";
pub const OPTIMIZE_STATS: &str = "optimize_stats.json";
pub const COVIS: &str = "covis.csv";
pub const REPORT: &str = "report.json";
pub const TIMING: &str = "timing.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Simulate,
    Propose,
    Register,
    Filter,
    Build,
    Optimize,
    Covis,
    Evaluate,
}

impl Stage {
    /// The stages of a full run, in order.
    pub const PIPELINE: [Stage; 7] = [
        Stage::Propose,
        Stage::Register,
        Stage::Filter,
        Stage::Build,
        Stage::Optimize,
        Stage::Covis,
        Stage::Evaluate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Propose => "propose",
            Stage::Register => "register",
            Stage::Filter => "filter",
            Stage::Build => "build",
            Stage::Optimize => "optimize",
            Stage::Covis => "covis",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Files a completed stage leaves in the output directory.
    pub fn outputs(&self) -> &'static [&'static str] {
        match self {
            Stage::Simulate => &[],
            Stage::Propose => &[CANDIDATES],
            Stage::Register => &[CONSTRAINTS, REGISTER_FAILURES],
            Stage::Filter => &[FILTERED, FILTER_REPORT],
            Stage::Build => &[ICP_CHAIN, STATIONARY, INITIAL_GRAPH],
            Stage::Optimize => &[OPTIMIZED, GRAPH, OPTIMIZE_STATS],
            Stage::Covis => &[COVIS],
            Stage::Evaluate => &[REPORT],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{stage} stage failed: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    fn new(stage: Stage, message: impl Into<String>) -> Self {
        Self {
            stage,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EdgeStats {
    pub proposed: usize,
    pub registered: usize,
    pub failed: usize,
    pub kept: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpeStat {
    pub delta: usize,
    /// meters
    pub trans: f64,
    /// degrees
    pub rot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// meters; absent without a reference trajectory
    pub ate_rmse: Option<f64>,
    /// ATE of the input odometry against the same reference
    pub odometry_ate_rmse: Option<f64>,
    pub rpe: Vec<RpeStat>,
    pub odometry_rpe: Vec<RpeStat>,
    pub edges: EdgeStats,
    pub stationary_intervals: usize,
    pub bias_segments: usize,
    pub optimizer: OptimizeStats,
    /// Wall-clock per stage. Kept out of `report.json` (it is written to
    /// `timing.json`) so reruns stay byte-identical.
    #[serde(skip)]
    pub timing: Vec<StageTiming>,
}

// --- run ---------------------------------------------------------------------

/// Runs every stage in order. With `resume`, stages whose outputs already
/// exist are skipped.
pub fn run_pipeline(config: &RunConfig, resume: bool) -> Result<EvalReport, PipelineError> {
    config
        .validate()
        .map_err(|e| PipelineError::new(Stage::Propose, format!("configuration: {e}")))?;
    let mut timing = Vec::new();
    for stage in Stage::PIPELINE {
        timing.push(run_stage(config, stage, resume)?);
    }
    let out = &config.paths.output;
    let text = serde_json::to_string_pretty(&timing).expect("timing serializes");
    write_text(&out.join(TIMING), &text).map_err(|e| PipelineError::new(Stage::Evaluate, e.to_string()))?;
    let mut report: EvalReport = read_json(Stage::Evaluate, &out.join(REPORT))?;
    report.timing = timing;
    Ok(report)
}

/// Runs one stage, reading earlier artifacts from the output directory.
pub fn run_stage(config: &RunConfig, stage: Stage, resume: bool) -> Result<StageTiming, PipelineError> {
    let out = &config.paths.output;
    if resume && !stage.outputs().is_empty() && stage.outputs().iter().all(|f| out.join(f).exists()) {
        log::info!("{stage}: outputs present, skipped");
        return Ok(StageTiming {
            stage,
            seconds: 0.0,
            skipped: true,
        });
    }
    let clock = Instant::now();
    let ctx = Context { config, stage };
    match stage {
        Stage::Simulate => return Err(ctx.fail("simulate is not part of a run; use simulate_dataset")),
        Stage::Propose => ctx.propose()?,
        Stage::Register => ctx.register()?,
        Stage::Filter => ctx.filter()?,
        Stage::Build => ctx.build()?,
        Stage::Optimize => ctx.optimize()?,
        Stage::Covis => ctx.covis()?,
        Stage::Evaluate => ctx.evaluate()?,
    }
    let seconds = clock.elapsed().as_secs_f64();
    log::info!("{stage}: {seconds:.2} s");
    Ok(StageTiming {
        stage,
        seconds,
        skipped: false,
    })
}

struct Context<'a> {
    config: &'a RunConfig,
    stage: Stage,
}

impl Context<'_> {
    fn fail(&self, message: impl Into<String>) -> PipelineError {
        PipelineError::new(self.stage, message)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.paths.output.join(name)
    }

    fn write(&self, name: &str, text: &str) -> Result<(), PipelineError> {
        write_text(&self.out(name), text).map_err(|e| self.fail(e.to_string()))
    }

    /// An input file, with a hint at the stage that produces it.
    fn read(&self, path: &Path) -> Result<String, PipelineError> {
        if !path.exists() {
            let producer = Stage::PIPELINE
                .iter()
                .find(|s| s.outputs().iter().any(|f| path.ends_with(f)));
            return Err(match producer {
                Some(p) => self.fail(format!("{} is missing; run the {p} stage first", path.display())),
                None => self.fail(format!("{} is missing", path.display())),
            });
        }
        read_text(path).map_err(|e| self.fail(e.to_string()))
    }

    fn parse<T>(&self, path: &Path, parse: impl Fn(&str) -> Result<T, FormatError>) -> Result<T, PipelineError> {
        let text = self.read(path)?;
        parse(&text).map_err(|e| self.fail(format!("{}: {e}", path.display())))
    }

    fn odometry(&self) -> Result<Trajectory, PipelineError> {
        let traj = self.parse(&self.config.paths.trajectory, io::read_tum)?;
        if traj.len() < 2 {
            return Err(self.fail("the odometry trajectory needs at least two poses"));
        }
        Ok(traj)
    }

    fn imu(&self) -> Result<Option<Vec<ImuSample>>, PipelineError> {
        match &self.config.paths.imu {
            Some(path) if self.config.graph.use_imu => Ok(Some(self.parse(path, read_imu_csv)?)),
            _ => Ok(None),
        }
    }

    fn constraints(&self, name: &str) -> Result<Vec<IcpConstraint>, PipelineError> {
        self.parse(&self.out(name), read_constraints)
    }

    fn propose(&self) -> Result<(), PipelineError> {
        let traj = self.odometry()?;
        let candidates = propose_edges(&traj.poses, &self.config.proposal);
        log::info!("proposed {} candidate edges", candidates.len());
        self.write(CANDIDATES, &write_candidates(&candidates))
    }

    fn register(&self) -> Result<(), PipelineError> {
        let traj = self.odometry()?;
        let candidates = self.parse(&self.out(CANDIDATES), read_candidates)?;
        let scans = ScanDirectory::new(&self.config.paths.scans);
        let batch = register_edges(
            &candidates,
            &scans,
            &traj.poses,
            &self.config.registration,
            self.config.seed,
            Execution::from_workers(self.config.workers),
        );
        let mut failures = String::from("i,j,kind,reason\n");
        for f in &batch.failures {
            let kind = match f.kind {
                FailureKind::Input => "input",
                FailureKind::Registration => "registration",
            };
            failures.push_str(&format!("{},{},{kind},\"{}\"\n", f.edge.i, f.edge.j, f.reason.replace('"', "'")));
        }
        self.write(REGISTER_FAILURES, &failures)?;
        if let Some(f) = batch.failures.iter().find(|f| f.kind == FailureKind::Input) {
            return Err(self.fail(format!("edge ({}, {}): {}", f.edge.i, f.edge.j, f.reason)));
        }
        log::info!(
            "registered {} edges, {} failed",
            batch.constraints.len(),
            batch.failures.len()
        );
        self.write(CONSTRAINTS, &write_constraints(&batch.constraints))
    }

    fn filter(&self) -> Result<(), PipelineError> {
        let traj = self.odometry()?;
        let constraints = self.constraints(CONSTRAINTS)?;
        let (kept, rejected) = filter_constraints(&constraints, &traj.poses, &self.config.filter)
            .map_err(|e| self.fail(e.to_string()))?;
        log::info!("filter kept {} of {}", kept.len(), constraints.len());
        self.write(FILTER_REPORT, &write_filter_report(&kept, &rejected, &traj.poses))?;
        self.write(FILTERED, &write_constraints(&kept))
    }

    fn build(&self) -> Result<(), PipelineError> {
        let traj = self.odometry()?;
        let scans = ScanDirectory::new(&self.config.paths.scans);
        let chain = self.icp_chain(&traj, &scans)?;
        let intervals = self.stationary_intervals(&traj, &chain)?;
        let segments = assign_bias_segments(&intervals, traj.len()).map_err(|e| self.fail(e.to_string()))?;
        log::info!(
            "{} stationary intervals, {} bias segments",
            intervals.len(),
            segments.last().map_or(0, |s| s + 1)
        );
        let graph = self.assemble(&traj, &intervals, None)?;
        self.write(ICP_CHAIN, &io::write_tum(&Trajectory::new(traj.timestamps.clone(), chain)))?;
        self.write(STATIONARY, &write_intervals(&intervals))?;
        self.write(INITIAL_GRAPH, &export_g2o(&graph))
    }

    /// Consecutive deterministic ICP from the odometry step; a step that
    /// fails or lands farther than `chain_gate` from odometry falls back to
    /// the odometry step.
    fn icp_chain(&self, traj: &Trajectory, scans: &ScanDirectory) -> Result<Vec<Pose3>, PipelineError> {
        let load = |k: usize| {
            scans
                .load(k)
                .map_err(|e| self.fail(format!("scan {k} ({}): {e}", scan_path(&scans.dir, k).display())))
        };
        let mut chain = vec![traj.poses[0]];
        let mut target = load(0)?;
        for k in 1..traj.len() {
            let source = load(k)?;
            let odom = traj.poses[k - 1].between(&traj.poses[k]);
            let step = match icp_point_to_plane(&source, &target, &odom, &self.config.registration) {
                Ok(r) if r.converged && odom.between(&r.mean_pose).translation.norm() < self.config.graph.chain_gate => {
                    r.mean_pose
                }
                _ => {
                    log::debug!("icp chain step {} falls back to odometry", k - 1);
                    odom
                }
            };
            let last = chain[k - 1];
            chain.push(last.compose(&step));
            target = source;
        }
        Ok(chain)
    }

    fn stationary_intervals(&self, traj: &Trajectory, chain: &[Pose3]) -> Result<Vec<StationaryInterval>, PipelineError> {
        let p = &self.config.stationary;
        let from_icp = detect_stationary_icp(chain, p.motion_thresh_trans, p.motion_thresh_rot);
        Ok(match self.imu()? {
            Some(samples) => {
                let from_imu = time_to_pose_intervals(
                    &detect_stationary_imu(&samples, p.window, p.gyro_thresh, p.accel_dev_thresh),
                    &traj.timestamps,
                );
                intersect_intervals(&from_imu, &from_icp)
            }
            None => from_icp,
        })
    }

    /// The factor graph before aliasing: anchor prior, odometry chain, kept
    /// ICP constraints and, when IMU data is configured, inertial factors
    /// with one bias per segment.
    fn assemble(
        &self,
        traj: &Trajectory,
        intervals: &[StationaryInterval],
        constraints: Option<&[IcpConstraint]>,
    ) -> Result<FactorGraph, PipelineError> {
        let g = &self.config.graph;
        let n = traj.len();
        let diag = |rot: f64, trans: f64| {
            let (r, t) = (rot.powi(-2), trans.powi(-2));
            Matrix6::from_diagonal(&Vector6::new(r, r, r, t, t, t))
        };
        let mut values = Values::from_poses(traj.poses.clone());
        for k in 0..n {
            let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
            let dt = traj.timestamps[b] - traj.timestamps[a];
            if dt > 0.0 {
                values.velocities[k] = (traj.poses[b].translation - traj.poses[a].translation) / dt;
            }
        }
        let imu = self.imu()?;
        let segments = assign_bias_segments(intervals, n).map_err(|e| self.fail(e.to_string()))?;
        if imu.is_some() {
            values.biases = vec![ImuBias::zero(); segments[n - 1] + 1];
        }
        let initial_velocity = values.velocities[0];
        let mut graph = FactorGraph::new(values);
        let mut add = |f: Factor| graph.add(f).map_err(|e| self.fail(e.to_string()));
        add(Factor::PriorPose {
            pose: 0,
            measured: traj.poses[0],
            information: diag(g.anchor_sigma_rot.to_radians(), g.anchor_sigma_trans),
        })?;
        let odom_info = diag(g.odometry_sigma_rot.to_radians(), g.odometry_sigma_trans);
        for k in 1..n {
            add(Factor::BetweenPose {
                i: k - 1,
                j: k,
                measured: traj.poses[k - 1].between(&traj.poses[k]),
                information: odom_info,
            })?;
        }
        for c in constraints.unwrap_or(&[]) {
            let information = c
                .covariance
                .try_inverse()
                .map(|m| (m + m.transpose()) * 0.5)
                .ok_or_else(|| self.fail(format!("edge ({}, {}): singular covariance", c.i, c.j)))?;
            add(Factor::BetweenPose {
                i: c.i,
                j: c.j,
                measured: c.relative,
                information,
            })?;
        }
        if let Some(samples) = imu {
            let noise = &self.config.imu_noise;
            for k in 1..n {
                let pre = preintegrate_span(
                    &samples,
                    traj.timestamps[k - 1],
                    traj.timestamps[k],
                    &ImuBias::zero(),
                    noise,
                )
                .map_err(|e| self.fail(format!("preintegrating poses {}..{k}: {e}", k - 1)))?;
                add(Factor::Imu {
                    pose_i: k - 1,
                    vel_i: k - 1,
                    pose_j: k,
                    vel_j: k,
                    bias_segment: segments[k - 1],
                    preintegrated: Box::new(pre),
                    gravity: GRAVITY,
                })?;
            }
            let (sg, sa) = (g.bias_prior_sigma_gyro.powi(-2), g.bias_prior_sigma_accel.powi(-2));
            for segment in 0..=segments[n - 1] {
                add(Factor::BiasPrior {
                    segment,
                    bias: ImuBias::zero(),
                    information: Matrix6::from_diagonal(&Vector6::new(sg, sg, sg, sa, sa, sa)),
                })?;
            }
            add(Factor::PriorVelocity {
                index: 0,
                velocity: initial_velocity,
                information: Matrix3::identity() * g.initial_velocity_sigma.powi(-2),
            })?;
        }
        graph.alias_stationary(intervals).map_err(|e| self.fail(e.to_string()))
    }

    fn optimize(&self) -> Result<(), PipelineError> {
        let traj = self.odometry()?;
        let kept = self.constraints(FILTERED)?;
        let intervals = self.parse(&self.out(STATIONARY), read_intervals)?;
        let graph = self.assemble(&traj, &intervals, Some(&kept))?;
        let (values, stats) = optimize(&graph, &self.config.optimizer).map_err(|e| self.fail(e.to_string()))?;
        log::info!(
            "chi2 {:.6e} -> {:.6e} in {} iterations",
            stats.initial_chi2,
            stats.final_chi2,
            stats.iterations
        );
        let mut solved = graph.clone();
        solved.initial = values.clone();
        self.write(GRAPH, &export_g2o(&solved))?;
        self.write(
            OPTIMIZE_STATS,
            &serde_json::to_string_pretty(&stats).map_err(|e| self.fail(e.to_string()))?,
        )?;
        self.write(OPTIMIZED, &io::write_tum(&Trajectory::new(traj.timestamps, values.poses)))
    }

    fn covis(&self) -> Result<(), PipelineError> {
        let rig = match &self.config.paths.rig {
            Some(path) => self.parse(path, read_rig)?,
            None => RigCalibration::fixture(),
        };
        rig.validate().map_err(|e| self.fail(e.to_string()))?;
        let poses = self.parse(&self.out(OPTIMIZED), io::read_tum)?.poses;
        let kept = self.constraints(FILTERED)?;
        let scans = ScanDirectory::new(&self.config.paths.scans);
        let mut matrices = Vec::with_capacity(kept.len());
        for c in &kept {
            let load = |k: usize| scans.load(k).map_err(|e| self.fail(format!("edge ({}, {}): {e}", c.i, c.j)));
            let pose_i = poses
                .get(c.i)
                .ok_or_else(|| self.fail(format!("edge ({}, {}) outside the trajectory", c.i, c.j)))?;
            matrices.push(proxy_correspondences(
                (c.i, c.j),
                &load(c.i)?,
                &load(c.j)?,
                &c.relative,
                pose_i,
                &rig,
                self.config.covis.pair_max_dist,
            ));
        }
        let pairs = select_image_pairs(&matrices, self.config.covis.min_count);
        self.write(COVIS, &write_covis_csv(&pairs))
    }

    fn evaluate(&self) -> Result<(), PipelineError> {
        let odometry = self.odometry()?;
        let optimized = self.parse(&self.out(OPTIMIZED), io::read_tum)?;
        let stats: OptimizeStats = read_json(self.stage, &self.out(OPTIMIZE_STATS))?;
        let intervals = self.parse(&self.out(STATIONARY), read_intervals)?;
        let count_rows = |name: &str| -> Result<usize, PipelineError> {
            Ok(self.read(&self.out(name))?.lines().skip(1).filter(|l| !l.trim().is_empty()).count())
        };
        let edges = EdgeStats {
            proposed: count_rows(CANDIDATES)?,
            registered: self.constraints(CONSTRAINTS)?.len(),
            failed: count_rows(REGISTER_FAILURES)?,
            kept: self.constraints(FILTERED)?.len(),
            rejected: self
                .read(&self.out(FILTER_REPORT))?
                .lines()
                .filter(|l| l.contains(",rejected,"))
                .count(),
        };
        let mut report = EvalReport {
            ate_rmse: None,
            odometry_ate_rmse: None,
            rpe: Vec::new(),
            odometry_rpe: Vec::new(),
            edges,
            stationary_intervals: intervals.len(),
            bias_segments: assign_bias_segments(&intervals, odometry.len())
                .map_err(|e| self.fail(e.to_string()))?
                .last()
                .map_or(0, |s| s + 1),
            optimizer: stats,
            timing: Vec::new(),
        };
        if let Some(path) = &self.config.paths.ground_truth {
            let gt = self.parse(path, io::read_tum)?;
            let ate = |t: &Trajectory| evaluate_ate(t, &gt).map_err(|e| self.fail(e.to_string()));
            report.ate_rmse = Some(ate(&optimized)?);
            report.odometry_ate_rmse = Some(ate(&odometry)?);
            let rpe = |t: &Trajectory| -> Result<Vec<RpeStat>, PipelineError> {
                self.config
                    .eval
                    .rpe_deltas
                    .iter()
                    .map(|&delta| {
                        let (trans, rot) = evaluate_rpe(&t.poses, &gt.poses, delta)
                            .map_err(|e| self.fail(format!("RPE at delta {delta}: {e}")))?;
                        Ok(RpeStat { delta, trans, rot })
                    })
                    .collect()
            };
            report.rpe = rpe(&optimized)?;
            report.odometry_rpe = rpe(&odometry)?;
        }
        self.write(
            REPORT,
            &serde_json::to_string_pretty(&report).map_err(|e| self.fail(e.to_string()))?,
        )
    }
}

fn read_json<T: serde::de::DeserializeOwned>(stage: Stage, path: &Path) -> Result<T, PipelineError> {
    let text = read_text(path).map_err(|e| PipelineError::new(stage, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::new(stage, format!("{}: {e}", path.display())))
}

pub fn write_intervals(intervals: &[StationaryInterval]) -> String {
    let mut out = String::from("start_index,end_index\n");
    for iv in intervals {
        out.push_str(&format!("{},{}\n", iv.start_index, iv.end_index));
    }
    out
}

pub fn read_intervals(text: &str) -> Result<Vec<StationaryInterval>, FormatError> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (k == 0 && line == "start_index,end_index") {
            continue;
        }
        let no = k + 1;
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| FormatError::parse(no, "expected `start_index,end_index`"))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| FormatError::parse(no, format!("bad index {t:?}: {e}")))
        };
        let (start, end) = (parse(a)?, parse(b)?);
        if end < start {
            return Err(FormatError::parse(no, "interval ends before it starts"));
        }
        out.push(StationaryInterval::new(start, end));
    }
    Ok(out)
}

// --- datasets ----------------------------------------------------------------

/// Simulates `scene` and writes a ready-to-run dataset into `dir`:
/// odometry, ground truth, IMU, scans, the fixture rig and a `config.toml`
/// with default parameters. Returns the config path.
pub fn simulate_dataset(scene: &str, seed: u64, dir: &Path, workers: usize) -> Result<PathBuf, PipelineError> {
    let fail = |m: String| PipelineError::new(Stage::Simulate, m);
    let scene = Scene::by_name(scene).map_err(|e| fail(e.to_string()))?;
    let seq = scene
        .simulate(seed, Execution::from_workers(workers))
        .map_err(|e| fail(e.to_string()))?;
    let write = |name: &str, text: &str| write_text(&dir.join(name), text).map_err(|e| fail(e.to_string()));
    write("odometry.tum", &io::write_tum(&Trajectory::new(seq.timestamps.clone(), seq.odometry.clone())))?;
    write(
        "ground_truth.tum",
        &io::write_tum(&Trajectory::new(seq.timestamps.clone(), seq.ground_truth.clone())),
    )?;
    write("imu.csv", &write_imu_csv(&seq.imu))?;
    write("rig.txt", &write_rig(&RigCalibration::fixture()))?;
    let mut rests = String::from("start,end\n");
    for r in &seq.rests {
        rests.push_str(&format!("{},{}\n", io::fmt_f64(r.start), io::fmt_f64(r.end)));
    }
    write("rests.csv", &rests)?;
    for (k, scan) in seq.scans.iter().enumerate() {
        io::save_ply(&scan_path(&dir.join("scans"), k), scan).map_err(|e| fail(e.to_string()))?;
    }
    let mut config = RunConfig::with_paths(PathsConfig {
        trajectory: "odometry.tum".into(),
        scans: "scans".into(),
        imu: Some("imu.csv".into()),
        rig: Some("rig.txt".into()),
        ground_truth: Some("ground_truth.tum".into()),
        output: "out".into(),
    });
    config.seed = seed;
    config.workers = workers.max(1);
    let path = dir.join("config.toml");
    write("config.toml", &config.to_toml())?;
    Ok(path)
}
