//! Metrics, the end-to-end trial pipeline and noise/delay sweeps.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    fit_codec, fuse_condition, make_schedule, sample, ConditionPriorDenoiser, DdpmVariance, SamplerKind, SamplerOptions,
};
use crate::error::{Error, Result};
use crate::geometry::{rotated_iou, wrap, DetectedBox, Pose2};
use crate::matching::{match_agents, transform_boxes, Assignment, MatchParams};
use crate::posegraph::{
    build_pose_graph, corrected_relative_pose, AgentView, PairAssignment, PosePrior, SolveReport, SolverOptions,
};
use crate::scenario::{
    build_message, generate_scene, observe, perturb_pose, rng_from_seed, synthesize_feature, GridConfig, NoiseConfig,
    Scene, SceneParams,
};

/// IoU above which late fusion suppresses the lower-confidence box.
pub const FUSION_NMS_IOU: f64 = 0.1;
/// Recorded in sweep metadata.
pub const AP_INTERPOLATION: &str = "all-point";
pub const PRECISION_CONVENTION: &str =
    "precision is 1 when there are no predicted pairs; recall is 1 when there are no true pairs";

const NOISE_STREAM: u64 = 0x6e6f_6973_6500_0001;
const TCM_STREAM: u64 = 0x7463_6d00_0000_0002;

fn true_positives(pred: &Assignment, truth: &[(usize, usize)]) -> usize {
    let truth: BTreeSet<(usize, usize)> = truth.iter().copied().collect();
    pred.pairs.iter().filter(|m| truth.contains(&(m.p, m.q))).count()
}

/// Precision, recall and F1 from pair counts; see [`PRECISION_CONVENTION`].
fn prf(tp: usize, predicted: usize, actual: usize) -> (f64, f64, f64) {
    let precision = if predicted == 0 {
        1.0
    } else {
        tp as f64 / predicted as f64
    };
    let recall = if actual == 0 { 1.0 } else { tp as f64 / actual as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// `(precision, recall, F1)` of predicted pairs against true `(p, q)` pairs.
pub fn assignment_metrics(pred: &Assignment, truth: &[(usize, usize)]) -> (f64, f64, f64) {
    prf(true_positives(pred, truth), pred.len(), truth.len())
}

/// RMS translation error (m) and wrapped rotation error (deg) over paired poses.
pub fn pose_rmse(estimated: &[Pose2], truth: &[Pose2]) -> Result<(f64, f64)> {
    if estimated.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            expected: (truth.len(), 1, 1),
            got: (estimated.len(), 1, 1),
        });
    }
    if truth.is_empty() {
        return Ok((0.0, 0.0));
    }
    let n = truth.len() as f64;
    let (mut st, mut sr) = (0.0, 0.0);
    for (e, t) in estimated.iter().zip(truth) {
        st += (e.x - t.x).powi(2) + (e.y - t.y).powi(2);
        sr += wrap(e.theta - t.theta).powi(2);
    }
    Ok(((st / n).sqrt(), (sr / n).sqrt().to_degrees()))
}

/// All-point interpolated average precision.
///
/// Detections are visited in descending confidence (ties by input order); each takes the
/// unconsumed ground-truth box of highest IoU and is a true positive when that IoU reaches
/// `iou_threshold`. With no ground truth the result is 1 for no detections and 0 otherwise.
pub fn average_precision(detections: &[DetectedBox], gt: &[DetectedBox], iou_threshold: f64) -> f64 {
    if gt.is_empty() {
        return if detections.is_empty() { 1.0 } else { 0.0 };
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .total_cmp(&detections[a].confidence)
            .then(a.cmp(&b))
    });
    let mut used = vec![false; gt.len()];
    let mut precision = Vec::with_capacity(order.len());
    let mut recall = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (k, &d) in order.iter().enumerate() {
        if let Some(g) = best_gt(&detections[d], gt, &used, iou_threshold) {
            used[g] = true;
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / gt.len() as f64);
    }
    // precision envelope from the right
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

fn best_gt(det: &DetectedBox, gt: &[DetectedBox], used: &[bool], thr: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (g, b) in gt.iter().enumerate() {
        if used[g] {
            continue;
        }
        let iou = rotated_iou(det, b);
        if best.is_none_or(|(_, v)| iou > v) {
            best = Some((g, iou));
        }
    }
    best.filter(|&(_, v)| v >= thr).map(|(g, _)| g)
}

/// Greedy non-maximum suppression by confidence.
pub fn nms(boxes: &[DetectedBox], iou_threshold: f64) -> Vec<DetectedBox> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].confidence.total_cmp(&boxes[a].confidence).then(a.cmp(&b)));
    let mut kept: Vec<DetectedBox> = Vec::new();
    for i in order {
        if kept.iter().all(|k| rotated_iou(k, &boxes[i]) <= iou_threshold) {
            kept.push(boxes[i]);
        }
    }
    kept
}

/// Diffusion and codec settings for the delay-compensation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionParams {
    /// Total diffusion steps `T`.
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Sampling steps.
    pub steps: usize,
    pub sampler: SamplerKind,
    pub eta: f64,
    pub variance: DdpmVariance,
    /// Channel compression rate of the codec.
    pub rate: usize,
    /// Prior spread of the condition-prior denoiser, in latent units.
    pub prior_sigma: f64,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        Self {
            timesteps: 500,
            beta_start: 1e-4,
            beta_end: 0.02,
            steps: 8,
            sampler: SamplerKind::Ddpm,
            eta: 0.0,
            variance: DdpmVariance::Beta,
            rate: 32,
            prior_sigma: 0.1,
        }
    }
}

impl DiffusionParams {
    pub fn validate(&self, grid: &GridConfig) -> Result<()> {
        make_schedule(self.timesteps, self.beta_start, self.beta_end)
            .map_err(|e| Error::config("diffusion", e.to_string()))?;
        if self.steps == 0 || self.steps > self.timesteps {
            return Err(Error::config(
                "diffusion.steps",
                format!("must be between 1 and {}, got {}", self.timesteps, self.steps),
            ));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::config("diffusion.eta", "must be finite and non-negative"));
        }
        if self.rate == 0 || !grid.channels.is_multiple_of(self.rate) {
            return Err(Error::config(
                "diffusion.rate",
                format!("must divide grid.channels = {}, got {}", grid.channels, self.rate),
            ));
        }
        if !(self.prior_sigma >= 0.0 && self.prior_sigma.is_finite()) {
            return Err(Error::config(
                "diffusion.prior_sigma",
                "must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// Everything a trial needs besides its seed and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub scene: SceneParams,
    pub noise: NoiseConfig,
    pub matching: MatchParams,
    pub solver: SolverOptions,
    pub diffusion: DiffusionParams,
    pub grid: GridConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.noise.validate()?;
        self.matching.validate()?;
        self.solver.validate()?;
        self.grid.validate()?;
        self.diffusion.validate(&self.grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineFlags {
    pub pcm: bool,
    pub tcm: bool,
}

impl PipelineFlags {
    pub const ALL: PipelineFlags = PipelineFlags { pcm: true, tcm: true };
    pub const NONE: PipelineFlags = PipelineFlags { pcm: false, tcm: false };

    pub fn label(&self) -> &'static str {
        match (self.pcm, self.tcm) {
            (true, true) => "pcm+tcm",
            (true, false) => "pcm",
            (false, true) => "tcm",
            (false, false) => "none",
        }
    }
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub sigma_t: f64,
    /// Degrees.
    pub sigma_r: f64,
    /// Seconds.
    pub delay: f64,
    pub pcm: bool,
    pub tcm: bool,
    pub match_precision: f64,
    pub match_recall: f64,
    pub match_f1: f64,
    pub matched_pairs: usize,
    pub trans_rmse_before: f64,
    /// Degrees.
    pub rot_rmse_before: f64,
    pub trans_rmse_after: f64,
    pub rot_rmse_after: f64,
    pub iou_before: f64,
    pub iou_after: f64,
    pub ap50: f64,
    pub ap70: f64,
    /// Mean squared error of the fused feature map against the ground-truth rendering.
    pub feature_mse: f64,
    pub solver_iterations: usize,
    pub solver_converged: bool,
}

impl TrialResult {
    pub fn flags(&self) -> PipelineFlags {
        PipelineFlags {
            pcm: self.pcm,
            tcm: self.tcm,
        }
    }

    /// Metric columns by name, in CSV order.
    pub fn metrics(&self) -> [(&'static str, f64); 13] {
        [
            ("match_precision", self.match_precision),
            ("match_recall", self.match_recall),
            ("match_f1", self.match_f1),
            ("trans_rmse_before", self.trans_rmse_before),
            ("rot_rmse_before", self.rot_rmse_before),
            ("trans_rmse_after", self.trans_rmse_after),
            ("rot_rmse_after", self.rot_rmse_after),
            ("iou_before", self.iou_before),
            ("iou_after", self.iou_after),
            ("ap50", self.ap50),
            ("ap70", self.ap70),
            ("feature_mse", self.feature_mse),
            ("solver_iterations", self.solver_iterations as f64),
        ]
    }
}

/// Per-collaborator relative-pose errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDiagnostics {
    pub agent_id: u32,
    pub boxes: usize,
    pub matched: usize,
    pub trans_error_before: f64,
    pub rot_error_before_deg: f64,
    pub trans_error_after: f64,
    pub rot_error_after_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub result: TrialResult,
    pub agents: Vec<AgentDiagnostics>,
    pub solver: Option<SolveReport>,
}

/// Generates the scene for `seed` and runs [`run_trial_on_scene`].
pub fn run_trial(cfg: &PipelineConfig, flags: PipelineFlags, seed: u64) -> Result<TrialResult> {
    run_trial_report(cfg, flags, seed).map(|r| r.result)
}

pub fn run_trial_report(cfg: &PipelineConfig, flags: PipelineFlags, seed: u64) -> Result<TrialReport> {
    let scene = generate_scene(&cfg.scene, seed).map_err(|e| trial_err(seed, e))?;
    run_trial_on_scene(&scene, cfg, flags, seed)
}

fn trial_err(seed: u64, e: Error) -> Error {
    match e {
        Error::Trial { .. } => e,
        e if e.is_config_error() => e,
        e => Error::Trial {
            seed,
            source: Box::new(e),
        },
    }
}

fn mean_iou(pairs: impl Iterator<Item = (DetectedBox, DetectedBox)>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, b) in pairs {
        sum += rotated_iou(&a, &b);
        n += 1;
    }
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

/// Full pipeline on a given scene. The first agent is the ego.
///
/// All simulated noise is drawn before any flag-dependent work, so results for the same
/// seed are paired across flag settings.
pub fn run_trial_on_scene(scene: &Scene, cfg: &PipelineConfig, flags: PipelineFlags, seed: u64) -> Result<TrialReport> {
    cfg.validate()?;
    inner_trial(scene, cfg, flags, seed).map_err(|e| trial_err(seed, e))
}

fn inner_trial(scene: &Scene, cfg: &PipelineConfig, flags: PipelineFlags, seed: u64) -> Result<TrialReport> {
    scene.validate()?;
    let ego = scene
        .agents
        .first()
        .ok_or_else(|| Error::InvalidGraph("scene has no agents".into()))?;
    let noise = &cfg.noise;
    let mut rng = rng_from_seed(seed ^ NOISE_STREAM ^ noise.rng_seed.rotate_left(17));

    let ego_reported = perturb_pose(&ego.true_pose, noise, &mut rng);
    let ego_det = observe(scene, ego.id, noise, &mut rng)?;
    let mut messages = Vec::new();
    for agent in scene.agents.iter().skip(1) {
        messages.push(build_message(scene, agent.id, noise, &cfg.grid, &mut rng)?);
    }

    // association, always evaluated
    let mut pairs = Vec::new();
    let mut rel_before = Vec::new();
    let mut rel_true = Vec::new();
    let (mut tp_sum, mut pred_sum, mut truth_sum) = (0usize, 0usize, 0usize);
    for msg in &messages {
        let rel = ego_reported.relative(&msg.reported_pose);
        let assignment = match_agents(&ego_det.boxes, &msg.boxes, &rel, &cfg.matching);
        let truth = true_pairs(&ego_det.object_ids, &msg.object_ids);
        tp_sum += true_positives(&assignment, &truth);
        pred_sum += assignment.len();
        truth_sum += truth.len();
        rel_before.push(rel);
        rel_true.push(ego.true_pose.relative(&scene.agent(msg.sender_id)?.true_pose));
        pairs.push(PairAssignment {
            a: ego.id,
            b: msg.sender_id,
            assignment,
        });
    }
    let (precision, recall, f1) = prf(tp_sum, pred_sum, truth_sum);

    // pose calibration
    let (rel_after, solver) = if flags.pcm && !messages.is_empty() {
        let mut views = vec![AgentView {
            id: ego.id,
            reported_pose: ego_reported,
            boxes: &ego_det.boxes,
        }];
        views.extend(messages.iter().map(|m| AgentView {
            id: m.sender_id,
            reported_pose: m.reported_pose,
            boxes: &m.boxes,
        }));
        let prior = PosePrior {
            sigma_t: noise.sigma_t,
            sigma_r: noise.sigma_r_rad(),
        };
        let problem = build_pose_graph(&views, &pairs, ego.id, &prior)?;
        let (solved, report) = problem.solve_lm(&cfg.solver)?;
        let anchor = solved.agents[&ego.id];
        let rel = messages
            .iter()
            .map(|m| corrected_relative_pose(&anchor, &solved.agents[&m.sender_id]))
            .collect();
        (rel, Some(report))
    } else {
        (rel_before.clone(), None)
    };

    let (tb, rb) = pose_rmse(&rel_before, &rel_true)?;
    let (ta, ra) = pose_rmse(&rel_after, &rel_true)?;

    // alignment IoU against the current footprint of each detected object
    let truth_in_ego = |id: u32| -> Option<DetectedBox> {
        scene
            .object(id)
            .map(|o| o.footprint().transformed(&ego.true_pose.inverse()))
    };
    let align = |rels: &[Pose2]| {
        mean_iou(messages.iter().zip(rels).flat_map(|(m, rel)| {
            m.boxes
                .iter()
                .zip(&m.object_ids)
                .filter_map(move |(b, id)| truth_in_ego(*id).map(|t| (b.transformed(rel), t)))
        }))
    };
    let iou_before = align(&rel_before);
    let iou_after = align(&rel_after);

    // late fusion and AP against every object some agent can currently see
    let mut fused_boxes = ego_det.boxes.clone();
    let mut aligned_boxes = Vec::new();
    for (m, rel) in messages.iter().zip(&rel_after) {
        aligned_boxes.extend(transform_boxes(&m.boxes, rel));
    }
    fused_boxes.extend(aligned_boxes.iter().copied());
    let fused_boxes = nms(&fused_boxes, FUSION_NMS_IOU);
    let visible: Vec<DetectedBox> = scene
        .objects
        .iter()
        .filter(|o| {
            scene
                .agents
                .iter()
                .any(|a| a.true_pose.distance(&o.pose) <= a.sensing_range)
        })
        .map(|o| o.footprint().transformed(&ego.true_pose.inverse()))
        .collect();
    let ap50 = average_precision(&fused_boxes, &visible, 0.5);
    let ap70 = average_precision(&fused_boxes, &visible, 0.7);

    // feature fusion
    let truth_map = synthesize_feature(&visible, &cfg.grid)?;
    let ego_map = synthesize_feature(&ego_det.boxes, &cfg.grid)?;
    let mut collab_maps = Vec::new();
    for (m, rel) in messages.iter().zip(&rel_after) {
        collab_maps.push(synthesize_feature(&transform_boxes(&m.boxes, rel), &cfg.grid)?);
    }
    let fused = if flags.tcm {
        let dp = &cfg.diffusion;
        let mut samples = vec![ego_map.grid.clone()];
        samples.extend(collab_maps.iter().map(|m| m.grid.clone()));
        let codec = fit_codec(&samples, dp.rate)?;
        let z_ego = codec.encode(&ego_map.grid)?;
        let z_others = collab_maps
            .iter()
            .map(|m| codec.encode(&m.grid))
            .collect::<Result<Vec<_>>>()?;
        let cond = fuse_condition(&z_ego, &z_others)?;
        let sched = make_schedule(dp.timesteps, dp.beta_start, dp.beta_end)?;
        let denoiser = ConditionPriorDenoiser::new(dp.prior_sigma, &sched)?;
        let opts = SamplerOptions {
            kind: dp.sampler,
            n_steps: dp.steps,
            eta: dp.eta,
            variance: dp.variance,
        };
        let mut tcm_rng = rng_from_seed(seed ^ TCM_STREAM);
        let z = sample(&denoiser, &[cond], z_ego.shape(), &sched, &opts, &mut tcm_rng)?;
        codec.decode(&z)?
    } else {
        let mut acc = ego_map.clone();
        for m in &collab_maps {
            acc = acc.max_with(m)?;
        }
        acc.grid
    };
    let feature_mse = crate::diffusion::dm_loss(&fused, &truth_map.grid)?;

    let agents = messages
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let (b, a, t) = (rel_before[k], rel_after[k], rel_true[k]);
            AgentDiagnostics {
                agent_id: m.sender_id,
                boxes: m.boxes.len(),
                matched: pairs[k].assignment.len(),
                trans_error_before: b.distance(&t),
                rot_error_before_deg: wrap(b.theta - t.theta).abs().to_degrees(),
                trans_error_after: a.distance(&t),
                rot_error_after_deg: wrap(a.theta - t.theta).abs().to_degrees(),
            }
        })
        .collect();

    let result = TrialResult {
        seed,
        sigma_t: noise.sigma_t,
        sigma_r: noise.sigma_r,
        delay: noise.delay,
        pcm: flags.pcm,
        tcm: flags.tcm,
        match_precision: precision,
        match_recall: recall,
        match_f1: f1,
        matched_pairs: pred_sum,
        trans_rmse_before: tb,
        rot_rmse_before: rb,
        trans_rmse_after: ta,
        rot_rmse_after: ra,
        iou_before,
        iou_after,
        ap50,
        ap70,
        feature_mse,
        solver_iterations: solver.as_ref().map_or(0, |r| r.iterations),
        solver_converged: solver.as_ref().is_none_or(|r| r.converged),
    };
    Ok(TrialReport { result, agents, solver })
}

fn true_pairs(ego_ids: &[u32], other_ids: &[u32]) -> Vec<(usize, usize)> {
    let index: HashMap<u32, usize> = other_ids.iter().enumerate().map(|(q, id)| (*id, q)).collect();
    ego_ids
        .iter()
        .enumerate()
        .filter_map(|(p, id)| index.get(id).map(|&q| (p, q)))
        .collect()
}

/// Noise/delay/flag grid. Noise levels pair translation (m) with rotation (deg).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub noise_levels: Vec<[f64; 2]>,
    /// Seconds.
    pub delays: Vec<f64>,
    pub flags: Vec<PipelineFlags>,
    pub trials: usize,
    /// Trial `k` of every cell uses seed `base_seed + k`.
    #[serde(default)]
    pub base_seed: u64,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.noise_levels.is_empty() || self.delays.is_empty() || self.flags.is_empty() {
            return Err(Error::config(
                "grid",
                "noise_levels, delays and flags must all be nonempty",
            ));
        }
        if self.trials == 0 {
            return Err(Error::config("grid.trials", "must be at least 1"));
        }
        for [t, r] in &self.noise_levels {
            if !(*t >= 0.0 && *r >= 0.0 && t.is_finite() && r.is_finite()) {
                return Err(Error::config("grid.noise_levels", format!("invalid level [{t}, {r}]")));
            }
        }
        for d in &self.delays {
            if !(*d >= 0.0 && d.is_finite()) {
                return Err(Error::config("grid.delays", format!("invalid delay {d}")));
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.noise_levels.len() * self.delays.len() * self.flags.len()
    }
}

fn row_key(r: &TrialResult) -> impl Ord {
    (
        ordered(r.sigma_t),
        ordered(r.sigma_r),
        ordered(r.delay),
        r.pcm,
        r.tcm,
        r.seed,
    )
}

/// Order-preserving key for validated (finite, non-negative) settings.
fn ordered(v: f64) -> u64 {
    (v + 0.0).to_bits()
}

/// Runs every cell of `grid` with `jobs` worker threads; rows come back sorted by
/// noise, delay, flags and seed.
pub fn run_sweep(base: &PipelineConfig, grid: &SweepGrid, jobs: usize) -> Result<Vec<TrialResult>> {
    base.validate()?;
    grid.validate()?;
    let mut tasks = Vec::with_capacity(grid.cells() * grid.trials);
    for level in &grid.noise_levels {
        for &delay in &grid.delays {
            for &flags in &grid.flags {
                for k in 0..grid.trials {
                    tasks.push((*level, delay, flags, grid.base_seed.wrapping_add(k as u64)));
                }
            }
        }
    }
    let run = |&([st, sr], delay, flags, seed): &([f64; 2], f64, PipelineFlags, u64)| {
        let mut cfg = base.clone();
        cfg.noise.sigma_t = st;
        cfg.noise.sigma_r = sr;
        cfg.noise.delay = delay;
        run_trial(&cfg, flags, seed)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    let mut rows = pool.install(|| tasks.par_iter().map(run).collect::<Result<Vec<_>>>())?;
    rows.sort_by_key(row_key);
    Ok(rows)
}

/// One CSV row per trial, header first. Floats use shortest round-trip formatting.
pub fn write_csv<W: Write>(rows: &[TrialResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<TrialResult>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat {
                mean: f64::NAN,
                std: f64::NAN,
                median: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat {
            mean,
            std,
            median: median(values),
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub sigma_t: f64,
    pub sigma_r: f64,
    pub delay: f64,
    pub pcm: bool,
    pub tcm: bool,
    pub trials: usize,
    pub metrics: BTreeMap<String, Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub schema_version: u32,
    pub ap_interpolation: String,
    pub precision_convention: String,
    pub cells: Vec<CellSummary>,
}

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Per-cell mean, sample standard deviation and median of every metric.
pub fn summarize(rows: &[TrialResult]) -> SweepSummary {
    let mut groups: BTreeMap<(u64, u64, u64, bool, bool), Vec<&TrialResult>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((ordered(r.sigma_t), ordered(r.sigma_r), ordered(r.delay), r.pcm, r.tcm))
            .or_default()
            .push(r);
    }
    let cells = groups
        .into_values()
        .map(|g| {
            let first = g[0];
            let mut metrics = BTreeMap::new();
            for (k, (name, _)) in first.metrics().iter().enumerate() {
                let vals: Vec<f64> = g.iter().map(|r| r.metrics()[k].1).collect();
                metrics.insert((*name).to_string(), Stat::of(&vals));
            }
            CellSummary {
                sigma_t: first.sigma_t,
                sigma_r: first.sigma_r,
                delay: first.delay,
                pcm: first.pcm,
                tcm: first.tcm,
                trials: g.len(),
                metrics,
            }
        })
        .collect();
    SweepSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        ap_interpolation: AP_INTERPOLATION.into(),
        precision_convention: PRECISION_CONVENTION.into(),
        cells,
    }
}
