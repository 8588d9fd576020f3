//! Agent–object pose graph and its Levenberg–Marquardt solve.
//!
//! Every residual has the form `M⁻¹ · A⁻¹ · X` read as `(tx, ty, wrapped angle)`:
//! observation edges use `(T_meas, agent, object)`, agent edges use `(T_ji, agent j, agent i)`.
//! The anchor agent is held fixed to pin the gauge.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap, DetectedBox, Pose2, Transform2};
use crate::matching::Assignment;

/// Floor applied to prior standard deviations so Ω stays finite at zero noise.
pub const MIN_PRIOR_SIGMA: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsEdge {
    pub agent: u32,
    pub object: u32,
    /// Object pose measured in the agent frame.
    pub measurement: Pose2,
    /// Diagonal of Ω.
    pub information: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentEdge {
    /// Agent `j`.
    pub from: u32,
    /// Agent `i`.
    pub to: u32,
    /// Measured pose of `i` in the frame of `j`.
    pub measurement: Pose2,
    pub information: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseGraphProblem {
    pub agents: BTreeMap<u32, Pose2>,
    pub objects: BTreeMap<u32, Pose2>,
    pub obs_edges: Vec<ObsEdge>,
    pub agent_edges: Vec<AgentEdge>,
    pub anchor: u32,
}

/// Prior on exchanged agent poses, used to weight agent edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosePrior {
    pub sigma_t: f64,
    /// Radians.
    pub sigma_r: f64,
}

impl PosePrior {
    pub fn information(&self) -> [f64; 3] {
        let t = self.sigma_t.max(MIN_PRIOR_SIGMA);
        let r = self.sigma_r.max(MIN_PRIOR_SIGMA);
        [1.0 / (t * t), 1.0 / (t * t), 1.0 / (r * r)]
    }
}

/// One agent's contribution to graph construction.
#[derive(Debug, Clone, Copy)]
pub struct AgentView<'a> {
    pub id: u32,
    pub reported_pose: Pose2,
    pub boxes: &'a [DetectedBox],
}

/// Assignment between the boxes of agent `a` (index `p`) and agent `b` (index `q`).
#[derive(Debug, Clone, PartialEq)]
pub struct PairAssignment {
    pub a: u32,
    pub b: u32,
    pub assignment: Assignment,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so group ids are order-independent
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Builds the pose graph: matched detections merge into shared landmarks, every agent
/// other than `anchor` gets an edge to the anchor from the exchanged poses.
pub fn build_pose_graph(
    views: &[AgentView<'_>],
    pairs: &[PairAssignment],
    anchor: u32,
    prior: &PosePrior,
) -> Result<PoseGraphProblem> {
    let view_index: BTreeMap<u32, usize> = views.iter().enumerate().map(|(i, v)| (v.id, i)).collect();
    if view_index.len() != views.len() {
        return Err(Error::InvalidGraph("duplicate agent id".into()));
    }
    let anchor_view = *views
        .get(*view_index.get(&anchor).ok_or(Error::UnknownAgent(anchor))?)
        .expect("indexed view");

    // detection node ids: offset per agent
    let mut offsets = Vec::with_capacity(views.len());
    let mut total = 0usize;
    for v in views {
        offsets.push(total);
        total += v.boxes.len();
    }
    let mut uf = UnionFind::new(total);
    let mut matched = vec![false; total];
    for pa in pairs {
        let ia = *view_index.get(&pa.a).ok_or(Error::UnknownAgent(pa.a))?;
        let ib = *view_index.get(&pa.b).ok_or(Error::UnknownAgent(pa.b))?;
        if !pa.assignment.is_one_to_one() {
            return Err(Error::InvalidGraph(format!(
                "assignment between {} and {} is not one-to-one",
                pa.a, pa.b
            )));
        }
        for m in &pa.assignment.pairs {
            if m.p >= views[ia].boxes.len() || m.q >= views[ib].boxes.len() {
                return Err(Error::InvalidGraph("assignment index out of range".into()));
            }
            let (u, w) = (offsets[ia] + m.p, offsets[ib] + m.q);
            uf.union(u, w);
            matched[u] = true;
            matched[w] = true;
        }
    }

    // group detections by root; roots are visited in node order for stable landmark ids
    let mut groups: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (vi, v) in views.iter().enumerate() {
        for bi in 0..v.boxes.len() {
            let node = offsets[vi] + bi;
            if matched[node] {
                groups.entry(uf.find(node)).or_default().push((vi, bi));
            }
        }
    }

    let mut objects = BTreeMap::new();
    let mut obs_edges = Vec::new();
    for (landmark, members) in groups.values().enumerate() {
        let landmark = landmark as u32;
        let (mut sx, mut sy, mut ss, mut sc) = (0.0, 0.0, 0.0, 0.0);
        for &(vi, bi) in members {
            let v = &views[vi];
            let b = &v.boxes[bi];
            let world = v.reported_pose.compose(&b.center);
            sx += world.x;
            sy += world.y;
            ss += world.theta.sin();
            sc += world.theta.cos();
            obs_edges.push(ObsEdge {
                agent: v.id,
                object: landmark,
                measurement: b.center,
                information: b.information(),
            });
        }
        let n = members.len() as f64;
        objects.insert(landmark, Pose2::new(sx / n, sy / n, ss.atan2(sc)));
    }

    let info = prior.information();
    let agent_edges = views
        .iter()
        .filter(|v| v.id != anchor)
        .map(|v| AgentEdge {
            from: v.id,
            to: anchor,
            measurement: v.reported_pose.relative(&anchor_view.reported_pose),
            information: info,
        })
        .collect();

    let problem = PoseGraphProblem {
        agents: views.iter().map(|v| (v.id, v.reported_pose)).collect(),
        objects,
        obs_edges,
        agent_edges,
        anchor,
    };
    problem.validate()?;
    Ok(problem)
}

fn extract(r: &Transform2) -> Vector3<f64> {
    let m = r.matrix();
    Vector3::new(m[(0, 2)], m[(1, 2)], wrap(m[(1, 0)].atan2(m[(0, 0)])))
}

/// Observation residual `T_meas⁻¹ · E⁻¹ · X` as `(tx, ty, θ)`.
pub fn residual_obs(agent: &Transform2, measurement: &Transform2, object: &Transform2) -> Vector3<f64> {
    extract(&(measurement.inverse() * agent.inverse() * *object))
}

/// Inter-agent residual `T_ji⁻¹ · E_j⁻¹ · E_i` as `(tx, ty, θ)`.
pub fn residual_agent(e_j: &Transform2, e_i: &Transform2, t_ji: &Transform2) -> Vector3<f64> {
    extract(&(t_ji.inverse() * e_j.inverse() * *e_i))
}

/// Residual `meas⁻¹ ∘ a⁻¹ ∘ x` on poses, equal to the matrix forms above.
pub fn se2_residual(meas: &Pose2, a: &Pose2, x: &Pose2) -> Vector3<f64> {
    let r = meas.relative(&a.relative(x));
    Vector3::new(r.x, r.y, r.theta)
}

/// Residual with its analytic Jacobians with respect to `a = (x, y, θ)` and `x = (x, y, θ)`.
pub fn se2_residual_jacobians(meas: &Pose2, a: &Pose2, x: &Pose2) -> (Vector3<f64>, Matrix3<f64>, Matrix3<f64>) {
    let r = se2_residual(meas, a, x);
    let c = -meas.theta - a.theta;
    let (s, co) = c.sin_cos();
    let rot = Matrix2::new(co, -s, s, co);
    let perp = Matrix2::new(0.0, -1.0, 1.0, 0.0);
    let d = Vector2::new(x.x - a.x, x.y - a.y);
    let dtheta_a = -(rot * perp * d);

    let mut ja = Matrix3::zeros();
    ja.fixed_view_mut::<2, 2>(0, 0).copy_from(&(-rot));
    ja[(0, 2)] = dtheta_a[0];
    ja[(1, 2)] = dtheta_a[1];
    ja[(2, 2)] = -1.0;

    let mut jx = Matrix3::zeros();
    jx.fixed_view_mut::<2, 2>(0, 0).copy_from(&rot);
    jx[(2, 2)] = 1.0;
    (r, ja, jx)
}

fn weighted_sq(e: &Vector3<f64>, info: &[f64; 3]) -> f64 {
    e[0] * e[0] * info[0] + e[1] * e[1] * info[1] + e[2] * e[2] * info[2]
}

impl PoseGraphProblem {
    pub fn validate(&self) -> Result<()> {
        if !self.agents.contains_key(&self.anchor) {
            return Err(Error::InvalidGraph(format!(
                "anchor {} is not an agent node",
                self.anchor
            )));
        }
        let check_info = |info: &[f64; 3]| {
            if info.iter().all(|w| *w > 0.0 && w.is_finite()) {
                Ok(())
            } else {
                Err(Error::InvalidGraph(format!(
                    "information must be positive, got {info:?}"
                )))
            }
        };
        for e in &self.obs_edges {
            if !self.agents.contains_key(&e.agent) || !self.objects.contains_key(&e.object) {
                return Err(Error::InvalidGraph(format!(
                    "observation edge {}→{} references a missing node",
                    e.agent, e.object
                )));
            }
            check_info(&e.information)?;
        }
        for e in &self.agent_edges {
            if !self.agents.contains_key(&e.from) || !self.agents.contains_key(&e.to) {
                return Err(Error::InvalidGraph(format!(
                    "agent edge {}→{} references a missing node",
                    e.from, e.to
                )));
            }
            check_info(&e.information)?;
        }
        Ok(())
    }

    /// `Σ eᵀΩe` over all edges at the current node values.
    pub fn total_cost(&self) -> f64 {
        self.cost_with(&self.agents, &self.objects)
    }

    fn cost_with(&self, agents: &BTreeMap<u32, Pose2>, objects: &BTreeMap<u32, Pose2>) -> f64 {
        let obs: f64 = self
            .obs_edges
            .iter()
            .map(|e| {
                weighted_sq(
                    &se2_residual(&e.measurement, &agents[&e.agent], &objects[&e.object]),
                    &e.information,
                )
            })
            .sum();
        let inter: f64 = self
            .agent_edges
            .iter()
            .map(|e| {
                weighted_sq(
                    &se2_residual(&e.measurement, &agents[&e.from], &agents[&e.to]),
                    &e.information,
                )
            })
            .sum();
        obs + inter
    }

    /// Plain-text edge list, one node or edge per line.
    ///
    /// ```text
    /// ANCHOR <id>
    /// AGENT <id> <x> <y> <theta>
    /// OBJECT <id> <x> <y> <theta>
    /// OBS <agent> <object> <x> <y> <theta> <w_x> <w_y> <w_theta>
    /// PRIOR <from> <to> <x> <y> <theta> <w_x> <w_y> <w_theta>
    /// ```
    pub fn to_edge_list(&self) -> String {
        let mut out = String::from("# collabcal pose graph v1\n");
        let _ = writeln!(out, "ANCHOR {}", self.anchor);
        for (id, p) in &self.agents {
            let _ = writeln!(out, "AGENT {id} {} {} {}", p.x, p.y, p.theta);
        }
        for (id, p) in &self.objects {
            let _ = writeln!(out, "OBJECT {id} {} {} {}", p.x, p.y, p.theta);
        }
        for e in &self.obs_edges {
            let (m, w) = (e.measurement, e.information);
            let _ = writeln!(
                out,
                "OBS {} {} {} {} {} {} {} {}",
                e.agent, e.object, m.x, m.y, m.theta, w[0], w[1], w[2]
            );
        }
        for e in &self.agent_edges {
            let (m, w) = (e.measurement, e.information);
            let _ = writeln!(
                out,
                "PRIOR {} {} {} {} {} {} {} {}",
                e.from, e.to, m.x, m.y, m.theta, w[0], w[1], w[2]
            );
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<PoseGraphProblem> {
        let bad = |line: &str| Error::InvalidGraph(format!("malformed line: {line}"));
        let mut problem = PoseGraphProblem {
            agents: BTreeMap::new(),
            objects: BTreeMap::new(),
            obs_edges: Vec::new(),
            agent_edges: Vec::new(),
            anchor: u32::MAX,
        };
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let tok: Vec<&str> = line.split_whitespace().collect();
            let id = |i: usize| tok.get(i).and_then(|t| t.parse::<u32>().ok()).ok_or_else(|| bad(line));
            let num = |i: usize| tok.get(i).and_then(|t| t.parse::<f64>().ok()).ok_or_else(|| bad(line));
            match tok[0] {
                "ANCHOR" => problem.anchor = id(1)?,
                "AGENT" => {
                    problem
                        .agents
                        .insert(id(1)?, Pose2::try_new(num(2)?, num(3)?, num(4)?)?);
                }
                "OBJECT" => {
                    problem
                        .objects
                        .insert(id(1)?, Pose2::try_new(num(2)?, num(3)?, num(4)?)?);
                }
                "OBS" => problem.obs_edges.push(ObsEdge {
                    agent: id(1)?,
                    object: id(2)?,
                    measurement: Pose2::try_new(num(3)?, num(4)?, num(5)?)?,
                    information: [num(6)?, num(7)?, num(8)?],
                }),
                "PRIOR" => problem.agent_edges.push(AgentEdge {
                    from: id(1)?,
                    to: id(2)?,
                    measurement: Pose2::try_new(num(3)?, num(4)?, num(5)?)?,
                    information: [num(6)?, num(7)?, num(8)?],
                }),
                _ => return Err(bad(line)),
            }
        }
        problem.validate()?;
        Ok(problem)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub max_iter: usize,
    pub cost_tol: f64,
    pub grad_tol: f64,
    pub init_damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            cost_tol: 1e-8,
            grad_tol: 1e-8,
            init_damping: 1e-3,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::config("solver.max_iter", "must be at least 1"));
        }
        for (name, v) in [
            ("solver.cost_tol", self.cost_tol),
            ("solver.grad_tol", self.grad_tol),
            ("solver.init_damping", self.init_damping),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Damping beyond which the solver gives up.
pub const MAX_DAMPING: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    CostTolerance,
    GradientTolerance,
    /// No decreasing step exists at any damping below [`MAX_DAMPING`].
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub termination: Termination,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_trace: Vec<f64>,
}

/// Variable layout: free agents first (sorted by id), then objects.
struct Layout {
    agent_slot: BTreeMap<u32, usize>,
    object_slot: BTreeMap<u32, usize>,
    dim: usize,
}

impl Layout {
    fn new(p: &PoseGraphProblem) -> Self {
        let mut next = 0;
        let mut agent_slot = BTreeMap::new();
        for id in p.agents.keys().filter(|id| **id != p.anchor) {
            agent_slot.insert(*id, next);
            next += 3;
        }
        let mut object_slot = BTreeMap::new();
        for id in p.objects.keys() {
            object_slot.insert(*id, next);
            next += 3;
        }
        Self {
            agent_slot,
            object_slot,
            dim: next,
        }
    }
}

fn accumulate(
    h: &mut DMatrix<f64>,
    g: &mut DVector<f64>,
    e: &Vector3<f64>,
    info: &[f64; 3],
    blocks: [(Option<usize>, &Matrix3<f64>); 2],
) {
    let w = Matrix3::from_diagonal(&Vector3::new(info[0], info[1], info[2]));
    for (si, ji) in blocks.iter() {
        let Some(si) = si else { continue };
        let jtw = ji.transpose() * w;
        let gi = jtw * e;
        for r in 0..3 {
            g[si + r] += gi[r];
        }
        for (sj, jj) in blocks.iter() {
            let Some(sj) = sj else { continue };
            let block = jtw * *jj;
            for r in 0..3 {
                for c in 0..3 {
                    h[(si + r, sj + c)] += block[(r, c)];
                }
            }
        }
    }
}

impl PoseGraphProblem {
    fn normal_equations(&self, layout: &Layout) -> (DMatrix<f64>, DVector<f64>) {
        let mut h = DMatrix::zeros(layout.dim, layout.dim);
        let mut g = DVector::zeros(layout.dim);
        for e in &self.obs_edges {
            let (r, ja, jx) = se2_residual_jacobians(&e.measurement, &self.agents[&e.agent], &self.objects[&e.object]);
            accumulate(
                &mut h,
                &mut g,
                &r,
                &e.information,
                [
                    (layout.agent_slot.get(&e.agent).copied(), &ja),
                    (layout.object_slot.get(&e.object).copied(), &jx),
                ],
            );
        }
        for e in &self.agent_edges {
            let (r, ja, jx) = se2_residual_jacobians(&e.measurement, &self.agents[&e.from], &self.agents[&e.to]);
            accumulate(
                &mut h,
                &mut g,
                &r,
                &e.information,
                [
                    (layout.agent_slot.get(&e.from).copied(), &ja),
                    (layout.agent_slot.get(&e.to).copied(), &jx),
                ],
            );
        }
        (h, g)
    }

    fn stepped(&self, layout: &Layout, delta: &DVector<f64>) -> PoseGraphProblem {
        let mut next = self.clone();
        let bump = |p: &Pose2, s: usize| Pose2::new(p.x + delta[s], p.y + delta[s + 1], p.theta + delta[s + 2]);
        for (id, &s) in &layout.agent_slot {
            let p = next.agents.get_mut(id).expect("agent slot");
            *p = bump(p, s);
        }
        for (id, &s) in &layout.object_slot {
            let p = next.objects.get_mut(id).expect("object slot");
            *p = bump(p, s);
        }
        next
    }

    /// Minimizes [`total_cost`](Self::total_cost) with Levenberg–Marquardt, anchor fixed.
    ///
    /// Damping follows Marquardt's diagonal scaling, divided by 10 after an accepted step and
    /// multiplied by 10 after a rejected one.
    pub fn solve_lm(&self, opts: &SolverOptions) -> Result<(PoseGraphProblem, SolveReport)> {
        self.validate()?;
        opts.validate()?;
        let layout = Layout::new(self);
        let mut current = self.clone();
        let mut cost = current.total_cost();
        let initial_cost = cost;
        let mut trace = vec![cost];
        let mut damping = opts.init_damping;
        let mut termination = Termination::MaxIterations;
        let mut iterations = 0;

        if layout.dim == 0 {
            return Ok((
                current,
                SolveReport {
                    iterations: 0,
                    initial_cost,
                    final_cost: cost,
                    converged: true,
                    termination: Termination::GradientTolerance,
                    cost_trace: trace,
                },
            ));
        }

        'outer: while iterations < opts.max_iter {
            let (h, g) = current.normal_equations(&layout);
            if g.amax() < opts.grad_tol {
                termination = Termination::GradientTolerance;
                break;
            }
            iterations += 1;
            let mut factorized_once = false;
            loop {
                if damping > MAX_DAMPING {
                    if factorized_once {
                        termination = Termination::Stalled;
                        break 'outer;
                    }
                    return Err(Error::SingularSystem {
                        iterations,
                        damping,
                        cost,
                    });
                }
                let mut a = h.clone();
                for i in 0..layout.dim {
                    a[(i, i)] += damping * h[(i, i)].max(1e-9);
                }
                let Some(chol) = a.cholesky() else {
                    damping *= 10.0;
                    continue;
                };
                factorized_once = true;
                let delta = chol.solve(&(-&g));
                let candidate = current.stepped(&layout, &delta);
                let new_cost = candidate.total_cost();
                if new_cost.is_finite() && new_cost <= cost {
                    let rel = if cost > 0.0 { (cost - new_cost) / cost } else { 0.0 };
                    current = candidate;
                    cost = new_cost;
                    trace.push(cost);
                    damping = (damping / 10.0).max(1e-15);
                    if rel < opts.cost_tol {
                        termination = Termination::CostTolerance;
                        break 'outer;
                    }
                    break;
                }
                damping *= 10.0;
            }
        }

        let converged = termination != Termination::MaxIterations;
        Ok((
            current,
            SolveReport {
                iterations,
                initial_cost,
                final_cost: cost,
                converged,
                termination,
                cost_trace: trace,
            },
        ))
    }
}

/// `ξ′_{j→i} = ξ_i⁻¹ ∘ ξ′_j`.
pub fn corrected_relative_pose(xi_i: &Pose2, xi_j_opt: &Pose2) -> Pose2 {
    xi_i.relative(xi_j_opt)
}
