//! Python bindings for the collabcal core library.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;

use collabcal::config::RunConfig;
use collabcal::diffusion::{self, SamplerKind, SamplerOptions};
use collabcal::evaluation::{self, PipelineFlags};
use collabcal::geometry;
use collabcal::matching;
use collabcal::posegraph::{PoseGraphProblem, SolverOptions};
use collabcal::scenario::{self, rng_from_seed};
use collabcal::tensor::Tensor3;

fn value_err(e: collabcal::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn line(values: Vec<f64>) -> PyResult<Tensor3> {
    Tensor3::from_vec(1, 1, values.len(), values).map_err(value_err)
}

#[pyclass(name = "Pose2", module = "collabcal_py", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyPose2(geometry::Pose2);

#[pymethods]
impl PyPose2 {
    #[new]
    fn new(x: f64, y: f64, theta: f64) -> PyResult<Self> {
        geometry::Pose2::try_new(x, y, theta).map(Self).map_err(value_err)
    }

    #[getter]
    fn x(&self) -> f64 {
        self.0.x
    }

    #[getter]
    fn y(&self) -> f64 {
        self.0.y
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta
    }

    fn compose(&self, other: &PyPose2) -> PyPose2 {
        PyPose2(self.0.compose(&other.0))
    }

    fn inverse(&self) -> PyPose2 {
        PyPose2(self.0.inverse())
    }

    /// Pose of `other` expressed in this frame.
    fn relative(&self, other: &PyPose2) -> PyPose2 {
        PyPose2(self.0.relative(&other.0))
    }

    fn transform_point(&self, x: f64, y: f64) -> (f64, f64) {
        let [px, py] = self.0.transform_point([x, y]);
        (px, py)
    }

    fn __repr__(&self) -> String {
        format!("Pose2(x={}, y={}, theta={})", self.0.x, self.0.y, self.0.theta)
    }
}

#[pyclass(name = "DetectedBox", module = "collabcal_py", frozen, from_py_object)]
#[derive(Clone)]
struct PyDetectedBox(geometry::DetectedBox);

#[pymethods]
impl PyDetectedBox {
    #[new]
    #[pyo3(signature = (center, half_length, half_width, sigma = (0.1, 0.1, 0.01), confidence = 1.0))]
    fn new(
        center: &PyPose2,
        half_length: f64,
        half_width: f64,
        sigma: (f64, f64, f64),
        confidence: f64,
    ) -> PyResult<Self> {
        geometry::DetectedBox::new(
            center.0,
            half_length,
            half_width,
            [sigma.0, sigma.1, sigma.2],
            confidence,
        )
        .map(Self)
        .map_err(value_err)
    }

    #[getter]
    fn center(&self) -> PyPose2 {
        PyPose2(self.0.center)
    }

    #[getter]
    fn confidence(&self) -> f64 {
        self.0.confidence
    }

    fn area(&self) -> f64 {
        self.0.area()
    }

    fn corners(&self) -> Vec<(f64, f64)> {
        self.0.corners().iter().map(|c| (c[0], c[1])).collect()
    }

    fn iou(&self, other: &PyDetectedBox) -> f64 {
        geometry::rotated_iou(&self.0, &other.0)
    }

    fn __repr__(&self) -> String {
        let c = self.0.center;
        format!(
            "DetectedBox(center=({}, {}, {}), half_length={}, half_width={})",
            c.x, c.y, c.theta, self.0.half_length, self.0.half_width
        )
    }
}

#[pyclass(name = "DiffusionSchedule", module = "collabcal_py", frozen)]
struct PySchedule(diffusion::DiffusionSchedule);

impl PySchedule {
    fn check(&self, t: usize, allow_zero: bool) -> PyResult<()> {
        if t > self.0.steps() || (t == 0 && !allow_zero) {
            return Err(PyIndexError::new_err(format!("timestep {t} outside the schedule")));
        }
        Ok(())
    }
}

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (steps = 500, beta_start = 1e-4, beta_end = 0.02))]
    fn new(steps: usize, beta_start: f64, beta_end: f64) -> PyResult<Self> {
        diffusion::make_schedule(steps, beta_start, beta_end)
            .map(Self)
            .map_err(value_err)
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.steps()
    }

    fn beta(&self, t: usize) -> PyResult<f64> {
        self.check(t, false)?;
        Ok(self.0.beta(t))
    }

    fn alpha_bar(&self, t: usize) -> PyResult<f64> {
        self.check(t, true)?;
        Ok(self.0.alpha_bar(t))
    }

    /// `√ᾱ_t·x0 + √(1−ᾱ_t)·eps` elementwise.
    fn forward_sample(&self, x0: Vec<f64>, t: usize, eps: Vec<f64>) -> PyResult<Vec<f64>> {
        let out = diffusion::forward_sample(&line(x0)?, t, &line(eps)?, &self.0).map_err(value_err)?;
        Ok(out.into_vec())
    }

    fn timesteps(&self, n: usize) -> PyResult<Vec<usize>> {
        diffusion::timesteps(self.0.steps(), n).map_err(value_err)
    }
}

#[pyfunction]
fn wrap_angle(a: f64) -> PyResult<f64> {
    geometry::wrap_angle(a).map_err(value_err)
}

#[pyfunction]
fn rotated_iou(a: &PyDetectedBox, b: &PyDetectedBox) -> f64 {
    geometry::rotated_iou(&a.0, &b.0)
}

#[pyfunction]
fn edge_consistency(t_pm: &PyPose2, t_qn: &PyPose2) -> f64 {
    matching::edge_consistency(&t_pm.0.to_matrix(), &t_qn.0.to_matrix())
}

/// Maximum-weight assignment with pairs scoring below `tau1` dropped, as `(row, col, score)`.
#[pyfunction]
#[pyo3(signature = (scores, tau1 = 0.5))]
fn optimal_assignment(scores: Vec<Vec<f64>>, tau1: f64) -> PyResult<Vec<(usize, usize, f64)>> {
    if let Some(first) = scores.first() {
        if scores.iter().any(|r| r.len() != first.len()) {
            return Err(PyValueError::new_err("score rows differ in length"));
        }
    }
    let a = matching::optimal_assignment(&scores, tau1);
    Ok(a.pairs.iter().map(|p| (p.p, p.q, p.score)).collect())
}

/// Draws `n` samples from N(mu0, sigma0²) through the reverse chain of an analytic denoiser.
#[pyfunction]
#[pyo3(signature = (mu0, sigma0, n, schedule, sampler = "ddpm", steps = 8, eta = 0.0, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn sample_gaussian(
    mu0: f64,
    sigma0: f64,
    n: usize,
    schedule: &PySchedule,
    sampler: &str,
    steps: usize,
    eta: f64,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let kind = match sampler {
        "ddpm" => SamplerKind::Ddpm,
        "ddim" => SamplerKind::Ddim,
        other => return Err(PyValueError::new_err(format!("unknown sampler {other:?}"))),
    };
    let den = diffusion::analytic_gaussian_denoiser(mu0, sigma0, &schedule.0).map_err(value_err)?;
    let opts = SamplerOptions {
        kind,
        n_steps: steps,
        eta,
        ..Default::default()
    };
    let x = diffusion::sample(&den, &[], (1, 1, n), &schedule.0, &opts, &mut rng_from_seed(seed)).map_err(value_err)?;
    Ok(x.into_vec())
}

fn run_config(config_toml: Option<&str>) -> PyResult<RunConfig> {
    match config_toml {
        Some(text) => RunConfig::from_toml_str(text).map_err(value_err),
        None => Ok(RunConfig::default()),
    }
}

/// Generates a scene and returns it as JSON.
#[pyfunction]
#[pyo3(signature = (seed, config_toml = None))]
fn generate_scene(seed: u64, config_toml: Option<&str>) -> PyResult<String> {
    let cfg = run_config(config_toml)?;
    let scene = scenario::generate_scene(&cfg.scene, seed).map_err(value_err)?;
    scene.to_json().map_err(value_err)
}

/// Runs one calibration trial and returns its metrics by name.
#[pyfunction]
#[pyo3(signature = (seed, pcm = true, tcm = true, config_toml = None))]
fn run_trial(seed: u64, pcm: bool, tcm: bool, config_toml: Option<&str>) -> PyResult<BTreeMap<String, f64>> {
    let cfg = run_config(config_toml)?;
    let r = evaluation::run_trial(&cfg.pipeline(), PipelineFlags { pcm, tcm }, seed).map_err(value_err)?;
    let mut out: BTreeMap<String, f64> = r.metrics().iter().map(|&(k, v)| (k.to_owned(), v)).collect();
    out.insert("solver_iterations".into(), r.solver_iterations as f64);
    Ok(out)
}

/// Solves a pose graph given in edge-list text; returns the optimized graph text and final cost.
#[pyfunction]
fn solve_pose_graph(edge_list: &str) -> PyResult<(String, f64)> {
    let problem = PoseGraphProblem::from_edge_list(edge_list).map_err(value_err)?;
    let (solved, report) = problem.solve_lm(&SolverOptions::default()).map_err(value_err)?;
    Ok((solved.to_edge_list(), report.final_cost))
}

#[pymodule]
fn collabcal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPose2>()?;
    m.add_class::<PyDetectedBox>()?;
    m.add_class::<PySchedule>()?;
    m.add_function(wrap_pyfunction!(wrap_angle, m)?)?;
    m.add_function(wrap_pyfunction!(rotated_iou, m)?)?;
    m.add_function(wrap_pyfunction!(edge_consistency, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_assignment, m)?)?;
    m.add_function(wrap_pyfunction!(sample_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(run_trial, m)?)?;
    m.add_function(wrap_pyfunction!(solve_pose_graph, m)?)?;
    Ok(())
}
