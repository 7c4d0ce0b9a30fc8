//! Python bindings: grid maps with expert labels, datasets, models,
//! training, rollouts and metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyFloatingPointError, PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use roverplan::eval::{evaluate, MetricsReport};
use roverplan::gridworld::{
    build_dataset, generate_map, generate_maps, Dataset, GridMap, MapRecord, Pos,
};
use roverplan::models::{Arch, Model, ModelSpec};
use roverplan::planner::{plan_multi, ExpertPolicy, Policy, Trajectory};
use roverplan::training::{train, Hyperparams};
use roverplan::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::NonFinite { .. } => PyFloatingPointError::new_err(e.to_string()),
        Error::InvalidSpec(_)
        | Error::Usage(_)
        | Error::Precondition(_)
        | Error::Dimension { .. }
        | Error::Empty(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for roverplan::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Occupancy grid with a goal. Cells are `.` free, `#` obstacle, `G` goal.
#[pyclass(name = "GridMap", module = "roverplan_py", frozen)]
struct PyGridMap {
    rec: MapRecord,
}

impl PyGridMap {
    fn wrap(map: GridMap) -> Self {
        PyGridMap {
            rec: MapRecord::from_map(map),
        }
    }

    fn grid<T>(&self, f: impl Fn(Pos) -> T) -> Vec<Vec<T>> {
        (0..self.rec.height())
            .map(|r| (0..self.rec.width()).map(|c| f(Pos::new(r, c))).collect())
            .collect()
    }
}

#[pymethods]
impl PyGridMap {
    #[new]
    fn new(rows: Vec<String>) -> PyResult<Self> {
        let rows: Vec<&str> = rows.iter().map(String::as_str).collect();
        Ok(PyGridMap::wrap(GridMap::from_ascii(&rows).py()?))
    }

    /// Random map with roughly `density` obstacles, deterministic per seed.
    #[staticmethod]
    #[pyo3(signature = (seed, height=16, width=16, density=0.2))]
    fn generate(seed: u64, height: usize, width: usize, density: f64) -> PyResult<Self> {
        Ok(PyGridMap::wrap(
            generate_map(seed, height, width, density).py()?,
        ))
    }

    #[getter]
    fn height(&self) -> usize {
        self.rec.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.rec.width()
    }

    #[getter]
    fn goal(&self) -> (usize, usize) {
        let g = self.rec.map.goal();
        (g.row, g.col)
    }

    fn is_free(&self, row: usize, col: usize) -> bool {
        let p = Pos::new(row, col);
        self.rec.map.in_bounds(p) && self.rec.map.is_free(p)
    }

    fn to_ascii(&self) -> Vec<String> {
        let goal = self.rec.map.goal();
        self.grid(|p| match p {
            _ if p == goal => 'G',
            _ if self.rec.map.is_obstacle(p) => '#',
            _ => '.',
        })
        .into_iter()
        .map(String::from_iter)
        .collect()
    }

    /// 8-connected step distance to the goal, None where unreachable.
    fn distances(&self) -> Vec<Vec<Option<u16>>> {
        self.grid(|p| self.rec.distances.get(p))
    }

    /// Expert action ID per cell (smallest optimal ID), None if unlabeled.
    fn labels(&self) -> Vec<Vec<Option<u8>>> {
        self.grid(|p| self.rec.labels.label(p).map(|a| a.id()))
    }

    /// All optimal action IDs at a cell.
    fn optimal_actions(&self, row: usize, col: usize) -> PyResult<Vec<u8>> {
        let p = Pos::new(row, col);
        if !self.rec.map.in_bounds(p) {
            return Err(PyValueError::new_err(format!(
                "({row}, {col}) is out of bounds"
            )));
        }
        Ok(self
            .rec
            .labels
            .optimal_set(p)
            .iter()
            .map(|a| a.id())
            .collect())
    }

    fn __repr__(&self) -> String {
        let (r, c) = self.goal();
        format!(
            "GridMap({}x{}, goal=({r}, {c}), obstacles={})",
            self.height(),
            self.width(),
            self.rec.map.obstacle_count()
        )
    }
}

/// Labeled maps split into train and test at map granularity.
#[pyclass(name = "Dataset", module = "roverplan_py", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (seed=0, count=100, size=16, density=0.2, test_fraction=1.0/7.0))]
    fn generate(
        seed: u64,
        count: usize,
        size: usize,
        density: f64,
        test_fraction: f64,
    ) -> PyResult<Self> {
        let maps = generate_maps(seed, count, size, size, density).py()?;
        Ok(PyDataset {
            inner: build_dataset(maps, seed, test_fraction).py()?,
        })
    }

    #[staticmethod]
    fn from_maps(maps: Vec<PyRef<'_, PyGridMap>>, seed: u64, test_fraction: f64) -> PyResult<Self> {
        let maps: Vec<GridMap> = maps.iter().map(|m| m.rec.map.clone()).collect();
        Ok(PyDataset {
            inner: build_dataset(maps, seed, test_fraction).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = Dataset::load(&path).py()?;
        Ok(PyDataset { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner
            .save(&path, serde_json::json!({ "source": "python" }))
            .py()
            .map(|_| ())
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }

    #[getter]
    fn num_samples(&self) -> usize {
        self.inner.entries.len()
    }

    #[getter]
    fn train_maps(&self) -> Vec<usize> {
        self.inner.map_ids(roverplan::gridworld::Split::Train)
    }

    #[getter]
    fn test_maps(&self) -> Vec<usize> {
        self.inner.map_ids(roverplan::gridworld::Split::Test)
    }

    /// (height, width, channels)
    #[getter]
    fn input_shape(&self) -> PyResult<(usize, usize, usize)> {
        self.inner.input_shape().py()
    }

    fn map(&self, i: usize) -> PyResult<PyGridMap> {
        let rec = self.record(i)?;
        Ok(PyGridMap { rec: rec.clone() })
    }

    /// Expert policy metrics, an upper bound for any learned model.
    #[pyo3(signature = (starts_per_map=16, seed=0))]
    fn evaluate_expert<'py>(
        &self,
        py: Python<'py>,
        starts_per_map: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let report = py
            .detach(|| {
                evaluate(
                    &ExpertPolicy,
                    &self.inner,
                    "oracle",
                    seed,
                    starts_per_map,
                    Vec::new(),
                )
            })
            .py()?;
        metrics_dict(py, &report)
    }
}

impl PyDataset {
    fn record(&self, i: usize) -> PyResult<&MapRecord> {
        self.inner.records.get(i).ok_or_else(|| {
            PyValueError::new_err(format!(
                "map {i} out of range (dataset has {})",
                self.inner.records.len()
            ))
        })
    }
}

fn metrics_dict<'py>(py: Python<'py>, m: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("arch", &m.arch)?;
    d.set_item("seed", m.seed)?;
    d.set_item("acc_train", m.acc_train)?;
    d.set_item("acc_test", m.acc_test)?;
    d.set_item("strict_acc_train", m.strict_acc_train)?;
    d.set_item("strict_acc_test", m.strict_acc_test)?;
    d.set_item("sr_train", m.sr_train)?;
    d.set_item("sr_test", m.sr_test)?;
    d.set_item("starts_per_map", m.starts_per_map)?;
    Ok(d)
}

fn trajectory_dict<'py>(py: Python<'py>, t: &Trajectory) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("outcome", format!("{:?}", t.outcome))?;
    d.set_item("reached", roverplan::planner::adjudicate(t))?;
    d.set_item("steps", t.steps)?;
    d.set_item(
        "cells",
        t.cells.iter().map(|p| (p.row, p.col)).collect::<Vec<_>>(),
    )?;
    d.set_item(
        "actions",
        t.actions.iter().map(|a| a.id()).collect::<Vec<_>>(),
    )?;
    Ok(d)
}

/// A policy network: `dbcnn`, `vin`, `resnet` or `dcnn`.
#[pyclass(name = "Model", module = "roverplan_py")]
struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (arch, height, width, channels=2, seed=0, coord_augment=false, vin_iterations=None))]
    fn new(
        arch: &str,
        height: usize,
        width: usize,
        channels: usize,
        seed: u64,
        coord_augment: bool,
        vin_iterations: Option<usize>,
    ) -> PyResult<Self> {
        let arch: Arch = arch.parse().py()?;
        let mut spec =
            ModelSpec::new(arch, height, width, channels).with_coord_augment(coord_augment);
        if let Some(k) = vin_iterations {
            spec = spec.with_vin_iterations(k);
        }
        Ok(PyModel {
            inner: Model::build(spec, seed).py()?,
        })
    }

    /// Model sized for the dataset's input shape.
    #[staticmethod]
    #[pyo3(signature = (arch, dataset, seed=0, coord_augment=false))]
    fn for_dataset(
        arch: &str,
        dataset: &PyDataset,
        seed: u64,
        coord_augment: bool,
    ) -> PyResult<Self> {
        let (h, w, c) = dataset.inner.input_shape().py()?;
        PyModel::new(arch, h, w, c, seed, coord_augment, None)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: Model::load(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    #[getter]
    fn arch(&self) -> &'static str {
        self.inner.spec().arch.as_str()
    }

    #[getter]
    fn fingerprint(&self) -> u64 {
        self.inner.fingerprint()
    }

    #[getter]
    fn forward_passes(&self) -> usize {
        self.inner.forward_passes()
    }

    /// Trains in place; returns one dict per epoch.
    #[pyo3(signature = (dataset, epochs=10, lr=None, l2=1e-4, batch_size=64, seed=0))]
    fn fit<'py>(
        &mut self,
        py: Python<'py>,
        dataset: &PyDataset,
        epochs: usize,
        lr: Option<f32>,
        l2: f32,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let d = Hyperparams::for_arch(self.inner.spec().arch);
        let hyper = Hyperparams {
            epochs,
            batch_size,
            learning_rate: lr.unwrap_or(d.learning_rate),
            lambda: l2,
            seed,
            ..d
        };
        let model = &mut self.inner;
        let reports = py.detach(|| train(model, &dataset.inner, &hyper)).py()?;
        reports
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("epoch", r.epoch)?;
                d.set_item("loss", r.loss)?;
                d.set_item("accuracy", r.accuracy)?;
                d.set_item("seconds", r.seconds)?;
                d.set_item("grad_norm", r.grad_norm_mean)?;
                Ok(d)
            })
            .collect()
    }

    /// Scores of the eight actions at every cell, from one forward pass.
    fn q_values(&self, dataset: &PyDataset, map_id: usize) -> PyResult<Vec<Vec<[f32; 8]>>> {
        let rec = dataset.record(map_id)?;
        let q = self.inner.qmap(rec).py()?;
        Ok((0..q.height())
            .map(|r| (0..q.width()).map(|c| *q.get(Pos::new(r, c))).collect())
            .collect())
    }

    /// Greedy rollouts from each start toward the map's goal.
    fn plan<'py>(
        &self,
        py: Python<'py>,
        dataset: &PyDataset,
        map_id: usize,
        starts: Vec<(usize, usize)>,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let rec = dataset.record(map_id)?;
        let starts: Vec<Pos> = starts.into_iter().map(Pos::from).collect();
        let trajs = plan_multi(&self.inner, rec, &starts).py()?;
        trajs.iter().map(|t| trajectory_dict(py, t)).collect()
    }

    #[pyo3(signature = (dataset, starts_per_map=16, seed=0))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        dataset: &PyDataset,
        starts_per_map: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let arch = self.arch();
        let report = py
            .detach(|| {
                evaluate(
                    &self.inner,
                    &dataset.inner,
                    arch,
                    seed,
                    starts_per_map,
                    Vec::new(),
                )
            })
            .py()?;
        metrics_dict(py, &report)
    }

    fn __repr__(&self) -> String {
        let s = self.inner.spec();
        format!(
            "Model(arch={:?}, input={}x{}x{})",
            s.arch.as_str(),
            s.height,
            s.width,
            s.channels
        )
    }
}

#[pymodule]
fn roverplan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGridMap>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add("ACTIONS", ["E", "S", "W", "N", "SE", "NE", "SW", "NW"])?;
    Ok(())
}
