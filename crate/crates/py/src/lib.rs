//! Python bindings: binary16 words, toy datasets and networks, FaR
//! compilation and blob validation, cycle counts and bit-flip attacks.

use faraccel::attack::{self, AttackConfig, Objective};
use faraccel::compiler::{emit_blobs, harden_network, FarAction, FarConfig, ValidationLimits};
use faraccel::model::{synth_dataset, train_toy, DatasetSpec, TrainConfig};
use faraccel::system::{schedule_layer, validate_and_enable, EnableDecision, GemmShape, LayerWorkload, SystemConfig};
use faraccel::{Activation, Batch, DpeConfig, Precision, ToyNetwork};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn activation(name: &str) -> PyResult<Activation> {
    match name {
        "identity" => Ok(Activation::Identity),
        "relu" => Ok(Activation::Relu),
        "gelu" => Ok(Activation::Gelu),
        _ => Err(err(format!("unknown activation {name:?}"))),
    }
}

/// One IEEE binary16 word.
#[pyclass(name = "Fp16", frozen, eq, hash)]
#[derive(PartialEq, Eq, Hash)]
struct PyFp16(faraccel::Fp16);

#[pymethods]
impl PyFp16 {
    /// Round a float to nearest, ties to even.
    #[new]
    fn new(value: f64) -> Self {
        Self(faraccel::Fp16::from_f64(value))
    }

    #[staticmethod]
    fn from_bits(bits: u16) -> Self {
        Self(faraccel::Fp16(bits))
    }

    #[getter]
    fn bits(&self) -> u16 {
        self.0 .0
    }

    fn __float__(&self) -> f64 {
        self.0.to_f64()
    }

    fn __add__(&self, other: &Self) -> Self {
        Self(self.0.add(other.0))
    }

    fn __mul__(&self, other: &Self) -> Self {
        Self(self.0.mul(other.0))
    }

    fn flip_bit(&self, pos: u32) -> PyResult<Self> {
        self.0.flip_bit(pos).map(Self).map_err(err)
    }

    fn is_finite(&self) -> bool {
        self.0.is_finite()
    }

    fn __repr__(&self) -> String {
        format!("Fp16({} /* {:#06x} */)", self.0.to_f64(), self.0 .0)
    }
}

/// Labelled samples, row-major.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset(Batch);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (classes=4, informative_dims=24, dead_dims=8, samples_per_class=150, separation=3.5, offset=2.0, noise=1.0, seed=7))]
    #[allow(clippy::too_many_arguments)]
    fn synth(
        classes: usize,
        informative_dims: usize,
        dead_dims: usize,
        samples_per_class: usize,
        separation: f64,
        offset: f64,
        noise: f64,
        seed: u64,
    ) -> Self {
        let spec = DatasetSpec { classes, informative_dims, dead_dims, samples_per_class, separation, offset, noise, seed };
        Self(synth_dataset(&spec))
    }

    #[new]
    fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<Self> {
        let dim = inputs.first().map_or(0, Vec::len);
        if inputs.iter().any(|r| r.len() != dim) {
            return Err(err("rows differ in length"));
        }
        Batch::new(dim, inputs.concat(), labels).map(Self).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels.clone()
    }

    #[getter]
    fn inputs(&self) -> Vec<Vec<f64>> {
        (0..self.0.len()).map(|i| self.0.input(i).to_vec()).collect()
    }

    /// First `n` samples and the rest.
    fn split(&self, n: usize) -> (Self, Self) {
        let (a, b) = self.0.split_at(n);
        (Self(a), Self(b))
    }
}

/// Dense layers with binary16 weights.
#[pyclass(name = "Network", frozen)]
struct PyNetwork(ToyNetwork);

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    #[pyo3(signature = (dims, activation="relu", seed=0))]
    fn random(dims: Vec<usize>, activation: &str, seed: u64) -> PyResult<Self> {
        ToyNetwork::random(&dims, self::activation(activation)?, seed).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_fmdl(data: &[u8]) -> PyResult<Self> {
        faraccel::formats::decode_fmdl(data).map(Self).map_err(err)
    }

    fn to_fmdl<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &faraccel::formats::encode_fmdl(&self.0))
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.0.input_dim()];
        d.extend(self.0.layers().iter().map(|l| l.fan_out()));
        d
    }

    /// Weight words of one layer, row-major, as raw bits.
    fn weight_bits(&self, layer: usize) -> PyResult<Vec<u16>> {
        let l = self.0.layers().get(layer).ok_or_else(|| err("no such layer"))?;
        Ok(l.weights().iter().map(|w| w.0).collect())
    }

    #[pyo3(signature = (data, epochs=60, learning_rate=0.1, batch_size=32, momentum=0.9, seed=0))]
    fn train(&self, data: &PyDataset, epochs: usize, learning_rate: f64, batch_size: usize, momentum: f64, seed: u64) -> PyResult<Self> {
        let cfg = TrainConfig { epochs, learning_rate, batch_size, momentum, seed };
        train_toy(&self.0, &data.0, &cfg).map(Self).map_err(err)
    }

    #[pyo3(signature = (data, half=true))]
    fn accuracy(&self, data: &PyDataset, half: bool) -> PyResult<f64> {
        let p = if half { Precision::Half } else { Precision::Wide };
        self.0.accuracy(&data.0, p).map_err(err)
    }

    /// Rank on `data` and compile every layer.
    #[pyo3(signature = (data, budget=0.15, div=2, emit_skips=false))]
    fn harden(&self, data: &PyDataset, budget: f64, div: u8, emit_skips: bool) -> PyResult<PyHardened> {
        let cfg = FarConfig { budget_fraction: budget, div, emit_skips, ..Default::default() };
        harden_network(&self.0, &data.0, &cfg).map(|(h, _)| PyHardened(h)).map_err(err)
    }

    /// The same network deployed without FaR.
    fn baseline(&self) -> PyHardened {
        PyHardened(faraccel::HardenedNetwork::baseline(&self.0))
    }
}

/// A network as deployed: DRAM weights plus per-layer FaRMap and shadow store.
#[pyclass(name = "HardenedNetwork", frozen)]
struct PyHardened(faraccel::HardenedNetwork);

#[pymethods]
impl PyHardened {
    fn __len__(&self) -> usize {
        self.0.layers.len()
    }

    /// The attacker-visible DRAM image.
    fn dram(&self) -> PyNetwork {
        PyNetwork(self.0.dram_network())
    }

    /// (FMAP, FSHD) blobs of one layer.
    fn blobs<'py>(&self, py: Python<'py>, layer: usize) -> PyResult<(Bound<'py, PyBytes>, Bound<'py, PyBytes>)> {
        let h = self.0.layers.get(layer).ok_or_else(|| err("no such layer"))?;
        let (m, s) = emit_blobs(h);
        Ok((PyBytes::new(py, &m), PyBytes::new(py, &s)))
    }

    /// FaRMap entries of one layer as (row, lane, kind, donor, div, shadow_addr).
    fn entries(&self, layer: usize) -> PyResult<Vec<(usize, usize, &'static str, Option<usize>, Option<u8>, Option<usize>)>> {
        let h = self.0.layers.get(layer).ok_or_else(|| err("no such layer"))?;
        Ok(h.farmap
            .entries
            .iter()
            .map(|e| match e.action {
                FarAction::Skip => (e.row, e.lane, "skip", None, None, None),
                FarAction::Rewire { donor, div, shadow_addr } => (e.row, e.lane, "rewire", Some(donor), Some(div), Some(shadow_addr)),
            })
            .collect())
    }

    #[pyo3(signature = (data, half=true))]
    fn accuracy(&self, data: &PyDataset, half: bool) -> PyResult<f64> {
        let p = if half { Precision::Half } else { Precision::Wide };
        self.0.accuracy(&data.0, p).map_err(err)
    }

    /// Progressive bit search (or random flips) on a copy of this network.
    #[pyo3(signature = (data, flip_budget=20, top_n=10, objective_accuracy=0.35, seed=0, random=false))]
    fn attack<'py>(
        &self,
        py: Python<'py>,
        data: &PyDataset,
        flip_budget: usize,
        top_n: usize,
        objective_accuracy: f64,
        seed: u64,
        random: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let cfg = AttackConfig { flip_budget, top_n, objective: Objective::AccuracyAtMost(objective_accuracy), seed, ..Default::default() };
        let mut net = self.0.clone();
        let trace = if random { attack::run_random_attack(&mut net, &data.0, &cfg) } else { attack::run_attack(&mut net, &data.0, &cfg) }
            .map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("success", trace.header.success)?;
        d.set_item("flips_to_objective", trace.flips_to_objective())?;
        let flips: Vec<(usize, usize, usize, u32, f64, f64)> =
            trace.flips.iter().map(|f| (f.layer, f.row, f.lane, f.bit, f.loss, f.accuracy)).collect();
        d.set_item("flips", flips)?;
        let (loss, acc) = trace.final_state();
        d.set_item("final_loss", loss)?;
        d.set_item("final_accuracy", acc)?;
        Ok(d)
    }
}

/// Validate one layer's blobs against its DRAM weights. Returns
/// `(True, None)` when FaR may be enabled, else `(False, reason)`.
#[pyfunction]
fn validate_blobs(network: &PyNetwork, layer: usize, fmap: &[u8], fshd: &[u8]) -> PyResult<(bool, Option<String>)> {
    let l = network.0.layers().get(layer).ok_or_else(|| err("no such layer"))?;
    let (_, d) = validate_and_enable(l, layer as u16, fmap, fshd, ValidationLimits::default());
    Ok(match d {
        EnableDecision::Enabled => (true, None),
        EnableDecision::Disabled { reason, .. } => (false, Some(reason)),
    })
}

/// DPE cycles for a GEMM under budget-saturated FaR, plus the system makespan.
#[pyfunction]
#[pyo3(signature = (m, k, n, budget=0.15, div=2, overlap=true, dual_port=true, pe_count=4, dma_bytes_per_cycle=64))]
#[allow(clippy::too_many_arguments)]
fn gemm_cycles<'py>(
    py: Python<'py>,
    m: usize,
    k: usize,
    n: usize,
    budget: f64,
    div: u8,
    overlap: bool,
    dual_port: bool,
    pe_count: usize,
    dma_bytes_per_cycle: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let sys = SystemConfig {
        pe_count,
        dma_bytes_per_cycle,
        dpe: DpeConfig { overlap_select: overlap, dual_port_weights: dual_port, ..Default::default() },
        ..Default::default()
    };
    let shape = GemmShape::new("gemm", m, k, n);
    let base = schedule_layer(&LayerWorkload::baseline(shape.clone()), &sys).map_err(err)?;
    let far = if budget > 0.0 {
        schedule_layer(&LayerWorkload::budget_saturated(shape, budget, div), &sys).map_err(err)?
    } else {
        base.clone()
    };
    let d = PyDict::new(py);
    d.set_item("baseline_compute", base.compute_cycles)?;
    d.set_item("far_compute", far.compute_cycles)?;
    d.set_item("baseline_makespan", base.makespan)?;
    d.set_item("far_makespan", far.makespan)?;
    Ok(d)
}

#[pymodule(name = "faraccel")]
fn faraccel_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFp16>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyHardened>()?;
    m.add_function(wrap_pyfunction!(validate_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(gemm_cycles, m)?)?;
    m.add("TILE", faraccel::TILE)?;
    Ok(())
}
