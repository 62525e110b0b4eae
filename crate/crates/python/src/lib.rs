//! Python bindings: transforms, model configs and their analytic costs,
//! layouts, the encoder, recall training and the gradient suite.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fnetlab::bench::{estimate_peak_memory, flops_forward, FlopConvention};
use fnetlab::gradsuite::run_gradient_suite;
use fnetlab::model::{
    build_layout as core_build_layout, count_params, EncoderInput, Layout, ModelConfig, Preset, Variant,
};
use fnetlab::numerics::Tensor;
use fnetlab::trainer::{train, RecallTask, Task, TrainConfig, TrainOptions};
use fnetlab::transforms::{self, ComplexSequence, DftMethod};
use fnetlab::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| PyValueError::new_err(e.to_string()))
}

/// Unnormalized DFT of `re + i·im`; power-of-two lengths only.
#[pyfunction]
#[pyo3(signature = (re, im=None))]
fn fft(re: Vec<f64>, im: Option<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let x = match im {
        Some(im) => ComplexSequence::new(re, im),
        None => ComplexSequence::from_real(&re),
    }
    .map_err(err)?;
    let y = transforms::fft(&x).map_err(err)?;
    Ok((y.re().to_vec(), y.im().to_vec()))
}

#[pyfunction]
fn hadamard(x: Vec<f64>) -> PyResult<Vec<f64>> {
    transforms::hadamard(&x).map_err(err)
}

#[pyfunction]
fn hartley(x: Vec<f64>) -> PyResult<Vec<f64>> {
    transforms::hartley(&x).map_err(err)
}

/// Orthonormal DCT-II.
#[pyfunction]
fn dct2(x: Vec<f64>) -> PyResult<Vec<f64>> {
    transforms::dct2(&x).map_err(err)
}

/// `Re(F_seq F_hidden x)` of an `n × d` matrix given as rows.
#[pyfunction]
#[pyo3(signature = (rows, method="fft"))]
fn fourier_mix(rows: Vec<Vec<f64>>, method: &str) -> PyResult<Vec<Vec<f64>>> {
    let method = match method {
        "fft" => DftMethod::Fft,
        "matrix" => DftMethod::Matrix,
        other => return Err(PyValueError::new_err(format!("unknown method `{other}`"))),
    };
    let x = Tensor::from_rows(&rows).map_err(err)?;
    let y = fnetlab::model::mix_fourier(&x, method).map_err(err)?;
    let d = y.last_dim();
    Ok(y.data().chunks(d).map(<[f64]>::to_vec).collect())
}

/// Mixing kind name per layer.
#[pyfunction]
fn build_layout(num_layers: usize, num_attention: usize, layout: &str) -> PyResult<Vec<String>> {
    let layout: Layout = parse(layout)?;
    let plan = core_build_layout(num_layers, num_attention, layout).map_err(err)?;
    Ok(plan.iter().map(|k| k.name().to_string()).collect())
}

/// `(component, max relative error)` for every check.
#[pyfunction]
fn gradient_suite(py: Python<'_>) -> PyResult<Vec<(String, f64)>> {
    let results = py.detach(|| run_gradient_suite(None, |_| {})).map_err(err)?;
    Ok(results.into_iter().map(|r| (r.component, r.max_rel_error)).collect())
}

#[pyclass(name = "ModelConfig", from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (seq_len=64, hidden_dim=64, num_layers=4, variant="fnet_fft"))]
    fn new(seq_len: usize, hidden_dim: usize, num_layers: usize, variant: &str) -> PyResult<Self> {
        let v: Variant = parse(variant)?;
        Ok(PyModelConfig {
            inner: ModelConfig::small(seq_len, hidden_dim, num_layers, v),
        })
    }

    /// `base`, `large`, `tiny` or `d<hidden>_l<layers>`.
    #[staticmethod]
    fn preset(name: &str, variant: &str) -> PyResult<Self> {
        let p: Preset = parse(name)?;
        let v: Variant = parse(variant)?;
        Ok(PyModelConfig {
            inner: ModelConfig::preset(p, v),
        })
    }

    #[getter]
    fn seq_len(&self) -> usize {
        self.inner.seq_len
    }

    #[getter]
    fn hidden_dim(&self) -> usize {
        self.inner.hidden_dim
    }

    #[getter]
    fn num_layers(&self) -> usize {
        self.inner.num_layers
    }

    #[getter]
    fn ff_dim(&self) -> usize {
        self.inner.ff_dim
    }

    #[setter]
    fn set_ff_dim(&mut self, v: usize) {
        self.inner.ff_dim = v;
    }

    #[getter]
    fn num_heads(&self) -> usize {
        self.inner.num_heads
    }

    #[setter]
    fn set_num_heads(&mut self, v: usize) {
        self.inner.num_heads = v;
    }

    #[getter]
    fn dropout_rate(&self) -> f64 {
        self.inner.dropout_rate
    }

    #[setter]
    fn set_dropout_rate(&mut self, v: f64) {
        self.inner.dropout_rate = v;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn mixing_plan(&self) -> Vec<String> {
        self.inner.mixing_plan.iter().map(|k| k.name().to_string()).collect()
    }

    /// Parameter counts by component.
    fn param_count<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = count_params(&self.inner);
        let d = PyDict::new(py);
        d.set_item("embeddings", c.embeddings)?;
        d.set_item("mixing", c.mixing)?;
        d.set_item("feed_forward", c.feed_forward)?;
        d.set_item("layer_norms", c.layer_norms)?;
        d.set_item("pooler", c.pooler)?;
        d.set_item("heads", c.heads)?;
        d.set_item("frozen", c.frozen)?;
        d.set_item("total", c.total)?;
        Ok(d)
    }

    /// Forward FLOPs of one example, by component plus `total`.
    fn flops<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let b = flops_forward(&self.inner, &FlopConvention::default()).map_err(err)?;
        let d = PyDict::new(py);
        for (name, v) in b.components() {
            d.set_item(name, v)?;
        }
        d.set_item("total", b.total)?;
        Ok(d)
    }

    /// Analytic peak bytes of a training step.
    fn peak_memory(&self, batch: usize) -> usize {
        estimate_peak_memory(&self.inner, batch).total
    }

    fn to_text(&self) -> String {
        self.inner.to_kv_text()
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelConfig(seq_len={}, hidden_dim={}, num_layers={}, plan={:?})",
            self.inner.seq_len,
            self.inner.hidden_dim,
            self.inner.num_layers,
            self.mixing_plan()
        )
    }
}

#[pyclass(name = "Model")]
struct PyModel {
    inner: fnetlab::model::Model,
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(config: PyModelConfig) -> PyResult<Self> {
        Ok(PyModel {
            inner: fnetlab::model::Model::new(config.inner).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: fnetlab::model::load_checkpoint(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        fnetlab::model::save_checkpoint(&self.inner, path).map_err(err)
    }

    #[getter]
    fn num_trainable(&self) -> usize {
        self.inner.params().num_trainable()
    }

    /// Eval-mode sequence output (rows) and pooled vector for one example.
    fn encode(&self, ids: Vec<usize>) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
        let input = EncoderInput::single(&ids).map_err(err)?;
        let (seq, pooled) = self.inner.encode(&input).map_err(err)?;
        let d = seq.last_dim();
        Ok((seq.data().chunks(d).map(<[f64]>::to_vec).collect(), pooled.into_data()))
    }
}

/// Trains on associative recall and returns the metric rows as dicts plus
/// the trained model.
#[pyfunction]
#[pyo3(signature = (config, total_steps=3000, batch_size=32, learning_rate=1e-3, eval_every=100, seed=0))]
fn train_recall<'py>(
    py: Python<'py>,
    config: PyModelConfig,
    total_steps: usize,
    batch_size: usize,
    learning_rate: f64,
    eval_every: usize,
    seed: u64,
) -> PyResult<(Vec<Bound<'py, PyDict>>, PyModel)> {
    let task = Task::Recall(RecallTask::default());
    let mut cfg = config.inner;
    task.configure(&mut cfg);
    let tc = TrainConfig {
        batch_size,
        total_steps,
        learning_rate,
        warmup_steps: total_steps / 10,
        eval_every,
        seed,
        ..TrainConfig::default()
    };
    let out = py
        .detach(|| train(&cfg, &tc, &task, TrainOptions::default()))
        .map_err(err)?;
    let mut rows = Vec::new();
    for r in &out.log.rows {
        let d = PyDict::new(py);
        d.set_item("step", r.step)?;
        d.set_item("loss", r.total_loss)?;
        d.set_item("task_acc", r.task_acc)?;
        d.set_item("ms_per_step", r.ms_per_step)?;
        rows.push(d);
    }
    Ok((rows, PyModel { inner: out.model }))
}

#[pymodule]
#[pyo3(name = "fnetlab")]
fn fnetlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(fft, m)?)?;
    m.add_function(wrap_pyfunction!(hadamard, m)?)?;
    m.add_function(wrap_pyfunction!(hartley, m)?)?;
    m.add_function(wrap_pyfunction!(dct2, m)?)?;
    m.add_function(wrap_pyfunction!(fourier_mix, m)?)?;
    m.add_function(wrap_pyfunction!(build_layout, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_suite, m)?)?;
    m.add_function(wrap_pyfunction!(train_recall, m)?)?;
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
