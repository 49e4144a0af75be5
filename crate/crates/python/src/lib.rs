//! Python bindings: contexts, images, op execution, modules, file I/O and
//! the CLI entry point.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::{Arc, Mutex};

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyTypeError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyString};

use ndforge::io::{self, Location};
use ndforge::modules::{self, harvest_from_pairs, run_module};
use ndforge::{BackingSpec, Dataset, NDImage, PixelType, Value};

create_exception!(ndforge_py, NdforgeError, PyException);

fn err(e: ndforge::Error) -> PyErr {
    NdforgeError::new_err(e.to_string())
}

#[derive(Clone, Default)]
struct Capture(Arc<Mutex<Vec<u8>>>);

impl Write for Capture {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl Capture {
    fn take(&self) -> String {
        String::from_utf8_lossy(&std::mem::take(&mut *self.0.lock().unwrap())).into_owned()
    }
}

/// An N-dimensional image. Copies are cheap until one side is modified.
#[pyclass(name = "Image", module = "ndforge_py", from_py_object)]
#[derive(Clone)]
pub struct PyImage {
    inner: Arc<NDImage>,
}

fn parse_backing(backing: &str) -> PyResult<BackingSpec> {
    match backing {
        "array" => Ok(BackingSpec::Array),
        "planar" => Ok(BackingSpec::Planar),
        "cell" => Ok(BackingSpec::cell(Vec::new(), ndforge::ndimage::DEFAULT_CACHE_BUDGET)),
        other => Err(NdforgeError::new_err(format!("unknown backing `{other}` (array, planar or cell)"))),
    }
}

#[pymethods]
impl PyImage {
    #[new]
    #[pyo3(signature = (dims, pixel_type = "uint8", backing = "array"))]
    fn new(dims: Vec<usize>, pixel_type: &str, backing: &str) -> PyResult<Self> {
        let pt: PixelType = pixel_type.parse().map_err(NdforgeError::new_err)?;
        let img = NDImage::new(pt, &dims, parse_backing(backing)?).map_err(err)?;
        Ok(Self { inner: Arc::new(img) })
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.dims().to_vec()
    }

    #[getter]
    fn pixel_type(&self) -> String {
        self.inner.pixel_type().to_string()
    }

    #[getter]
    fn backing(&self) -> String {
        format!("{:?}", self.inner.backing()).to_lowercase()
    }

    #[getter]
    fn axes(&self) -> Vec<String> {
        self.inner.axes().iter().map(|a| a.kind.label().to_string()).collect()
    }

    fn get(&self, position: Vec<usize>) -> PyResult<f64> {
        self.inner.get_sample(&position).map_err(err)
    }

    /// Stores `value`, clamped and rounded to the pixel type.
    fn set(&mut self, position: Vec<usize>, value: f64) -> PyResult<()> {
        Arc::make_mut(&mut self.inner).set_sample(&position, value).map_err(err)
    }

    /// All samples in canonical order (first axis fastest).
    fn to_list(&self) -> PyResult<Vec<f64>> {
        self.inner.to_f64_vec().map_err(err)
    }

    fn fill(&mut self, values: Vec<f64>) -> PyResult<()> {
        Arc::make_mut(&mut self.inner).fill_from_f64(&values).map_err(err)
    }

    fn same_samples(&self, other: &PyImage) -> PyResult<bool> {
        self.inner.same_samples(&other.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("<Image {}>", self.inner.describe())
    }
}

fn to_value(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    if obj.is_instance_of::<PyBool>() {
        return Ok(Value::Bool(obj.extract()?));
    }
    if obj.is_instance_of::<PyInt>() {
        return Ok(Value::Int64(obj.extract()?));
    }
    if obj.is_instance_of::<PyFloat>() {
        return Ok(Value::Float64(obj.extract()?));
    }
    if obj.is_instance_of::<PyString>() {
        return Ok(Value::Str(obj.extract()?));
    }
    if let Ok(img) = obj.extract::<PyImage>() {
        return Ok(Value::Image(img.inner));
    }
    Err(PyTypeError::new_err(format!(
        "cannot pass {} to ndforge",
        obj.get_type().name()?
    )))
}

fn from_value(py: Python<'_>, v: Value) -> PyResult<Py<PyAny>> {
    Ok(match v {
        Value::Str(s) => s.into_pyobject(py)?.into_any().unbind(),
        Value::Bool(b) => PyBool::new(py, b).to_owned().into_any().unbind(),
        Value::Int8(x) => x.into_pyobject(py)?.into_any().unbind(),
        Value::Int16(x) => x.into_pyobject(py)?.into_any().unbind(),
        Value::Int32(x) => x.into_pyobject(py)?.into_any().unbind(),
        Value::Int64(x) => x.into_pyobject(py)?.into_any().unbind(),
        Value::Float32(x) => (x as f64).into_pyobject(py)?.into_any().unbind(),
        Value::Float64(x) => x.into_pyobject(py)?.into_any().unbind(),
        Value::Path(p) => p.to_string_lossy().into_owned().into_pyobject(py)?.into_any().unbind(),
        Value::Dataset(ds) => Py::new(py, PyImage { inner: ds.image.clone() })?.into_any(),
        Value::Image(img) => Py::new(py, PyImage { inner: img })?.into_any(),
        other => other.render().into_pyobject(py)?.into_any().unbind(),
    })
}

/// An isolated application context with the built-in plugins.
#[pyclass(name = "Context", module = "ndforge_py")]
pub struct PyContext {
    ctx: ndforge::Context,
    capture: Capture,
}

#[pymethods]
impl PyContext {
    /// Display output is collected for [`take_output`] rather than printed.
    #[new]
    #[pyo3(signature = (checked = false))]
    fn new(checked: bool) -> Self {
        let ctx = ndforge::Context::with_defaults();
        let capture = Capture::default();
        ctx.set_output(Box::new(capture.clone()));
        ctx.update_settings(|s| s.checked_ops = checked);
        Self { ctx, capture }
    }

    /// Text emitted by module displays and CLI commands since the last call.
    fn take_output(&self) -> String {
        self.capture.take()
    }

    #[pyo3(signature = (name, *args))]
    fn run_op(&self, py: Python<'_>, name: &str, args: Vec<Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
        let values = args.iter().map(to_value).collect::<PyResult<Vec<_>>>()?;
        let out = ndforge::ops::run(&self.ctx, name, values).map_err(err)?;
        from_value(py, out)
    }

    /// Id of the op implementation the matcher picks for these arguments.
    #[pyo3(signature = (name, *args))]
    fn match_op(&self, name: &str, args: Vec<Bound<'_, PyAny>>) -> PyResult<String> {
        let values = args.iter().map(to_value).collect::<PyResult<Vec<_>>>()?;
        let m = ndforge::ops::match_op(&self.ctx, &ndforge::ops::OpRequest::new(name, values)).map_err(err)?;
        Ok(m.candidate.id.clone())
    }

    #[pyo3(signature = (expression, bindings = None))]
    fn eval(&self, py: Python<'_>, expression: &str, bindings: Option<&Bound<'_, PyDict>>) -> PyResult<Py<PyAny>> {
        let mut b = ndforge::ops::Bindings::new();
        if let Some(d) = bindings {
            for (k, v) in d.iter() {
                b.insert(k.extract()?, to_value(&v)?);
            }
        }
        from_value(py, ndforge::ops::eval(&self.ctx, expression, &b).map_err(err)?)
    }

    /// Runs a `.sjm` script or registered command. `inputs` values may be
    /// Python objects or `key=value` literals given as strings.
    #[pyo3(signature = (target, inputs = None))]
    fn run_module(&self, py: Python<'_>, target: &str, inputs: Option<&Bound<'_, PyDict>>) -> PyResult<Py<PyDict>> {
        let spec = modules::load_module(&self.ctx, target).map_err(err)?;
        let mut provided = BTreeMap::new();
        if let Some(d) = inputs {
            for (k, v) in d.iter() {
                let key: String = k.extract()?;
                let value = match v.extract::<String>() {
                    Ok(text) => harvest_from_pairs(&self.ctx, &spec, &[format!("{key}={text}")])
                        .map_err(err)?
                        .remove(&key)
                        .expect("harvested key"),
                    Err(_) => to_value(&v)?,
                };
                provided.insert(key, value);
            }
        }
        let outputs = run_module(&self.ctx, &spec, provided).map_err(err)?;
        let dict = PyDict::new(py);
        for (k, v) in outputs {
            dict.set_item(k, from_value(py, v)?)?;
        }
        Ok(dict.unbind())
    }

    /// Opens an image file and makes it the active dataset.
    fn open(&self, path: &str) -> PyResult<PyImage> {
        let ds = io::open(&self.ctx, &Location::file(path)).map_err(err)?;
        Ok(PyImage { inner: ds.image.clone() })
    }

    /// Saves with a format id such as `pgm`, `pgm:ascii` or `nchk`.
    fn save(&self, image: &PyImage, path: &str, format_id: &str) -> PyResult<()> {
        let ds = Dataset::new(path, image.inner.clone()).map_err(err)?;
        io::save(&self.ctx, &ds, &Location::file(path), format_id).map_err(err)
    }

    fn ops(&self) -> Vec<String> {
        ndforge::ops::list_ops(&self.ctx)
    }

    fn formats(&self) -> Vec<String> {
        io::formats(&self.ctx).iter().map(|f| f.descriptor().id.clone()).collect()
    }

    /// Runs the command line; returns `(exit_code, stdout, stderr)`.
    fn execute(&self, argv: Vec<String>) -> (i32, String, String) {
        let mut stderr = Vec::new();
        let code = ndforge::cli::execute(&self.ctx, &argv, &mut stderr);
        (code, self.capture.take(), String::from_utf8_lossy(&stderr).into_owned())
    }
}

/// Lowercase hex SHA-256 digest, as used in update-site manifests.
#[pyfunction]
fn checksum(data: &[u8]) -> String {
    ndforge::updater::checksum(data)
}

#[pymodule]
fn ndforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyContext>()?;
    m.add_class::<PyImage>()?;
    m.add_function(wrap_pyfunction!(checksum, m)?)?;
    m.add("NdforgeError", m.py().get_type::<NdforgeError>())?;
    Ok(())
}
