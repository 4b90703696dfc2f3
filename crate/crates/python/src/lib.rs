//! Python bindings for `ngl-core`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ngl_core::carleman::{self, Source};
use ngl_core::crofton::{self, Kernel};
use ngl_core::eigen::{self, SolverOptions};
use ngl_core::experiment::{Command, ExperimentConfig, Runner};
use ngl_core::growth::{self, Balls};
use ngl_core::harmonic::{self, CircleTrace};
use ngl_core::nodal;
use ngl_core::surface::{self, Profile};
use ngl_core::{GridField, ScalarField};

fn err(e: ngl_core::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn profile(name: &str, amplitude: f64) -> PyResult<Profile> {
    Ok(match name {
        "flat" => Profile::Flat,
        "constant" => Profile::Constant { value: amplitude },
        "wave" => Profile::wave(amplitude),
        "exponential" => Profile::Exponential { amplitude },
        _ => return Err(PyValueError::new_err(format!("unknown profile {name:?}"))),
    })
}

/// Sampled scalar field on the unit torus or a centred planar square.
#[pyclass(name = "GridField", module = "ngl", skip_from_py_object)]
#[derive(Clone)]
struct PyGridField {
    inner: GridField,
}

#[pymethods]
impl PyGridField {
    /// Torus field from row-major samples (`values[j * n + i]` at `(i/n, j/n)`).
    #[staticmethod]
    fn torus(n: usize, values: Vec<f64>) -> PyResult<Self> {
        let inner = GridField::new(n, ngl_core::Domain::Torus, values).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: GridField::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    /// Bilinear sample at `(x, y)`.
    fn sample(&self, x: f64, y: f64) -> f64 {
        self.inner.eval(x, y)
    }

    /// `(euclidean_length, metric_length)` of the zero set.
    fn nodal_length(&self) -> (f64, f64) {
        nodal::nodal_length(&nodal::extract_nodal_set(&self.inner), None)
    }

    /// Nodal segments as `((x0, y0), (x1, y1))` tuples.
    fn nodal_segments(&self) -> Vec<((f64, f64), (f64, f64))> {
        nodal::extract_nodal_set(&self.inner)
            .segments
            .iter()
            .map(|s| (s.a, s.b))
            .collect()
    }

    /// `log(sup_{D(c,r)}|f| / sup_{D(c,αr)}|f|)` on Euclidean disks.
    fn growth_exponent(&self, center: (f64, f64), r: f64, alpha: f64) -> PyResult<f64> {
        growth::growth_exponent(&self.inner, center, r, alpha, Balls::Euclidean).map_err(err)
    }

    /// Monte Carlo length of the zero set: `kernel` is "disk" or "circle".
    #[pyo3(signature = (kernel, r, samples, seed=0))]
    fn crofton(&self, kernel: &str, r: f64, samples: usize, seed: u64) -> PyResult<(f64, f64)> {
        let k = match kernel {
            "disk" => Kernel::Disk,
            "circle" => Kernel::Circle,
            _ => return Err(PyValueError::new_err("kernel must be 'disk' or 'circle'")),
        };
        let set = nodal::extract_nodal_set(&self.inner).indexed();
        let e = crofton::run_kernel(k, &set, r, samples, seed).map_err(err)?;
        Ok((e.value, e.stderr))
    }

    fn __repr__(&self) -> String {
        format!("GridField(n={}, domain={:?})", self.inner.n(), self.inner.domain())
    }
}

/// One eigenpair of the Laplace–Beltrami operator.
#[pyclass(name = "EigenPair", module = "ngl", get_all)]
struct PyEigenPair {
    lambda_: f64,
    residual: f64,
    field: PyGridField,
}

#[pymethods]
impl PyEigenPair {
    #[getter]
    fn eigenvalue(&self) -> f64 {
        self.lambda_
    }

    fn __repr__(&self) -> String {
        format!("EigenPair(lambda={:.6}, residual={:.2e})", self.lambda_, self.residual)
    }
}

/// Lowest `count` eigenpairs for a conformal factor profile.
#[pyfunction]
#[pyo3(signature = (count, grid_n=256, profile_name="flat", amplitude=0.0, tol=1e-3))]
fn solve_spectrum(
    py: Python<'_>,
    count: usize,
    grid_n: usize,
    profile_name: &str,
    amplitude: f64,
    tol: f64,
) -> PyResult<Vec<PyEigenPair>> {
    let prof = profile(profile_name, amplitude)?;
    let spectrum = py
        .detach(|| {
            let metric = surface::make_metric(prof, grid_n)?;
            eigen::solve_spectrum(&eigen::assemble_operators(&metric), &SolverOptions::new(count, tol))
        })
        .map_err(err)?;
    Ok(spectrum
        .pairs
        .into_iter()
        .map(|p| PyEigenPair {
            lambda_: p.lambda,
            residual: p.residual,
            field: PyGridField { inner: p.field },
        })
        .collect())
}

/// `c(p) = 4^p + C(2p, p)` as an exact Python integer.
#[pyfunction]
fn robertson_constant(p: u32) -> PyResult<u128> {
    harmonic::robertson_value(p)
        .try_into()
        .map_err(|_| PyValueError::new_err("c(p) exceeds 128 bits"))
}

/// Cyclic sign changes of a sampled trace on the unit circle.
#[pyfunction]
fn sign_changes(values: Vec<f64>) -> PyResult<usize> {
    harmonic::sign_changes(&CircleTrace::from_values(values).map_err(err)?).map_err(err)
}

/// `(lhs_ratio, N_v, rhs_bound, holds)` for a circle trace and radius `r0`.
#[pyfunction]
#[pyo3(signature = (values, r0=0.25))]
fn growth_vs_signs(values: Vec<f64>, r0: f64) -> PyResult<(f64, usize, f64, bool)> {
    let c = harmonic::growth_vs_signs_check(&CircleTrace::from_values(values).map_err(err)?, r0).map_err(err)?;
    Ok((c.lhs_ratio, c.n_v, c.rhs_bound, c.holds))
}

/// Radial profile report as a JSON string.
#[pyfunction]
#[pyo3(signature = (a=0.1))]
fn psi0_report(a: f64) -> PyResult<String> {
    let (_, r) = carleman::build_psi0(a, Source::Bump { a, a3: 1.0 }).map_err(err)?;
    serde_json::to_string(&r).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Hash of a JSON experiment config.
#[pyfunction]
fn config_hash(config_json: &str) -> PyResult<String> {
    Ok(ExperimentConfig::from_json(config_json).map_err(err)?.hash())
}

/// Runs an experiment command; returns the result records as a JSON string.
#[pyfunction]
fn run_experiment(py: Python<'_>, command: &str, config_json: &str, out_dir: &str) -> PyResult<String> {
    let cmd = Command::parse(command).map_err(err)?;
    let cfg = ExperimentConfig::from_json(config_json).map_err(err)?;
    let out = out_dir.to_string();
    let records = py
        .detach(move || Runner::new(cfg, out).and_then(|mut r| r.run(cmd)))
        .map_err(err)?;
    serde_json::to_string(&records).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn ngl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGridField>()?;
    m.add_class::<PyEigenPair>()?;
    m.add_function(wrap_pyfunction!(solve_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(robertson_constant, m)?)?;
    m.add_function(wrap_pyfunction!(sign_changes, m)?)?;
    m.add_function(wrap_pyfunction!(growth_vs_signs, m)?)?;
    m.add_function(wrap_pyfunction!(psi0_report, m)?)?;
    m.add_function(wrap_pyfunction!(config_hash, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
