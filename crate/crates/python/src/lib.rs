//! Python bindings. Matrices cross the boundary as lists of rows.

use mgapprox::chain::{center_observable, validate_chain, ChainTolerances, FiniteChain, Observable};
use mgapprox::decomposition::{self, MartingaleKernel};
use mgapprox::{oracle, resolvent, simulate};
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(mgapprox_py, MgapproxError, PyValueError);

fn err(e: mgapprox::Error) -> PyErr {
    MgapproxError::new_err(e.to_string())
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    mgapprox::io::matrix_from_rows(&rows).map_err(MgapproxError::new_err)
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A validated irreducible transition matrix with its stationary law.
#[pyclass(name = "Chain", frozen)]
pub struct PyChain {
    inner: FiniteChain,
}

#[pymethods]
impl PyChain {
    #[new]
    #[pyo3(signature = (q, stochastic_tol = 1e-12, stationary_tol = 1e-10))]
    fn new(q: Vec<Vec<f64>>, stochastic_tol: f64, stationary_tol: f64) -> PyResult<Self> {
        let tol = ChainTolerances {
            stochastic: stochastic_tol,
            stationary: stationary_tol,
        };
        let inner = validate_chain(to_matrix(q)?, &tol).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn pi(&self) -> Vec<f64> {
        self.inner.pi().iter().copied().collect()
    }

    #[getter]
    fn period(&self) -> usize {
        self.inner.period()
    }

    #[getter]
    fn periodic(&self) -> bool {
        self.inner.period_flag()
    }

    #[getter]
    fn q(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.q())
    }

    fn stationarity_residual(&self) -> f64 {
        self.inner.stationarity_residual()
    }

    fn __repr__(&self) -> String {
        format!("Chain(n_states={}, period={})", self.inner.n_states(), self.inner.period())
    }
}

fn observable(chain: &PyChain, g: Vec<Vec<f64>>, center: bool) -> PyResult<Observable> {
    let raw = to_matrix(g)?;
    if center {
        center_observable(&raw, &chain.inner)
    } else {
        Observable::new(raw, &chain.inner)
    }
    .map_err(err)
}

/// Martingale kernel `H(x, y)` on the support of `Q`.
#[pyclass(name = "Kernel", frozen)]
pub struct PyKernel {
    inner: MartingaleKernel,
}

#[pymethods]
impl PyKernel {
    /// `H(x, y)`, or `None` off the support of `Q`.
    fn get(&self, x: usize, y: usize) -> Option<Vec<f64>> {
        self.inner.get(x, y).map(<[f64]>::to_vec)
    }

    #[getter]
    fn source(&self) -> &'static str {
        self.inner.source().as_str()
    }

    #[getter]
    fn potential(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.potential())
    }

    #[getter]
    fn cauchy_gap(&self) -> f64 {
        self.inner.cauchy_gap
    }

    #[getter]
    fn route_gap(&self) -> Option<f64> {
        self.inner.route_gap
    }

    fn martingale_defect(&self, chain: &PyChain) -> f64 {
        self.inner.martingale_defect(&chain.inner)
    }
}

/// Subtracts the `pi`-mean from each column of `g`.
#[pyfunction]
fn center(chain: &PyChain, g: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(observable(chain, g, true)?.values()))
}

#[pyfunction]
#[pyo3(signature = (chain, g, epsilon, center = true))]
fn solve_resolvent(chain: &PyChain, g: Vec<Vec<f64>>, epsilon: f64, center: bool) -> PyResult<Vec<Vec<f64>>> {
    let g = observable(chain, g, center)?;
    let sol = resolvent::solve_resolvent(&chain.inner, &g, epsilon).map_err(err)?;
    Ok(to_rows(&sol.h))
}

#[pyfunction]
#[pyo3(signature = (chain, g, center = true))]
fn poisson_solve(chain: &PyChain, g: Vec<Vec<f64>>, center: bool) -> PyResult<Vec<Vec<f64>>> {
    let g = observable(chain, g, center)?;
    Ok(to_rows(&decomposition::poisson_solve(&chain.inner, &g).map_err(err)?))
}

/// `||T_n||_2` for `n = 0..=n_max`.
#[pyfunction]
#[pyo3(signature = (chain, g, n_max, center = true))]
fn partial_sum_norms(chain: &PyChain, g: Vec<Vec<f64>>, n_max: usize, center: bool) -> PyResult<Vec<f64>> {
    let g = observable(chain, g, center)?;
    let t = resolvent::partial_sums(&chain.inner, &g, n_max).map_err(err)?;
    Ok(t.norms().to_vec())
}

#[pyfunction]
#[pyo3(signature = (chain, g, k_max = 60, tol = 1e-12, center = true))]
fn limit_kernel(chain: &PyChain, g: Vec<Vec<f64>>, k_max: usize, tol: f64, center: bool) -> PyResult<PyKernel> {
    let g = observable(chain, g, center)?;
    let inner = decomposition::limit_kernel(&chain.inner, &g, k_max, tol).map_err(err)?;
    Ok(PyKernel { inner })
}

#[pyfunction]
#[pyo3(signature = (chain, g, center = true))]
fn poisson_kernel(chain: &PyChain, g: Vec<Vec<f64>>, center: bool) -> PyResult<PyKernel> {
    let g = observable(chain, g, center)?;
    let inner = decomposition::poisson_kernel(&chain.inner, &g).map_err(err)?;
    Ok(PyKernel { inner })
}

/// `{"d", "lambda", "rank", "eigenvalues"}` for a kernel.
#[pyfunction]
fn diffusion_matrix<'py>(py: Python<'py>, chain: &PyChain, kernel: &PyKernel) -> PyResult<Bound<'py, PyDict>> {
    let dm = decomposition::diffusion_matrix(&chain.inner, &kernel.inner).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("d", to_rows(&dm.d))?;
    out.set_item("lambda", to_rows(&dm.lambda))?;
    out.set_item("rank", dm.rank)?;
    out.set_item("eigenvalues", dm.eigenvalues.clone())?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (p, alpha, selector = 0.5))]
fn lq_exponent<'py>(py: Python<'py>, p: f64, alpha: f64, selector: f64) -> PyResult<Bound<'py, PyDict>> {
    let e = decomposition::lq_exponent(p, alpha, selector).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("p", e.p)?;
    out.set_item("alpha", e.alpha)?;
    out.set_item("q_bound", e.q_bound)?;
    out.set_item("q", e.q)?;
    out.set_item("a", e.a)?;
    out.set_item("b", e.b)?;
    out.set_item("drift", e.drift)?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (chain, start, n, seed, path_id = 0))]
fn sample_path(chain: &PyChain, start: usize, n: usize, seed: u64, path_id: u64) -> PyResult<Vec<usize>> {
    simulate::sample_path(&chain.inner, start, n, seed, path_id).map_err(err)
}

/// `E_pi |R_n|^2` from the Poisson solution.
#[pyfunction]
#[pyo3(signature = (chain, g, n, center = true))]
fn remainder_second_moment(chain: &PyChain, g: Vec<Vec<f64>>, n: usize, center: bool) -> PyResult<f64> {
    let g = observable(chain, g, center)?;
    decomposition::remainder_second_moment(&chain.inner, &g, n).map_err(err)
}

/// Stationary `Cov(S_n)` from matrix powers.
#[pyfunction]
#[pyo3(signature = (chain, g, n, center = true))]
fn sn_covariance(chain: &PyChain, g: Vec<Vec<f64>>, n: usize, center: bool) -> PyResult<Vec<Vec<f64>>> {
    let g = observable(chain, g, center)?;
    Ok(to_rows(&oracle::exact_sn_covariance(&chain.inner, &g, n).map_err(err)?))
}

#[pymodule]
pub fn mgapprox_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MgapproxError", m.py().get_type::<MgapproxError>())?;
    m.add_class::<PyChain>()?;
    m.add_class::<PyKernel>()?;
    m.add_function(wrap_pyfunction!(center, m)?)?;
    m.add_function(wrap_pyfunction!(solve_resolvent, m)?)?;
    m.add_function(wrap_pyfunction!(poisson_solve, m)?)?;
    m.add_function(wrap_pyfunction!(partial_sum_norms, m)?)?;
    m.add_function(wrap_pyfunction!(limit_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(poisson_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(diffusion_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(lq_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(sample_path, m)?)?;
    m.add_function(wrap_pyfunction!(remainder_second_moment, m)?)?;
    m.add_function(wrap_pyfunction!(sn_covariance, m)?)?;
    Ok(())
}
