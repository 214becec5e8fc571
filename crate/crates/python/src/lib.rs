//! Python bindings: parameters, resolvents, contours, the Ising image, Monte Carlo and the check suite.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rfspin::anharmonic::QuadOptions;
use rfspin::checks::{run_check as run_named_check, CheckContext, CHECK_NAMES};
use rfspin::contour::{self, KernelCache};
use rfspin::image::{brute_force_image, SmallVolume};
use rfspin::simulation::{self, DisorderLaw, DisorderSpec, OrderEvent, OrderOptions};
use rfspin::{BoundaryField, DisorderField, IsingConfig, LatticeVolume, ModelParams, SiteModel, SiteSet, SpinField};

fn err(e: rfspin::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn lattice(extents: Vec<usize>) -> PyResult<LatticeVolume> {
    LatticeVolume::new(&extents).map_err(err)
}

fn spins(v: Vec<i8>) -> PyResult<IsingConfig> {
    if v.iter().any(|&s| s != 1 && s != -1) {
        return Err(PyValueError::new_err("spins must be +1 or -1"));
    }
    Ok(IsingConfig(v))
}

/// Model parameters.
#[pyclass(name = "Params", module = "rfspin_py", skip_from_py_object)]
#[derive(Clone)]
struct Params {
    inner: ModelParams,
}

#[pymethods]
impl Params {
    #[new]
    #[pyo3(signature = (dim, q, m_star, a = 1.0, b = 0.0, delta = 0.0, window = 1.0))]
    fn new(dim: usize, q: f64, m_star: f64, a: f64, b: f64, delta: f64, window: f64) -> PyResult<Self> {
        Ok(Params { inner: ModelParams::new(dim, q, m_star, a, b, delta, window).map_err(err)? })
    }

    /// Parameters at the certified coupling and field bound.
    #[staticmethod]
    fn certified(eps0: f64, m_star: f64, dim: usize) -> PyResult<Self> {
        let c = rfspin::potential::select_parameters(eps0, m_star, dim).map_err(err)?;
        Ok(Params { inner: c.params_at_threshold() })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }
    #[getter]
    fn q(&self) -> f64 {
        self.inner.q
    }
    #[getter]
    fn m_star(&self) -> f64 {
        self.inner.m_star
    }
    #[getter]
    fn a(&self) -> f64 {
        self.inner.a
    }
    #[getter]
    fn b(&self) -> f64 {
        self.inner.b
    }
    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }
    #[getter]
    fn window(&self) -> f64 {
        self.inner.window
    }

    /// Single-bond Peierls constant.
    fn beta(&self) -> f64 {
        contour::beta(&self.inner)
    }

    fn interaction_range(&self) -> u32 {
        contour::interaction_range(&self.inner)
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!("Params(dim={}, q={}, m_star={}, a={}, b={}, delta={}, window={})", p.dim, p.q, p.m_star, p.a, p.b, p.delta, p.window)
    }
}

/// Certificate quantities as a dict.
#[pyfunction]
fn select_parameters<'py>(py: Python<'py>, eps0: f64, m_star: f64, dim: usize) -> PyResult<Bound<'py, PyDict>> {
    let c = rfspin::potential::select_parameters(eps0, m_star, dim).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("a", c.a)?;
    d.set_item("q0", c.q_max)?;
    d.set_item("delta0", c.delta_max)?;
    d.set_item("b", c.b)?;
    d.set_item("window", c.window)?;
    d.set_item("eps1", c.eps1)?;
    d.set_item("epsilon_bound", c.eps_bound)?;
    Ok(d)
}

/// Dense `(c - Lap_V)^{-1}` on the given sites of a box.
#[pyfunction]
fn resolvent(extents: Vec<usize>, sites: Vec<usize>, c: f64) -> PyResult<Vec<Vec<f64>>> {
    let lat = lattice(extents)?;
    let r = rfspin::gaussian::resolvent_direct(&lat, &SiteSet::new(sites), c).map_err(err)?;
    Ok((0..r.nrows()).map(|i| r.row(i).iter().copied().collect()).collect())
}

/// Kernel of walks whose range is exactly `sites`.
#[pyfunction]
fn walk_kernel(extents: Vec<usize>, sites: Vec<usize>, c: f64, l_max: usize) -> PyResult<Vec<Vec<f64>>> {
    let lat = lattice(extents)?;
    let k = rfspin::walk::walk_kernel(&lat, &SiteSet::new(sites), c, l_max).map_err(err)?;
    Ok((0..k.matrix.nrows()).map(|i| k.matrix.row(i).iter().copied().collect()).collect())
}

/// Support of the contour of a sign configuration.
#[pyfunction]
fn extract_contour(extents: Vec<usize>, sigma: Vec<i8>, r: u32) -> PyResult<Vec<usize>> {
    let lat = lattice(extents)?;
    let c = contour::extract_contour(&lat, &spins(sigma)?, r).map_err(err)?;
    Ok(c.support.as_slice().to_vec())
}

/// Low-temperature activity with `+boundary` outside values.
#[pyfunction]
fn lt_activity<'py>(
    py: Python<'py>,
    params: PyRef<'_, Params>,
    extents: Vec<usize>,
    sigma: Vec<i8>,
    r: u32,
    boundary: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let lat = lattice(extents)?;
    let p = params.inner;
    let mut cache = KernelCache::new(p.c(), contour::default_walk_length(&p));
    let lt = contour::lt_activity(&lat, &spins(sigma)?, r, &BoundaryField::Constant(boundary), &p, &mut cache).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("log_activity", lt.log_activity)?;
    d.set_item("energy", lt.energy)?;
    d.set_item("energy_bound", lt.energy_bound)?;
    d.set_item("volume_bound", lt.volume_bound)?;
    d.set_item("support", lt.support.as_slice().to_vec())?;
    d.set_item("holds", lt.holds)?;
    Ok(d)
}

/// Log weights of all sign configurations of a box of at most four sites, by bit pattern.
#[pyfunction]
#[pyo3(signature = (params, extents, eta, boundary, mixture = false))]
fn image_log_weights(params: PyRef<'_, Params>, extents: Vec<usize>, eta: Vec<f64>, boundary: f64, mixture: bool) -> PyResult<Vec<f64>> {
    let lat = lattice(extents)?;
    let model = if mixture { SiteModel::well_mixture(params.inner) } else { SiteModel::quartic(params.inner) };
    let eta = DisorderField(eta);
    let bc = BoundaryField::Constant(boundary);
    let vol = SmallVolume::new(&lat, &model, &eta, &bc).map_err(err)?;
    Ok(brute_force_image(&vol, QuadOptions::default()).map_err(err)?.log_weights)
}

/// Bounded random field, one counter stream per site.
#[pyfunction]
#[pyo3(signature = (extents, delta, seed, sigma2 = 1.0, law = "truncated_gaussian"))]
fn sample_disorder(extents: Vec<usize>, delta: f64, seed: u64, sigma2: f64, law: &str) -> PyResult<Vec<f64>> {
    let lat = lattice(extents)?;
    let law = match law {
        "truncated_gaussian" => DisorderLaw::TruncatedGaussian,
        "uniform" => DisorderLaw::Uniform,
        other => return Err(PyValueError::new_err(format!("unknown law `{other}`"))),
    };
    Ok(simulation::sample_disorder(&lat, &DisorderSpec { delta, sigma2, seed, law }).map_err(err)?.0)
}

/// Independent coarse-grained signs for a field configuration.
#[pyfunction]
fn coarse_grain(params: PyRef<'_, Params>, field: Vec<f64>, seed: u64) -> Vec<i8> {
    simulation::coarse_grain(&SpinField(field), &SiteModel::quartic(params.inner), seed).0
}

/// Heat-bath estimate of `P[m_x0 <= m*/2]` with `+m*` outside.
#[pyfunction]
#[pyo3(signature = (params, extents, eta, x0, sweeps = 2000, burn_in = 1000, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn order_probability<'py>(
    py: Python<'py>,
    params: PyRef<'_, Params>,
    extents: Vec<usize>,
    eta: Vec<f64>,
    x0: usize,
    sweeps: usize,
    burn_in: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let lat = lattice(extents)?;
    let p = params.inner;
    let opts = OrderOptions { sweeps, burn_in, seed, ..OrderOptions::default() };
    let e = simulation::order_probability(
        &lat,
        &SiteModel::quartic(p),
        &DisorderField(eta),
        &BoundaryField::Constant(p.m_star),
        x0,
        OrderEvent::BelowHalf,
        &opts,
    )
    .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("estimate", e.estimate)?;
    d.set_item("stderr", e.stderr)?;
    d.set_item("burn_in", e.burn_in_used)?;
    d.set_item("mean_value", e.mean_value)?;
    Ok(d)
}

/// Run one named verification check.
#[pyfunction]
#[pyo3(signature = (name, seed = 0, quick = true))]
fn run_check<'py>(py: Python<'py>, name: &str, seed: u64, quick: bool) -> PyResult<Bound<'py, PyDict>> {
    let o = run_named_check(name, &CheckContext::new(seed, quick)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("name", o.name)?;
    d.set_item("passed", o.passed)?;
    d.set_item("detail", o.detail)?;
    d.set_item("measured", o.measured.into_iter().collect::<Vec<_>>())?;
    Ok(d)
}

#[pymodule]
fn rfspin_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Params>()?;
    m.add("CHECK_NAMES", CHECK_NAMES.to_vec())?;
    m.add_function(wrap_pyfunction!(select_parameters, m)?)?;
    m.add_function(wrap_pyfunction!(resolvent, m)?)?;
    m.add_function(wrap_pyfunction!(walk_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(extract_contour, m)?)?;
    m.add_function(wrap_pyfunction!(lt_activity, m)?)?;
    m.add_function(wrap_pyfunction!(image_log_weights, m)?)?;
    m.add_function(wrap_pyfunction!(sample_disorder, m)?)?;
    m.add_function(wrap_pyfunction!(coarse_grain, m)?)?;
    m.add_function(wrap_pyfunction!(order_probability, m)?)?;
    m.add_function(wrap_pyfunction!(run_check, m)?)?;
    Ok(())
}
