//! Python bindings. Structured results are returned as plain dicts and lists.

use pyo3::exceptions::{PyMemoryError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use ::tqo as core;
use core::flow::{flow_step, scalar_trajectory, FlowConfig, FlowState, ScalarFlowParams};
use core::lattice::{build_toric_code, build_unstable_toric_code, Model, Normalization};
use core::linalg::{self, LocalOperator, C64};
use core::locality::{
    continue_projector, lr_commutator_norm, mixed_field_chain, BandWindow, ContinuationPath, Integrator,
};
use core::pauli::PauliOperator;
use core::perturbation::{random_perturbation, PerturbationSpec};
use core::spectral::{integer_levels, low_spectrum, sector_gap_sweep, SpectralReport};
use core::tqo::{check_tqo1_stabilizer, check_tqo2_exact_all, check_tqo2_stabilizer, default_l_star};

fn err(e: core::Error) -> PyErr {
    match e {
        core::Error::ResourceCap { .. } => PyMemoryError::new_err(e.to_string()),
        core::Error::Parse(_) | core::Error::Invalid(_) | core::Error::Precondition(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Pauli operator with phase, in the text form "+1 X3 Z7".
#[pyclass(name = "Pauli", module = "tqo", from_py_object)]
#[derive(Clone)]
struct PyPauli(PauliOperator);

#[pymethods]
impl PyPauli {
    #[new]
    fn new(text: &str, n: usize) -> PyResult<Self> {
        PauliOperator::parse(text, n).map(PyPauli).map_err(err)
    }

    #[getter]
    fn qubit_count(&self) -> usize {
        self.0.qubit_count()
    }

    fn weight(&self) -> usize {
        self.0.weight()
    }

    fn support(&self) -> Vec<usize> {
        self.0.support()
    }

    fn is_hermitian(&self) -> bool {
        self.0.is_hermitian()
    }

    fn multiply(&self, other: &PyPauli) -> PyResult<PyPauli> {
        self.0.multiply(&other.0).map(PyPauli).map_err(err)
    }

    fn commutes(&self, other: &PyPauli) -> PyResult<bool> {
        self.0.commutes(&other.0).map_err(err)
    }

    fn __mul__(&self, other: &PyPauli) -> PyResult<PyPauli> {
        self.multiply(other)
    }

    fn __eq__(&self, other: &PyPauli) -> bool {
        self.0 == other.0
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Pauli('{}', {})", self.0, self.0.qubit_count())
    }
}

/// Commuting stabilizer model on a periodic lattice.
#[pyclass(name = "Model", module = "tqo")]
struct PyModel(Model);

fn perturbation(model: &Model, json: &str) -> PyResult<core::decomposition::LocalDecomposition> {
    let spec = PerturbationSpec::from_json(json).map_err(err)?;
    if spec.lattice().map_err(err)? != model.lattice {
        return Err(PyValueError::new_err("perturbation lattice does not match the model"));
    }
    spec.to_decomposition().map_err(err)
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn toric(l: usize) -> PyResult<Self> {
        build_toric_code(l).map(PyModel).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (l, p_star = (0, 0)))]
    fn unstable_toric(l: usize, p_star: (usize, usize)) -> PyResult<Self> {
        build_unstable_toric_code(l, p_star).map(PyModel).map_err(err)
    }

    /// Parses the text model format.
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Model::from_model_file(text).map(PyModel).map_err(err)
    }

    fn to_text(&self) -> String {
        self.0.to_model_file()
    }

    #[getter]
    fn label(&self) -> String {
        self.0.label.clone()
    }

    #[getter]
    fn size(&self) -> usize {
        self.0.lattice.size()
    }

    #[getter]
    fn qubit_count(&self) -> usize {
        self.0.qubit_count()
    }

    fn generators(&self) -> Vec<PyPauli> {
        self.0.generators().iter().cloned().map(PyPauli).collect()
    }

    #[pyo3(signature = (l_star = None, method = "stabilizer"))]
    fn check_tqo2<'py>(&self, py: Python<'py>, l_star: Option<usize>, method: &str) -> PyResult<Bound<'py, PyAny>> {
        let l_star = l_star.unwrap_or_else(|| default_l_star(self.0.lattice.size()));
        let report = match method {
            "stabilizer" => check_tqo2_stabilizer(&self.0, l_star),
            "exact" => check_tqo2_exact_all(&self.0, l_star),
            _ => return Err(PyValueError::new_err("method must be 'stabilizer' or 'exact'")),
        }
        .map_err(err)?;
        to_py(py, &report)
    }

    #[pyo3(signature = (l_star = None, cutoff = 4, factor = 1.0))]
    fn check_tqo1<'py>(&self, py: Python<'py>, l_star: Option<usize>, cutoff: usize, factor: f64) -> PyResult<Bound<'py, PyAny>> {
        let l_star = l_star.unwrap_or_else(|| default_l_star(self.0.lattice.size()));
        to_py(py, &check_tqo1_stabilizer(&self.0, l_star, cutoff, factor).map_err(err)?)
    }

    /// Lowest eigenvalues of H0 (+ V from a perturbation spec in JSON) with band labels.
    #[pyo3(signature = (count, perturbation_json = None))]
    fn spectrum<'py>(&self, py: Python<'py>, count: usize, perturbation_json: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let extra: Vec<LocalOperator> = match perturbation_json {
            Some(j) => perturbation(&self.0, j)?.terms().map(|t| t.op.clone()).collect(),
            None => vec![],
        };
        let h = self.0.hamiltonian_operator(Normalization::Projector, &extra).map_err(err)?;
        let vals = low_spectrum(&h, count).map_err(err)?;
        let levels = if linalg::check_dense("levels", self.0.dim()).is_ok() {
            integer_levels(&self.0).map_err(err)?
        } else {
            (0..=self.0.generators().len()).collect()
        };
        to_py(py, &SpectralReport::assign(&vals, &levels))
    }

    /// Closed-form sector sweep of h Σ_p B_p.
    fn sector_sweep<'py>(&self, py: Python<'py>, hs: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &sector_gap_sweep(&self.0, &hs).map_err(err)?)
    }

    /// Seeded random perturbation spec as JSON text.
    #[pyo3(signature = (seed, j, q = 1, mu = 1.0))]
    fn random_perturbation(&self, seed: u64, j: f64, q: usize, mu: f64) -> PyResult<String> {
        Ok(random_perturbation(&self.0.lattice, seed, q, j, mu).map_err(err)?.to_json())
    }

    /// Off-diagonal residuals ‖Q H(n) P‖ for n = 0..=levels.
    #[pyo3(signature = (perturbation_json, levels = 2))]
    fn flow(&self, perturbation_json: &str, levels: usize) -> PyResult<Vec<f64>> {
        let v = perturbation(&self.0, perturbation_json)?;
        let spec = PerturbationSpec::from_json(perturbation_json).map_err(err)?;
        let cfg = FlowConfig::for_lattice(&self.0.lattice, spec.mu);
        let mut state = FlowState::initial(&self.0, &v, &cfg).map_err(err)?;
        let mut out = vec![state.block_residual(&self.0).map_err(err)?];
        for _ in 0..levels {
            let (next, report) = flow_step(&self.0, &state, &cfg).map_err(err)?;
            out.push(report.residual.unwrap_or(f64::NAN));
            state = next;
        }
        Ok(out)
    }

    /// Quasi-adiabatic continuation of band k along H0 + sV.
    #[pyo3(signature = (perturbation_json, steps = 200, band = 0, scheme = "midpoint"))]
    fn continue_band<'py>(
        &self,
        py: Python<'py>,
        perturbation_json: &str,
        steps: usize,
        band: usize,
        scheme: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let scheme = match scheme {
            "midpoint" => Integrator::Midpoint,
            "first-order" => Integrator::FirstOrder,
            _ => return Err(PyValueError::new_err("scheme must be 'midpoint' or 'first-order'")),
        };
        let v = perturbation(&self.0, perturbation_json)?;
        let h0 = self.0.hamiltonian_dense(Normalization::Projector).map_err(err)?;
        let path = ContinuationPath::new(h0.clone(), v.to_dense(&self.0.lattice.all_qubits()).map_err(err)?).map_err(err)?;
        let window = BandWindow::from_spectrum(&linalg::eigvalsh(&h0), band).map_err(err)?;
        let res = continue_projector(&path, &window, steps, scheme).map_err(err)?;
        #[derive(Serialize)]
        struct Out<'a> {
            max_deviation: f64,
            unitarity: f64,
            nodes: &'a [core::locality::ContinuationNode],
        }
        to_py(py, &Out { max_deviation: res.max_deviation, unitarity: res.unitarity, nodes: &res.nodes })
    }

    fn __repr__(&self) -> String {
        format!("Model('{}', qubits={})", self.0.label, self.0.qubit_count())
    }
}

/// Scalar flow recursion; one dict per level.
#[pyfunction]
#[pyo3(signature = (j, mu = 1.0, c1 = 1.0, c2 = 1.0, c3 = 0.0, epsilon = 0.0, l = 8.0, levels = 10))]
#[allow(clippy::too_many_arguments)]
fn scalar_flow<'py>(
    py: Python<'py>,
    j: f64,
    mu: f64,
    c1: f64,
    c2: f64,
    c3: f64,
    epsilon: f64,
    l: f64,
    levels: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let p = ScalarFlowParams { j, mu, c1, c2, c3, epsilon, l, c_e: 1.0, target: None };
    to_py(py, &scalar_trajectory(&p, levels).map_err(err)?)
}

/// ‖[Z_a(t), Z_b]‖ on the open mixed-field chain K Σ (Z Z + g X + h Z).
#[pyfunction]
#[pyo3(signature = (n, a, b, times, k = 1.0, g = 1.05, h = 0.5))]
fn lieb_robinson_chain(n: usize, a: usize, b: usize, times: Vec<f64>, k: f64, g: f64, h: f64) -> PyResult<Vec<f64>> {
    if a >= n || b >= n {
        return Err(PyValueError::new_err("sites must lie on the chain"));
    }
    let ham = mixed_field_chain(n, k, g, h).map_err(err)?.map(|v| C64::new(v, 0.0));
    let z = linalg::CMat::from_diagonal(&z_diagonal());
    let oa = LocalOperator::new(vec![a], z.clone()).map_err(err)?;
    let ob = LocalOperator::new(vec![b], z).map_err(err)?;
    times.iter().map(|&t| lr_commutator_norm(&ham, &oa, &ob, t).map_err(err)).collect()
}

fn z_diagonal() -> linalg::CVec {
    linalg::CVec::from_vec(vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)])
}

/// F̃(ω) of the continuation filter.
#[pyfunction]
fn filter_ft(omega: f64) -> f64 {
    core::locality::filter_ft(omega)
}

/// F(t) of the continuation filter.
#[pyfunction]
fn filter_time(t: f64) -> f64 {
    core::locality::filter_time(t)
}

#[pymodule]
#[pyo3(name = "tqo")]
fn tqo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPauli>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(scalar_flow, m)?)?;
    m.add_function(wrap_pyfunction!(lieb_robinson_chain, m)?)?;
    m.add_function(wrap_pyfunction!(filter_ft, m)?)?;
    m.add_function(wrap_pyfunction!(filter_time, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
