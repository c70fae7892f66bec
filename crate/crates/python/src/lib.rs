//! Python bindings for the secfed secure-aggregation library.
//!
//! Exposes the main types and operations: Paillier keys and ciphertexts, the
//! fixed-point codec, block-Hankel compression, the DP primitives, and the
//! round-driven simulator. Build as an extension module and import `secfed`;
//! see `python/smoke_test.py` for a worked example.

use num_bigint::BigUint;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyInt};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use secfed_core::protocol::NoiseMode;
use secfed_core::{ahe, bhm, dp, fedsim};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rng_from(seed: Option<u64>) -> ChaCha12Rng {
    match seed {
        Some(s) => ChaCha12Rng::seed_from_u64(s),
        None => ChaCha12Rng::from_entropy(),
    }
}

fn biguint_to_py<'py>(py: Python<'py>, v: &BigUint) -> PyResult<Bound<'py, PyAny>> {
    let bytes = PyBytes::new(py, &v.to_bytes_be());
    py.get_type::<PyInt>()
        .call_method1("from_bytes", (bytes, "big"))
}

fn py_to_biguint(obj: &Bound<'_, PyAny>) -> PyResult<BigUint> {
    let decimal: String = obj.str()?.extract()?;
    BigUint::parse_bytes(decimal.as_bytes(), 10)
        .ok_or_else(|| PyValueError::new_err("expected a non-negative integer"))
}

fn matrix_from_py(rows: Vec<Vec<f64>>) -> PyResult<ndarray::Array2<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map(Vec::len).unwrap_or(0);
    if nrows == 0 || ncols == 0 {
        return Err(PyValueError::new_err("matrix must be non-empty"));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("matrix rows must have equal length"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    ndarray::Array2::from_shape_vec((nrows, ncols), flat).map_err(err)
}

fn matrix_to_py(m: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// The real-to-ring fixed-point encoding contract.
#[pyclass(name = "FixedPointParams", skip_from_py_object)]
#[derive(Clone)]
struct PyFixedPointParams(ahe::FixedPointParams);

#[pymethods]
impl PyFixedPointParams {
    #[new]
    #[pyo3(signature = (frac_bits=32, max_magnitude=1024.0, slack_bits=20))]
    fn new(frac_bits: u32, max_magnitude: f64, slack_bits: u32) -> PyResult<Self> {
        Ok(Self(
            ahe::FixedPointParams::new(frac_bits, max_magnitude, slack_bits).map_err(err)?,
        ))
    }

    #[getter]
    fn frac_bits(&self) -> u32 {
        self.0.frac_bits
    }

    #[getter]
    fn max_magnitude(&self) -> f64 {
        self.0.max_magnitude
    }

    #[getter]
    fn slack_bits(&self) -> u32 {
        self.0.slack_bits
    }

    fn resolution(&self) -> f64 {
        self.0.resolution()
    }

    fn __repr__(&self) -> String {
        format!(
            "FixedPointParams(frac_bits={}, max_magnitude={}, slack_bits={})",
            self.0.frac_bits, self.0.max_magnitude, self.0.slack_bits
        )
    }
}

/// A Paillier ciphertext tagged with its public-key fingerprint.
#[pyclass(name = "Ciphertext", from_py_object)]
#[derive(Clone)]
struct PyCiphertext(ahe::Ciphertext);

#[pymethods]
impl PyCiphertext {
    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.to_bytes())
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self(ahe::Ciphertext::from_bytes(data).map_err(err)?))
    }

    #[getter]
    fn key_fingerprint(&self) -> u64 {
        self.0.key_fingerprint()
    }

    fn __repr__(&self) -> String {
        format!("<Ciphertext under key {:#018x}>", self.0.key_fingerprint())
    }
}

/// The public half of a Paillier key pair.
#[pyclass(name = "PublicKey", skip_from_py_object)]
#[derive(Clone)]
struct PyPublicKey(ahe::PublicKey);

#[pymethods]
impl PyPublicKey {
    #[getter]
    fn modulus_bits(&self) -> u64 {
        self.0.modulus_bits()
    }

    #[getter]
    fn fingerprint(&self) -> u64 {
        self.0.fingerprint()
    }

    fn modulus<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        biguint_to_py(py, self.0.modulus())
    }

    /// Encrypt a ring integer `0 <= m < n`.
    #[pyo3(signature = (m, seed=None))]
    fn encrypt(&self, m: &Bound<'_, PyAny>, seed: Option<u64>) -> PyResult<PyCiphertext> {
        let m = py_to_biguint(m)?;
        Ok(PyCiphertext(
            self.0.encrypt(&m, &mut rng_from(seed)).map_err(err)?,
        ))
    }

    /// Homomorphic addition: decrypts to (m1 + m2) mod n.
    fn hom_add(&self, c1: &PyCiphertext, c2: &PyCiphertext) -> PyResult<PyCiphertext> {
        Ok(PyCiphertext(self.0.hom_add(&c1.0, &c2.0).map_err(err)?))
    }

    /// Homomorphic scalar multiply: decrypts to (k·m) mod n.
    fn hom_scale(&self, c: &PyCiphertext, k: &Bound<'_, PyAny>) -> PyResult<PyCiphertext> {
        let k = py_to_biguint(k)?;
        Ok(PyCiphertext(self.0.hom_scale(&c.0, &k).map_err(err)?))
    }

    /// Fixed-point encode and encrypt a list of reals elementwise.
    #[pyo3(signature = (values, params, seed=None))]
    fn encrypt_vector(
        &self,
        values: Vec<f64>,
        params: &PyFixedPointParams,
        seed: Option<u64>,
    ) -> PyResult<Vec<PyCiphertext>> {
        Ok(
            ahe::encrypt_vector(&self.0, &values, &params.0, &mut rng_from(seed))
                .map_err(err)?
                .into_iter()
                .map(PyCiphertext)
                .collect(),
        )
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.to_bytes())
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self(ahe::PublicKey::from_bytes(data).map_err(err)?))
    }

    fn __repr__(&self) -> String {
        format!(
            "<PublicKey {} bits, fingerprint {:#018x}>",
            self.0.modulus_bits(),
            self.0.fingerprint()
        )
    }
}

/// A full Paillier key pair (holds the secret key).
#[pyclass(name = "KeyPair")]
struct PyKeyPair(ahe::KeyPair);

#[pymethods]
impl PyKeyPair {
    /// Generate a fresh key pair; `modulus_bits` must be even and >= 256.
    #[staticmethod]
    #[pyo3(signature = (modulus_bits=2048, seed=None))]
    fn generate(modulus_bits: u64, seed: Option<u64>) -> PyResult<Self> {
        Ok(Self(
            ahe::keygen(modulus_bits, &mut rng_from(seed)).map_err(err)?,
        ))
    }

    #[getter]
    fn modulus_bits(&self) -> u64 {
        self.0.modulus_bits()
    }

    fn public_key(&self) -> PyPublicKey {
        PyPublicKey(self.0.public_key().clone())
    }

    /// Decrypt a ciphertext to its ring integer.
    fn decrypt<'py>(&self, py: Python<'py>, c: &PyCiphertext) -> PyResult<Bound<'py, PyAny>> {
        let m = self.0.secret_key().decrypt(&c.0).map_err(err)?;
        biguint_to_py(py, &m)
    }

    /// Decrypt and fixed-point decode a ciphertext vector.
    fn decrypt_vector(
        &self,
        cts: Vec<PyCiphertext>,
        params: &PyFixedPointParams,
    ) -> PyResult<Vec<f64>> {
        let inner: Vec<ahe::Ciphertext> = cts.into_iter().map(|c| c.0).collect();
        ahe::decrypt_vector(self.0.secret_key(), &inner, &params.0).map_err(err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.to_bytes())
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self(ahe::KeyPair::from_bytes(data).map_err(err)?))
    }

    fn __repr__(&self) -> String {
        format!("<KeyPair {} bits>", self.0.modulus_bits())
    }
}

/// Block-Hankel pruning parameters: block size `l` and scaling factor κ.
#[pyclass(name = "BhmParams", skip_from_py_object)]
#[derive(Clone)]
struct PyBhmParams(bhm::BhmParams);

#[pymethods]
impl PyBhmParams {
    #[new]
    #[pyo3(signature = (block_size=2, scaling_factor=1.0))]
    fn new(block_size: usize, scaling_factor: f64) -> PyResult<Self> {
        Ok(Self(
            bhm::BhmParams::new(block_size, scaling_factor).map_err(err)?,
        ))
    }

    #[getter]
    fn block_size(&self) -> usize {
        self.0.block_size
    }

    #[getter]
    fn scaling_factor(&self) -> f64 {
        self.0.scaling_factor
    }

    /// Stored values per block: 2l − 1.
    fn seq_len(&self) -> usize {
        self.0.seq_len()
    }

    /// Stored-to-dense ratio (2l−1)/l².
    fn compression_ratio(&self) -> f64 {
        self.0.compression_ratio()
    }

    fn __repr__(&self) -> String {
        format!(
            "BhmParams(block_size={}, scaling_factor={})",
            self.0.block_size, self.0.scaling_factor
        )
    }
}

/// A compressed update: per-block sequence vectors plus shape metadata.
#[pyclass(name = "BhmUpdate", skip_from_py_object)]
#[derive(Clone)]
struct PyBhmUpdate(bhm::BhmUpdate);

#[pymethods]
impl PyBhmUpdate {
    #[getter]
    fn rows(&self) -> usize {
        self.0.rows()
    }

    #[getter]
    fn cols(&self) -> usize {
        self.0.cols()
    }

    #[getter]
    fn block_size(&self) -> usize {
        self.0.block_size()
    }

    #[getter]
    fn grid(&self) -> (usize, usize) {
        self.0.grid()
    }

    fn seq_vectors(&self) -> Vec<Vec<f64>> {
        self.0.seq_vectors().to_vec()
    }

    fn stored_len(&self) -> usize {
        self.0.stored_len()
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.to_bytes())
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self(bhm::BhmUpdate::from_bytes(data).map_err(err)?))
    }

    fn __repr__(&self) -> String {
        format!(
            "<BhmUpdate {}x{} l={} ({} stored values)>",
            self.0.rows(),
            self.0.cols(),
            self.0.block_size(),
            self.0.stored_len()
        )
    }
}

/// Compress a dense matrix (list of equal-length rows) to block-Hankel form.
#[pyfunction]
fn compress(matrix: Vec<Vec<f64>>, params: &PyBhmParams) -> PyResult<PyBhmUpdate> {
    let m = matrix_from_py(matrix)?;
    Ok(PyBhmUpdate(
        bhm::compress(&m.view(), &params.0).map_err(err)?,
    ))
}

/// Reconstruct the dense matrix a compressed update represents.
#[pyfunction]
fn decompress(update: &PyBhmUpdate) -> PyResult<Vec<Vec<f64>>> {
    Ok(matrix_to_py(&bhm::decompress(&update.0).map_err(err)?))
}

/// Elementwise sum of two compressed updates with identical shape metadata.
#[pyfunction]
fn add_bhm(a: &PyBhmUpdate, b: &PyBhmUpdate) -> PyResult<PyBhmUpdate> {
    Ok(PyBhmUpdate(bhm::add_bhm(&a.0, &b.0).map_err(err)?))
}

/// (blind_sum, true_sum, blind_matches_true, identical_patterns)
type PitfallResult = (Vec<Vec<f64>>, Vec<Vec<f64>>, bool, bool);

/// Demonstrate why index-based sparse formats cannot be aggregated under
/// encryption: returns (blind_sum, true_sum, matches, identical_patterns).
#[pyfunction]
fn csr_pitfall(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<PitfallResult> {
    let a = bhm::CsrUpdate::from_dense(&matrix_from_py(a)?.view());
    let b = bhm::CsrUpdate::from_dense(&matrix_from_py(b)?.view());
    let report = bhm::demonstrate_csr_pitfall(&a, &b).map_err(err)?;
    Ok((
        matrix_to_py(&report.blind_sum),
        matrix_to_py(&report.true_sum),
        report.blind_matches_true,
        report.identical_patterns,
    ))
}

/// L2-clip a vector to the given bound.
#[pyfunction]
fn clip(update: Vec<f64>, clip_bound: f64) -> Vec<f64> {
    dp::clip(&update, clip_bound)
}

/// Gaussian-mechanism noise scale: sqrt(2·ln(1.25/delta))/epsilon.
#[pyfunction]
fn derive_sigma(epsilon: f64, delta: f64) -> PyResult<f64> {
    dp::derive_sigma(epsilon, delta).map_err(err)
}

/// Deterministic N(0, std²) samples via Box-Muller over a seeded
/// counter-based generator.
#[pyfunction]
fn sample_gaussian_vector(dim: usize, std: f64, seed: u64) -> PyResult<Vec<f64>> {
    dp::sample_gaussian_vector(dim, std, seed).map_err(err)
}

/// Simulation configuration; mirrors the CLI's experiment schema.
#[pyclass(name = "SimConfig", skip_from_py_object)]
#[derive(Clone)]
struct PySimConfig(fedsim::SimConfig);

#[pymethods]
impl PySimConfig {
    #[new]
    #[pyo3(signature = (
        num_clients=8, rounds=5, dropout_rate=0.0, threshold=2, model_dim=9,
        learning_rate=0.2, local_steps=1, samples_per_client=24, data_noise_std=0.01,
        epsilon=1.0, delta=1e-5, clip_bound=1.0, scaling_factor=1.0, block_size=2,
        modulus_bits=256, seed=42, sigma_override=None, two_party_gaussian=false,
        keep_transcripts=false
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        num_clients: usize,
        rounds: u32,
        dropout_rate: f64,
        threshold: usize,
        model_dim: usize,
        learning_rate: f64,
        local_steps: u32,
        samples_per_client: usize,
        data_noise_std: f64,
        epsilon: f64,
        delta: f64,
        clip_bound: f64,
        scaling_factor: f64,
        block_size: usize,
        modulus_bits: u64,
        seed: u64,
        sigma_override: Option<f64>,
        two_party_gaussian: bool,
        keep_transcripts: bool,
    ) -> PyResult<Self> {
        let mut dp_params =
            dp::DpParams::new(epsilon, delta, clip_bound, scaling_factor, rounds).map_err(err)?;
        if let Some(sigma) = sigma_override {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(PyValueError::new_err("sigma_override must be >= 0"));
            }
            dp_params.sigma = sigma;
        }
        let config = fedsim::SimConfig {
            num_clients,
            rounds,
            dropout_rate,
            threshold,
            model_dim,
            learning_rate,
            local_steps,
            data: fedsim::DataSpec {
                true_weights: None,
                noise_std: data_noise_std,
                samples_per_client: fedsim::SampleSpec::Uniform(samples_per_client),
            },
            dp: dp_params,
            bhm: bhm::BhmParams::new(block_size, scaling_factor).map_err(err)?,
            fixed: ahe::FixedPointParams::default(),
            modulus_bits,
            noise_mode: if two_party_gaussian {
                NoiseMode::TwoPartyGaussian
            } else {
                NoiseMode::CombinedBits
            },
            keep_transcripts,
            seed,
        };
        config.validate().map_err(err)?;
        Ok(Self(config))
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.0.dp.sigma
    }

    /// Warning string when the threshold is infeasible at the dropout rate.
    fn feasibility_warning(&self) -> Option<String> {
        self.0.feasibility_warning()
    }

    fn __repr__(&self) -> String {
        format!(
            "SimConfig(num_clients={}, rounds={}, dropout_rate={}, threshold={}, seed={})",
            self.0.num_clients, self.0.rounds, self.0.dropout_rate, self.0.threshold, self.0.seed
        )
    }
}

/// Result of a simulation run.
#[pyclass(name = "SimReport")]
struct PySimReport(fedsim::SimReport);

#[pymethods]
impl PySimReport {
    #[getter]
    fn initial_loss(&self) -> f64 {
        self.0.initial_loss
    }

    #[getter]
    fn final_loss(&self) -> f64 {
        self.0.final_loss
    }

    #[getter]
    fn final_weights(&self) -> Vec<f64> {
        self.0.final_weights.clone()
    }

    fn completed_rounds(&self) -> usize {
        self.0.completed_rounds()
    }

    fn skipped_rounds(&self) -> usize {
        self.0.skipped_rounds()
    }

    /// Per-round metric rows as dictionaries.
    fn metrics(&self, py: Python<'_>) -> PyResult<Vec<Py<PyAny>>> {
        self.0
            .metrics
            .iter()
            .map(|m| {
                let d = pyo3::types::PyDict::new(py);
                d.set_item("round", m.round)?;
                d.set_item("completed", m.completed)?;
                d.set_item("abort_reason", m.abort_reason.clone())?;
                d.set_item("survivors", m.survivors)?;
                d.set_item("participating_weight", m.participating_weight)?;
                d.set_item("global_loss", m.global_loss)?;
                d.set_item("epsilon_total", m.epsilon_total)?;
                d.set_item("delta_total", m.delta_total)?;
                Ok(d.into_any().unbind())
            })
            .collect()
    }

    /// The metrics table as CSV text (same columns as the CLI).
    fn metrics_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.0
            .write_metrics_csv(&mut buf)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Total privacy spend (epsilon_total, delta_total).
    fn privacy_spent(&self) -> (f64, f64) {
        self.0.ledger.total()
    }

    /// Transcript export (line-delimited JSON) when the config kept them.
    fn transcripts_jsonl(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        for t in &self.0.transcripts {
            t.to_jsonl(&mut buf)
                .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        }
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "<SimReport {} rounds, loss {:.6} -> {:.6}>",
            self.0.metrics.len(),
            self.0.initial_loss,
            self.0.final_loss
        )
    }
}

/// Run a full secure simulation.
#[pyfunction]
fn run_simulation(config: &PySimConfig) -> PyResult<PySimReport> {
    Ok(PySimReport(
        fedsim::run_simulation(&config.0).map_err(err)?,
    ))
}

/// Run the plaintext FedAvg-over-BHM reference at the same config; returns
/// (initial_loss, final_loss, final_weights).
#[pyfunction]
fn run_reference(config: &PySimConfig) -> PyResult<(f64, f64, Vec<f64>)> {
    let report = fedsim::run_reference(&config.0).map_err(err)?;
    Ok((report.initial_loss, report.final_loss, report.final_weights))
}

/// Dropout-rate sweep over a shared base seed; one dict per rate.
#[pyfunction]
fn compare_dropout_sweep(
    py: Python<'_>,
    config: &PySimConfig,
    rates: Vec<f64>,
) -> PyResult<Vec<Py<PyAny>>> {
    let table = fedsim::compare_dropout_sweep(&config.0, &rates).map_err(err)?;
    table
        .rows
        .iter()
        .map(|row| {
            let d = pyo3::types::PyDict::new(py);
            d.set_item("dropout_rate", row.dropout_rate)?;
            d.set_item("completed_rounds", row.completed_rounds)?;
            d.set_item("skipped_rounds", row.skipped_rounds)?;
            d.set_item("initial_loss", row.initial_loss)?;
            d.set_item("final_loss", row.final_loss)?;
            d.set_item("mean_survivors", row.mean_survivors)?;
            d.set_item("frequently_aborting", row.frequently_aborting)?;
            Ok(d.into_any().unbind())
        })
        .collect()
}

#[pymodule]
fn secfed(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKeyPair>()?;
    m.add_class::<PyPublicKey>()?;
    m.add_class::<PyCiphertext>()?;
    m.add_class::<PyFixedPointParams>()?;
    m.add_class::<PyBhmParams>()?;
    m.add_class::<PyBhmUpdate>()?;
    m.add_class::<PySimConfig>()?;
    m.add_class::<PySimReport>()?;
    m.add_function(wrap_pyfunction!(compress, m)?)?;
    m.add_function(wrap_pyfunction!(decompress, m)?)?;
    m.add_function(wrap_pyfunction!(add_bhm, m)?)?;
    m.add_function(wrap_pyfunction!(csr_pitfall, m)?)?;
    m.add_function(wrap_pyfunction!(clip, m)?)?;
    m.add_function(wrap_pyfunction!(derive_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(sample_gaussian_vector, m)?)?;
    m.add_function(wrap_pyfunction!(run_simulation, m)?)?;
    m.add_function(wrap_pyfunction!(run_reference, m)?)?;
    m.add_function(wrap_pyfunction!(compare_dropout_sweep, m)?)?;
    Ok(())
}
