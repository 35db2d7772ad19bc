//! Built-in benchmark problems and the JSON problem document.
//!
//! The document describes quadratic programs:
//!
//! ```json
//! { "n": 2, "kappa": 1,
//!   "Q": [[2, 0], [0, 2]], "c": [0, 0], "offset": 0,
//!   "A_ineq": [[0, 0]], "b_ineq": [1], "Q_ineq": [[[2, 0], [0, 2]]],
//!   "A_eq": [], "b_eq": [] }
//! ```
//!
//! encoding `f(x) = 1/2 x^T Q x + c^T x + offset`,
//! `g(x) = A_ineq x - b_ineq (+ 1/2 x^T Q_ineq[i] x)` and
//! `h(x) = A_eq x - b_eq (+ 1/2 x^T Q_eq[j] x)`. Matrices are given as
//! arrays of rows or as flat row-major arrays. `offset`, `Q_ineq`, `Q_eq`,
//! the constraint blocks, `name` and `generator` are optional.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::model::{Problem, QuadraticData};

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 4] = ["disk2d", "dist3d", "sparse_lsq", "portfolio"];

/// Generator parameters for the seeded built-ins; unset fields take the
/// per-problem defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuiltinParams {
    pub n: Option<usize>,
    pub kappa: Option<usize>,
    pub seed: Option<u64>,
    /// Rows of the design matrix (`sparse_lsq`).
    pub rows: Option<usize>,
    /// Noise scale (`sparse_lsq`).
    pub noise: Option<f64>,
    /// Return weight (`portfolio`).
    pub rho: Option<f64>,
}

/// Fully resolved generator description recorded in emitted documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub kind: String,
    pub n: usize,
    pub kappa: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `min x1^2 + x2^2` over the unit disk with `kappa = 1`.
pub fn disk2d() -> QuadraticData {
    let mut data = QuadraticData::unconstrained(1, DMatrix::identity(2, 2) * 2.0, DVector::zeros(2), 0.0);
    data.a_ineq = DMatrix::zeros(1, 2);
    data.b_ineq = DVector::from_element(1, 1.0);
    data.q_ineq = vec![DMatrix::identity(2, 2) * 2.0];
    data
}

/// `min ||x - (0, 1, 2)||^2` with `kappa = 1`.
pub fn dist3d() -> QuadraticData {
    let a = DVector::from_vec(vec![0.0, 1.0, 2.0]);
    QuadraticData::unconstrained(1, DMatrix::identity(3, 3) * 2.0, -&a * 2.0, a.norm_squared())
}

fn resolve_nk(params: &BuiltinParams, n: usize, kappa: usize) -> Result<(usize, usize)> {
    let n = params.n.unwrap_or(n);
    let kappa = params.kappa.unwrap_or(kappa);
    if n == 0 || kappa == 0 || kappa >= n {
        return Err(Error::parse("kappa", format!("need 0 < kappa < n, got kappa = {kappa}, n = {n}")));
    }
    Ok((n, kappa))
}

/// `min ||A x - b||^2` with Gaussian `A` and `b = A x_true + noise`,
/// `x_true` being `kappa`-sparse.
pub fn sparse_lsq(params: &BuiltinParams) -> Result<(QuadraticData, Generator)> {
    let (n, kappa) = resolve_nk(params, 6, 2)?;
    let seed = params.seed.unwrap_or(7);
    let rows = params.rows.unwrap_or(2 * n);
    let noise = params.noise.unwrap_or(0.01);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(rows, n, |_, _| gaussian(&mut rng));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut x_true = DVector::zeros(n);
    for &i in &idx[..kappa] {
        let magnitude = 1.0 + rng.gen::<f64>();
        x_true[i] = if rng.gen::<bool>() { magnitude } else { -magnitude };
    }
    let b = &a * &x_true + DVector::from_fn(rows, |_, _| noise * gaussian(&mut rng));
    let q = a.transpose() * &a * 2.0;
    let c = a.transpose() * &b * -2.0;
    let data = QuadraticData::unconstrained(kappa, q, c, b.norm_squared());
    let generator = Generator {
        kind: "sparse_lsq".into(),
        n,
        kappa,
        seed,
        rows: Some(rows),
        noise: Some(noise),
        rho: None,
    };
    Ok((data, generator))
}

/// `min x^T S x - rho r^T x` over the simplex `e^T x = 1, x >= 0`, with a
/// seeded positive definite covariance `S`.
pub fn portfolio(params: &BuiltinParams) -> Result<(QuadraticData, Generator)> {
    let (n, kappa) = resolve_nk(params, 8, 3)?;
    let seed = params.seed.unwrap_or(11);
    let rho = params.rho.unwrap_or(0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = DMatrix::from_fn(n, n, |_, _| 0.3 * gaussian(&mut rng));
    let sigma = &factors * factors.transpose() / n as f64 + DMatrix::identity(n, n) * 0.05;
    let returns = DVector::from_fn(n, |_, _| 0.05 + 0.1 * gaussian(&mut rng));
    let mut data = QuadraticData::unconstrained(kappa, sigma * 2.0, returns * -rho, 0.0);
    data.a_ineq = -DMatrix::identity(n, n);
    data.b_ineq = DVector::zeros(n);
    data.a_eq = DMatrix::from_element(1, n, 1.0);
    data.b_eq = DVector::from_element(1, 1.0);
    let generator = Generator {
        kind: "portfolio".into(),
        n,
        kappa,
        seed,
        rows: None,
        noise: None,
        rho: Some(rho),
    };
    Ok((data, generator))
}

/// Quadratic data and generator record of a named built-in.
pub fn builtin_data(name: &str, params: &BuiltinParams) -> Result<(QuadraticData, Option<Generator>)> {
    match name {
        "disk2d" => Ok((disk2d(), None)),
        "dist3d" => Ok((dist3d(), None)),
        "sparse_lsq" => sparse_lsq(params).map(|(d, g)| (d, Some(g))),
        "portfolio" => portfolio(params).map(|(d, g)| (d, Some(g))),
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}

/// Construct a named built-in problem.
pub fn builtin(name: &str, params: &BuiltinParams) -> Result<Problem> {
    let (data, _) = builtin_data(name, params)?;
    Problem::from_quadratic(name, data)
}

fn matrix_value(a: &DMatrix<f64>) -> Value {
    Value::Array((0..a.nrows()).map(|i| json!(a.row(i).iter().copied().collect::<Vec<f64>>())).collect())
}

fn vector_value(v: &DVector<f64>) -> Value {
    json!(v.iter().copied().collect::<Vec<f64>>())
}

/// Serialize quadratic data (plus optional metadata) to the JSON document.
pub fn to_document(name: &str, data: &QuadraticData, generator: Option<&Generator>) -> Value {
    let mut doc = Map::new();
    doc.insert("name".into(), json!(name));
    if let Some(g) = generator {
        doc.insert("generator".into(), serde_json::to_value(g).expect("plain struct"));
    }
    doc.insert("n".into(), json!(data.n));
    doc.insert("kappa".into(), json!(data.kappa));
    doc.insert("Q".into(), matrix_value(&data.q));
    doc.insert("c".into(), vector_value(&data.c));
    doc.insert("offset".into(), json!(data.offset));
    doc.insert("A_ineq".into(), matrix_value(&data.a_ineq));
    doc.insert("b_ineq".into(), vector_value(&data.b_ineq));
    if !data.q_ineq.is_empty() {
        doc.insert("Q_ineq".into(), Value::Array(data.q_ineq.iter().map(matrix_value).collect()));
    }
    doc.insert("A_eq".into(), matrix_value(&data.a_eq));
    doc.insert("b_eq".into(), vector_value(&data.b_eq));
    if !data.q_eq.is_empty() {
        doc.insert("Q_eq".into(), Value::Array(data.q_eq.iter().map(matrix_value).collect()));
    }
    Value::Object(doc)
}

fn number(v: &Value, field: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| Error::parse(field, "expected a number"))
}

fn count(doc: &Map<String, Value>, field: &str) -> Result<usize> {
    let v = doc.get(field).ok_or_else(|| Error::parse(field, "missing"))?;
    v.as_u64()
        .map(|u| u as usize)
        .ok_or_else(|| Error::parse(field, "expected a non-negative integer"))
}

fn parse_vector(v: &Value, field: &str) -> Result<DVector<f64>> {
    let arr = v.as_array().ok_or_else(|| Error::parse(field, "expected an array of numbers"))?;
    let vals = arr
        .iter()
        .enumerate()
        .map(|(i, e)| number(e, &format!("{field}[{i}]")))
        .collect::<Result<Vec<f64>>>()?;
    Ok(DVector::from_vec(vals))
}

/// Rows-of-arrays or flat row-major matrix with `cols` columns.
fn parse_matrix(v: &Value, field: &str, rows: Option<usize>, cols: usize) -> Result<DMatrix<f64>> {
    let arr = v.as_array().ok_or_else(|| Error::parse(field, "expected an array"))?;
    if arr.is_empty() {
        if rows.unwrap_or(0) != 0 {
            return Err(Error::parse(field, format!("expected {} rows, got 0", rows.unwrap_or(0))));
        }
        return Ok(DMatrix::zeros(0, cols));
    }
    if arr.iter().all(Value::is_array) {
        let mut data = Vec::with_capacity(arr.len() * cols);
        for (i, row) in arr.iter().enumerate() {
            let r = parse_vector(row, &format!("{field}[{i}]"))?;
            if r.len() != cols {
                return Err(Error::parse(field, format!("row {i} has {} entries, expected {cols}", r.len())));
            }
            data.extend(r.iter());
        }
        let nrows = arr.len();
        if let Some(expect) = rows {
            if expect != nrows {
                return Err(Error::parse(field, format!("expected {expect} rows, got {nrows}")));
            }
        }
        return Ok(DMatrix::from_row_slice(nrows, cols, &data));
    }
    let flat = parse_vector(v, field)?;
    let nrows = rows.unwrap_or(flat.len() / cols.max(1));
    if flat.len() != nrows * cols {
        return Err(Error::parse(
            field,
            format!("flat matrix has {} entries, expected {}x{cols}", flat.len(), nrows),
        ));
    }
    Ok(DMatrix::from_row_slice(nrows, cols, flat.as_slice()))
}

fn parse_matrix_list(v: &Value, field: &str, len: usize, n: usize) -> Result<Vec<DMatrix<f64>>> {
    let arr = v.as_array().ok_or_else(|| Error::parse(field, "expected an array of matrices"))?;
    if arr.len() != len {
        return Err(Error::parse(field, format!("expected {len} matrices, got {}", arr.len())));
    }
    arr.iter()
        .enumerate()
        .map(|(i, m)| parse_matrix(m, &format!("{field}[{i}]"), Some(n), n))
        .collect()
}

const DOCUMENT_KEYS: [&str; 13] = [
    "name", "generator", "n", "kappa", "Q", "c", "offset", "A_ineq", "b_ineq", "Q_ineq", "A_eq", "b_eq", "Q_eq",
];

/// Parse and validate a problem document. Returns the name and the data.
pub fn from_document(doc: &Value) -> Result<(String, QuadraticData)> {
    let obj = doc.as_object().ok_or_else(|| Error::parse("document", "expected a JSON object"))?;
    if let Some(key) = obj.keys().find(|k| !DOCUMENT_KEYS.contains(&k.as_str())) {
        return Err(Error::parse(key.clone(), "unknown field"));
    }
    let n = count(obj, "n")?;
    let kappa = count(obj, "kappa")?;
    if n == 0 {
        return Err(Error::parse("n", "dimension must be positive"));
    }
    if kappa == 0 || kappa >= n {
        return Err(Error::parse("kappa", format!("need 0 < kappa < n, got kappa = {kappa}, n = {n}")));
    }
    let name = match obj.get("name") {
        Some(v) => v.as_str().ok_or_else(|| Error::parse("name", "expected a string"))?.to_string(),
        None => "problem".to_string(),
    };
    let q = parse_matrix(obj.get("Q").ok_or_else(|| Error::parse("Q", "missing"))?, "Q", None, n)?;
    if q.nrows() != n {
        return Err(Error::parse("Q", format!("expected a square {n}x{n} matrix, got {}x{n}", q.nrows())));
    }
    let c = parse_vector(obj.get("c").ok_or_else(|| Error::parse("c", "missing"))?, "c")?;
    if c.len() != n {
        return Err(Error::parse("c", format!("expected length {n}, got {}", c.len())));
    }
    let offset = match obj.get("offset") {
        Some(v) => number(v, "offset")?,
        None => 0.0,
    };
    let b_ineq = match obj.get("b_ineq") {
        Some(v) => parse_vector(v, "b_ineq")?,
        None => DVector::zeros(0),
    };
    let a_ineq = match obj.get("A_ineq") {
        Some(v) => parse_matrix(v, "A_ineq", Some(b_ineq.len()), n)?,
        None if b_ineq.is_empty() => DMatrix::zeros(0, n),
        None => return Err(Error::parse("A_ineq", "missing while b_ineq is present")),
    };
    let q_ineq = match obj.get("Q_ineq") {
        Some(v) => parse_matrix_list(v, "Q_ineq", b_ineq.len(), n)?,
        None => Vec::new(),
    };
    let b_eq = match obj.get("b_eq") {
        Some(v) => parse_vector(v, "b_eq")?,
        None => DVector::zeros(0),
    };
    let a_eq = match obj.get("A_eq") {
        Some(v) => parse_matrix(v, "A_eq", Some(b_eq.len()), n)?,
        None if b_eq.is_empty() => DMatrix::zeros(0, n),
        None => return Err(Error::parse("A_eq", "missing while b_eq is present")),
    };
    let q_eq = match obj.get("Q_eq") {
        Some(v) => parse_matrix_list(v, "Q_eq", b_eq.len(), n)?,
        None => Vec::new(),
    };
    let data = QuadraticData { n, kappa, q, c, offset, a_ineq, b_ineq, q_ineq, a_eq, b_eq, q_eq };
    data.validate()?;
    Ok((name, data))
}

/// Load a problem document from disk.
pub fn load(path: impl AsRef<Path>) -> Result<Problem> {
    let text = std::fs::read_to_string(path)?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::parse("document", e.to_string()))?;
    let (name, data) = from_document(&doc)?;
    Problem::from_quadratic(name, data)
}

/// Write a quadratic-data problem to disk.
pub fn save(problem: &Problem, path: impl AsRef<Path>) -> Result<()> {
    let data = problem.quadratic().ok_or_else(|| {
        Error::InvalidProblem("only quadratic-data problems can be saved".into())
    })?;
    let doc = to_document(problem.name(), data, None);
    let text = serde_json::to_string_pretty(&doc).expect("JSON values always serialize");
    std::fs::write(path, text + "\n")?;
    Ok(())
}
