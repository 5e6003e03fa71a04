//! Candidate term library and design-matrix construction.
//!
//! A [`TermLibrary`] is the complete set of monomials of total degree up to
//! `max_degree` over a fixed, ordered feature list. Evaluating the library at
//! every sample of a regression set yields the [`DesignMatrix`] used by the
//! sparse solver. Columns are normalized to unit length before support
//! selection so that term scale does not drive the choice of terms; the
//! stored norms allow coefficients to be mapped back to original units.
//!
//! Term order is graded lexicographic (by total degree, then by exponent
//! vector with earlier features ranking higher), with the constant term
//! first. The order is deterministic and is the canonical tie-break order
//! used by the solver.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::timeseries::RegressionSet;

/// One monomial: an exponent per library feature. All zeros is the constant
/// term.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TermSpec {
    exponents: Vec<u32>,
}

impl TermSpec {
    pub fn new(exponents: Vec<u32>) -> Self {
        Self { exponents }
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.exponents.iter().all(|&e| e == 0)
    }

    /// Evaluate the monomial at one sample (values aligned with the library
    /// feature order).
    pub fn eval(&self, values: &[f64]) -> f64 {
        let mut acc = 1.0;
        for (&e, &v) in self.exponents.iter().zip(values) {
            if e > 0 {
                acc *= v.powi(e as i32);
            }
        }
        acc
    }
}

/// Ordered set of candidate monomials over named features.
#[derive(Debug, Clone, PartialEq)]
pub struct TermLibrary {
    features: Vec<String>,
    max_degree: u32,
    terms: Vec<TermSpec>,
}

/// All monomials of the given total degree over `n_features`, in
/// lexicographic order with the first feature's exponent descending.
fn monomials_of_degree(n_features: usize, degree: u32) -> Vec<Vec<u32>> {
    fn rec(out: &mut Vec<Vec<u32>>, prefix: &mut Vec<u32>, remaining: u32, slots: usize) {
        if slots == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            rec(out, prefix, remaining - e, slots - 1);
            prefix.pop();
        }
    }
    if n_features == 0 {
        return if degree == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    rec(&mut out, &mut Vec::new(), degree, n_features);
    out
}

/// Build the complete monomial library of total degree `max_degree` over the
/// given features. The term count is C(F + max_degree, F).
pub fn build_library<S: AsRef<str>>(features: &[S], max_degree: u32) -> Result<TermLibrary> {
    let names: Vec<String> = features.iter().map(|s| s.as_ref().to_string()).collect();
    for (i, a) in names.iter().enumerate() {
        if names[i + 1..].contains(a) {
            return Err(Error::Config(format!("duplicate feature name: {a}")));
        }
    }
    let mut terms = Vec::new();
    for degree in 0..=max_degree {
        for exps in monomials_of_degree(names.len(), degree) {
            terms.push(TermSpec::new(exps));
        }
    }
    Ok(TermLibrary {
        features: names,
        max_degree,
        terms,
    })
}

impl TermLibrary {
    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn terms(&self) -> &[TermSpec] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Index of the term with the given exponent vector, if present.
    pub fn find(&self, exponents: &[u32]) -> Option<usize> {
        self.terms.iter().position(|t| t.exponents() == exponents)
    }

    /// Index lookup by (feature name, exponent) pairs; features not named
    /// get exponent zero.
    pub fn find_named(&self, pairs: &[(&str, u32)]) -> Option<usize> {
        let mut exps = vec![0u32; self.features.len()];
        for (name, e) in pairs {
            let idx = self.features.iter().position(|f| f == name)?;
            exps[idx] = *e;
        }
        self.find(&exps)
    }

    /// Render a term without its coefficient, e.g. `omega^3·T_f`.
    pub fn term_name(&self, term_idx: usize) -> String {
        let term = &self.terms[term_idx];
        if term.is_constant() {
            return "1".to_string();
        }
        let mut parts = Vec::new();
        for (name, &e) in self.features.iter().zip(term.exponents()) {
            match e {
                0 => {}
                1 => parts.push(name.clone()),
                _ => parts.push(format!("{name}^{e}")),
            }
        }
        parts.join("·")
    }

    /// Render a signed coefficient and term, e.g. `+2.7640e-9·omega^3·T_f`.
    pub fn term_to_string(&self, term_idx: usize, coefficient: f64) -> String {
        let term = &self.terms[term_idx];
        if term.is_constant() {
            format!("{coefficient:+.4e}")
        } else {
            format!("{coefficient:+.4e}·{}", self.term_name(term_idx))
        }
    }
}

/// Library evaluated at every sample: one row per sample, one column per
/// term.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    library: TermLibrary,
    /// Row-major, `n_rows` x `library.len()`.
    values: Vec<f64>,
    n_rows: usize,
}

impl DesignMatrix {
    pub fn library(&self) -> &TermLibrary {
        &self.library
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.library.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.library.len();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn column(&self, p: usize) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.values[i * self.library.len() + p])
            .collect()
    }
}

/// Evaluate every library term at every sample of the regression set.
///
/// Row sample values are matched to library features by channel name; a
/// library feature absent from the rows is a schema error.
pub fn evaluate_library(library: &TermLibrary, rows: &RegressionSet) -> Result<DesignMatrix> {
    let idx: Vec<usize> = library
        .features()
        .iter()
        .map(|f| {
            rows.channels()
                .iter()
                .position(|c| c == f)
                .ok_or_else(|| Error::Schema(format!("missing feature channel: {f}")))
        })
        .collect::<Result<_>>()?;

    let n = rows.len();
    let p = library.len();
    let mut values = Vec::with_capacity(n * p);
    let mut sample = vec![0.0; library.features().len()];
    for i in 0..n {
        let row = rows.row(i);
        for (dst, &src) in sample.iter_mut().zip(&idx) {
            *dst = row[src];
        }
        for term in library.terms() {
            values.push(term.eval(&sample));
        }
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::Data(
            "design matrix contains non-finite entries".into(),
        ));
    }
    Ok(DesignMatrix {
        library: library.clone(),
        values,
        n_rows: n,
    })
}

/// Column-normalized regression problem, ready for support selection.
///
/// Every column and the target are scaled to unit Euclidean norm.
/// Identically-zero columns cannot be normalized; they are excluded from the
/// solve (their support indicator is forced off) rather than rejected, since
/// constant-zero input channels are legitimate.
#[derive(Debug, Clone)]
pub struct NormalizedProblem {
    /// N x P with unit-norm columns; excluded columns are all zero.
    pub(crate) matrix: DMatrix<f64>,
    pub(crate) target: DVector<f64>,
    col_norms: Vec<f64>,
    target_norm: f64,
    excluded: Vec<bool>,
}

impl NormalizedProblem {
    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Column norms of the original matrix; zero for excluded columns.
    pub fn col_norms(&self) -> &[f64] {
        &self.col_norms
    }

    pub fn target_norm(&self) -> f64 {
        self.target_norm
    }

    pub fn excluded(&self) -> &[bool] {
        &self.excluded
    }

    pub fn n_available(&self) -> usize {
        self.excluded.iter().filter(|&&e| !e).count()
    }

    /// Map coefficients fitted on normalized data back to original units.
    pub fn denormalize_coefficients(&self, xi_normalized: &[f64]) -> Vec<f64> {
        xi_normalized
            .iter()
            .zip(&self.col_norms)
            .map(|(&xi, &norm)| {
                if norm > 0.0 {
                    xi * self.target_norm / norm
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Normalize design-matrix columns and the target to unit norm.
pub fn normalize_columns(dm: &DesignMatrix, target: &[f64]) -> Result<NormalizedProblem> {
    let n = dm.n_rows();
    let p = dm.n_cols();
    if target.len() != n {
        return Err(Error::Config(format!(
            "target length {} does not match sample count {n}",
            target.len()
        )));
    }
    if n == 0 {
        return Err(Error::Data("empty regression problem".into()));
    }

    let target_norm = target.iter().map(|v| v * v).sum::<f64>().sqrt();
    if target_norm == 0.0 {
        return Err(Error::Data("target has zero norm".into()));
    }

    let mut matrix = DMatrix::zeros(n, p);
    let mut col_norms = vec![0.0; p];
    let mut excluded = vec![false; p];
    for j in 0..p {
        let norm = (0..n).map(|i| dm.row(i)[j].powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            excluded[j] = true;
            log::warn!(
                "column {} ({}) has zero norm; excluded from support selection",
                j,
                dm.library().term_name(j)
            );
            continue;
        }
        col_norms[j] = norm;
        for i in 0..n {
            matrix[(i, j)] = dm.row(i)[j] / norm;
        }
    }

    let target = DVector::from_iterator(n, target.iter().map(|v| v / target_norm));
    Ok(NormalizedProblem {
        matrix,
        target,
        col_norms,
        target_norm,
        excluded,
    })
}
