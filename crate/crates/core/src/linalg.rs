//! Small dense linear-algebra kernels shared by the certification and
//! solver modules: least squares, a bounded-variable active-set least
//! squares solver, null-space bases and a phase-one simplex.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{Error, Result};

/// Singular values of `a` (possibly empty for degenerate shapes).
pub fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return DVector::zeros(0);
    }
    a.singular_values()
}

/// Least-squares solution of `a x = b` (minimum norm when rank deficient).
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    if a.nrows() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = SVD::new(a.clone(), true, true);
    let smax = svd.singular_values.max();
    let eps = (1e-12 * smax).max(1e-300);
    svd.solve(b, eps)
        .unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Orthonormal basis (columns) of `{d : rows * d = 0}` in `R^n`.
///
/// Singular values below `rel_tol * max(1, sigma_max)` count as zero.
pub fn null_space(rows: &DMatrix<f64>, n: usize, rel_tol: f64) -> DMatrix<f64> {
    if rows.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // pad to a square-or-tall matrix so the SVD returns a full right basis
    let k = rows.nrows().max(n);
    let mut padded = DMatrix::zeros(k, n);
    padded.view_mut((0, 0), (rows.nrows(), n)).copy_from(rows);
    let svd = SVD::new(padded, false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    let cutoff = rel_tol * smax.max(1.0);
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&j| svd.singular_values[j] <= cutoff)
        .map(|j| v_t.row(j).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Numerical rank with the relative cutoff used by [`null_space`].
pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(a);
    if s.is_empty() {
        return 0;
    }
    let cutoff = rel_tol * s.max().max(1.0);
    s.iter().filter(|&&v| v > cutoff).count()
}

/// Eigenvalues and eigenvectors of a symmetric matrix, ascending.
pub fn sym_eigen_sorted(h: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = h.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(h.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (values, vectors)
}

/// `(h + h^T) / 2`
pub fn symmetrize(h: &DMatrix<f64>) -> DMatrix<f64> {
    (h + h.transpose()) * 0.5
}

/// Select the listed columns of `a`.
pub fn select_columns(a: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), cols.len(), |i, j| a[(i, cols[j])])
}

/// Select the listed rows of `a`.
pub fn select_rows(a: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)])
}

/// Stack matrices with a common column count on top of each other.
pub fn vstack(blocks: &[DMatrix<f64>], ncols: usize) -> DMatrix<f64> {
    let nrows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(nrows, ncols);
    let mut r = 0;
    for b in blocks {
        if b.nrows() > 0 {
            out.view_mut((r, 0), (b.nrows(), ncols)).copy_from(b);
            r += b.nrows();
        }
    }
    out
}

/// Solve `min ||c w - d||_2` subject to `w_j >= 0` wherever `nonneg[j]`,
/// leaving the other components free.
///
/// Lawson-Hanson active-set iteration; free components start (and stay) in
/// the passive set. Returns the minimizer.
pub fn bounded_lsq(c: &DMatrix<f64>, d: &DVector<f64>, nonneg: &[bool]) -> Result<DVector<f64>> {
    let k = c.ncols();
    assert_eq!(nonneg.len(), k);
    let mut w = DVector::zeros(k);
    if k == 0 {
        return Ok(w);
    }
    let scale = (1.0 + c.amax()) * (1.0 + d.amax());
    let grad_tol = 1e-13 * scale * (c.nrows().max(k) as f64);
    let mut passive: Vec<bool> = nonneg.iter().map(|&b| !b).collect();
    let max_iter = 30 * k + 50;

    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..k).filter(|&j| passive[j]).collect();
        let mut s = DVector::zeros(k);
        if idx.is_empty() {
            return s;
        }
        let sub = lstsq(&select_columns(c, &idx), d);
        for (t, &j) in idx.iter().enumerate() {
            s[j] = sub[t];
        }
        s
    };

    // initial passive solve over the free columns only
    w = solve_passive(&passive);

    let mut excluded = vec![false; k];
    for _ in 0..max_iter {
        let grad = c.transpose() * (d - c * &w);
        let candidate = (0..k)
            .filter(|&j| nonneg[j] && !passive[j] && !excluded[j])
            .max_by(|&a, &b| grad[a].total_cmp(&grad[b]));
        let j = match candidate {
            Some(j) if grad[j] > grad_tol => j,
            _ => return Ok(w),
        };
        passive[j] = true;

        let mut first = true;
        loop {
            let s = solve_passive(&passive);
            if first && s[j] <= 0.0 {
                // numerically useless column: drop it for this sweep
                passive[j] = false;
                excluded[j] = true;
                break;
            }
            first = false;
            let blocking: Vec<usize> = (0..k)
                .filter(|&i| nonneg[i] && passive[i] && s[i] <= 0.0)
                .collect();
            if blocking.is_empty() {
                w = s;
                excluded.iter_mut().for_each(|e| *e = false);
                break;
            }
            let alpha = blocking
                .iter()
                .map(|&i| w[i] / (w[i] - s[i]))
                .fold(f64::INFINITY, f64::min);
            w = &w + (&s - &w) * alpha;
            for i in 0..k {
                if nonneg[i] && passive[i] && w[i] <= 1e-15 * (1.0 + w.amax()) {
                    passive[i] = false;
                    w[i] = 0.0;
                }
            }
        }
    }
    Err(Error::SubproblemFailure(
        "bounded least squares did not converge".into(),
    ))
}

/// Outcome of a phase-one simplex run.
#[derive(Debug, Clone)]
pub enum LpFeasibility {
    Feasible(DVector<f64>),
    Infeasible,
}

/// Decide whether `{v >= 0 : a v = b}` is nonempty with a phase-one simplex
/// (Bland's rule). Returns a basic feasible point when it is.
pub fn phase_one(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<LpFeasibility> {
    let (r, k) = a.shape();
    let width = k + r + 1;
    let mut tab = DMatrix::<f64>::zeros(r + 1, width);
    for i in 0..r {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..k {
            tab[(i, j)] = sign * a[(i, j)];
        }
        tab[(i, k + i)] = 1.0;
        tab[(i, width - 1)] = sign * b[i];
    }
    // objective row: minimize the artificial sum, expressed in nonbasic terms
    for j in 0..width {
        if j >= k && j < k + r {
            continue;
        }
        let s: f64 = (0..r).map(|i| tab[(i, j)]).sum();
        tab[(r, j)] = -s;
    }
    let mut basis: Vec<usize> = (k..k + r).collect();
    let scale = 1.0 + a.amax() + b.amax();
    let eps = 1e-11 * scale;

    let max_iter = 50 * (k + r) + 100;
    let mut iter = 0;
    loop {
        iter += 1;
        if iter > max_iter {
            return Err(Error::SubproblemFailure("phase-one simplex stalled".into()));
        }
        // Bland: smallest index with negative reduced cost
        let entering = (0..k + r).find(|&j| tab[(r, j)] < -eps);
        let Some(e) = entering else { break };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..r {
            let piv = tab[(i, e)];
            if piv > eps {
                let ratio = tab[(i, width - 1)] / piv;
                match leave {
                    None => leave = Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - 1e-14 || (ratio <= lr + 1e-14 && basis[i] < basis[li]) {
                            leave = Some((i, ratio));
                        }
                    }
                }
            }
        }
        let Some((p, _)) = leave else {
            // unbounded direction cannot occur in phase one; treat as done
            break;
        };
        let piv = tab[(p, e)];
        for j in 0..width {
            tab[(p, j)] /= piv;
        }
        for i in 0..=r {
            if i != p {
                let factor = tab[(i, e)];
                if factor != 0.0 {
                    for j in 0..width {
                        let v = tab[(p, j)];
                        tab[(i, j)] -= factor * v;
                    }
                }
            }
        }
        basis[p] = e;
    }
    let infeas = -tab[(r, width - 1)];
    if infeas > 1e-9 * scale {
        return Ok(LpFeasibility::Infeasible);
    }
    let mut v = DVector::zeros(k);
    for (i, &bj) in basis.iter().enumerate() {
        if bj < k {
            v[bj] = tab[(i, width - 1)].max(0.0);
        }
    }
    Ok(LpFeasibility::Feasible(v))
}
