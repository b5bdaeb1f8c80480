//! Sparse linear solves: ILU(0)-preconditioned restarted GMRES with a sparse
//! LU fallback.

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Par};

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Builds from triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Csr {
        let mut t: Vec<(usize, usize, f64)> = triplets.to_vec();
        t.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *vals.last_mut().expect("nonempty") += v;
                continue;
            }
            cols.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Csr {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }
}

/// Incomplete LU factorization with the sparsity pattern of `A`.
struct Ilu0 {
    lu: Csr,
    diag: Vec<usize>,
}

impl Ilu0 {
    fn new(a: &Csr) -> Option<Ilu0> {
        let mut lu = a.clone();
        let n = a.n;
        let mut diag = vec![usize::MAX; n];
        for i in 0..n {
            for k in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                if lu.cols[k] == i {
                    diag[i] = k;
                }
            }
            if diag[i] == usize::MAX {
                return None;
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for k in start..end {
                pos[lu.cols[k]] = k;
            }
            for k in start..end {
                let j = lu.cols[k];
                if j >= i {
                    break;
                }
                let pivot = lu.vals[diag[j]];
                let factor = lu.vals[k] / pivot;
                lu.vals[k] = factor;
                for m in diag[j] + 1..lu.row_ptr[j + 1] {
                    let p = pos[lu.cols[m]];
                    if p != usize::MAX {
                        lu.vals[p] -= factor * lu.vals[m];
                    }
                }
            }
            for k in start..end {
                pos[lu.cols[k]] = usize::MAX;
            }
            let d = lu.vals[diag[i]];
            if !(d.abs() > 1e-300 && d.is_finite()) {
                return None;
            }
        }
        Some(Ilu0 { lu, diag })
    }

    fn apply(&self, x: &mut [f64]) {
        let lu = &self.lu;
        for i in 0..lu.n {
            let mut s = x[i];
            for k in lu.row_ptr[i]..self.diag[i] {
                s -= lu.vals[k] * x[lu.cols[k]];
            }
            x[i] = s;
        }
        for i in (0..lu.n).rev() {
            let mut s = x[i];
            for k in self.diag[i] + 1..lu.row_ptr[i + 1] {
                s -= lu.vals[k] * x[lu.cols[k]];
            }
            x[i] = s / lu.vals[self.diag[i]];
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Right-preconditioned restarted GMRES; returns `None` without convergence.
fn gmres(
    a: &Csr,
    pre: &Ilu0,
    b: &[f64],
    rel_tol: f64,
    restart: usize,
    max_iter: usize,
) -> Option<Vec<f64>> {
    let n = a.n;
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Some(x);
    }
    let target = rel_tol * bnorm;
    let mut r = b.to_vec();
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut total = 0;
    while total < max_iter {
        let beta = norm(&r);
        if beta <= target {
            return Some(x);
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut hcols: Vec<Vec<f64>> = Vec::new();
        let (mut cs, mut sn): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
        let mut g = vec![beta];
        for j in 0..restart {
            total += 1;
            z.copy_from_slice(&v[j]);
            pre.apply(&mut z);
            a.mul(&z, &mut w);
            let mut h = vec![0.0; j + 2];
            // modified Gram-Schmidt
            for (i, vi) in v.iter().enumerate() {
                let d: f64 = w.iter().zip(vi).map(|(a, b)| a * b).sum();
                h[i] = d;
                w.iter_mut().zip(vi).for_each(|(wk, vk)| *wk -= d * vk);
            }
            h[j + 1] = norm(&w);
            for i in 0..j {
                let t = cs[i] * h[i] + sn[i] * h[i + 1];
                h[i + 1] = -sn[i] * h[i] + cs[i] * h[i + 1];
                h[i] = t;
            }
            let denom = h[j].hypot(h[j + 1]);
            let (c, s) = if denom == 0.0 {
                (1.0, 0.0)
            } else {
                (h[j] / denom, h[j + 1] / denom)
            };
            cs.push(c);
            sn.push(s);
            h[j] = denom;
            let hj1 = h[j + 1];
            h[j + 1] = 0.0;
            g.push(-s * g[j]);
            g[j] *= c;
            hcols.push(h);
            let resid = g[j + 1].abs();
            if hj1 > 0.0 {
                v.push(w.iter().map(|x| x / hj1).collect());
            }
            if resid <= target || hj1 == 0.0 || total >= max_iter {
                break;
            }
        }
        // back substitution for the Krylov coefficients
        let k = hcols.len();
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for (m, ym) in y.iter().enumerate().take(k).skip(i + 1) {
                s -= hcols[m][i] * ym;
            }
            y[i] = s / hcols[i][i];
        }
        let mut update = vec![0.0; n];
        for (i, yi) in y.iter().enumerate() {
            update
                .iter_mut()
                .zip(&v[i])
                .for_each(|(u, vi)| *u += yi * vi);
        }
        pre.apply(&mut update);
        x.iter_mut().zip(&update).for_each(|(xi, ui)| *xi += ui);
        a.mul(&x, &mut w);
        r.iter_mut()
            .zip(b.iter().zip(&w))
            .for_each(|(ri, (bi, wi))| *ri = bi - wi);
    }
    (norm(&r) <= target).then_some(x)
}

/// Relative residual demanded of the iterative solve.
pub const ITERATIVE_TOL: f64 = 1e-10;

const RESTART: usize = 100;
const MAX_KRYLOV: usize = 3000;

/// Solves `A x = b` for `A` given as triplets. Tries ILU(0)-GMRES first and
/// falls back to sparse LU when it fails to reach [`ITERATIVE_TOL`].
pub fn solve_sparse(n: usize, triplets: &[(usize, usize, f64)], b: &[f64]) -> Result<Vec<f64>> {
    if triplets.iter().any(|t| !t.2.is_finite()) || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolveFailure("non-finite entries".into()));
    }
    let a = Csr::from_triplets(n, triplets);
    if let Some(pre) = Ilu0::new(&a) {
        if let Some(x) = gmres(&a, &pre, b, ITERATIVE_TOL, RESTART, MAX_KRYLOV) {
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
    }
    solve_lu(n, triplets, b)
}

/// Sparse direct solve.
pub fn solve_lu(n: usize, triplets: &[(usize, usize, f64)], b: &[f64]) -> Result<Vec<f64>> {
    faer::set_global_parallelism(Par::Seq);
    let entries: Vec<Triplet<usize, usize, f64>> = triplets
        .iter()
        .map(|&(r, c, v)| Triplet::new(r, c, v))
        .collect();
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &entries)
        .map_err(|e| Error::LinearSolveFailure(format!("{e:?}")))?;
    // faer panics on an exactly zero numerical pivot
    let factored = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| a.sp_lu()))
        .map_err(|_| Error::SingularSystem)?;
    let lu = factored.map_err(|e| Error::LinearSolveFailure(format!("{e:?}")))?;
    let rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
    let x = lu.solve(&rhs);
    let out: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(out)
}
