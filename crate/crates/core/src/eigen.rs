//! Smallest eigenpairs of a normalized Laplacian and their on-disk cache.
//!
//! The solver runs block Lanczos with full reorthogonalization on
//! `2I − L`, whose largest eigenpairs are the smallest of `L` because the
//! spectrum of a normalized Laplacian lies in `[0, 2]`. Each restart does a
//! Rayleigh–Ritz projection on the Krylov basis and keeps the leading Ritz
//! block (thick restart). The block start makes repeated eigenvalues, e.g.
//! one zero per connected component, come out with full multiplicity.

use std::fs;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

const CACHE_MAGIC: &[u8; 4] = b"LLRA";
const CACHE_VERSION: u32 = 1;

/// Extra Ritz vectors carried beyond `k`; they speed up convergence of the
/// last wanted pairs.
const GUARD_VECTORS: usize = 8;
/// Krylov blocks per restart cycle.
const BLOCKS_PER_CYCLE: usize = 4;

/// The `k` smallest eigenpairs of a Laplacian, eigenvalues ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub eigenvalues: Vec<f64>,
    /// `n × k`, column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: Matrix,
    pub graph_hash: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    /// Residual bound `‖L u − λ u‖ ≤ tol · max(1, λ)`.
    pub tol: f64,
    /// Restart budget; `None` means `10 · k`.
    pub max_iter: Option<usize>,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: 1e-8,
            max_iter: None,
            seed: 0,
        }
    }
}

impl EigenBasis {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n(&self) -> usize {
        self.eigenvectors.rows()
    }

    pub fn with_graph_hash(mut self, hash: u64) -> Self {
        self.graph_hash = hash;
        self
    }

    /// `max_ij |(UᵀU − I)_ij|`.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self
            .eigenvectors
            .matmul_tn(&self.eigenvectors)
            .expect("U has matching rows");
        gram.max_abs_diff(&Matrix::identity(self.k()))
    }

    /// `‖L u_i − λ_i u_i‖₂` for every pair.
    pub fn residuals(&self, laplacian: &SparseMatrix) -> Result<Vec<f64>> {
        let lu = laplacian.spmm(&self.eigenvectors)?;
        Ok((0..self.k())
            .map(|i| {
                (0..self.n())
                    .map(|r| {
                        let d = lu.get(r, i) - self.eigenvalues[i] * self.eigenvectors.get(r, i);
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads a cache file and rejects it if it was built from another graph.
    pub fn load(path: impl AsRef<Path>, expected_hash: u64) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let basis = EigenBasis::from_bytes(&bytes)?;
        if basis.graph_hash != expected_hash {
            return Err(Error::StaleCache {
                expected: expected_hash,
                found: basis.graph_hash,
            });
        }
        Ok(basis)
    }

    /// Little-endian layout: magic, u32 version, u64 graph hash, u32 n,
    /// u32 k, k eigenvalues, then the eigenvectors column by column.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, k) = (self.n(), self.k());
        let mut out = Vec::with_capacity(24 + 8 * k * (n + 1));
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.graph_hash.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(k as u32).to_le_bytes());
        for v in &self.eigenvalues {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for c in 0..k {
            for r in 0..n {
                out.extend_from_slice(&self.eigenvectors.get(r, c).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut rd, &mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Format("not an eigen cache (bad magic)".into()));
        }
        let version = read_u32(&mut rd)?;
        if version != CACHE_VERSION {
            return Err(Error::Format(format!(
                "unsupported eigen cache version {version}"
            )));
        }
        let graph_hash = read_u64(&mut rd)?;
        let n = read_u32(&mut rd)? as usize;
        let k = read_u32(&mut rd)? as usize;
        if rd.len() != 8 * k * (n + 1) {
            return Err(Error::Format(format!(
                "eigen cache payload has {} bytes, expected {} for n={n}, k={k}",
                rd.len(),
                8 * k * (n + 1)
            )));
        }
        let eigenvalues = (0..k)
            .map(|_| read_f64(&mut rd))
            .collect::<Result<Vec<_>>>()?;
        let mut eigenvectors = Matrix::zeros(n, k);
        for c in 0..k {
            for r in 0..n {
                eigenvectors.set(r, c, read_f64(&mut rd)?);
            }
        }
        Ok(EigenBasis {
            eigenvalues,
            eigenvectors,
            graph_hash,
        })
    }
}

fn read_exact(rd: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    rd.read_exact(buf)
        .map_err(|_| Error::Format("eigen cache is truncated".into()))
}

fn read_u32(rd: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(rd, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(rd: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(rd, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(rd: &mut &[u8]) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(rd, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Orthonormal vectors stored as the rows of a growable buffer.
struct RowBasis {
    n: usize,
    data: Vec<f64>,
}

impl RowBasis {
    fn new(n: usize) -> Self {
        RowBasis { n, data: Vec::new() }
    }

    fn len(&self) -> usize {
        self.data.len() / self.n
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    fn push(&mut self, v: &[f64]) {
        self.data.extend_from_slice(v);
    }

    fn as_matrix(&self) -> Matrix {
        Matrix::from_vec(self.len(), self.n, self.data.clone()).expect("rows have length n")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthogonalizes `candidates` (rows) against `basis` and against each other,
/// appending the survivors to `basis`. Returns how many were appended.
fn extend_basis(basis: &mut RowBasis, candidates: Matrix, limit: usize) -> usize {
    let mut block = candidates;
    // Two passes of block classical Gram–Schmidt against the existing basis.
    if basis.len() > 0 {
        let v = basis.as_matrix();
        for _ in 0..2 {
            let coeffs = block.matmul_nt(&v).expect("same n");
            let proj = coeffs.matmul(&v).expect("same n");
            for (w, p) in block.as_mut_slice().iter_mut().zip(proj.as_slice()) {
                *w -= p;
            }
        }
    }
    let start = basis.len();
    let mut added = 0;
    for i in 0..block.rows() {
        if added == limit {
            break;
        }
        let mut w = block.row(i).to_vec();
        let original = norm(&w);
        if original == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for j in start..basis.len() {
                let q = basis.row(j);
                let c = dot(&w, q);
                for (x, y) in w.iter_mut().zip(q) {
                    *x -= c * y;
                }
            }
        }
        let len = norm(&w);
        if len <= 1e-10 * original {
            continue;
        }
        w.iter_mut().for_each(|x| *x /= len);
        basis.push(&w);
        added += 1;
    }
    added
}

/// Rows of `(2I − L) · Vᵀ` for the basis rows in `range`.
fn shifted_apply(laplacian: &SparseMatrix, basis: &RowBasis, range: std::ops::Range<usize>) -> Matrix {
    let n = basis.n;
    let mut out = Matrix::zeros(range.len(), n);
    for (o, i) in range.enumerate() {
        let v = basis.row(i);
        let lv = laplacian.matvec(v).expect("square operator");
        for ((dst, &x), &y) in out.row_mut(o).iter_mut().zip(v).zip(&lv) {
            *dst = 2.0 * x - y;
        }
    }
    out
}

fn random_rows(rng: &mut ChaCha8Rng, rows: usize, n: usize) -> Matrix {
    let data = (0..rows * n)
        .map(|_| StandardNormal.sample(rng))
        .collect::<Vec<f64>>();
    Matrix::from_vec(rows, n, data).expect("sized buffer")
}

/// The `k` smallest eigenpairs of a symmetric `laplacian` with spectrum in
/// `[0, 2]`. Deterministic for a fixed `seed`.
pub fn partial_eigen(laplacian: &SparseMatrix, k: usize, opts: &EigenOptions) -> Result<EigenBasis> {
    if !laplacian.is_square() {
        return Err(Error::shape(
            "partial_eigen",
            format!("{}x{} is not square", laplacian.n_rows(), laplacian.n_cols()),
        ));
    }
    let n = laplacian.n_rows();
    if k > n {
        return Err(Error::Parameter(format!(
            "requested {k} eigenpairs of a {n}-node graph"
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if k == 0 {
        return Ok(EigenBasis {
            eigenvalues: Vec::new(),
            eigenvectors: Matrix::zeros(n, 0),
            graph_hash: 0,
        });
    }

    let max_iter = opts.max_iter.unwrap_or(10 * k).max(1);
    let block = (k + GUARD_VECTORS).min(n);
    let capacity = (BLOCKS_PER_CYCLE * block).min(n).max(block);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut basis = RowBasis::new(n);
    while basis.len() < block {
        let want = block - basis.len();
        extend_basis(&mut basis, random_rows(&mut rng, want, n), want);
    }

    let mut images = shifted_apply(laplacian, &basis, 0..basis.len());
    let mut worst = f64::INFINITY;
    for _ in 0..max_iter {
        // Expand the Krylov space from the newest block.
        let mut newest = 0..basis.len();
        while basis.len() < capacity {
            let room = capacity - basis.len();
            let from = newest.clone();
            let candidates = Matrix::from_vec(
                from.len(),
                n,
                images.as_slice()[from.start * n..from.end * n].to_vec(),
            )
            .expect("sized slice");
            let before = basis.len();
            let mut added = extend_basis(&mut basis, candidates, room);
            if added == 0 {
                // Invariant subspace: continue from fresh random directions.
                added = extend_basis(&mut basis, random_rows(&mut rng, room.min(block), n), room);
                if added == 0 {
                    break;
                }
            }
            newest = before..before + added;
            let fresh = shifted_apply(laplacian, &basis, newest.clone());
            let mut grown = images.into_vec();
            grown.extend_from_slice(fresh.as_slice());
            images = Matrix::from_vec(basis.len(), n, grown).expect("one image per row");
        }

        // Rayleigh–Ritz on the current basis.
        let v = basis.as_matrix();
        let m = v.rows();
        let projected = v.matmul_nt(&images)?;
        let h = DMatrix::from_fn(m, m, |i, j| 0.5 * (projected.get(i, j) + projected.get(j, i)));
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let keep = block.min(m);
        let z = Matrix::from_vec(
            keep,
            m,
            order[..keep]
                .iter()
                .flat_map(|&c| eig.eigenvectors.column(c).iter().copied().collect::<Vec<_>>())
                .collect(),
        )
        .expect("keep × m");
        let ritz = z.matmul(&v)?;
        let mut restarted = RowBasis::new(n);
        restarted.data = ritz.into_vec();
        let ritz_images = shifted_apply(laplacian, &restarted, 0..keep);

        let shifted: Vec<f64> = order[..keep].iter().map(|&c| eig.eigenvalues[c]).collect();
        worst = 0.0;
        let mut converged = true;
        for i in 0..k {
            let res = restarted
                .row(i)
                .iter()
                .zip(ritz_images.row(i))
                .map(|(&y, &ay)| {
                    let d = ay - shifted[i] * y;
                    d * d
                })
                .sum::<f64>()
                .sqrt();
            let lambda = 2.0 - shifted[i];
            worst = worst.max(res);
            if res > opts.tol * lambda.max(1.0) {
                converged = false;
            }
        }
        if converged {
            let mut vectors = Matrix::zeros(n, k);
            for i in 0..k {
                for (r, &x) in restarted.row(i).iter().enumerate() {
                    vectors.set(r, i, x);
                }
            }
            return Ok(EigenBasis {
                eigenvalues: shifted[..k].iter().map(|s| (2.0 - s).clamp(0.0, 2.0)).collect(),
                eigenvectors: vectors,
                graph_hash: 0,
            });
        }
        basis = restarted;
        images = ritz_images;
    }
    Err(Error::Convergence {
        iterations: max_iter,
        worst_residual: worst,
    })
}
