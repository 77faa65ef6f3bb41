use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Eigenvalues closer than this are treated as one degenerate cluster.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// Residual above which bi-orthonormalization is declared to have failed.
const DEFECTIVE_TOL: f64 = 1e-6;

/// Eigenfrequencies with bi-orthonormal right (`F r = ω r`) and left
/// (`F† l = ω* l`) eigenvectors stored as matrix columns.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub omegas: DVector<Complex64>,
    pub right: DMatrix<Complex64>,
    pub left: DMatrix<Complex64>,
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    /// max |l⁽ᵏ⁾†r⁽ʲ⁾ − δ_kj|.
    pub fn biorthonormality_residual(&self) -> f64 {
        let g = self.left.adjoint() * &self.right;
        let n = g.nrows();
        let mut worst: f64 = 0.0;
        for k in 0..n {
            for j in 0..n {
                let d = if k == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(k, j)] - d).norm());
            }
        }
        worst
    }

    /// max_j ‖F r⁽ʲ⁾ − ω_j r⁽ʲ⁾‖.
    pub fn right_residual(&self, f: &DMatrix<Complex64>) -> f64 {
        (0..self.len())
            .map(|j| {
                let r = self.right.column(j);
                (f * r - r * self.omegas[j]).norm()
            })
            .fold(0.0, f64::max)
    }
}

/// Computes the eigenfrequencies of a general complex matrix with paired
/// left/right eigenvectors normalized so that `l⁽ᵏ⁾†r⁽ʲ⁾ = δ_kj`.
///
/// Eigenvalues come from a complex Schur decomposition. Each cluster of
/// (near-)degenerate eigenvalues has its right and left eigenspaces found by
/// shifted inverse iteration on `F` and `F†`; the right vectors of a cluster
/// are orthonormal, the left ones are fixed by the duality.
pub fn bi_orthogonal_eigensystem(f: &DMatrix<Complex64>) -> Result<EigenSystem> {
    let n = f.nrows();
    assert_eq!(n, f.ncols(), "eigensystem of a non-square matrix");
    let scale = f.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);

    let schur = Schur::try_new(f.clone(), 1e-15 * scale, 10_000).ok_or(Error::EigenSolver)?;
    let (_, t) = schur.unpack();
    let mut eig: Vec<Complex64> = (0..n).map(|k| t[(k, k)]).collect();
    eig.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));

    let mut clusters: Vec<Vec<Complex64>> = Vec::new();
    for w in eig {
        match clusters
            .iter_mut()
            .find(|c| (c[0] - w).norm() < DEGENERACY_TOL * scale)
        {
            Some(c) => c.push(w),
            None => clusters.push(vec![w]),
        }
    }

    let mut omegas = Vec::with_capacity(n);
    let mut right = DMatrix::<Complex64>::zeros(n, n);
    let mut left = DMatrix::<Complex64>::zeros(n, n);
    let fa = f.adjoint();
    let mut col = 0;
    for cluster in clusters {
        let k = cluster.len();
        let centre = cluster.iter().sum::<Complex64>() / k as f64;
        let mut rc = invariant_subspace(f, centre, k, scale)?;
        let lc = invariant_subspace(&fa, centre.conj(), k, scale)?;
        if k == 1 {
            let mut r = rc.column(0).into_owned();
            fix_phase(&mut r);
            rc.set_column(0, &r);
        } else {
            // A degenerate cluster must be spanned by genuine eigenvectors.
            let residual = (f * &rc - &rc * centre).norm();
            if residual > DEFECTIVE_TOL * scale {
                return Err(Error::DefectiveMatrix { residual });
            }
        }
        // Dual normalization within the cluster: L ← L (L†R)^{-†}.
        let gram = lc.adjoint() * &rc;
        let inv = gram.try_inverse().ok_or(Error::DefectiveMatrix {
            residual: f64::INFINITY,
        })?;
        let lc = lc * inv.adjoint();

        for slot in 0..k {
            // Rayleigh quotient of the biorthonormal pair refines the
            // eigenvalue of a simple cluster; degenerate ones keep the mean.
            let w = if k == 1 {
                (lc.column(0).adjoint() * f * rc.column(0))[(0, 0)]
            } else {
                centre
            };
            omegas.push(w);
            right.set_column(col, &rc.column(slot));
            left.set_column(col, &lc.column(slot));
            col += 1;
        }
    }

    let sys = EigenSystem {
        omegas: DVector::from_vec(omegas),
        right,
        left,
    };
    let residual = sys.biorthonormality_residual();
    if !(residual <= DEFECTIVE_TOL) {
        return Err(Error::DefectiveMatrix { residual });
    }
    Ok(sys)
}

/// Orthonormal basis of the `k`-dimensional invariant subspace of `a` whose
/// eigenvalues lie closest to `shift`, by block inverse iteration.
fn invariant_subspace(
    a: &DMatrix<Complex64>,
    shift: Complex64,
    k: usize,
    scale: f64,
) -> Result<DMatrix<Complex64>> {
    let n = a.nrows();
    let mut offset = 1e-13 * scale;
    let lu = loop {
        let s = shift + Complex64::new(offset, offset);
        let lu = (a - DMatrix::<Complex64>::identity(n, n) * s).lu();
        if lu.is_invertible() {
            break lu;
        }
        offset *= 10.0;
        if offset > 1e-6 * scale {
            return Err(Error::EigenSolver);
        }
    };
    // Fixed, generic start vectors keep the result deterministic.
    let mut x = DMatrix::from_fn(n, k, |r, c| {
        let t = (r * 7 + c * 13 + 1) as f64;
        Complex64::new((0.7 * t).sin() + 1.1, (1.3 * t).cos())
    });
    for _ in 0..INVERSE_ITERATIONS {
        let y = lu.solve(&x).ok_or(Error::EigenSolver)?;
        if y.iter().any(|z| !z.is_finite()) {
            return Err(Error::EigenSolver);
        }
        x = y.qr().q();
    }
    Ok(x)
}

const INVERSE_ITERATIONS: usize = 4;

/// Makes the largest-magnitude component real and positive.
fn fix_phase(v: &mut DVector<Complex64>) {
    let mut best = 0;
    for j in 1..v.len() {
        if v[j].norm() > v[best].norm() * (1.0 + 1e-12) {
            best = j;
        }
    }
    let p = v[best];
    if p.norm() > 0.0 {
        let phase = p.conj() / p.norm();
        v.iter_mut().for_each(|z| *z *= phase);
    }
}
