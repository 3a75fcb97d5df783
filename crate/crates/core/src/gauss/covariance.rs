use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::rng::RandomStream;

/// Pivot floor for the symmetric positive-definite factorization.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Structured symmetric positive-definite covariance.
///
/// `Isotropic` with zero variance is the only admitted non-PD value; it is the
/// `Σ_{1:1} = 0` sentinel for accumulated covariances and can only be built via
/// [`Covariance::zero`].
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Isotropic { dim: usize, variance: f64 },
    Diagonal(Vec<f64>),
    Dense(DenseCov),
    LowRankRidge(LowRankCov),
}

/// Dense covariance together with its lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCov {
    matrix: DMatrix<f64>,
    lower: DMatrix<f64>,
}

/// `λ₀ I + U diag(D) Uᵀ`, kept factored; solves go through the Woodbury
/// identity and log-determinants through the matrix-determinant lemma.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankCov {
    ridge: f64,
    factors: DMatrix<f64>,
    weights: Vec<f64>,
    // Lower Cholesky factor of the capacitance D⁻¹ + UᵀU/λ₀.
    capacitance: DMatrix<f64>,
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite and positive, got {x}")))
    }
}

/// Cholesky factorization with an explicit pivot floor.
pub(crate) fn cholesky_lower(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = matrix.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = matrix[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot >= PIVOT_TOLERANCE) {
            return Err(Error::Domain(format!("matrix is not positive definite (pivot {pivot:e} at index {j})")));
        }
        let diag = math::sqrt(pivot);
        l[(j, j)] = diag;
        for i in (j + 1)..n {
            let mut s = matrix[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / diag;
        }
    }
    Ok(l)
}

fn solve_lower(l: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

fn solve_lower_transpose(l: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

fn cholesky_solve(l: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    solve_lower_transpose(l, &solve_lower(l, b))
}

fn logdet_from_lower(l: &DMatrix<f64>) -> f64 {
    2.0 * (0..l.nrows()).map(|i| math::ln(l[(i, i)])).sum::<f64>()
}

impl DenseCov {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }
}

impl LowRankCov {
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn factors(&self) -> &DMatrix<f64> {
        &self.factors
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        let d = self.factors.nrows();
        (0..self.rank()).map(|k| (0..d).map(|i| self.factors[(i, k)] * x[i]).sum()).collect()
    }

    fn solve(&self, x: &[f64]) -> Vec<f64> {
        let lambda = self.ridge;
        let mut out: Vec<f64> = x.iter().map(|v| v / lambda).collect();
        if self.rank() == 0 {
            return out;
        }
        let proj = self.project(x);
        let coef = cholesky_solve(&self.capacitance, &proj);
        let scale = lambda * lambda;
        for (i, o) in out.iter_mut().enumerate() {
            let s: f64 = (0..self.rank()).map(|k| self.factors[(i, k)] * coef[k]).sum();
            *o -= s / scale;
        }
        out
    }

    fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let lambda = self.ridge;
        let base = math::norm_sq(x) / lambda;
        if self.rank() == 0 {
            return base;
        }
        let proj = self.project(x);
        let y = solve_lower(&self.capacitance, &proj);
        base - math::norm_sq(&y) / (lambda * lambda)
    }

    fn logdet(&self) -> f64 {
        let d = self.factors.nrows() as f64;
        d * math::ln(self.ridge)
            + self.weights.iter().map(|w| math::ln(*w)).sum::<f64>()
            + logdet_from_lower(&self.capacitance)
    }

    fn trace(&self) -> f64 {
        let d = self.factors.nrows();
        let mut t = d as f64 * self.ridge;
        for (k, w) in self.weights.iter().enumerate() {
            t += w * self.factors.column(k).norm_squared();
        }
        t
    }
}

impl Covariance {
    /// `σ² I`.
    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Input("dimension must be positive".to_string()));
        }
        positive("isotropic variance", variance)?;
        Ok(Covariance::Isotropic { dim, variance })
    }

    /// The degenerate zero covariance used for `Σ_{1:1}`.
    pub fn zero(dim: usize) -> Self {
        Covariance::Isotropic { dim, variance: 0.0 }
    }

    pub fn diagonal(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Input("dimension must be positive".to_string()));
        }
        for v in &entries {
            positive("diagonal entry", *v)?;
        }
        Ok(Covariance::Diagonal(entries))
    }

    /// Dense covariance from row-major rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Input("covariance rows must form a square matrix".to_string()));
        }
        Self::dense(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// Dense symmetric matrix; rejected unless symmetric and factorizable.
    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(Error::Input("dense covariance must be a non-empty square matrix".to_string()));
        }
        let scale = matrix.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (matrix[(i, j)], matrix[(j, i)]);
                if !a.is_finite() || (a - b).abs() > 1e-12 * scale {
                    return Err(Error::Domain(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        let lower = cholesky_lower(&matrix)?;
        Ok(Covariance::Dense(DenseCov { matrix, lower }))
    }

    /// `λ₀ I + U diag(D) Uᵀ` with `factors` of shape `d × r` and `r` weights.
    pub fn low_rank_ridge(ridge: f64, factors: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        positive("ridge", ridge)?;
        if factors.nrows() == 0 {
            return Err(Error::Input("dimension must be positive".to_string()));
        }
        check_dim(factors.ncols(), weights.len())?;
        for w in &weights {
            positive("low-rank weight", *w)?;
        }
        if factors.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("low-rank factors must be finite".to_string()));
        }
        let r = weights.len();
        let gram = factors.transpose() * &factors;
        let mut cap = gram / ridge;
        for k in 0..r {
            cap[(k, k)] += 1.0 / weights[k];
        }
        let capacitance = cholesky_lower(&cap)?;
        Ok(Covariance::LowRankRidge(LowRankCov { ridge, factors, weights, capacitance }))
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Isotropic { dim, .. } => *dim,
            Covariance::Diagonal(v) => v.len(),
            Covariance::Dense(c) => c.matrix.nrows(),
            Covariance::LowRankRidge(c) => c.factors.nrows(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Covariance::Isotropic { variance, .. } if *variance == 0.0)
    }

    fn require_pd(&self) -> Result<()> {
        if self.is_zero() {
            Err(Error::Domain("covariance is the zero sentinel, not positive definite".to_string()))
        } else {
            Ok(())
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            Covariance::Isotropic { dim, variance } => *dim as f64 * variance,
            Covariance::Diagonal(v) => v.iter().sum(),
            Covariance::Dense(c) => c.matrix.trace(),
            Covariance::LowRankRidge(c) => c.trace(),
        }
    }

    /// Natural log-determinant; `-inf` for the zero sentinel.
    pub fn logdet(&self) -> f64 {
        match self {
            Covariance::Isotropic { dim, variance } => *dim as f64 * math::ln(*variance),
            Covariance::Diagonal(v) => v.iter().map(|x| math::ln(*x)).sum(),
            Covariance::Dense(c) => logdet_from_lower(&c.lower),
            Covariance::LowRankRidge(c) => c.logdet(),
        }
    }

    /// `Σ⁻¹ x`.
    pub fn solve(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        self.require_pd()?;
        Ok(match self {
            Covariance::Isotropic { variance, .. } => x.iter().map(|v| v / variance).collect(),
            Covariance::Diagonal(s) => x.iter().zip(s).map(|(v, s)| v / s).collect(),
            Covariance::Dense(c) => cholesky_solve(&c.lower, x),
            Covariance::LowRankRidge(c) => c.solve(x),
        })
    }

    /// `xᵀ Σ⁻¹ x`.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        self.require_pd()?;
        let v = match self {
            Covariance::Isotropic { variance, .. } => math::norm_sq(x) / variance,
            Covariance::Diagonal(s) => x.iter().zip(s).map(|(v, s)| v * v / s).sum(),
            Covariance::Dense(c) => math::norm_sq(&solve_lower(&c.lower, x)),
            Covariance::LowRankRidge(c) => c.mahalanobis_sq(x),
        };
        Ok(v.max(0.0))
    }

    /// `Tr(Σ⁻¹)`.
    pub fn inverse_trace(&self) -> Result<f64> {
        self.require_pd()?;
        Ok(match self {
            Covariance::Isotropic { dim, variance } => *dim as f64 / variance,
            Covariance::Diagonal(s) => s.iter().map(|s| 1.0 / s).sum(),
            Covariance::Dense(_) => {
                let d = self.dim();
                let mut e = vec![0.0; d];
                let mut t = 0.0;
                for j in 0..d {
                    e[j] = 1.0;
                    t += self.solve(&e)?[j];
                    e[j] = 0.0;
                }
                t
            }
            Covariance::LowRankRidge(c) => {
                let d = self.dim();
                let lambda = c.ridge;
                let mut correction = 0.0;
                for k in 0..c.rank() {
                    // Tr(K⁻¹ UᵀU) = Σ_k (K⁻¹ UᵀU)_kk
                    let col: Vec<f64> = (0..c.rank()).map(|j| c.factors.column(j).dot(&c.factors.column(k))).collect();
                    correction += cholesky_solve(&c.capacitance, &col)[k];
                }
                d as f64 / lambda - correction / (lambda * lambda)
            }
        })
    }

    /// Smallest eigenvalue; exact for every representation.
    pub fn min_eigenvalue(&self) -> f64 {
        match self {
            Covariance::Isotropic { variance, .. } => *variance,
            Covariance::Diagonal(s) => s.iter().copied().fold(f64::INFINITY, f64::min),
            Covariance::Dense(c) => c.matrix.clone().symmetric_eigenvalues().min(),
            Covariance::LowRankRidge(c) => {
                if c.rank() < self.dim() {
                    c.ridge
                } else {
                    self.to_dense().symmetric_eigenvalues().min()
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        match self {
            Covariance::Isotropic { variance, .. } => DMatrix::identity(d, d) * *variance,
            Covariance::Diagonal(s) => DMatrix::from_diagonal(&DVector::from_column_slice(s)),
            Covariance::Dense(c) => c.matrix.clone(),
            Covariance::LowRankRidge(c) => {
                let mut m = DMatrix::identity(d, d) * c.ridge;
                for (k, w) in c.weights.iter().enumerate() {
                    let u = c.factors.column(k);
                    m += (u * u.transpose()) * *w;
                }
                m
            }
        }
    }

    /// Lower factor `L` with `Σ = L Lᵀ` (dense).
    pub fn dense_factor(&self) -> Result<DMatrix<f64>> {
        match self {
            Covariance::Isotropic { dim, variance } => Ok(DMatrix::identity(*dim, *dim) * math::sqrt(*variance)),
            Covariance::Diagonal(s) => {
                Ok(DMatrix::from_diagonal(&DVector::from_iterator(s.len(), s.iter().map(|v| math::sqrt(*v)))))
            }
            Covariance::Dense(c) => Ok(c.lower.clone()),
            Covariance::LowRankRidge(_) => cholesky_lower(&self.to_dense()),
        }
    }

    /// Multiplies by a positive scalar.
    pub fn scale(&self, c: f64) -> Result<Self> {
        positive("scale factor", c)?;
        Ok(match self {
            Covariance::Isotropic { dim, variance } => Covariance::Isotropic { dim: *dim, variance: variance * c },
            Covariance::Diagonal(s) => Covariance::Diagonal(s.iter().map(|v| v * c).collect()),
            Covariance::Dense(m) => {
                Covariance::Dense(DenseCov { matrix: &m.matrix * c, lower: &m.lower * math::sqrt(c) })
            }
            Covariance::LowRankRidge(l) => {
                Covariance::low_rank_ridge(l.ridge * c, l.factors.clone(), l.weights.iter().map(|w| w * c).collect())?
            }
        })
    }

    /// Sum of two covariances with representation promotion:
    /// iso+iso → iso, iso/diag+diag → diag, anything+dense → dense,
    /// low-rank+iso → low-rank, low-rank+low-rank → low-rank while the
    /// combined rank stays below `d`, dense otherwise.
    pub fn add(&self, other: &Covariance) -> Result<Covariance> {
        check_dim(self.dim(), other.dim())?;
        use Covariance::*;
        if self.is_zero() {
            return Ok(other.clone());
        }
        if other.is_zero() {
            return Ok(self.clone());
        }
        let d = self.dim();
        Ok(match (self, other) {
            (Isotropic { variance: a, .. }, Isotropic { variance: b, .. }) => Isotropic { dim: d, variance: a + b },
            (Isotropic { variance: a, .. }, Diagonal(s)) => Diagonal(s.iter().map(|v| a + v).collect()),
            (Diagonal(s), Isotropic { variance: b, .. }) => Diagonal(s.iter().map(|v| v + b).collect()),
            (Diagonal(s), Diagonal(t)) => Diagonal(s.iter().zip(t).map(|(a, b)| a + b).collect()),
            (LowRankRidge(l), Isotropic { variance, .. }) | (Isotropic { variance, .. }, LowRankRidge(l)) => {
                Covariance::low_rank_ridge(l.ridge + variance, l.factors.clone(), l.weights.clone())?
            }
            (LowRankRidge(a), LowRankRidge(b)) if a.rank() + b.rank() < d => {
                let r = a.rank() + b.rank();
                let mut factors = DMatrix::zeros(d, r);
                factors.columns_mut(0, a.rank()).copy_from(&a.factors);
                factors.columns_mut(a.rank(), b.rank()).copy_from(&b.factors);
                let mut weights = a.weights.clone();
                weights.extend_from_slice(&b.weights);
                Covariance::low_rank_ridge(a.ridge + b.ridge, factors, weights)?
            }
            _ => Covariance::dense(self.to_dense() + other.to_dense())?,
        })
    }

    /// One draw from `N(0, Σ)` written into `out`.
    pub fn sample_into(&self, rng: &mut RandomStream, out: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), out.len())?;
        match self {
            Covariance::Isotropic { variance, .. } => {
                let s = math::sqrt(*variance);
                for o in out.iter_mut() {
                    *o = s * rng.standard_normal();
                }
            }
            Covariance::Diagonal(v) => {
                for (o, var) in out.iter_mut().zip(v) {
                    *o = math::sqrt(*var) * rng.standard_normal();
                }
            }
            Covariance::Dense(c) => {
                let d = out.len();
                let mut z = vec![0.0; d];
                rng.fill_standard_normal(&mut z);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..=i).map(|k| c.lower[(i, k)] * z[k]).sum();
                }
            }
            Covariance::LowRankRidge(c) => {
                let s = math::sqrt(c.ridge);
                for o in out.iter_mut() {
                    *o = s * rng.standard_normal();
                }
                for k in 0..c.rank() {
                    let coef = math::sqrt(c.weights[k]) * rng.standard_normal();
                    for (i, o) in out.iter_mut().enumerate() {
                        *o += c.factors[(i, k)] * coef;
                    }
                }
            }
        }
        Ok(())
    }

    /// `count` i.i.d. rows from `N(0, Σ)`.
    pub fn sample(&self, rng: &mut RandomStream, count: usize) -> Result<DMatrix<f64>> {
        if count == 0 {
            return Err(Error::Input("sample count must be at least 1".to_string()));
        }
        let d = self.dim();
        let mut out = DMatrix::zeros(count, d);
        let mut row = vec![0.0; d];
        for i in 0..count {
            self.sample_into(rng, &mut row)?;
            for j in 0..d {
                out[(i, j)] = row[j];
            }
        }
        Ok(out)
    }

    /// `Tr(Σ⁻¹ P)` where `self` is `Σ`.
    pub fn trace_solve(&self, p: &Covariance) -> Result<f64> {
        check_dim(self.dim(), p.dim())?;
        self.require_pd()?;
        let d = self.dim();
        use Covariance::*;
        Ok(match (self, p) {
            (_, Isotropic { variance, .. }) => variance * self.inverse_trace()?,
            (Isotropic { variance, .. }, _) => p.trace() / variance,
            (Diagonal(q), Diagonal(s)) => s.iter().zip(q).map(|(a, b)| a / b).sum(),
            (_, LowRankRidge(l)) => {
                let mut t = l.ridge * self.inverse_trace()?;
                for (k, w) in l.weights.iter().enumerate() {
                    let u: Vec<f64> = l.factors.column(k).iter().copied().collect();
                    t += w * self.mahalanobis_sq(&u)?;
                }
                t
            }
            _ => {
                let pm = p.to_dense();
                let mut t = 0.0;
                for j in 0..d {
                    let col: Vec<f64> = pm.column(j).iter().copied().collect();
                    t += self.solve(&col)?[j];
                }
                t
            }
        })
    }
}
