use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::data::Samples;
use crate::error::{check_dim, Error, Result};
use crate::gauss::Covariance;
use crate::math;

/// Serializable description of a model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `ℓ(w, z) = ½ (w − z)ᵀ A (w − z)`; `a` is given row by row.
    Quadratic { a: Vec<Vec<f64>> },
    /// Logistic regression with optional ℓ2 penalty `½ λ ‖w‖²`.
    Logistic { dim: usize, l2: f64 },
    /// One hidden tanh layer, scalar output, squared loss `½ (f(x) − y)²`.
    Mlp { input: usize, hidden: usize },
}

/// Index set a loss or gradient is averaged over.
#[derive(Debug, Clone, Copy)]
pub enum Subset<'a> {
    All,
    Indices(&'a [usize]),
}

impl<'a> Subset<'a> {
    fn for_each(&self, n: usize, mut f: impl FnMut(usize)) -> usize {
        match self {
            Subset::All => {
                (0..n).for_each(&mut f);
                n
            }
            Subset::Indices(idx) => {
                idx.iter().copied().for_each(&mut f);
                idx.len()
            }
        }
    }

    fn len(&self, n: usize) -> usize {
        match self {
            Subset::All => n,
            Subset::Indices(idx) => idx.len(),
        }
    }
}

/// Instantiated model with exact gradients and Hessian-vector products.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Quadratic { a: DMatrix<f64> },
    Logistic { dim: usize, l2: f64 },
    Mlp { input: usize, hidden: usize },
}

impl Model {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        match spec {
            ModelSpec::Quadratic { a } => {
                let d = a.len();
                if d == 0 || a.iter().any(|row| row.len() != d) {
                    return Err(Error::Input("quadratic matrix must be square and non-empty".to_string()));
                }
                let m = DMatrix::from_fn(d, d, |i, j| a[i][j]);
                // symmetric PD gate
                Covariance::dense(m.clone())
                    .map_err(|e| Error::Input(format!("quadratic matrix must be symmetric positive definite: {e}")))?;
                Ok(Model::Quadratic { a: m })
            }
            ModelSpec::Logistic { dim, l2 } => {
                if *dim == 0 || !(*l2 >= 0.0) {
                    return Err(Error::Input("logistic model needs dim ≥ 1 and l2 ≥ 0".to_string()));
                }
                Ok(Model::Logistic { dim: *dim, l2: *l2 })
            }
            ModelSpec::Mlp { input, hidden } => {
                if *input == 0 || *hidden == 0 {
                    return Err(Error::Input("mlp needs positive input and hidden widths".to_string()));
                }
                Ok(Model::Mlp { input: *input, hidden: *hidden })
            }
        }
    }

    /// Number of trainable parameters `d`.
    pub fn dim(&self) -> usize {
        match self {
            Model::Quadratic { a } => a.nrows(),
            Model::Logistic { dim, .. } => *dim,
            Model::Mlp { input, hidden } => hidden * input + 2 * hidden + 1,
        }
    }

    /// Length of one sample's feature vector.
    pub fn feature_dim(&self) -> usize {
        match self {
            Model::Quadratic { a } => a.nrows(),
            Model::Logistic { dim, .. } => *dim,
            Model::Mlp { input, .. } => *input,
        }
    }

    fn validate(&self, w: &[f64], samples: &Samples, subset: Subset<'_>) -> Result<()> {
        check_dim(self.dim(), w.len())?;
        check_dim(self.feature_dim(), samples.feature_dim())?;
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("parameters must be finite".to_string()));
        }
        if subset.len(samples.len()) == 0 {
            return Err(Error::Input("batch must be non-empty".to_string()));
        }
        if let Subset::Indices(idx) = subset {
            if let Some(bad) = idx.iter().find(|&&i| i >= samples.len()) {
                return Err(Error::Input(format!("batch index {bad} out of range")));
            }
        }
        Ok(())
    }

    /// Mean loss over `subset`.
    pub fn loss(&self, w: &[f64], samples: &Samples, subset: Subset<'_>) -> Result<f64> {
        self.validate(w, samples, subset)?;
        let mut total = 0.0;
        let count = match self {
            Model::Quadratic { a } => {
                let d = a.nrows();
                let mut diff = vec![0.0; d];
                subset.for_each(samples.len(), |i| {
                    let z = samples.features(i);
                    for k in 0..d {
                        diff[k] = w[k] - z[k];
                    }
                    let mut q = 0.0;
                    for r in 0..d {
                        let row: f64 = (0..d).map(|c| a[(r, c)] * diff[c]).sum();
                        q += diff[r] * row;
                    }
                    total += 0.5 * q;
                })
            }
            Model::Logistic { .. } => subset.for_each(samples.len(), |i| {
                let z = math::dot(samples.features(i), w);
                total += math::softplus(z) - samples.target(i) * z;
            }),
            Model::Mlp { input, hidden } => {
                let net = MlpView::new(*input, *hidden, w);
                let mut buf = vec![0.0; *hidden];
                subset.for_each(samples.len(), |i| {
                    let r = net.forward(samples.features(i), &mut buf) - samples.target(i);
                    total += 0.5 * r * r;
                })
            }
        };
        let mut loss = total / count as f64;
        if let Model::Logistic { l2, .. } = self {
            loss += 0.5 * l2 * math::norm_sq(w);
        }
        Ok(loss)
    }

    /// Mean gradient over `subset`.
    pub fn grad(&self, w: &[f64], samples: &Samples, subset: Subset<'_>) -> Result<Vec<f64>> {
        self.validate(w, samples, subset)?;
        let d = self.dim();
        let mut g = vec![0.0; d];
        match self {
            Model::Quadratic { a } => {
                let mut center = vec![0.0; d];
                let count = subset.for_each(samples.len(), |i| {
                    for (c, z) in center.iter_mut().zip(samples.features(i)) {
                        *c += z;
                    }
                });
                let diff: Vec<f64> = w.iter().zip(&center).map(|(w, c)| w - c / count as f64).collect();
                for r in 0..d {
                    g[r] = (0..d).map(|c| a[(r, c)] * diff[c]).sum();
                }
            }
            Model::Logistic { l2, .. } => {
                let count = subset.for_each(samples.len(), |i| {
                    let x = samples.features(i);
                    let coef = math::sigmoid(math::dot(x, w)) - samples.target(i);
                    for (gk, xk) in g.iter_mut().zip(x) {
                        *gk += coef * xk;
                    }
                });
                for (gk, wk) in g.iter_mut().zip(w) {
                    *gk = *gk / count as f64 + l2 * wk;
                }
            }
            Model::Mlp { input, hidden } => {
                let net = MlpView::new(*input, *hidden, w);
                let mut scratch = MlpScratch::new(*hidden);
                let count = subset.for_each(samples.len(), |i| {
                    net.accumulate_grad(samples.features(i), samples.target(i), &mut scratch, &mut g);
                });
                for gk in g.iter_mut() {
                    *gk /= count as f64;
                }
            }
        }
        Ok(g)
    }

    /// `∇²L(w) v` averaged over `subset`, computed analytically.
    pub fn hvp(&self, w: &[f64], v: &[f64], samples: &Samples, subset: Subset<'_>) -> Result<Vec<f64>> {
        self.validate(w, samples, subset)?;
        check_dim(self.dim(), v.len())?;
        let d = self.dim();
        let mut out = vec![0.0; d];
        match self {
            Model::Quadratic { a } => {
                for r in 0..d {
                    out[r] = (0..d).map(|c| a[(r, c)] * v[c]).sum();
                }
            }
            Model::Logistic { l2, .. } => {
                let count = subset.for_each(samples.len(), |i| {
                    let x = samples.features(i);
                    let p = math::sigmoid(math::dot(x, w));
                    let coef = p * (1.0 - p) * math::dot(x, v);
                    for (o, xk) in out.iter_mut().zip(x) {
                        *o += coef * xk;
                    }
                });
                for (o, vk) in out.iter_mut().zip(v) {
                    *o = *o / count as f64 + l2 * vk;
                }
            }
            Model::Mlp { input, hidden } => {
                let net = MlpView::new(*input, *hidden, w);
                let dir = MlpView::new(*input, *hidden, v);
                let mut scratch = MlpScratch::new(*hidden);
                let count = subset.for_each(samples.len(), |i| {
                    net.accumulate_hvp(&dir, samples.features(i), samples.target(i), &mut scratch, &mut out);
                });
                for o in out.iter_mut() {
                    *o /= count as f64;
                }
            }
        }
        Ok(out)
    }

    /// Dense Hessian assembled from `d` Hessian-vector products.
    pub fn hessian(&self, w: &[f64], samples: &Samples, subset: Subset<'_>) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let mut h = DMatrix::zeros(d, d);
        let mut e = vec![0.0; d];
        for j in 0..d {
            e[j] = 1.0;
            let col = self.hvp(w, &e, samples, subset)?;
            e[j] = 0.0;
            for i in 0..d {
                h[(i, j)] = col[i];
            }
        }
        Ok((&h + h.transpose()) * 0.5)
    }
}

/// Borrowed view of flattened MLP parameters `[W1 (h×p, row-major), b1, w2, b2]`.
struct MlpView<'a> {
    input: usize,
    hidden: usize,
    params: &'a [f64],
}

struct MlpScratch {
    z: Vec<f64>,
    rz: Vec<f64>,
}

impl MlpScratch {
    fn new(hidden: usize) -> Self {
        Self { z: vec![0.0; hidden], rz: vec![0.0; hidden] }
    }
}

impl<'a> MlpView<'a> {
    fn new(input: usize, hidden: usize, params: &'a [f64]) -> Self {
        Self { input, hidden, params }
    }

    fn w1(&self, j: usize, k: usize) -> f64 {
        self.params[j * self.input + k]
    }

    fn b1(&self, j: usize) -> f64 {
        self.params[self.hidden * self.input + j]
    }

    fn w2(&self, j: usize) -> f64 {
        self.params[self.hidden * self.input + self.hidden + j]
    }

    fn b2(&self) -> f64 {
        self.params[self.hidden * self.input + 2 * self.hidden]
    }

    fn pre_activation(&self, x: &[f64], j: usize) -> f64 {
        self.b1(j) + (0..self.input).map(|k| self.w1(j, k) * x[k]).sum::<f64>()
    }

    /// Output `f(x)`; fills `z` with hidden activations.
    fn forward(&self, x: &[f64], z: &mut [f64]) -> f64 {
        let mut f = self.b2();
        for (j, zj) in z.iter_mut().enumerate().take(self.hidden) {
            *zj = math::tanh(self.pre_activation(x, j));
            f += self.w2(j) * *zj;
        }
        f
    }

    fn accumulate_grad(&self, x: &[f64], y: f64, s: &mut MlpScratch, g: &mut [f64]) {
        let (h, p) = (self.hidden, self.input);
        let r = self.forward(x, &mut s.z) - y;
        for j in 0..h {
            let delta = r * self.w2(j) * (1.0 - s.z[j] * s.z[j]);
            for k in 0..p {
                g[j * p + k] += delta * x[k];
            }
            g[h * p + j] += delta;
            g[h * p + h + j] += r * s.z[j];
        }
        g[h * p + 2 * h] += r;
    }

    /// Pearlmutter R-operator pass along direction `dir`.
    fn accumulate_hvp(&self, dir: &MlpView<'_>, x: &[f64], y: f64, s: &mut MlpScratch, out: &mut [f64]) {
        let (h, p) = (self.hidden, self.input);
        let r = self.forward(x, &mut s.z) - y;
        let mut rf = dir.b2();
        for j in 0..h {
            let ra = dir.pre_activation(x, j);
            s.rz[j] = (1.0 - s.z[j] * s.z[j]) * ra;
            rf += dir.w2(j) * s.z[j] + self.w2(j) * s.rz[j];
        }
        for j in 0..h {
            let sj = 1.0 - s.z[j] * s.z[j];
            let rs = -2.0 * s.z[j] * s.rz[j];
            let rdelta = rf * self.w2(j) * sj + r * dir.w2(j) * sj + r * self.w2(j) * rs;
            for k in 0..p {
                out[j * p + k] += rdelta * x[k];
            }
            out[h * p + j] += rdelta;
            out[h * p + h + j] += rf * s.z[j] + r * s.rz[j];
        }
        out[h * p + 2 * h] += rf;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;

    fn identity_quadratic(d: usize) -> Model {
        let a = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Model::from_spec(&ModelSpec::Quadratic { a }).unwrap()
    }

    fn random_samples(rng: &mut RandomStream, n: usize, p: usize, binary: bool) -> Samples {
        let mut f = vec![0.0; n * p];
        rng.fill_standard_normal(&mut f);
        let t =
            (0..n).map(|_| if binary { (rng.uniform() < 0.5) as u8 as f64 } else { rng.standard_normal() }).collect();
        Samples::new(p, f, t).unwrap()
    }

    #[test]
    fn quadratic_loss_and_grad() {
        let m = identity_quadratic(2);
        let s = Samples::new(2, vec![0.0, 0.0], vec![0.0]).unwrap();
        assert_eq!(m.loss(&[3.0, 4.0], &s, Subset::All).unwrap(), 12.5);
        assert_eq!(m.grad(&[3.0, 4.0], &s, Subset::All).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn quadratic_hvp_is_matrix_product() {
        let m = Model::from_spec(&ModelSpec::Quadratic { a: vec![vec![2.0, 0.5], vec![0.5, 1.0]] }).unwrap();
        let s = Samples::new(2, vec![1.0, -1.0], vec![0.0]).unwrap();
        let hv = m.hvp(&[0.3, 9.0], &[1.0, 2.0], &s, Subset::All).unwrap();
        assert_eq!(hv, vec![3.0, 2.5]);
    }

    #[test]
    fn rejects_empty_batch_and_nonfinite_weights() {
        let m = identity_quadratic(2);
        let s = Samples::new(2, vec![0.0, 0.0], vec![0.0]).unwrap();
        assert!(matches!(m.grad(&[0.0, 0.0], &s, Subset::Indices(&[])), Err(Error::Input(_))));
        assert!(matches!(m.grad(&[f64::NAN, 0.0], &s, Subset::All), Err(Error::Input(_))));
    }

    #[test]
    fn rejects_non_pd_quadratic() {
        assert!(Model::from_spec(&ModelSpec::Quadratic { a: vec![vec![1.0, 2.0], vec![2.0, 1.0]] }).is_err());
    }

    fn fd_grad(m: &Model, w: &[f64], s: &Samples, idx: &[usize]) -> Vec<f64> {
        let h = 1e-5;
        (0..w.len())
            .map(|k| {
                let mut wp = w.to_vec();
                let mut wm = w.to_vec();
                wp[k] += h;
                wm[k] -= h;
                (m.loss(&wp, s, Subset::Indices(idx)).unwrap() - m.loss(&wm, s, Subset::Indices(idx)).unwrap())
                    / (2.0 * h)
            })
            .collect()
    }

    fn fd_hvp(m: &Model, w: &[f64], v: &[f64], s: &Samples) -> Vec<f64> {
        let h = 1e-5;
        let wp: Vec<f64> = w.iter().zip(v).map(|(a, b)| a + h * b).collect();
        let wm: Vec<f64> = w.iter().zip(v).map(|(a, b)| a - h * b).collect();
        let gp = m.grad(&wp, s, Subset::All).unwrap();
        let gm = m.grad(&wm, s, Subset::All).unwrap();
        gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let den = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
        num / den
    }

    fn finite_difference_sweep(m: &Model, binary: bool) {
        let mut rng = RandomStream::new(99, m.dim() as u64);
        let s = random_samples(&mut rng, 12, m.feature_dim(), binary);
        for _ in 0..50 {
            let mut w = vec![0.0; m.dim()];
            rng.fill_standard_normal(&mut w);
            let idx = rng.distinct_indices(12, 5);
            let g = m.grad(&w, &s, Subset::Indices(&idx)).unwrap();
            assert!(rel_err(&g, &fd_grad(m, &w, &s, &idx)) <= 1e-6, "gradient mismatch");
            let mut v = vec![0.0; m.dim()];
            rng.fill_standard_normal(&mut v);
            let hv = m.hvp(&w, &v, &s, Subset::All).unwrap();
            assert!(rel_err(&hv, &fd_hvp(m, &w, &v, &s)) <= 1e-5, "hvp mismatch");
        }
    }

    #[test]
    fn quadratic_matches_finite_differences() {
        let m = Model::from_spec(&ModelSpec::Quadratic {
            a: vec![vec![2.0, 0.3, 0.0], vec![0.3, 1.0, 0.2], vec![0.0, 0.2, 0.5]],
        })
        .unwrap();
        finite_difference_sweep(&m, false);
    }

    #[test]
    fn logistic_matches_finite_differences() {
        let m = Model::from_spec(&ModelSpec::Logistic { dim: 10, l2: 0.01 }).unwrap();
        finite_difference_sweep(&m, true);
    }

    #[test]
    fn mlp_matches_finite_differences() {
        let m = Model::from_spec(&ModelSpec::Mlp { input: 4, hidden: 8 }).unwrap();
        assert_eq!(m.dim(), 49);
        finite_difference_sweep(&m, false);
    }

    #[test]
    fn hessian_is_symmetric() {
        let m = Model::from_spec(&ModelSpec::Mlp { input: 2, hidden: 3 }).unwrap();
        let mut rng = RandomStream::new(5, 5);
        let s = random_samples(&mut rng, 6, 2, false);
        let mut w = vec![0.0; m.dim()];
        rng.fill_standard_normal(&mut w);
        let h = m.hessian(&w, &s, Subset::All).unwrap();
        assert_eq!(h, h.transpose());
    }
}
