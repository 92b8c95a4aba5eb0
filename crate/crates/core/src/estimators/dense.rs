//! Dense random jets: isotropic and eigen-shaped directions.

use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{sample_rng, EstimateReport};
use crate::error::{Error, Result};
use crate::graph::{pairwise_sum, Graph};
use crate::operator::{DiffOperator, Direction, Pushforward, PushforwardEngine};
use crate::oracle::Atom;

/// Distribution of isotropic dense directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HteDistribution {
    Rademacher,
    Gaussian,
}

impl FromStr for HteDistribution {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rademacher" => Ok(Self::Rademacher),
            "gaussian" => Ok(Self::Gaussian),
            other => Err(Error::Unsupported(format!(
                "unknown distribution tag `{other}`"
            ))),
        }
    }
}

impl HteDistribution {
    fn draw(self, d: usize, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            Self::Rademacher => (0..d)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect(),
            Self::Gaussian => gaussian(d, rng),
        }
    }
}

fn gaussian(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Order-`order` directional derivative `d^k u(x)(v, 0, ...)`.
fn directional(order: usize, v: Vec<f64>) -> Pushforward {
    Pushforward {
        order,
        slots: vec![(1, Direction::Vector(v))],
    }
}

/// Dense estimate of the Laplacian: mean of `v^T H v` over `n` draws.
pub fn hte_dense(
    graph: &Graph,
    x: &[f64],
    params: &[f64],
    dist: HteDistribution,
    n: usize,
    seed: u64,
) -> Result<EstimateReport> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    let engine = PushforwardEngine::new(graph)?;
    let d = engine.dim();
    let pushes: Vec<Pushforward> = (0..n)
        .map(|i| directional(2, dist.draw(d, &mut sample_rng(seed, i as u64))))
        .collect();
    let samples = engine.evaluate_par(x, params, &pushes)?;
    Ok(EstimateReport::from_samples(samples, seed))
}

/// All `2^d` sign vectors with their values `v^T H v`, for `d <= 16`.
pub fn hte_rademacher_atoms(graph: &Graph, x: &[f64], params: &[f64]) -> Result<Vec<Atom>> {
    let engine = PushforwardEngine::new(graph)?;
    let d = engine.dim();
    if d > 16 {
        return Err(Error::InvalidArgument(format!(
            "2^{d} sign vectors is too many to enumerate"
        )));
    }
    let count = 1usize << d;
    let pushes: Vec<Pushforward> = (0..count)
        .map(|mask| {
            let v = (0..d)
                .map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 })
                .collect();
            directional(2, v)
        })
        .collect();
    let values = engine.evaluate_par(x, params, &pushes)?;
    Ok(values
        .into_iter()
        .map(|value| Atom {
            probability: 1.0 / count as f64,
            value,
        })
        .collect())
}

/// Eigen-shaped Gaussian construction for a general second-order operator.
///
/// With `C' = sym(C) + lambda I` positive semidefinite and
/// `C' = U diag(sigma) U^T`, the estimate is
/// `d2u(U sqrt(sigma) z) - lambda d2u(w)` for independent standard normal
/// `z`, `w`; its expectation is `sum_ij C_ij d_ij u`.
#[derive(Debug, Clone)]
pub struct DenseSecondOrder {
    dim: usize,
    lambda: f64,
    /// Columns of `U` scaled by `sqrt(sigma)`, stored row-major `d x d`.
    factor: Vec<f64>,
    eigenvectors: Vec<Vec<f64>>,
    sigma: Vec<f64>,
}

impl DenseSecondOrder {
    pub fn new(op: &DiffOperator) -> Result<Self> {
        if op.order() != 2 {
            return Err(Error::Unsupported(format!(
                "eigen-shaped dense jets need a second-order operator, got order {}",
                op.order()
            )));
        }
        let d = op.dim();
        let c = DMatrix::from_row_slice(d, d, &op.second_order_matrix()?);
        let norm = c.norm();
        let eig = SymmetricEigen::try_new(c, 1e-14, 10_000)
            .ok_or_else(|| Error::Linalg("symmetric eigendecomposition did not converge".into()))?;
        let min = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let lambda = if min >= 0.0 { 0.0 } else { -min + 1e-9 * norm };
        let sigma: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&s| (s + lambda).max(0.0))
            .collect();
        let eigenvectors: Vec<Vec<f64>> = (0..d)
            .map(|k| eig.eigenvectors.column(k).iter().copied().collect())
            .collect();
        let mut factor = vec![0.0; d * d];
        for r in 0..d {
            for k in 0..d {
                factor[r * d + k] = eigenvectors[k][r] * sigma[k].sqrt();
            }
        }
        Ok(Self {
            dim: d,
            lambda,
            factor,
            eigenvectors,
            sigma,
        })
    }

    /// The diagonal shift making the symmetrized coefficients PSD.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.sigma
    }

    fn shaped(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|r| (0..d).map(|k| self.factor[r * d + k] * z[k]).sum())
            .collect()
    }

    pub fn estimate(
        &self,
        engine: &PushforwardEngine<'_>,
        x: &[f64],
        params: &[f64],
        n: usize,
        seed: u64,
    ) -> Result<EstimateReport> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "sample count must be at least 1".into(),
            ));
        }
        if engine.dim() != self.dim {
            return Err(Error::Shape(format!(
                "operator dimension {} but graph input has {}",
                self.dim,
                engine.dim()
            )));
        }
        let per = if self.lambda > 0.0 { 2 } else { 1 };
        let mut pushes = Vec::with_capacity(n * per);
        for i in 0..n {
            let mut rng = sample_rng(seed, i as u64);
            let z = gaussian(self.dim, &mut rng);
            pushes.push(directional(2, self.shaped(&z)));
            if per == 2 {
                pushes.push(directional(2, gaussian(self.dim, &mut rng)));
            }
        }
        let raw = engine.evaluate_par(x, params, &pushes)?;
        let samples = raw
            .chunks(per)
            .map(|c| {
                if per == 2 {
                    c[0] - self.lambda * c[1]
                } else {
                    c[0]
                }
            })
            .collect();
        Ok(EstimateReport::from_samples(samples, seed))
    }

    /// Closed-form expectation `sum_k sigma_k d2u(u_k) - lambda sum_k d2u(e_k)`.
    pub fn expectation(
        &self,
        engine: &PushforwardEngine<'_>,
        x: &[f64],
        params: &[f64],
    ) -> Result<f64> {
        let d = self.dim;
        let mut pushes: Vec<Pushforward> = self
            .eigenvectors
            .iter()
            .map(|u| directional(2, u.clone()))
            .collect();
        if self.lambda > 0.0 {
            pushes.extend((0..d).map(|k| Pushforward {
                order: 2,
                slots: vec![(1, Direction::Basis(k))],
            }));
        }
        let raw = engine.evaluate_par(x, params, &pushes)?;
        let shaped: Vec<f64> = raw[..d]
            .iter()
            .zip(&self.sigma)
            .map(|(v, s)| v * s)
            .collect();
        let shift = if self.lambda > 0.0 {
            self.lambda * pairwise_sum(&raw[d..])
        } else {
            0.0
        };
        Ok(pairwise_sum(&shaped) - shift)
    }
}

/// Dense estimate of a second-order operator.
pub fn dense_second_order(
    graph: &Graph,
    x: &[f64],
    params: &[f64],
    op: &DiffOperator,
    n: usize,
    seed: u64,
) -> Result<EstimateReport> {
    let engine = PushforwardEngine::new(graph)?;
    DenseSecondOrder::new(op)?.estimate(&engine, x, params, n, seed)
}

/// Exact expectation of [`dense_second_order`].
pub fn dense_second_order_expectation(
    graph: &Graph,
    x: &[f64],
    params: &[f64],
    op: &DiffOperator,
) -> Result<f64> {
    let engine = PushforwardEngine::new(graph)?;
    DenseSecondOrder::new(op)?.expectation(&engine, x, params)
}

/// Dense biharmonic estimate: `(1/3) d4u(v, 0, 0, 0)` with `v ~ N(0, I)`.
pub fn biharmonic_dense(
    graph: &Graph,
    x: &[f64],
    params: &[f64],
    n: usize,
    seed: u64,
) -> Result<EstimateReport> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    let engine = PushforwardEngine::new(graph)?;
    let d = engine.dim();
    let pushes: Vec<Pushforward> = (0..n)
        .map(|i| directional(4, gaussian(d, &mut sample_rng(seed, i as u64))))
        .collect();
    let samples = engine
        .evaluate_par(x, params, &pushes)?
        .into_iter()
        .map(|v| v / 3.0)
        .collect();
    Ok(EstimateReport::from_samples(samples, seed))
}

/// Dispatches to the dense construction available for `op`.
pub fn dense_estimate(
    graph: &Graph,
    x: &[f64],
    params: &[f64],
    op: &DiffOperator,
    n: usize,
    seed: u64,
) -> Result<EstimateReport> {
    match op.order() {
        2 => dense_second_order(graph, x, params, op, n, seed),
        4 if *op == DiffOperator::biharmonic(op.dim())? => {
            biharmonic_dense(graph, x, params, n, seed)
        }
        k if op.is_diagonal() && k > 2 => Err(Error::DenseImpossible { order: k }),
        k => Err(Error::Unsupported(format!(
            "no dense construction for this order-{k} operator"
        ))),
    }
}

/// `(d/|J|) (1/2) sum_(i in J) d2u(sigma e_i, 0)`, an estimate of
/// `(1/2) tr(sigma sigma^T Hess u)`.
///
/// `sigma` is row-major `d x d`. When the graph input has length `d + 1`
/// the last component is time and receives no direction.
pub fn parabolic_trace(
    graph: &Graph,
    x_t: &[f64],
    params: &[f64],
    sigma: &[f64],
    j: &[usize],
) -> Result<f64> {
    let engine = PushforwardEngine::new(graph)?;
    let n = engine.dim();
    let d = if sigma.len() == n * n {
        n
    } else if n > 1 && sigma.len() == (n - 1) * (n - 1) {
        n - 1
    } else {
        return Err(Error::Shape(format!(
            "sigma has {} entries; expected {n}x{n} or {m}x{m}",
            sigma.len(),
            m = n.saturating_sub(1)
        )));
    };
    if j.is_empty() || j.iter().any(|&i| i >= d) {
        return Err(Error::InvalidArgument(format!(
            "index set must be non-empty and within 0..{d}"
        )));
    }
    let pushes: Vec<Pushforward> = j
        .iter()
        .map(|&i| {
            let mut v = vec![0.0; n];
            for r in 0..d {
                v[r] = sigma[r * d + i];
            }
            directional(2, v)
        })
        .collect();
    let values = engine.evaluate_par(x_t, params, &pushes)?;
    Ok(d as f64 / j.len() as f64 * 0.5 * pairwise_sum(&values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::exhaustive_expectation;
    use crate::oracle::functions::{coordinate_power, linear, quadratic_form, sum_of_squares};

    #[test]
    fn rademacher_exhaustive_on_quadratic() {
        // u = x^T A x / 2 with Hessian [[1, 2], [2, 5]]
        let g = quadratic_form(&[0.5, 1.0, 1.0, 2.5], 2).unwrap();
        let atoms = hte_rademacher_atoms(&g, &[0.3, -0.1], &[]).unwrap();
        let mut values: Vec<f64> = atoms.iter().map(|a| a.value).collect();
        values.sort_by(f64::total_cmp);
        assert_eq!(values, vec![2.0, 2.0, 10.0, 10.0]);
        assert_eq!(exhaustive_expectation(&atoms).unwrap(), 6.0);
    }

    #[test]
    fn linear_functions_give_zero() {
        let g = linear(&[1.0, -2.0, 0.5]).unwrap();
        let r = hte_dense(&g, &[0.1, 0.2, 0.3], &[], HteDistribution::Gaussian, 8, 1).unwrap();
        assert!(r.samples.unwrap().iter().all(|&v| v == 0.0));
        let p = parabolic_trace(
            &g,
            &[0.1, 0.2, 0.3],
            &[],
            &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            &[0, 1, 2],
        )
        .unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn identity_coefficients_need_no_shift() {
        let op = DiffOperator::laplacian(3).unwrap();
        let dense = DenseSecondOrder::new(&op).unwrap();
        assert_eq!(dense.lambda(), 0.0);
        let g = sum_of_squares(3).unwrap();
        let r = dense_second_order(&g, &[0.0; 3], &[], &op, 4, 0).unwrap();
        let h = hte_dense(&g, &[0.0; 3], &[], HteDistribution::Gaussian, 4, 0).unwrap();
        // both are means of 2 |v|^2 over Gaussian v
        assert!(r.mean > 0.0 && h.mean > 0.0);
    }

    #[test]
    fn indefinite_coefficients_expectation_is_exact() {
        // C = [[0, 1], [1, 0]], u = x1 x2
        let op = DiffOperator::from_matrix(&[0.0, 1.0, 1.0, 0.0], 2).unwrap();
        let g = quadratic_form(&[0.0, 0.5, 0.5, 0.0], 2).unwrap();
        let dense = DenseSecondOrder::new(&op).unwrap();
        assert!(dense.lambda() > 1.0);
        let v = dense_second_order_expectation(&g, &[0.4, 0.9], &[], &op).unwrap();
        assert!((v - 2.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn antisymmetric_part_is_ignored() {
        let g = quadratic_form(&[1.0, 0.3, -0.2, 2.0], 2).unwrap();
        let c = DiffOperator::from_matrix(&[1.0, 3.0, -1.0, 2.0], 2).unwrap();
        let sym = DiffOperator::from_matrix(&[1.0, 1.0, 1.0, 2.0], 2).unwrap();
        let a = dense_second_order(&g, &[0.1, 0.2], &[], &c, 16, 5).unwrap();
        let b = dense_second_order(&g, &[0.1, 0.2], &[], &sym, 16, 5).unwrap();
        assert_eq!(a.mean, b.mean);
    }

    #[test]
    fn fourth_order_diagonal_is_rejected() {
        let g = coordinate_power(2, 0, 4).unwrap();
        let op = DiffOperator::diagonal(4, 2).unwrap();
        let err = dense_estimate(&g, &[0.0, 0.0], &[], &op, 4, 0).unwrap_err();
        assert_eq!(err, Error::DenseImpossible { order: 4 });
        assert!(err
            .to_string()
            .contains("impossible to construct dense STDE"));
    }

    #[test]
    fn biharmonic_of_cubic_is_zero() {
        let g = coordinate_power(3, 1, 3).unwrap();
        let r = biharmonic_dense(&g, &[0.2, 0.5, -0.1], &[], 6, 3).unwrap();
        assert!(r.samples.unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn parabolic_trace_examples() {
        let g = coordinate_power(2, 0, 2).unwrap();
        let v = parabolic_trace(&g, &[0.3, 0.7], &[], &[2.0, 0.0, 0.0, 1.0], &[0, 1]).unwrap();
        assert!((v - 4.0).abs() < 1e-12);
        // time-padded input: (x1, x2, t)
        let g = coordinate_power(3, 0, 2).unwrap();
        let v = parabolic_trace(&g, &[0.3, 0.7, 0.5], &[], &[2.0, 0.0, 0.0, 1.0], &[0, 1]).unwrap();
        assert!((v - 4.0).abs() < 1e-12);
        assert!(parabolic_trace(&g, &[0.3, 0.7, 0.5], &[], &[1.0; 5], &[0]).is_err());
    }

    #[test]
    fn unknown_distribution_tag() {
        assert!(matches!(
            "uniform".parse::<HteDistribution>(),
            Err(Error::Unsupported(_))
        ));
    }
}
