//! Sparse jets: sampling operator terms and evaluating each exactly by its plan.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use super::{sample_indices, sample_rng, EstimateReport};
use crate::error::{Error, Result};
use crate::graph::{pairwise_sum, Graph};
use crate::operator::{plan_operator, DiffOperator, PlannedTerm, Pushforward, PushforwardEngine};
use crate::oracle::Atom;

/// How term indices are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// I.i.d. draws with probability `|C_alpha| / Z`.
    #[default]
    WithReplacement,
    /// Distinct terms drawn uniformly; weight `N C_alpha`.
    WithoutReplacement,
}

/// One supported term: its plan, draw probability and importance weight
/// `sign(C_alpha) Z`, so that `probability * weight = C_alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseAtom {
    pub term: PlannedTerm,
    pub probability: f64,
    pub weight: f64,
}

/// Importance distribution over the terms of an operator.
#[derive(Debug, Clone)]
pub struct SparseJetDistribution {
    atoms: Vec<SparseAtom>,
    normalization: f64,
    sampler: WeightedIndex<f64>,
}

impl SparseJetDistribution {
    /// Plans every term of `op` with jets of order at most `cap`.
    pub fn new(op: &DiffOperator, cap: usize) -> Result<Self> {
        let z = op.abs_mass();
        let atoms: Vec<SparseAtom> = plan_operator(op, cap)?
            .into_iter()
            .map(|term| SparseAtom {
                probability: term.coefficient.abs() / z,
                weight: term.coefficient.signum() * z,
                term,
            })
            .collect();
        let sampler = WeightedIndex::new(atoms.iter().map(|a| a.probability))
            .map_err(|e| Error::Operator(format!("term weights: {e}")))?;
        Ok(Self {
            atoms,
            normalization: z,
            sampler,
        })
    }

    pub fn atoms(&self) -> &[SparseAtom] {
        &self.atoms
    }

    /// `Z = sum |C_alpha|`.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> usize {
        self.sampler.sample(rng)
    }
}

/// Sparse stochastic estimator of one operator applied to one graph, with
/// plans and expanded graphs cached across calls.
#[derive(Debug)]
pub struct SparseStde<'g> {
    engine: PushforwardEngine<'g>,
    dist: SparseJetDistribution,
    linearized: Vec<Vec<(Pushforward, f64)>>,
}

impl<'g> SparseStde<'g> {
    pub fn new(graph: &'g Graph, op: &DiffOperator, cap: usize) -> Result<Self> {
        let engine = PushforwardEngine::new(graph)?;
        if op.dim() != engine.dim() {
            return Err(Error::Shape(format!(
                "operator acts on dimension {}, graph input has {}",
                op.dim(),
                engine.dim()
            )));
        }
        let dist = SparseJetDistribution::new(op, cap)?;
        let linearized = dist
            .atoms()
            .iter()
            .map(|a| a.term.plan.linearize())
            .collect();
        Ok(Self {
            engine,
            dist,
            linearized,
        })
    }

    pub fn distribution(&self) -> &SparseJetDistribution {
        &self.dist
    }

    /// Exact derivative values `D^alpha u(x)` for the listed atoms.
    pub fn term_values(&self, x: &[f64], params: &[f64], atoms: &[usize]) -> Result<Vec<f64>> {
        let pushes: Vec<Pushforward> = atoms
            .iter()
            .flat_map(|&i| self.linearized[i].iter().map(|(p, _)| p.clone()))
            .collect();
        let raw = self.engine.evaluate_par(x, params, &pushes)?;
        let mut k = 0;
        Ok(atoms
            .iter()
            .map(|&i| {
                let lin = &self.linearized[i];
                let v: f64 = lin.iter().zip(&raw[k..]).map(|((_, w), r)| w * r).sum();
                k += lin.len();
                v
            })
            .collect())
    }

    /// Estimate of `L u(x)` from `batch` sampled terms.
    pub fn estimate(
        &self,
        x: &[f64],
        params: &[f64],
        batch: usize,
        seed: u64,
        sampling: Sampling,
    ) -> Result<EstimateReport> {
        if batch == 0 {
            return Err(Error::InvalidArgument(
                "batch size must be at least 1".into(),
            ));
        }
        let n = self.dist.atoms().len();
        let (picked, scale): (Vec<usize>, Vec<f64>) = match sampling {
            Sampling::WithReplacement => (0..batch)
                .map(|i| {
                    let a = self.dist.sample(&mut sample_rng(seed, i as u64));
                    (a, self.dist.atoms()[a].weight)
                })
                .unzip(),
            Sampling::WithoutReplacement => sample_indices(n, batch, &mut sample_rng(seed, 0))?
                .into_iter()
                .map(|a| (a, n as f64 * self.dist.atoms()[a].term.coefficient))
                .unzip(),
        };
        let values = self.term_values(x, params, &picked)?;
        let samples = values.iter().zip(&scale).map(|(v, s)| v * s).collect();
        Ok(EstimateReport::from_samples(samples, seed))
    }

    /// The full finite support: `(probability, weight * D^alpha u(x))`.
    pub fn atoms_at(&self, x: &[f64], params: &[f64]) -> Result<Vec<Atom>> {
        let all: Vec<usize> = (0..self.dist.atoms().len()).collect();
        let values = self.term_values(x, params, &all)?;
        Ok(self
            .dist
            .atoms()
            .iter()
            .zip(values)
            .map(|(a, v)| Atom {
                probability: a.probability,
                value: a.weight * v,
            })
            .collect())
    }
}

/// Sparse estimate of `L u(x)` from `batch` i.i.d. terms.
pub fn sparse_stde(
    graph: &Graph,
    x: &[f64],
    params: &[f64],
    op: &DiffOperator,
    batch: usize,
    seed: u64,
) -> Result<EstimateReport> {
    SparseStde::new(graph, op, graph.max_order())?.estimate(
        x,
        params,
        batch,
        seed,
        Sampling::WithReplacement,
    )
}

/// `(d / |J|) sum_(j in J) C_j D_j u(x)` for a diagonal operator and a set
/// of distinct 0-based dimensions `J`.
pub fn sdgd_subset(
    graph: &Graph,
    x: &[f64],
    params: &[f64],
    op: &DiffOperator,
    j: &[usize],
) -> Result<f64> {
    if !op.is_diagonal() {
        return Err(Error::Operator(
            "subset estimation needs an operator made of diagonal terms".into(),
        ));
    }
    let d = op.dim();
    if j.is_empty() {
        return Err(Error::InvalidArgument("index set is empty".into()));
    }
    let mut seen = vec![false; d];
    for &i in j {
        if i >= d || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidArgument(format!(
                "index {i} is out of range or repeated for dimension {d}"
            )));
        }
    }
    let stde = SparseStde::new(graph, op, graph.max_order())?;
    let atoms: Vec<usize> = stde
        .distribution()
        .atoms()
        .iter()
        .enumerate()
        .filter(|(_, a)| seen[a.term.target.pairs()[0].0])
        .map(|(i, _)| i)
        .collect();
    let values = stde.term_values(x, params, &atoms)?;
    let terms: Vec<f64> = atoms
        .iter()
        .zip(values)
        .map(|(&i, v)| stde.distribution().atoms()[i].term.coefficient * v)
        .collect();
    Ok(d as f64 / j.len() as f64 * pairwise_sum(&terms))
}
