//! Test problems: semilinear equations on the unit ball with manufactured
//! solutions, semilinear parabolic equations, and low-dimensional
//! high-order equations given by polynomial residuals.

use num_dual::{first_derivative, DualNum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, NodeId};
use crate::operator::MultiIndex;

/// Algebraic part `N(u)` of a semilinear residual `Lap u + N(u) - u_t - f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    /// `0` (Poisson).
    Zero,
    /// `u - u^3`.
    AllenCahn,
    /// `sin u`.
    SineGordon,
    /// `(1 - u^2) / (1 + u^2)`.
    Rational,
}

impl Nonlinearity {
    pub fn eval<D: DualNum<f64> + Copy>(self, u: D) -> D {
        match self {
            Nonlinearity::Zero => u * 0.0,
            Nonlinearity::AllenCahn => u - u.powi(3),
            Nonlinearity::SineGordon => u.sin(),
            Nonlinearity::Rational => {
                let sq = u * u;
                (-sq + 1.0) / (sq + 1.0)
            }
        }
    }

    /// `N'(u)`.
    pub fn derivative(self, u: f64) -> f64 {
        first_derivative(|v| self.eval(v), u).1
    }

    /// Appends `N(u)` to a graph; `None` for the zero map.
    pub fn build(self, b: &mut GraphBuilder, u: NodeId) -> Option<NodeId> {
        match self {
            Nonlinearity::Zero => None,
            Nonlinearity::AllenCahn => {
                let cube = b.powi(u, 3);
                Some(b.sub(u, cube))
            }
            Nonlinearity::SineGordon => Some(b.sin(u)),
            Nonlinearity::Rational => {
                let sq = b.hadamard(u, u);
                let num = b.scale(sq, -1.0);
                let num = b.add_scalar(num, 1.0);
                let den = b.add_scalar(sq, 1.0);
                let inv = b.apply(crate::graph::Primitive::Recip, den);
                Some(b.hadamard(num, inv))
            }
        }
    }

    /// Appends `N'(u)`; `None` for the zero map.
    pub fn build_derivative(self, b: &mut GraphBuilder, u: NodeId) -> Option<NodeId> {
        match self {
            Nonlinearity::Zero => None,
            Nonlinearity::AllenCahn => {
                let sq = b.hadamard(u, u);
                let s = b.scale(sq, -3.0);
                Some(b.add_scalar(s, 1.0))
            }
            Nonlinearity::SineGordon => Some(b.cos(u)),
            Nonlinearity::Rational => {
                let sq = b.hadamard(u, u);
                let den = b.add_scalar(sq, 1.0);
                let den = b.powi(den, -2);
                let num = b.scale(u, -4.0);
                Some(b.hadamard(num, den))
            }
        }
    }
}

/// Interaction pattern of a manufactured solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    /// `sum_i c_i sin(x_i + cos(x_(i+1)) + x_(i+1) cos(x_i))`.
    TwoBody,
    /// `sum_i c_i exp(x_i x_(i+1) x_(i+2))`.
    ThreeBody,
}

/// `u(x) = (1 - |x|^2) g(x)` with `g` a sum of coupled terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    pub interaction: Interaction,
    pub coefficients: Vec<f64>,
}

/// `(g, x . grad g, Lap g)` of the interaction sum.
fn interaction_parts<D: DualNum<f64> + Copy>(kind: Interaction, c: &[f64], x: &[D]) -> (D, D, D) {
    let zero = x[0] * 0.0;
    let (mut g, mut radial, mut lap) = (zero, zero, zero);
    match kind {
        Interaction::TwoBody => {
            for (i, &ci) in c.iter().enumerate() {
                let (a, n) = (x[i], x[i + 1]);
                let (sa, ca) = a.sin_cos();
                let (sn, cn) = n.sin_cos();
                let theta = a + cn + n * ca;
                let (st, ct) = theta.sin_cos();
                let ta = -(n * sa) + 1.0;
                let tn = ca - sn;
                let taa = -(n * ca);
                let tnn = -cn;
                g += st * ci;
                radial += ct * (a * ta + n * tn) * ci;
                lap += (-(st * (ta * ta + tn * tn)) + ct * (taa + tnn)) * ci;
            }
        }
        Interaction::ThreeBody => {
            for (i, &ci) in c.iter().enumerate() {
                let (a, m, n) = (x[i], x[i + 1], x[i + 2]);
                let p = a * m * n;
                let e = p.exp() * ci;
                g += e;
                radial += e * p * 3.0;
                let (pa, pm, pn) = (m * n, a * n, a * m);
                lap += e * (pa * pa + pm * pm + pn * pn);
            }
        }
    }
    (g, radial, lap)
}

impl ExactSolution {
    /// Draws `c_i ~ N(0, 1)` from `seed`.
    pub fn sample(interaction: Interaction, dim: usize, seed: u64) -> Result<Self> {
        let span = match interaction {
            Interaction::TwoBody => 2,
            Interaction::ThreeBody => 3,
        };
        if dim < span {
            return Err(Error::InvalidArgument(format!(
                "{interaction:?} solution needs dimension at least {span}, got {dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coefficients = (0..dim + 1 - span)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        Ok(Self {
            interaction,
            coefficients,
        })
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len()
            + match self.interaction {
                Interaction::TwoBody => 1,
                Interaction::ThreeBody => 2,
            }
    }

    /// `(u, Lap u)` at `x`, generic over dual numbers.
    pub fn value_and_laplacian<D: DualNum<f64> + Copy>(&self, x: &[D]) -> (D, D) {
        let (g, radial, lap_g) = interaction_parts(self.interaction, &self.coefficients, x);
        let sq = x.iter().fold(x[0] * 0.0, |acc, &v| acc + v * v);
        let b = -sq + 1.0;
        let d = x.len() as f64;
        (b * g, b * lap_g - radial * 4.0 - g * (2.0 * d))
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.value_and_laplacian(x).0
    }

    pub fn laplacian(&self, x: &[f64]) -> f64 {
        self.value_and_laplacian(x).1
    }
}

/// Initial data of a parabolic problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// `5 / (10 + 2 |x|^2)`.
    Rational,
    /// `arctan(max_i x_i)`.
    ArctanMax,
}

impl InitialCondition {
    pub fn value(self, x: &[f64]) -> f64 {
        match self {
            InitialCondition::Rational => 5.0 / (10.0 + 2.0 * x.iter().map(|v| v * v).sum::<f64>()),
            InitialCondition::ArctanMax => {
                x.iter().copied().fold(f64::NEG_INFINITY, f64::max).atan()
            }
        }
    }
}

/// One factor of a residual monomial: `u` itself or a partial derivative.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Value,
    Partial(MultiIndex),
}

/// `coefficient * prod factors`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coefficient: f64,
    pub factors: Vec<Factor>,
}

impl Monomial {
    /// Parses factors such as `["u", "x1 x3"]`.
    pub fn parse(coefficient: f64, factors: &[&str]) -> Result<Self> {
        let factors = factors
            .iter()
            .map(|s| {
                if *s == "u" {
                    Ok(Factor::Value)
                } else {
                    s.parse().map(Factor::Partial)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            coefficient,
            factors,
        })
    }
}

/// Residual structure of a problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeKind {
    /// `Lap u + N(u) = f` in the unit ball, `u = 0` on the sphere.
    Elliptic { nonlinearity: Nonlinearity },
    /// `u_t = Lap u + N(u)` for `t` in `[0, horizon]`, `u(x, 0) = g(x)`.
    /// The time coordinate is the last input.
    Parabolic {
        nonlinearity: Nonlinearity,
        initial: InitialCondition,
        horizon: f64,
    },
    /// `sum_m c_m prod D^alpha u = 0` on a box.
    Polynomial { monomials: Vec<Monomial> },
}

/// Where residual points are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    UnitBall,
    /// `x ~ N(0, (T - t) I)` with `t ~ U[0, T]`; time last.
    Diffusion {
        horizon: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

/// A registered problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeProblem {
    pub name: String,
    /// Spatial dimension.
    pub dim: usize,
    pub kind: PdeKind,
    pub exact: Option<ExactSolution>,
    pub domain: Domain,
}

impl PdeProblem {
    /// Network input length (spatial dimension plus time, if any).
    pub fn input_len(&self) -> usize {
        match &self.kind {
            PdeKind::Parabolic { .. } => self.dim + 1,
            PdeKind::Polynomial { .. } => match &self.domain {
                Domain::Box { lo, .. } => lo.len(),
                _ => self.dim,
            },
            PdeKind::Elliptic { .. } => self.dim,
        }
    }

    pub fn nonlinearity(&self) -> Option<Nonlinearity> {
        match &self.kind {
            PdeKind::Elliptic { nonlinearity } | PdeKind::Parabolic { nonlinearity, .. } => {
                Some(*nonlinearity)
            }
            PdeKind::Polynomial { .. } => None,
        }
    }

    /// Whether the residual is `Lap u + N(u) [- u_t] - f`, so the Laplacian
    /// can be subsampled.
    pub fn is_semilinear(&self) -> bool {
        self.nonlinearity().is_some()
    }

    /// Whether the network should carry the `1 - |x|^2` factor.
    pub fn zero_boundary(&self) -> bool {
        matches!(self.domain, Domain::UnitBall)
    }

    /// Source term `f(x) = Lap u*(x) + N(u*(x))`; zero without a
    /// manufactured solution.
    pub fn source(&self, x: &[f64]) -> f64 {
        match (&self.exact, self.nonlinearity()) {
            (Some(sol), Some(n)) => {
                let (u, lap) = sol.value_and_laplacian(x);
                lap + n.eval(u)
            }
            _ => 0.0,
        }
    }

    /// `d f / d x_j`, by forward-mode dual numbers through the closed form.
    pub fn source_partial(&self, x: &[f64], j: usize) -> f64 {
        let (Some(sol), Some(n)) = (&self.exact, self.nonlinearity()) else {
            return 0.0;
        };
        first_derivative(
            |s| {
                let xs: Vec<_> = x
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| if k == j { s + v } else { s * 0.0 + v })
                    .collect();
                let (u, lap) = sol.value_and_laplacian(&xs);
                lap + n.eval(u)
            },
            0.0,
        )
        .1
    }

    /// Draws one residual point.
    pub fn sample_point(&self, rng: &mut impl Rng) -> Vec<f64> {
        match &self.domain {
            Domain::UnitBall => sample_ball(self.dim, rng),
            Domain::Diffusion { horizon } => {
                let t = rng.random::<f64>() * horizon;
                let s = (horizon - t).sqrt();
                let mut x: Vec<f64> = (0..self.dim)
                    .map(|_| s * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                x.push(t);
                x
            }
            Domain::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| a + (b - a) * rng.random::<f64>())
                .collect(),
        }
    }
}

/// Uniform point in the unit `d`-ball: normalized Gaussian direction times
/// `U^(1/d)` radius.
pub fn sample_ball(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            let r = rng.random::<f64>().powf(1.0 / d as f64);
            return g.into_iter().map(|v| v * r / norm).collect();
        }
    }
}

/// Names accepted by [`pde_registry`].
pub const PROBLEM_NAMES: &[&str] = &[
    "poisson-2body",
    "poisson-3body",
    "allen-cahn-2body",
    "allen-cahn-3body",
    "sine-gordon-2body",
    "sine-gordon-3body",
    "heat-parabolic",
    "allen-cahn-parabolic",
    "sine-gordon-parabolic",
    "kdv-2d",
    "kp-2d",
    "gkdv-1d",
];

/// Time horizon of the parabolic problems.
pub const PARABOLIC_HORIZON: f64 = 0.3;

/// Builds problem `name` in spatial dimension `dim`; manufactured-solution
/// coefficients are drawn from `seed`. Low-dimensional problems ignore `dim`.
pub fn pde_registry(name: &str, dim: usize, seed: u64) -> Result<PdeProblem> {
    let elliptic = |nonlinearity, interaction| -> Result<PdeProblem> {
        Ok(PdeProblem {
            name: name.to_string(),
            dim,
            kind: PdeKind::Elliptic { nonlinearity },
            exact: Some(ExactSolution::sample(interaction, dim, seed)?),
            domain: Domain::UnitBall,
        })
    };
    let parabolic = |nonlinearity, initial| PdeProblem {
        name: name.to_string(),
        dim,
        kind: PdeKind::Parabolic {
            nonlinearity,
            initial,
            horizon: PARABOLIC_HORIZON,
        },
        exact: None,
        domain: Domain::Diffusion {
            horizon: PARABOLIC_HORIZON,
        },
    };
    let polynomial = |dims: usize, terms: &[(f64, &[&str])]| -> Result<PdeProblem> {
        let monomials = terms
            .iter()
            .map(|(c, f)| Monomial::parse(*c, f))
            .collect::<Result<_>>()?;
        let mut lo = vec![-1.0; dims];
        let mut hi = vec![1.0; dims];
        lo[dims - 1] = 0.0;
        hi[dims - 1] = 1.0;
        Ok(PdeProblem {
            name: name.to_string(),
            dim: dims - 1,
            kind: PdeKind::Polynomial { monomials },
            exact: None,
            domain: Domain::Box { lo, hi },
        })
    };
    if dim == 0 && !matches!(name, "kdv-2d" | "kp-2d" | "gkdv-1d") {
        return Err(Error::InvalidArgument(
            "problem dimension must be positive".into(),
        ));
    }
    use Interaction::*;
    use Nonlinearity::*;
    match name {
        "poisson-2body" => elliptic(Zero, TwoBody),
        "poisson-3body" => elliptic(Zero, ThreeBody),
        "allen-cahn-2body" => elliptic(AllenCahn, TwoBody),
        "allen-cahn-3body" => elliptic(AllenCahn, ThreeBody),
        "sine-gordon-2body" => elliptic(SineGordon, TwoBody),
        "sine-gordon-3body" => elliptic(SineGordon, ThreeBody),
        "heat-parabolic" => Ok(parabolic(Rational, InitialCondition::Rational)),
        "allen-cahn-parabolic" => Ok(parabolic(AllenCahn, InitialCondition::ArctanMax)),
        "sine-gordon-parabolic" => Ok(parabolic(SineGordon, InitialCondition::Rational)),
        // Inputs (x, y, t): u_ty + u_xxxy + 3 (u_y u_x)_x - u_xx + 2 u_yy.
        "kdv-2d" => polynomial(
            3,
            &[
                (1.0, &["x2 x3"]),
                (1.0, &["x1^3 x2"]),
                (3.0, &["x1 x2", "x1"]),
                (3.0, &["x2", "x1^2"]),
                (-1.0, &["x1^2"]),
                (2.0, &["x2^2"]),
            ],
        ),
        // Inputs (x, y, t): u_tx + 6 u_x^2 + 6 u u_xx + u_xxxx + 3 u_yy.
        "kp-2d" => polynomial(
            3,
            &[
                (1.0, &["x1 x3"]),
                (6.0, &["x1", "x1"]),
                (6.0, &["u", "x1^2"]),
                (1.0, &["x1^4"]),
                (3.0, &["x2^2"]),
            ],
        ),
        // Inputs (x, t): u_t + u u_x + u_xxx.
        "gkdv-1d" => polynomial(2, &[(1.0, &["x2"]), (1.0, &["u", "x1"]), (1.0, &["x1^3"])]),
        _ => Err(Error::UnknownProblem(name.to_string())),
    }
}
