//! Jet plans for mixed partial derivatives.
//!
//! Reading the order-`l` output tangent of a jet whose slot `j_t` carries
//! `e_(i_t)` yields `sum_p c_p D^(beta_p) u` over every partition `p` of `l`
//! built only from the used slots, where `beta_p` takes `p_(j_t)` derivatives
//! along `i_t`. One partition is designated to produce the target; the
//! others, if any, are subtracted as separately planned corrections.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{DiffOperator, MultiIndex};
use crate::error::{Error, Result};
use crate::graph::primitive::MAX_CONFIGURABLE_ORDER;
use crate::jet::Partition;

/// What a tangent slot carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Standard basis vector `e_i` (0-based).
    Basis(usize),
    Vector(Vec<f64>),
}

impl Direction {
    /// Dense vector of length `d`.
    pub fn to_dense(&self, d: usize) -> Result<Vec<f64>> {
        match self {
            Direction::Basis(i) if *i < d => {
                let mut v = vec![0.0; d];
                v[*i] = 1.0;
                Ok(v)
            }
            Direction::Basis(i) => Err(Error::Shape(format!(
                "basis direction e_{i} in dimension {d}"
            ))),
            Direction::Vector(v) if v.len() == d => Ok(v.clone()),
            Direction::Vector(v) => Err(Error::Shape(format!(
                "direction of length {} in dimension {d}",
                v.len()
            ))),
        }
    }
}

/// Tangent slot `slot` carries `direction`; the designated partition uses
/// it `multiplicity` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSlot {
    pub slot: usize,
    pub direction: Direction,
    pub multiplicity: u32,
}

/// A partition overlapping the designated one, subtracted with weight
/// `coefficient` (its Faa di Bruno count).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub coefficient: u128,
    pub plan: JetPlan,
}

/// Exact evaluation recipe for one mixed partial:
/// `(t_extract - sum_c coefficient_c * value(plan_c)) / prefactor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JetPlan {
    pub target: MultiIndex,
    pub order: usize,
    pub slots: Vec<PlanSlot>,
    pub prefactor: u128,
    pub corrections: Vec<Correction>,
    pub extract: usize,
}

/// A single jet pushforward: order, and the direction in each active slot.
/// Its value is the order-`order` output tangent.
#[derive(Debug, Clone, PartialEq)]
pub struct Pushforward {
    pub order: usize,
    pub slots: Vec<(usize, Direction)>,
}

impl Pushforward {
    /// Batching key: pushforwards with equal shapes share one expansion.
    pub fn shape(&self) -> (usize, Vec<usize>) {
        (self.order, self.slots.iter().map(|(j, _)| *j).collect())
    }
}

impl JetPlan {
    /// Number of pushforwards needed, corrections included.
    pub fn cost(&self) -> usize {
        1 + self
            .corrections
            .iter()
            .map(|c| c.plan.cost())
            .sum::<usize>()
    }

    /// Slot orders used, sorted by slot.
    pub fn shape(&self) -> (usize, Vec<usize>) {
        (self.order, self.slots.iter().map(|s| s.slot).collect())
    }

    /// Flattens the plan into `sum_r w_r * pushforward_r`.
    pub fn linearize(&self) -> Vec<(Pushforward, f64)> {
        let mut out = Vec::with_capacity(self.cost());
        self.linearize_into(1.0, &mut out);
        out
    }

    fn linearize_into(&self, scale: f64, out: &mut Vec<(Pushforward, f64)>) {
        let s = scale / self.prefactor as f64;
        out.push((
            Pushforward {
                order: self.order,
                slots: self
                    .slots
                    .iter()
                    .map(|p| (p.slot, p.direction.clone()))
                    .collect(),
            },
            s,
        ));
        for c in &self.corrections {
            c.plan.linearize_into(-s * c.coefficient as f64, out);
        }
    }

    /// Largest jet order used anywhere in the plan.
    pub fn max_order(&self) -> usize {
        self.corrections
            .iter()
            .map(|c| c.plan.max_order())
            .fold(self.order, usize::max)
    }
}

/// A candidate slot assignment before its corrections are planned.
struct Candidate {
    order: usize,
    slots: Vec<usize>,
    prefactor: u128,
    /// `(beta, coefficient)` for every other partition on the used slots.
    overlaps: Vec<(MultiIndex, u128)>,
}

/// All non-negative `p` with `sum_t p_t * slots_t = l`.
fn solutions(slots: &[usize], l: usize) -> Vec<Vec<u32>> {
    fn rec(slots: &[usize], rest: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        let Some((&j, tail)) = slots.split_first() else {
            if rest == 0 {
                out.push(cur.clone());
            }
            return;
        };
        for p in 0..=rest / j {
            cur.push(p as u32);
            rec(tail, rest - p * j, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(slots, l, &mut Vec::with_capacity(slots.len()), &mut out);
    out
}

fn partition_of(slots: &[usize], p: &[u32], l: usize) -> Result<Partition> {
    let mut mult = vec![0u32; l];
    for (&j, &pj) in slots.iter().zip(p) {
        mult[j - 1] += pj;
    }
    Partition::from_multiplicities(mult)
}

fn candidate(target: &MultiIndex, slots: &[usize]) -> Result<Candidate> {
    let q: Vec<u32> = target.pairs().iter().map(|&(_, o)| o).collect();
    let l: usize = slots.iter().zip(&q).map(|(&j, &o)| j * o as usize).sum();
    let prefactor = partition_of(slots, &q, l)?.coefficient();
    let mut overlaps = Vec::new();
    for p in solutions(slots, l) {
        if p == q {
            continue;
        }
        let beta = MultiIndex::new(
            target
                .pairs()
                .iter()
                .zip(&p)
                .map(|(&(dim, _), &pt)| (dim, pt)),
        )?;
        overlaps.push((beta, partition_of(slots, &p, l)?.coefficient()));
    }
    Ok(Candidate {
        order: l,
        slots: slots.to_vec(),
        prefactor,
        overlaps,
    })
}

/// Distinct positive slot tuples with `sum_t j_t q_t <= cap`, in
/// lexicographic order.
fn slot_tuples(q: &[u32], cap: usize) -> Vec<Vec<usize>> {
    fn rec(q: &[u32], budget: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let Some((&o, tail)) = q.split_first() else {
            out.push(cur.clone());
            return;
        };
        // leave room for the remaining dimensions at slot >= 1
        let reserve: usize = tail.iter().map(|&o| o as usize).sum();
        for j in 1..=budget.saturating_sub(reserve) / o as usize {
            if cur.contains(&j) {
                continue;
            }
            cur.push(j);
            rec(tail, budget - j * o as usize, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(q, cap, &mut Vec::new(), &mut out);
    out
}

struct Planner {
    cap: usize,
    memo: HashMap<MultiIndex, Option<JetPlan>>,
    active: HashSet<MultiIndex>,
}

impl Planner {
    fn build(&self, c: &Candidate, target: &MultiIndex, corrections: Vec<Correction>) -> JetPlan {
        let slots = target
            .pairs()
            .iter()
            .zip(&c.slots)
            .map(|(&(dim, q), &j)| PlanSlot {
                slot: j,
                direction: Direction::Basis(dim),
                multiplicity: q,
            })
            .collect::<Vec<_>>();
        let mut slots = slots;
        slots.sort_by_key(|s| s.slot);
        JetPlan {
            target: target.clone(),
            order: c.order,
            slots,
            prefactor: c.prefactor,
            corrections,
            extract: c.order,
        }
    }

    fn plan(&mut self, target: &MultiIndex) -> Result<Option<JetPlan>> {
        if let Some(p) = self.memo.get(target) {
            return Ok(p.clone());
        }
        if !self.active.insert(target.clone()) {
            return Ok(None);
        }
        let result = self.search(target);
        self.active.remove(target);
        let result = result?;
        self.memo.insert(target.clone(), result.clone());
        Ok(result)
    }

    fn search(&mut self, target: &MultiIndex) -> Result<Option<JetPlan>> {
        let q: Vec<u32> = target.pairs().iter().map(|&(_, o)| o).collect();
        let mut cands = slot_tuples(&q, self.cap)
            .iter()
            .map(|s| candidate(target, s))
            .collect::<Result<Vec<_>>>()?;
        cands.sort_by(|a, b| {
            (a.overlaps.len().min(1), a.order, a.overlaps.len(), &a.slots).cmp(&(
                b.overlaps.len().min(1),
                b.order,
                b.overlaps.len(),
                &b.slots,
            ))
        });
        let Some(first) = cands.first() else {
            return Ok(None);
        };
        if first.overlaps.is_empty() {
            return Ok(Some(self.build(first, target, Vec::new())));
        }

        // Every candidate needs corrections: pick the fewest total
        // pushforwards, then the lowest order.
        let mut best: Option<(usize, usize, JetPlan)> = None;
        'cand: for c in &cands {
            let lower_bound = 1 + c.overlaps.len();
            if let Some((cost, order, _)) = &best {
                if (lower_bound, c.order) >= (*cost, *order) {
                    continue;
                }
            }
            let mut corrections = Vec::with_capacity(c.overlaps.len());
            let mut cost = 1;
            for (beta, coef) in &c.overlaps {
                match self.plan(beta)? {
                    Some(sub) => {
                        cost += sub.cost();
                        corrections.push(Correction {
                            coefficient: *coef,
                            plan: sub,
                        });
                    }
                    None => continue 'cand,
                }
            }
            let better = match &best {
                None => true,
                Some((bc, bo, _)) => (cost, c.order) < (*bc, *bo),
            };
            if better {
                best = Some((cost, c.order, self.build(c, target, corrections)));
            }
        }
        Ok(best.map(|(_, _, p)| p))
    }
}

/// Plans `D^target` using jets of order at most `cap`.
///
/// The lowest-order correction-free assignment is preferred; when none fits
/// under `cap`, the assignment needing the fewest total pushforwards wins.
pub fn plan_mixed_partial(target: &MultiIndex, cap: usize) -> Result<JetPlan> {
    if cap == 0 || cap > MAX_CONFIGURABLE_ORDER {
        return Err(Error::OrderTooHigh {
            order: cap,
            max: MAX_CONFIGURABLE_ORDER,
        });
    }
    let mut planner = Planner {
        cap,
        memo: HashMap::new(),
        active: HashSet::new(),
    };
    planner.plan(target)?.ok_or_else(|| Error::NoPlan {
        target: target.to_string(),
        cap,
    })
}

/// One operator term with its plan. `batchable` is set when another term
/// shares the same plan shape, so their pushforwards can run together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedTerm {
    pub target: MultiIndex,
    pub coefficient: f64,
    pub plan: JetPlan,
    pub batchable: bool,
}

/// Plans every term of `op`.
pub fn plan_operator(op: &DiffOperator, cap: usize) -> Result<Vec<PlannedTerm>> {
    let mut cache: HashMap<Vec<u32>, JetPlan> = HashMap::new();
    let mut out = Vec::with_capacity(op.terms().len());
    for (alpha, c) in op.terms() {
        // plans depend only on the order profile; relabel dimensions
        let profile: Vec<u32> = alpha.pairs().iter().map(|&(_, o)| o).collect();
        let plan = match cache.get(&profile) {
            Some(p) => relabel(p, alpha),
            None => {
                let canonical = MultiIndex::new(profile.iter().enumerate().map(|(i, &o)| (i, o)))?;
                let p = plan_mixed_partial(&canonical, cap)?;
                let relabelled = relabel(&p, alpha);
                cache.insert(profile, p);
                relabelled
            }
        };
        out.push(PlannedTerm {
            target: alpha.clone(),
            coefficient: *c,
            plan,
            batchable: false,
        });
    }
    let mut shape_count: HashMap<(usize, Vec<usize>), usize> = HashMap::new();
    for t in &out {
        *shape_count.entry(t.plan.shape()).or_default() += 1;
    }
    for t in &mut out {
        t.batchable = shape_count[&t.plan.shape()] > 1;
    }
    Ok(out)
}

/// Maps a plan for the canonical index `(0, q_0), (1, q_1), ...` onto the
/// dimensions of `alpha`.
fn relabel(plan: &JetPlan, alpha: &MultiIndex) -> JetPlan {
    let dims: Vec<usize> = alpha.pairs().iter().map(|&(d, _)| d).collect();
    relabel_with(plan, &dims)
}

fn relabel_with(plan: &JetPlan, dims: &[usize]) -> JetPlan {
    let map_index = |m: &MultiIndex| {
        MultiIndex::new(m.pairs().iter().map(|&(d, o)| (dims[d], o))).expect("nonzero index")
    };
    JetPlan {
        target: map_index(&plan.target),
        order: plan.order,
        slots: plan
            .slots
            .iter()
            .map(|s| PlanSlot {
                slot: s.slot,
                direction: match &s.direction {
                    Direction::Basis(d) => Direction::Basis(dims[*d]),
                    v => v.clone(),
                },
                multiplicity: s.multiplicity,
            })
            .collect(),
        prefactor: plan.prefactor,
        corrections: plan
            .corrections
            .iter()
            .map(|c| Correction {
                coefficient: c.coefficient,
                plan: relabel_with(&c.plan, dims),
            })
            .collect(),
        extract: plan.extract,
    }
}
