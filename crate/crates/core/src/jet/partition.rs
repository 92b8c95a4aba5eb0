//! Integer partitions of the derivative order and their Faa di Bruno
//! multiplicities.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::primitive::HARD_MAX_ORDER;

/// A partition of `k` in multiplicity form: `multiplicities[i-1] = p_i`
/// blocks of size `i`, with `sum i * p_i = k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    multiplicities: Vec<u32>,
    coefficient: u128,
}

impl Partition {
    /// Builds a partition from multiplicities, computing its coefficient.
    pub fn from_multiplicities(multiplicities: Vec<u32>) -> Result<Self> {
        let k: usize = multiplicities
            .iter()
            .enumerate()
            .map(|(i, &p)| (i + 1) * p as usize)
            .sum();
        if k == 0 || k > HARD_MAX_ORDER {
            return Err(Error::OrderTooHigh {
                order: k,
                max: HARD_MAX_ORDER,
            });
        }
        let mut multiplicities = multiplicities;
        multiplicities.resize(k, 0);
        let coefficient = set_partition_count(&multiplicities);
        Ok(Self {
            multiplicities,
            coefficient,
        })
    }

    pub fn multiplicities(&self) -> &[u32] {
        &self.multiplicities
    }

    /// `p_i` for block size `i` (1-based).
    pub fn multiplicity(&self, size: usize) -> u32 {
        self.multiplicities.get(size - 1).copied().unwrap_or(0)
    }

    pub fn order(&self) -> usize {
        self.multiplicities.len()
    }

    /// Number of blocks `m = sum p_i`, the derivative order of the outer function.
    pub fn blocks(&self) -> usize {
        self.multiplicities.iter().map(|&p| p as usize).sum()
    }

    /// `k! / prod p_i! (i!)^p_i`: the number of set partitions of `k`
    /// labelled elements with this block-size profile.
    pub fn coefficient(&self) -> u128 {
        self.coefficient
    }

    /// Block sizes with nonzero multiplicity.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.multiplicities
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0)
            .map(|(i, _)| i + 1)
    }
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

fn set_partition_count(mult: &[u32]) -> u128 {
    let k = mult.len();
    let mut denom: u128 = 1;
    for (i, &p) in mult.iter().enumerate() {
        let fi = factorial(i + 1);
        denom *= factorial(p as usize);
        for _ in 0..p {
            denom *= fi;
        }
    }
    factorial(k) / denom
}

/// Integer partitions of `k` in descending-parts order, e.g. for `k = 3`:
/// `3`, `2+1`, `1+1+1`.
fn partitions_of(k: usize) -> Vec<Partition> {
    fn rec(rest: usize, max_part: usize, parts: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest == 0 {
            out.push(parts.clone());
            return;
        }
        for part in (1..=max_part.min(rest)).rev() {
            parts.push(part);
            rec(rest - part, part, parts, out);
            parts.pop();
        }
    }
    let mut raw = Vec::new();
    rec(k, k, &mut Vec::new(), &mut raw);
    raw.into_iter()
        .map(|parts| {
            let mut mult = vec![0u32; k];
            for p in parts {
                mult[p - 1] += 1;
            }
            let coefficient = set_partition_count(&mult);
            Partition {
                multiplicities: mult,
                coefficient,
            }
        })
        .collect()
}

/// All partitions of `k`, cached per order.
pub fn enumerate_partitions(k: usize) -> Result<&'static [Partition]> {
    const EMPTY: OnceLock<Vec<Partition>> = OnceLock::new();
    static CACHE: [OnceLock<Vec<Partition>>; HARD_MAX_ORDER + 1] = [EMPTY; HARD_MAX_ORDER + 1];
    if k == 0 || k > HARD_MAX_ORDER {
        return Err(Error::OrderTooHigh {
            order: k,
            max: HARD_MAX_ORDER,
        });
    }
    Ok(CACHE[k].get_or_init(|| partitions_of(k)))
}

/// Coefficient of the partition with the given multiplicities, if valid.
pub fn faa_di_bruno_coefficient(multiplicities: &[u32]) -> Result<u128> {
    Partition::from_multiplicities(multiplicities.to_vec()).map(|p| p.coefficient())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn table(k: usize) -> HashMap<Vec<u32>, u128> {
        enumerate_partitions(k)
            .unwrap()
            .iter()
            .map(|p| (p.multiplicities().to_vec(), p.coefficient()))
            .collect()
    }

    #[test]
    fn order_two() {
        let t = table(2);
        assert_eq!(t.len(), 2);
        assert_eq!(t[&vec![2, 0]], 1);
        assert_eq!(t[&vec![0, 1]], 1);
    }

    #[test]
    fn order_three() {
        let t = table(3);
        assert_eq!(t.len(), 3);
        assert_eq!(t[&vec![3, 0, 0]], 1);
        assert_eq!(t[&vec![1, 1, 0]], 3);
        assert_eq!(t[&vec![0, 0, 1]], 1);
    }

    #[test]
    fn order_four_mixed_coefficients() {
        let t = table(4);
        assert_eq!(t[&vec![0, 2, 0, 0]], 3);
        assert_eq!(t[&vec![2, 1, 0, 0]], 6);
    }

    /// Set partitions of {1..k} enumerated directly (restricted growth
    /// strings) and tallied by block-size profile.
    fn brute_force_profile_counts(k: usize) -> HashMap<Vec<u32>, u128> {
        let mut counts = HashMap::new();
        let mut labels = vec![0usize; k];
        loop {
            let blocks = labels.iter().max().unwrap() + 1;
            let mut sizes = vec![0usize; blocks];
            for &l in &labels {
                sizes[l] += 1;
            }
            let mut mult = vec![0u32; k];
            for s in sizes {
                mult[s - 1] += 1;
            }
            *counts.entry(mult).or_insert(0) += 1;
            // next restricted growth string
            let mut i = k - 1;
            loop {
                let prefix_max = labels[..i].iter().copied().max().unwrap_or(0);
                if i > 0 && labels[i] <= prefix_max {
                    labels[i] += 1;
                    for l in labels.iter_mut().skip(i + 1) {
                        *l = 0;
                    }
                    break;
                }
                if i == 0 {
                    return counts;
                }
                i -= 1;
            }
        }
    }

    #[test]
    fn coefficients_count_set_partitions() {
        for k in 1..=8 {
            assert_eq!(table(k), brute_force_profile_counts(k), "k = {k}");
        }
    }

    #[test]
    fn partition_counts_match_known_sequence() {
        let p = [1usize, 2, 3, 5, 7, 11, 15, 22, 30, 42, 56, 77, 101];
        for (k, &expected) in p.iter().enumerate() {
            assert_eq!(enumerate_partitions(k + 1).unwrap().len(), expected);
        }
    }

    #[test]
    fn coefficients_sum_to_bell_numbers() {
        let bell = [1u128, 2, 5, 15, 52, 203, 877, 4140, 21147, 115975];
        for (k, &b) in bell.iter().enumerate() {
            let s: u128 = enumerate_partitions(k + 1)
                .unwrap()
                .iter()
                .map(|p| p.coefficient())
                .sum();
            assert_eq!(s, b);
        }
    }

    #[test]
    fn out_of_range() {
        assert!(enumerate_partitions(0).is_err());
        assert!(enumerate_partitions(HARD_MAX_ORDER + 1).is_err());
        assert_eq!(enumerate_partitions(HARD_MAX_ORDER).unwrap().len(), 10143);
    }

    #[test]
    fn seventh_order_two_three_pattern() {
        assert_eq!(faa_di_bruno_coefficient(&[0, 2, 1]).unwrap(), 105);
        assert_eq!(faa_di_bruno_coefficient(&[2, 0, 1]).unwrap(), 10);
    }
}
