//! Binary knapsack over segments: exhaustive search for small candidate
//! sets, a discretised dynamic program otherwise.

use serde::{Deserialize, Serialize};

/// Candidate counts up to this are solved exactly by enumeration.
pub const EXHAUSTIVE_LIMIT: usize = 20;

/// Default DP weight resolution is `budget / DEFAULT_GRID`.
pub const DEFAULT_GRID: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Item {
    pub value: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Exhaustive,
    DynamicProgram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packing {
    /// Item indices, ascending.
    pub chosen: Vec<usize>,
    pub objective: f64,
    pub spend: f64,
    pub solver: Solver,
    /// True when optimality is exact rather than up to the DP resolution.
    pub certified_optimal: bool,
    pub resolution: Option<f64>,
}

fn totals(items: &[Item], chosen: &[usize]) -> (f64, f64) {
    let mut value = 0.0;
    let mut weight = 0.0;
    for &i in chosen {
        value += items[i].value;
        weight += items[i].weight;
    }
    (value, weight)
}

/// True if the index set `a` sorts lexicographically before `b` (both given
/// as bitmasks over ascending indices).
fn lex_less(a: u64, b: u64) -> bool {
    let diff = a ^ b;
    if diff == 0 {
        return false;
    }
    let low = diff.trailing_zeros();
    let (holder, other) = if a >> low & 1 == 1 { (a, b) } else { (b, a) };
    let other_has_more = (other >> low) != 0;
    // The set holding the lowest differing index wins unless the other set
    // ends before it (and is therefore a prefix).
    let holder_smaller = other_has_more;
    (holder == a) == holder_smaller
}

/// Maximises total value subject to total weight `<= capacity`. Items with
/// non-positive value are never chosen; positive-value zero-weight items
/// always are.
pub fn solve(items: &[Item], capacity: f64, resolution: Option<f64>) -> Packing {
    let forced: Vec<usize> = (0..items.len())
        .filter(|&i| items[i].value > 0.0 && items[i].weight == 0.0)
        .collect();
    let pool: Vec<usize> = (0..items.len())
        .filter(|&i| items[i].value > 0.0 && items[i].weight > 0.0)
        .collect();

    let (picked, solver, certified, resolution) = if pool.len() <= EXHAUSTIVE_LIMIT {
        (exhaustive(items, &pool, capacity), Solver::Exhaustive, true, None)
    } else {
        let delta = resolution.unwrap_or(capacity / DEFAULT_GRID);
        let total: f64 = pool.iter().map(|&i| items[i].weight).sum();
        if total <= capacity {
            (pool.clone(), Solver::DynamicProgram, true, Some(delta))
        } else {
            (dynamic_program(items, &pool, capacity, delta), Solver::DynamicProgram, false, Some(delta))
        }
    };

    let mut chosen: Vec<usize> = forced.into_iter().chain(picked).collect();
    chosen.sort_unstable();
    let (objective, spend) = totals(items, &chosen);
    Packing {
        chosen,
        objective,
        spend,
        solver,
        certified_optimal: certified,
        resolution,
    }
}

fn exhaustive(items: &[Item], pool: &[usize], capacity: f64) -> Vec<usize> {
    let m = pool.len();
    let mut best_mask = 0u64;
    let mut best_value = 0.0;
    let mut best_weight = 0.0;
    for mask in 1u64..(1u64 << m) {
        let mut value = 0.0;
        let mut weight = 0.0;
        for (bit, &i) in pool.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                value += items[i].value;
                weight += items[i].weight;
            }
        }
        if weight > capacity {
            continue;
        }
        let better = value > best_value
            || (value == best_value
                && (weight < best_weight || (weight == best_weight && lex_less(mask, best_mask))));
        if better {
            best_mask = mask;
            best_value = value;
            best_weight = weight;
        }
    }
    (0..m).filter(|bit| best_mask >> bit & 1 == 1).map(|bit| pool[bit]).collect()
}

fn dynamic_program(items: &[Item], pool: &[usize], capacity: f64, delta: f64) -> Vec<usize> {
    if !(delta > 0.0) || capacity <= 0.0 {
        return Vec::new();
    }
    let cap = (capacity / delta).floor() as usize;
    // Rounding weights up keeps every DP-feasible set feasible in reals.
    let weights: Vec<usize> = pool
        .iter()
        .map(|&i| (items[i].weight / delta).ceil() as usize)
        .collect();
    let mut best = vec![f64::NEG_INFINITY; cap + 1];
    best[0] = 0.0;
    let mut take = vec![false; pool.len() * (cap + 1)];
    for (j, &i) in pool.iter().enumerate() {
        let w = weights[j];
        if w > cap {
            continue;
        }
        for c in (w..=cap).rev() {
            let cand = best[c - w] + items[i].value;
            if best[c - w] > f64::NEG_INFINITY && cand > best[c] {
                best[c] = cand;
                take[j * (cap + 1) + c] = true;
            }
        }
    }
    // Highest value, then lowest discretised spend.
    let mut c_best = 0;
    for c in 0..=cap {
        if best[c] > best[c_best] {
            c_best = c;
        }
    }
    let mut chosen = Vec::new();
    let mut c = c_best;
    for j in (0..pool.len()).rev() {
        if take[j * (cap + 1) + c] {
            chosen.push(pool[j]);
            c -= weights[j];
        }
    }
    chosen.sort_unstable();
    // Guard against floating drift at the boundary.
    while totals(items, &chosen).1 > capacity {
        let worst = chosen
            .iter()
            .enumerate()
            .min_by(|a, b| items[*a.1].value.total_cmp(&items[*b.1].value))
            .map(|(pos, _)| pos)
            .expect("non-empty while over capacity");
        chosen.remove(worst);
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(pairs: &[(f64, f64)]) -> Vec<Item> {
        pairs.iter().map(|&(value, weight)| Item { value, weight }).collect()
    }

    #[test]
    fn three_item_example() {
        // Subsets within budget 2.5: {0}=3, {1}=2, {2}=2, {1,2}=4 (weight 2.5).
        let it = items(&[(3.0, 2.0), (2.0, 1.0), (2.0, 1.5)]);
        let p = solve(&it, 2.5, None);
        assert_eq!(p.chosen, vec![1, 2]);
        assert_eq!(p.objective, 4.0);
        assert!(p.certified_optimal);
    }

    #[test]
    fn zero_budget() {
        let it = items(&[(3.0, 2.0), (1.0, 0.0)]);
        let p = solve(&it, 0.0, None);
        assert_eq!(p.chosen, vec![1]);
        let p = solve(&items(&[(3.0, 2.0)]), 0.0, None);
        assert!(p.chosen.is_empty() && p.objective == 0.0);
    }

    #[test]
    fn ties_prefer_lower_spend_then_lexicographic() {
        let it = items(&[(1.0, 1.0), (1.0, 0.5), (1.0, 0.5)]);
        let p = solve(&it, 0.6, None);
        assert_eq!(p.chosen, vec![1]);
        let it = items(&[(1.0, 0.5), (1.0, 0.5)]);
        assert_eq!(solve(&it, 0.6, None).chosen, vec![0]);
    }

    #[test]
    fn lex_order_on_masks() {
        assert!(lex_less(0b101, 0b010)); // [0,2] < [1]
        assert!(lex_less(0b001, 0b101)); // [0] < [0,2]
        assert!(lex_less(0b101, 0b1001)); // [0,2] < [0,3]
        assert!(!lex_less(0b1001, 0b101));
        assert!(!lex_less(0b11, 0b11));
    }

    #[test]
    fn dynamic_program_is_feasible_and_near_optimal() {
        // 24 items forces the DP path.
        let it: Vec<Item> = (0..24)
            .map(|i| Item {
                value: 1.0 + (i % 5) as f64,
                weight: 0.3 + (i % 7) as f64 * 0.2,
            })
            .collect();
        let p = solve(&it, 4.0, None);
        assert_eq!(p.solver, Solver::DynamicProgram);
        assert!(!p.certified_optimal);
        assert!(p.spend <= 4.0);
        // Greedy by ratio gives a lower bound the DP should meet.
        let mut order: Vec<usize> = (0..it.len()).collect();
        order.sort_by(|&a, &b| (it[b].value / it[b].weight).total_cmp(&(it[a].value / it[a].weight)));
        let (mut v, mut w) = (0.0, 0.0);
        for i in order {
            if w + it[i].weight <= 4.0 {
                w += it[i].weight;
                v += it[i].value;
            }
        }
        assert!(p.objective >= v);
    }
}
