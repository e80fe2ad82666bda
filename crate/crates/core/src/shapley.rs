//! Shapley value attribution over subset utilities.
//!
//! Utilities are memoized per canonically-sorted subset, with the empty
//! subset worth 0 by convention. Small player sets are solved exactly by the
//! subset-weight formula; larger sets fall back to Monte-Carlo permutation
//! sampling. Both routes satisfy efficiency (the values sum to the utility of
//! the full set) because permutation marginals telescope.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShapleyError {
    #[error("permutation budget must be >= 1")]
    ZeroBudget,
    #[error("player set is empty")]
    NoPlayers,
}

/// Memoized subset → utility map; keys are sorted node lists.
#[derive(Debug, Default, Clone)]
pub struct UtilityCache {
    map: BTreeMap<Vec<usize>, f64>,
}

impl UtilityCache {
    pub fn new() -> Self {
        let mut map = BTreeMap::new();
        map.insert(Vec::new(), 0.0); // utility(∅) = 0 by convention
        Self { map }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, key: &[usize]) -> Option<f64> {
        self.map.get(key).copied()
    }

    fn get_or_insert_with(&mut self, key: Vec<usize>, f: &mut impl FnMut(&[usize]) -> f64) -> f64 {
        debug_assert!(key.windows(2).all(|w| w[0] < w[1]), "keys are sorted");
        if let Some(&v) = self.map.get(&key) {
            return v;
        }
        let v = f(&key);
        self.map.insert(key, v);
        v
    }
}

/// Result of a Shapley computation, aligned with the input player order.
#[derive(Debug, Clone)]
pub struct ShapleyOutcome {
    /// (player, value) in the caller's player order.
    pub values: Vec<(usize, f64)>,
    pub permutations_used: usize,
    pub exact: bool,
}

/// Computes Shapley values for `players` under the given subset utility.
///
/// `utility` receives a sorted subset of players and is consulted at most
/// once per subset thanks to the cache. With at most `exact_threshold`
/// players the exact subset-weight formula is used; otherwise `budget`
/// permutations are sampled from `rng`.
pub fn shapley_values<R: Rng>(
    players: &[usize],
    utility: &mut impl FnMut(&[usize]) -> f64,
    budget: usize,
    exact_threshold: usize,
    rng: &mut R,
    cache: &mut UtilityCache,
) -> Result<ShapleyOutcome, ShapleyError> {
    if players.is_empty() {
        return Err(ShapleyError::NoPlayers);
    }
    if budget == 0 {
        return Err(ShapleyError::ZeroBudget);
    }
    if players.len() <= exact_threshold {
        Ok(exact_shapley(players, utility, cache))
    } else {
        Ok(monte_carlo_shapley(players, utility, budget, rng, cache))
    }
}

fn subset_key(players: &[usize], mask: u32) -> Vec<usize> {
    let mut key: Vec<usize> = players
        .iter()
        .enumerate()
        .filter(|(pos, _)| mask & (1 << pos) != 0)
        .map(|(_, &p)| p)
        .collect();
    key.sort_unstable();
    key
}

/// Exact values via Σ_S |S|!(n−1−|S|)!/n! · (φ(S∪{i}) − φ(S)).
fn exact_shapley(
    players: &[usize],
    utility: &mut impl FnMut(&[usize]) -> f64,
    cache: &mut UtilityCache,
) -> ShapleyOutcome {
    let n = players.len();
    debug_assert!(n <= 20, "exact enumeration is exponential");
    let factorial: Vec<f64> = (0..=n).scan(1.0, |acc, k| {
        if k > 0 {
            *acc *= k as f64;
        }
        Some(*acc)
    })
    .collect();
    let mut values = vec![0.0; n];
    for (pos, &player) in players.iter().enumerate() {
        let others: Vec<usize> = (0..n).filter(|&q| q != pos).collect();
        for mask in 0u32..(1 << others.len()) {
            let mut positions_mask = 0u32;
            for (bit, &q) in others.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    positions_mask |= 1 << q;
                }
            }
            let s = positions_mask.count_ones() as usize;
            let weight = factorial[s] * factorial[n - 1 - s] / factorial[n];
            let without = cache.get_or_insert_with(subset_key(players, positions_mask), utility);
            let with = cache.get_or_insert_with(
                subset_key(players, positions_mask | (1 << pos)),
                utility,
            );
            values[pos] += weight * (with - without);
        }
        let _ = player;
    }
    ShapleyOutcome {
        values: players.iter().copied().zip(values).collect(),
        permutations_used: 0,
        exact: true,
    }
}

/// Monte-Carlo permutation sampling: each sampled order contributes one
/// marginal per player; marginals telescope so efficiency holds exactly.
fn monte_carlo_shapley<R: Rng>(
    players: &[usize],
    utility: &mut impl FnMut(&[usize]) -> f64,
    budget: usize,
    rng: &mut R,
    cache: &mut UtilityCache,
) -> ShapleyOutcome {
    let n = players.len();
    let mut totals: BTreeMap<usize, f64> = players.iter().map(|&p| (p, 0.0)).collect();
    let mut order: Vec<usize> = players.to_vec();
    for _ in 0..budget {
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut prefix: Vec<usize> = Vec::with_capacity(n);
        let mut prev = 0.0; // utility(∅)
        for &p in &order {
            prefix.push(p);
            prefix.sort_unstable();
            let cur = cache.get_or_insert_with(prefix.clone(), utility);
            *totals.get_mut(&p).expect("player present") += cur - prev;
            prev = cur;
        }
    }
    let scale = 1.0 / budget as f64;
    ShapleyOutcome {
        values: players
            .iter()
            .map(|&p| (p, totals[&p] * scale))
            .collect(),
        permutations_used: budget,
        exact: false,
    }
}

/// All-permutation reference implementation; factorial cost, test use only.
pub fn shapley_all_permutations(
    players: &[usize],
    utility: &mut impl FnMut(&[usize]) -> f64,
) -> Vec<(usize, f64)> {
    let n = players.len();
    let mut cache = UtilityCache::new();
    let mut totals: BTreeMap<usize, f64> = players.iter().map(|&p| (p, 0.0)).collect();
    let mut order: Vec<usize> = players.to_vec();
    let mut count = 0usize;
    permute(&mut order, 0, &mut |perm| {
        count += 1;
        let mut prefix: Vec<usize> = Vec::with_capacity(n);
        let mut prev = 0.0;
        for &p in perm {
            prefix.push(p);
            prefix.sort_unstable();
            let cur = cache.get_or_insert_with(prefix.clone(), utility);
            *totals.get_mut(&p).expect("player present") += cur - prev;
            prev = cur;
        }
    });
    players
        .iter()
        .map(|&p| (p, totals[&p] / count as f64))
        .collect()
}

fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(&items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;
    use std::collections::BTreeMap;

    fn table_utility(table: BTreeMap<Vec<usize>, f64>) -> impl FnMut(&[usize]) -> f64 {
        move |subset: &[usize]| *table.get(subset).expect("utility defined for subset")
    }

    #[test]
    fn single_player_gets_singleton_utility() {
        let mut table = BTreeMap::new();
        table.insert(vec![4], 2.5);
        let mut utility = table_utility(table);
        let mut cache = UtilityCache::new();
        let out = shapley_values(&[4], &mut utility, 500, 6, &mut seeding::rng(0), &mut cache)
            .unwrap();
        assert_eq!(out.values, vec![(4, 2.5)]);
        assert!(out.exact);
    }

    #[test]
    fn two_player_example_by_hand() {
        // φ({A})=2, φ({B})=0, φ({A,B})=2: the two-permutation average gives
        // A → 2, B → 0.
        let (a, b) = (0usize, 1usize);
        let mut table = BTreeMap::new();
        table.insert(vec![a], 2.0);
        table.insert(vec![b], 0.0);
        table.insert(vec![a, b], 2.0);
        let mut utility = table_utility(table);
        let mut cache = UtilityCache::new();
        let out =
            shapley_values(&[a, b], &mut utility, 500, 6, &mut seeding::rng(0), &mut cache)
                .unwrap();
        assert_eq!(out.values, vec![(a, 2.0), (b, 0.0)]);
    }

    #[test]
    fn exact_matches_all_permutation_oracle_and_efficiency() {
        // Random utilities over 5 players; exact mode must agree with the
        // factorial-enumeration oracle to 1e-9 and satisfy efficiency.
        use rand::Rng;
        let players: Vec<usize> = vec![2, 3, 5, 8, 13];
        let mut rng = seeding::rng(17);
        let mut table = BTreeMap::new();
        for mask in 1u32..(1 << players.len()) {
            let key = subset_key(&players, mask);
            table.insert(key, rng.gen_range(-1.0..1.0));
        }
        table.insert(Vec::new(), 0.0);
        let full_key: Vec<usize> = {
            let mut k = players.clone();
            k.sort_unstable();
            k
        };
        let full = table[&full_key];

        let mut utility = table_utility(table.clone());
        let mut cache = UtilityCache::new();
        let exact =
            shapley_values(&players, &mut utility, 500, 6, &mut seeding::rng(0), &mut cache)
                .unwrap();
        let mut oracle_utility = table_utility(table);
        let oracle = shapley_all_permutations(&players, &mut oracle_utility);
        let mut sum = 0.0;
        for ((p1, v1), (p2, v2)) in exact.values.iter().zip(&oracle) {
            assert_eq!(p1, p2);
            assert!((v1 - v2).abs() < 1e-9, "{v1} vs {v2}");
            sum += v1;
        }
        assert!((sum - full).abs() < 1e-9, "efficiency: {sum} vs {full}");
    }

    #[test]
    fn monte_carlo_tracks_exact_within_tolerance() {
        // 8 players force the sampled path; compare against the exact subset
        // formula at 500 permutations and a fixed seed.
        use rand::Rng;
        let players: Vec<usize> = (0..8).collect();
        let mut rng = seeding::rng(23);
        let mut table = BTreeMap::new();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for mask in 1u32..(1 << players.len()) {
            let key = subset_key(&players, mask);
            let v = rng.gen_range(0.0..4.0);
            lo = lo.min(v);
            hi = hi.max(v);
            table.insert(key, v);
        }
        table.insert(Vec::new(), 0.0);
        lo = lo.min(0.0);

        let mut mc_utility = table_utility(table.clone());
        let mut cache = UtilityCache::new();
        let mc = shapley_values(
            &players,
            &mut mc_utility,
            500,
            6, // below player count, so Monte-Carlo runs
            &mut seeding::rng(7),
            &mut cache,
        )
        .unwrap();
        assert!(!mc.exact);
        assert_eq!(mc.permutations_used, 500);

        let mut exact_utility = table_utility(table);
        let mut exact_cache = UtilityCache::new();
        let exact = exact_shapley(&players, &mut exact_utility, &mut exact_cache);
        let range = hi - lo;
        for ((p1, approx), (p2, truth)) in mc.values.iter().zip(&exact.values) {
            assert_eq!(p1, p2);
            assert!(
                (approx - truth).abs() <= 0.05 * range,
                "player {p1}: {approx} vs {truth} (range {range})"
            );
        }
        // Permutation marginals telescope, so efficiency is exact for MC too.
        let sum: f64 = mc.values.iter().map(|(_, v)| v).sum();
        let full: f64 = exact.values.iter().map(|(_, v)| v).sum();
        assert!((sum - full).abs() < 1e-9);
    }

    #[test]
    fn zero_budget_rejected() {
        let mut utility = |_: &[usize]| 0.0;
        let mut cache = UtilityCache::new();
        assert!(matches!(
            shapley_values(&[1, 2], &mut utility, 0, 6, &mut seeding::rng(0), &mut cache),
            Err(ShapleyError::ZeroBudget)
        ));
    }
}
