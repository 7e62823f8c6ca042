//! NDCG with linear gain and graded relevance judgments.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// `DCG = sum rel_i / log2(i + 1)` over the first `k` positions (1-based `i`).
pub fn dcg_at_k(grades: &[u32], k: usize) -> f64 {
    grades.iter().take(k).enumerate().map(|(i, &g)| f64::from(g) / ((i + 2) as f64).log2()).sum()
}

/// NDCG against an explicit ideal grade list (any order). Zero when the
/// ideal DCG is zero.
pub fn ndcg_with_ideal(grades: &[u32], ideal: &[u32], k: usize) -> f64 {
    let mut ideal = ideal.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        0.0
    } else {
        dcg_at_k(grades, k) / idcg
    }
}

/// NDCG of a ranked list whose ideal is the same grades sorted.
pub fn ndcg_at_k(grades: &[u32], k: usize) -> f64 {
    ndcg_with_ideal(grades, grades, k)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLabel {
    pub item: String,
    pub group: String,
}

/// Relevance grades keyed by (anchor, item). Explicit grades take priority;
/// otherwise two distinct items in the same group grade 1.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Judgments {
    explicit: BTreeMap<(String, String), u32>,
    groups: BTreeMap<String, String>,
    group_sizes: BTreeMap<String, usize>,
}

impl Judgments {
    pub fn from_groups(groups: BTreeMap<String, String>) -> Self {
        let mut group_sizes: BTreeMap<String, usize> = BTreeMap::new();
        for g in groups.values() {
            *group_sizes.entry(g.clone()).or_default() += 1;
        }
        Self { explicit: BTreeMap::new(), groups, group_sizes }
    }

    pub fn from_labels(labels: &[GroupLabel]) -> Self {
        Self::from_groups(labels.iter().map(|l| (l.item.clone(), l.group.clone())).collect())
    }

    pub fn labels(&self) -> Vec<GroupLabel> {
        self.groups.iter().map(|(item, group)| GroupLabel { item: item.clone(), group: group.clone() }).collect()
    }

    pub fn set(&mut self, anchor: &str, item: &str, grade: u32) {
        self.explicit.insert((anchor.to_string(), item.to_string()), grade);
    }

    pub fn grade(&self, anchor: &str, item: &str) -> u32 {
        if let Some(&g) = self.explicit.get(&(anchor.to_string(), item.to_string())) {
            return g;
        }
        match (self.groups.get(anchor), self.groups.get(item)) {
            (Some(a), Some(b)) if a == b && anchor != item => 1,
            _ => 0,
        }
    }

    /// The best `k` grades attainable for `anchor` over all judged items.
    pub fn ideal(&self, anchor: &str, k: usize) -> Vec<u32> {
        let mates = self
            .groups
            .get(anchor)
            .map(|g| self.group_sizes[g].saturating_sub(1))
            .unwrap_or(0);
        let mut grades: Vec<u32> = self
            .explicit
            .iter()
            .filter(|((a, _), _)| a == anchor)
            .map(|(_, &g)| g)
            .collect();
        let overridden = self
            .explicit
            .keys()
            .filter(|(a, i)| a == anchor && self.groups.contains_key(i) && self.groups.get(i) == self.groups.get(a) && a != i)
            .count();
        grades.extend(std::iter::repeat_n(1, mates - overridden));
        grades.sort_unstable_by(|a, b| b.cmp(a));
        grades.truncate(k);
        grades
    }

    pub fn ndcg(&self, anchor: &str, ranked: &[String], k: usize) -> f64 {
        let grades: Vec<u32> = ranked.iter().take(k).map(|i| self.grade(anchor, i)).collect();
        ndcg_with_ideal(&grades, &self.ideal(anchor, k), k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let v = ndcg_at_k(&[1, 0, 1], 3);
        let expected = 1.5 / (1.0 + 1.0 / 3f64.log2());
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.9197).abs() < 5e-5);
    }

    #[test]
    fn perfect_and_zero() {
        assert_eq!(ndcg_at_k(&[3, 2, 1, 0], 4), 1.0);
        assert_eq!(ndcg_at_k(&[0, 0, 0], 3), 0.0);
        assert_eq!(ndcg_at_k(&[], 3), 0.0);
    }

    #[test]
    fn cutoff_applies() {
        assert_eq!(ndcg_at_k(&[0, 1], 1), 0.0);
        assert!(ndcg_at_k(&[0, 1], 2) < 1.0);
    }

    #[test]
    fn group_judgments() {
        let groups = [("a", "g1"), ("b", "g1"), ("c", "g1"), ("d", "g2")]
            .iter()
            .map(|(i, g)| (i.to_string(), g.to_string()))
            .collect();
        let mut j = Judgments::from_groups(groups);
        assert_eq!(j.grade("a", "b"), 1);
        assert_eq!(j.grade("a", "a"), 0);
        assert_eq!(j.grade("a", "d"), 0);
        assert_eq!(j.ideal("a", 10), vec![1, 1]);
        let ranked: Vec<String> = ["b", "c", "d"].iter().map(|s| s.to_string()).collect();
        assert_eq!(j.ndcg("a", &ranked, 3), 1.0);
        let ranked: Vec<String> = ["d", "b"].iter().map(|s| s.to_string()).collect();
        assert!(j.ndcg("a", &ranked, 3) < 1.0);
        j.set("a", "d", 3);
        assert_eq!(j.ideal("a", 10), vec![3, 1, 1]);
        j.set("a", "b", 0);
        assert_eq!(j.ideal("a", 10), vec![3, 1, 0]);
    }
}
