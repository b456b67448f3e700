//! Pair construction for the contrastive term.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Index pairs into a batch with pair labels (`1` = same class).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairBatch {
    pub anchors: Vec<usize>,
    pub partners: Vec<usize>,
    pub same: Vec<u8>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn push(&mut self, anchor: usize, partner: usize, same: u8) {
        self.anchors.push(anchor);
        self.partners.push(partner);
        self.same.push(same);
    }

    pub fn extend(&mut self, other: PairBatch) {
        self.anchors.extend(other.anchors);
        self.partners.extend(other.partners);
        self.same.extend(other.same);
    }

    pub fn positives(&self) -> usize {
        self.same.iter().filter(|&&s| s == 1).count()
    }

    /// Every pair has distinct members and `same` agrees with `labels`.
    pub fn is_consistent(&self, labels: &[u8]) -> bool {
        (0..self.len()).all(|i| {
            let (a, b) = (self.anchors[i], self.partners[i]);
            a != b && a < labels.len() && b < labels.len() && self.same[i] == u8::from(labels[a] == labels[b])
        })
    }
}

fn class_members(labels: &[u8]) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        out[usize::from(y == 1)].push(i);
    }
    out
}

fn positive_pair<R: Rng + ?Sized>(members: &[Vec<usize>; 2], rng: &mut R) -> Option<(usize, usize)> {
    let eligible: Vec<usize> = members.iter().filter(|m| m.len() >= 2).flatten().copied().collect();
    let &a = eligible.choose(rng)?;
    let class = &members[usize::from(members[1].contains(&a))];
    loop {
        let &b = class.choose(rng)?;
        if b != a {
            return Some((a, b));
        }
    }
}

/// `n_pairs` random pairs, each positive or negative with probability ½
/// when both kinds are possible. Falls back to whichever kind is feasible;
/// fewer than two examples gives an empty batch.
pub fn sample_random_pairs<R: Rng + ?Sized>(labels: &[u8], n_pairs: usize, rng: &mut R) -> PairBatch {
    let members = class_members(labels);
    let can_neg = !members[0].is_empty() && !members[1].is_empty();
    let can_pos = members.iter().any(|m| m.len() >= 2);
    let mut out = PairBatch::default();
    if labels.len() < 2 {
        return out;
    }
    for _ in 0..n_pairs {
        let positive = match (can_pos, can_neg) {
            (true, true) => rng.random_bool(0.5),
            (pos, _) => pos,
        };
        if positive {
            if let Some((a, b)) = positive_pair(&members, rng) {
                out.push(a, b, 1);
            }
        } else {
            let a = rng.random_range(0..labels.len());
            let other = &members[usize::from(labels[a] != 1)];
            if let Some(&b) = other.choose(rng) {
                out.push(a, b, 0);
            }
        }
    }
    out
}

/// `n_pairs` random same-class pairs (empty when no class has two members).
pub fn sample_positive_pairs<R: Rng + ?Sized>(labels: &[u8], n_pairs: usize, rng: &mut R) -> PairBatch {
    let members = class_members(labels);
    let mut out = PairBatch::default();
    for _ in 0..n_pairs {
        match positive_pair(&members, rng) {
            Some((a, b)) => out.push(a, b, 1),
            None => break,
        }
    }
    out
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// For every anchor, the nearest opposite-label embedding (Euclidean; lowest
/// index on ties). Empty when only one class is present.
pub fn mine_hard_negatives(embeddings: &[Vec<f64>], labels: &[u8]) -> PairBatch {
    let mut out = PairBatch::default();
    for (a, za) in embeddings.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (b, zb) in embeddings.iter().enumerate() {
            if labels[b] == labels[a] {
                continue;
            }
            let d = squared_distance(za, zb);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((b, d));
            }
        }
        if let Some((b, _)) = best {
            out.push(a, b, 0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_class_gives_positives_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = sample_random_pairs(&[1, 1, 1, 1], 20, &mut rng);
        assert_eq!(p.len(), 20);
        assert!(p.same.iter().all(|&s| s == 1));
        assert!(p.is_consistent(&[1, 1, 1, 1]));
    }

    #[test]
    fn two_opposite_labels_give_the_cross_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = sample_random_pairs(&[0, 1], 10, &mut rng);
        assert_eq!(p.len(), 10);
        for i in 0..p.len() {
            assert_eq!(p.same[i], 0);
            assert_ne!(p.anchors[i], p.partners[i]);
        }
    }

    #[test]
    fn too_few_examples_give_empty_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_random_pairs(&[1], 5, &mut rng).is_empty());
        assert!(sample_random_pairs(&[], 5, &mut rng).is_empty());
    }

    #[test]
    fn balanced_positive_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels = [0, 1, 0, 1, 0, 1, 0, 1];
        let p = sample_random_pairs(&labels, 10_000, &mut rng);
        assert!(p.is_consistent(&labels));
        let frac = p.positives() as f64 / p.len() as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn mining_on_a_line() {
        let e = vec![vec![0.0], vec![1.0], vec![1.1]];
        let p = mine_hard_negatives(&e, &[0, 0, 1]);
        assert_eq!(p.anchors, vec![0, 1, 2]);
        assert_eq!(p.partners, vec![2, 2, 1]);
        assert!(p.same.iter().all(|&s| s == 0));

        let p = mine_hard_negatives(&[vec![0.0], vec![5.0]], &[1, 0]);
        assert_eq!(p.partners, vec![1, 0]);
        assert!(mine_hard_negatives(&[vec![0.0], vec![1.0]], &[1, 1]).is_empty());
    }

    #[test]
    fn mining_breaks_ties_by_lowest_index() {
        let e = vec![vec![0.0], vec![1.0], vec![-1.0]];
        let p = mine_hard_negatives(&e, &[0, 1, 1]);
        assert_eq!(p.partners[0], 1);
    }

    #[test]
    fn positives_only_sampler() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels = [0, 1, 1, 0, 1];
        let p = sample_positive_pairs(&labels, 50, &mut rng);
        assert_eq!(p.len(), 50);
        assert!(p.is_consistent(&labels) && p.positives() == 50);
        assert!(sample_positive_pairs(&[0, 1], 3, &mut rng).is_empty());
    }
}
