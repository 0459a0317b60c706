use rand::seq::index;
use rand::Rng;

use super::{ItemId, KgError, KnowledgeGraph, Result, Tail};

/// Random restarts the chain sampler makes before giving up.
pub const MAX_PATTERN_RESTARTS: usize = 100;

/// Which pattern arities a graph can produce at all.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PatternSupport {
    /// `chain[n]` is true when some valid chain of `n` triples exists.
    pub chain: Vec<bool>,
    /// `multi_object[n]` is true when some (head, relation) bucket holds `n` distinct tails.
    pub multi_object: Vec<bool>,
}

impl PatternSupport {
    pub fn chain(&self, n: usize) -> bool {
        self.chain.get(n).copied().unwrap_or(false)
    }

    pub fn multi_object(&self, n: usize) -> bool {
        self.multi_object.get(n).copied().unwrap_or(false)
    }
}

impl KnowledgeGraph {
    /// Uniform draw over Σ; returns the triple's position.
    pub fn sample_triple<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        if self.triples.is_empty() {
            return Err(KgError::EmptySource);
        }
        Ok(rng.gen_range(0..self.triples.len()))
    }

    pub fn sample_name<R: Rng + ?Sized>(&self, id: impl Into<ItemId>, rng: &mut R) -> Result<&str> {
        let names = self.names(id)?;
        Ok(&names[rng.gen_range(0..names.len())])
    }

    /// Samples `n` triples where each tail is the next triple's head.
    ///
    /// Starts from a uniformly chosen entity-tail triple and extends greedily
    /// through `by_head`; dead ends trigger a restart. Only the last triple
    /// may carry an attribute tail, and no triple repeats.
    pub fn sample_chain<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        match n {
            0 => return Err(KgError::Config("chain length must be positive".into())),
            1 => return Ok(vec![self.sample_triple(rng)?]),
            _ => {}
        }
        if self.triples.is_empty() {
            return Err(KgError::EmptySource);
        }
        let mut candidates = Vec::new();
        'restart: for _ in 0..MAX_PATTERN_RESTARTS {
            if self.entity_tail_triples.is_empty() {
                break;
            }
            let start = self.entity_tail_triples[rng.gen_range(0..self.entity_tail_triples.len())];
            let mut chain = Vec::with_capacity(n);
            chain.push(start);
            while chain.len() < n {
                let last = &self.triples[*chain.last().unwrap()];
                let current = last.tail.entity().expect("intermediate tails are entities");
                let need_entity_tail = chain.len() + 1 < n;
                candidates.clear();
                candidates.extend(self.by_head(current).iter().copied().filter(|i| {
                    !chain.contains(i) && (!need_entity_tail || matches!(self.triples[*i].tail, Tail::Entity(_)))
                }));
                if candidates.is_empty() {
                    continue 'restart;
                }
                chain.push(candidates[rng.gen_range(0..candidates.len())]);
            }
            return Ok(chain);
        }
        Err(KgError::PatternExhausted {
            pattern: format!("{n}-triple chain"),
            attempts: MAX_PATTERN_RESTARTS,
        })
    }

    /// Samples `n` triples sharing head and relation, with pairwise distinct tails.
    pub fn sample_multi_object<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        match n {
            0 => return Err(KgError::Config("object count must be positive".into())),
            1 => return Ok(vec![self.sample_triple(rng)?]),
            _ => {}
        }
        let qualifying = self.object_buckets.partition_point(|b| b.len() >= n);
        if qualifying == 0 {
            return Err(KgError::PatternExhausted {
                pattern: format!("{n}-object bucket"),
                attempts: 1,
            });
        }
        let bucket = &self.object_buckets[rng.gen_range(0..qualifying)];
        Ok(index::sample(rng, bucket.len(), n)
            .into_iter()
            .map(|i| bucket[i])
            .collect())
    }

    /// Feasibility of chain and multi-object patterns up to `max_arity`.
    pub fn pattern_support(&self, max_arity: usize) -> PatternSupport {
        let mut chain = vec![false; max_arity + 1];
        let mut multi_object = vec![false; max_arity + 1];
        for n in 1..=max_arity {
            chain[n] = n == 1 && !self.triples.is_empty() || n > 1 && self.chain_exists(n);
            multi_object[n] =
                n == 1 && !self.triples.is_empty() || self.object_buckets.first().is_some_and(|b| b.len() >= n);
        }
        PatternSupport { chain, multi_object }
    }

    fn chain_exists(&self, n: usize) -> bool {
        let mut path = Vec::with_capacity(n);
        self.entity_tail_triples.iter().any(|&start| {
            path.clear();
            path.push(start);
            self.extend_chain(&mut path, n)
        })
    }

    fn extend_chain(&self, path: &mut Vec<usize>, n: usize) -> bool {
        if path.len() == n {
            return true;
        }
        let current = match self.triples[*path.last().unwrap()].tail.entity() {
            Some(e) => e,
            None => return false,
        };
        for &next in self.by_head(current) {
            if path.contains(&next) {
                continue;
            }
            path.push(next);
            if self.extend_chain(path, n) {
                return true;
            }
            path.pop();
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::super::{AttributeValue, KgBuilder};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::{BTreeSet, HashSet};

    fn toy() -> KnowledgeGraph {
        let mut b = KgBuilder::new();
        for e in ["a", "b", "c", "d"] {
            b.name(e, e);
        }
        b.name("r", "r").name("s", "s").name("p", "p");
        b.entity_triple("a", "r", "b")
            .entity_triple("b", "s", "c")
            .entity_triple("b", "s", "d")
            .attribute_triple("c", "p", AttributeValue::text("pink"))
            .entity_triple("d", "r", "a");
        b.build().unwrap()
    }

    fn valid_chain(kg: &KnowledgeGraph, chain: &[usize]) -> bool {
        let distinct: HashSet<_> = chain.iter().collect();
        distinct.len() == chain.len()
            && chain
                .windows(2)
                .all(|w| kg.triple(w[0]).tail.entity() == Some(kg.triple(w[1]).head))
    }

    fn all_chains(kg: &KnowledgeGraph, n: usize) -> BTreeSet<Vec<usize>> {
        // Brute force over all ordered n-tuples of triple positions.
        let m = kg.len();
        let mut out = BTreeSet::new();
        let mut idx = vec![0usize; n];
        loop {
            if valid_chain(kg, &idx) {
                out.insert(idx.clone());
            }
            let mut k = 0;
            loop {
                idx[k] += 1;
                if idx[k] < m {
                    break;
                }
                idx[k] = 0;
                k += 1;
                if k == n {
                    return out;
                }
            }
        }
    }

    #[test]
    fn single_triple_graph_always_returns_it() {
        let mut b = KgBuilder::new();
        b.name("x", "x").name("y", "y").name("r", "r");
        b.entity_triple("x", "r", "y");
        let kg = b.build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert_eq!(kg.sample_triple(&mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn empty_graph_is_an_error() {
        let kg = KgBuilder::new().build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(kg.sample_triple(&mut rng), Err(KgError::EmptySource)));
    }

    #[test]
    fn same_seed_same_stream() {
        let kg = toy();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| kg.sample_triple(&mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
    }

    #[test]
    fn chain_outputs_are_enumerated_chains() {
        let kg = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [2usize, 3] {
            let oracle = all_chains(&kg, n);
            assert!(!oracle.is_empty());
            let mut seen = BTreeSet::new();
            for _ in 0..2000 {
                let c = kg.sample_chain(n, &mut rng).unwrap();
                assert!(oracle.contains(&c), "{c:?} not a valid {n}-chain");
                seen.insert(c);
            }
            // Every enumerated chain is reachable by the greedy walk.
            assert_eq!(seen, oracle);
        }
    }

    #[test]
    fn chain_of_one_is_a_triple_draw() {
        let kg = toy();
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            assert_eq!(
                kg.sample_chain(1, &mut a).unwrap(),
                vec![kg.sample_triple(&mut b).unwrap()]
            );
        }
    }

    #[test]
    fn impossible_chain_is_pattern_exhausted() {
        let mut b = KgBuilder::new();
        b.name("x", "x").name("y", "y").name("r", "r");
        b.entity_triple("x", "r", "y");
        let kg = b.build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            kg.sample_chain(2, &mut rng),
            Err(KgError::PatternExhausted { .. })
        ));
        assert!(!kg.pattern_support(3).chain(2));
    }

    #[test]
    fn multi_object_draws_from_enumerated_buckets() {
        let kg = toy();
        // Only (b, s) holds two distinct tails.
        let mut oracle = BTreeSet::new();
        for (_, bucket) in kg.head_relation_buckets() {
            if bucket.len() >= 2 {
                oracle.insert(bucket.iter().copied().collect::<BTreeSet<_>>());
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let picked = kg.sample_multi_object(2, &mut rng).unwrap();
            let set: BTreeSet<_> = picked.iter().copied().collect();
            assert_eq!(set.len(), 2);
            assert!(oracle.contains(&set));
            let h = kg.triple(picked[0]).head;
            let r = kg.triple(picked[0]).relation;
            assert!(picked
                .iter()
                .all(|&i| kg.triple(i).head == h && kg.triple(i).relation == r));
        }
        assert!(matches!(
            kg.sample_multi_object(3, &mut rng),
            Err(KgError::PatternExhausted { .. })
        ));
    }

    #[test]
    fn support_matches_brute_force() {
        let kg = toy();
        let support = kg.pattern_support(4);
        for n in 2..=4 {
            assert_eq!(support.chain(n), !all_chains(&kg, n).is_empty(), "n={n}");
        }
        assert!(support.multi_object(2));
        assert!(!support.multi_object(3));
    }
}
