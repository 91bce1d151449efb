//! Similarity index with an exact scan mode and an inverted-file ANN mode.
//!
//! Results are always ordered by similarity descending, then id ascending.
//! The comparison counter tracks every dot product computed.

use std::collections::{BTreeMap, HashSet};
use std::hash::Hash;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::embed::dot;
use crate::error::{Error, Result};
use crate::kmeans::{mini_batch_kmeans, MiniBatchParams};
use crate::model::{Embedding, Scored};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMode {
    Exact,
    Ann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnnParams {
    /// Number of inverted lists; `None` means `ceil(sqrt(n))`.
    pub lists: Option<usize>,
    /// Lists probed per query.
    pub probes: usize,
    pub seed: u64,
}

impl Default for AnnParams {
    fn default() -> Self {
        AnnParams {
            lists: None,
            probes: 8,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug)]
struct InvertedLists {
    centroids: Vec<Vec<f64>>,
    members: Vec<Vec<usize>>,
    probes: usize,
}

#[derive(Debug)]
pub struct SimilarityIndex<K> {
    mode: IndexMode,
    ids: Vec<K>,
    vectors: Vec<Embedding>,
    position: BTreeMap<K, usize>,
    lists: Option<InvertedLists>,
    comparisons: AtomicU64,
}

/// Sorts by similarity descending, ties by smaller id, and keeps `k`.
pub fn rank_top_k<K: Ord + Copy>(mut scored: Vec<Scored<K>>, k: usize) -> Vec<Scored<K>> {
    scored.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.id.cmp(&b.id)));
    scored.truncate(k);
    scored
}

impl<K: Ord + Copy + Hash + Sync> SimilarityIndex<K> {
    pub fn exact(entries: Vec<(K, Embedding)>) -> Result<Self> {
        Self::build(entries, IndexMode::Exact, AnnParams::default())
    }

    pub fn ann(entries: Vec<(K, Embedding)>, params: AnnParams) -> Result<Self> {
        Self::build(entries, IndexMode::Ann, params)
    }

    fn build(entries: Vec<(K, Embedding)>, mode: IndexMode, params: AnnParams) -> Result<Self> {
        let mut position = BTreeMap::new();
        let dim = entries.first().map(|e| e.1.dim());
        for (i, (k, v)) in entries.iter().enumerate() {
            if Some(v.dim()) != dim {
                return Err(Error::validation("index entries have mixed dimensions"));
            }
            if position.insert(*k, i).is_some() {
                return Err(Error::integrity("duplicate id in similarity index"));
            }
        }
        let (ids, vectors): (Vec<K>, Vec<Embedding>) = entries.into_iter().unzip();
        let lists = match mode {
            IndexMode::Ann if !ids.is_empty() => Some(build_lists(&vectors, params)?),
            _ => None,
        };
        Ok(SimilarityIndex {
            mode,
            ids,
            vectors,
            position,
            lists,
            comparisons: AtomicU64::new(0),
        })
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[K] {
        &self.ids
    }

    pub fn get(&self, id: &K) -> Option<&Embedding> {
        self.position.get(id).map(|i| &self.vectors[*i])
    }

    pub fn comparisons(&self) -> u64 {
        self.comparisons.load(Ordering::Relaxed)
    }

    pub fn reset_comparisons(&self) {
        self.comparisons.store(0, Ordering::Relaxed);
    }

    fn check_query(&self, query: &Embedding, k: usize) -> Result<()> {
        if k < 1 {
            return Err(Error::validation("k must be at least 1"));
        }
        if let Some(v) = self.vectors.first() {
            if v.dim() != query.dim() {
                return Err(Error::validation(format!(
                    "query dimension {} != index dimension {}",
                    query.dim(),
                    v.dim()
                )));
            }
        }
        Ok(())
    }

    /// Top `k` entries of `pool` by cosine to `query`.
    ///
    /// Exact mode scores every pool member. ANN mode scores members of the
    /// probed lists and falls back to an exact scan when that leaves fewer
    /// than `k` candidates.
    pub fn top_k(&self, query: &Embedding, pool: &[K], k: usize) -> Result<Vec<Scored<K>>> {
        self.check_query(query, k)?;
        if pool.is_empty() {
            return Err(Error::validation("empty candidate pool"));
        }
        let positions = pool
            .iter()
            .map(|id| {
                self.position
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::lookup("pool id missing from index"))
            })
            .collect::<Result<Vec<usize>>>()?;
        match (&self.lists, self.mode) {
            (Some(lists), IndexMode::Ann) => {
                let allowed: HashSet<usize> = positions.iter().copied().collect();
                let candidates = self.probe(lists, query, |p| allowed.contains(&p));
                if candidates.len() >= k.min(positions.len()) {
                    return Ok(rank_top_k(self.score(query, &candidates), k));
                }
                Ok(rank_top_k(self.score(query, &positions), k))
            }
            _ => Ok(rank_top_k(self.score(query, &positions), k)),
        }
    }

    /// Top `k` over every entry.
    pub fn search(&self, query: &Embedding, k: usize) -> Result<Vec<Scored<K>>> {
        self.check_query(query, k)?;
        if self.is_empty() {
            return Ok(Vec::new());
        }
        match (&self.lists, self.mode) {
            (Some(lists), IndexMode::Ann) => {
                let candidates = self.probe(lists, query, |_| true);
                if candidates.len() >= k.min(self.len()) {
                    return Ok(rank_top_k(self.score(query, &candidates), k));
                }
                let all: Vec<usize> = (0..self.len()).collect();
                Ok(rank_top_k(self.score(query, &all), k))
            }
            _ => {
                let all: Vec<usize> = (0..self.len()).collect();
                Ok(rank_top_k(self.score(query, &all), k))
            }
        }
    }

    fn score(&self, query: &Embedding, positions: &[usize]) -> Vec<Scored<K>> {
        self.comparisons
            .fetch_add(positions.len() as u64, Ordering::Relaxed);
        positions
            .iter()
            .map(|p| Scored {
                id: self.ids[*p],
                similarity: dot(query.as_slice(), self.vectors[*p].as_slice()),
            })
            .collect()
    }

    fn probe(&self, lists: &InvertedLists, query: &Embedding, keep: impl Fn(usize) -> bool) -> Vec<usize> {
        self.comparisons
            .fetch_add(lists.centroids.len() as u64, Ordering::Relaxed);
        let mut order: Vec<(usize, f64)> = lists
            .centroids
            .iter()
            .enumerate()
            .map(|(i, c)| (i, dot(query.as_slice(), c)))
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut out: Vec<usize> = order
            .iter()
            .take(lists.probes)
            .flat_map(|(i, _)| lists.members[*i].iter().copied())
            .filter(|p| keep(*p))
            .collect();
        out.sort_unstable();
        out
    }
}

fn build_lists(vectors: &[Embedding], params: AnnParams) -> Result<InvertedLists> {
    let n = vectors.len();
    let lists = params
        .lists
        .unwrap_or_else(|| (n as f64).sqrt().ceil() as usize)
        .clamp(1, n);
    let items: Vec<(usize, &[f64])> = vectors.iter().map(|v| v.as_slice()).enumerate().collect();
    let clusters = mini_batch_kmeans(&items, lists, params.seed, MiniBatchParams::default())?;
    let dim = vectors[0].dim();
    let centroids = clusters
        .iter()
        .map(|members| {
            let mut c = vec![0.0; dim];
            for m in members {
                for (cv, x) in c.iter_mut().zip(vectors[*m].as_slice()) {
                    *cv += x;
                }
            }
            c.iter_mut().for_each(|x| *x /= members.len() as f64);
            c
        })
        .collect();
    Ok(InvertedLists {
        centroids,
        members: clusters,
        probes: params.probes.max(1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{EmbeddingProvider, StubEmbedder};

    fn corpus(n: usize) -> Vec<(u32, Embedding)> {
        let e = StubEmbedder::new(32);
        (0..n as u32)
            .map(|i| (i, e.embed(&format!("tok{} tok{} shared{}", i, i * 7 % 13, i % 5)).unwrap()))
            .collect()
    }

    /// Full sort of cosine over the pool.
    fn oracle(entries: &[(u32, Embedding)], q: &Embedding, pool: &[u32], k: usize) -> Vec<(u32, f64)> {
        let mut all: Vec<(u32, f64)> = pool
            .iter()
            .map(|id| {
                let v = &entries.iter().find(|e| e.0 == *id).unwrap().1;
                (*id, crate::embed::cosine(q.as_slice(), v.as_slice()).unwrap())
            })
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn exact_match_ranks_first() {
        let entries = corpus(20);
        let idx = SimilarityIndex::exact(entries.clone()).unwrap();
        let pool: Vec<u32> = (0..20).collect();
        let top = idx.top_k(&entries[7].1, &pool, 1).unwrap();
        assert_eq!(top[0].id, 7);
        assert!((top[0].similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn saturation_returns_whole_pool_sorted() {
        let entries = corpus(6);
        let idx = SimilarityIndex::exact(entries.clone()).unwrap();
        let got = idx.top_k(&entries[0].1, &[5, 3, 1], 10).unwrap();
        assert_eq!(got.len(), 3);
        assert!(got.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    }

    #[test]
    fn five_vector_pool_matches_sort_oracle() {
        let entries = corpus(12);
        let idx = SimilarityIndex::exact(entries.clone()).unwrap();
        let q = &entries[11].1;
        let pool = [2u32, 4, 6, 8, 10];
        let got: Vec<(u32, f64)> = idx
            .top_k(q, &pool, 2)
            .unwrap()
            .into_iter()
            .map(|s| (s.id, s.similarity))
            .collect();
        let want = oracle(&entries, q, &pool, 2);
        assert_eq!(got.len(), 2);
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.0, w.0);
            assert!((g.1 - w.1).abs() < 1e-12);
        }
        assert_eq!(idx.comparisons(), 5);
    }

    #[test]
    fn ties_prefer_smaller_id() {
        let e = StubEmbedder::new(8);
        let v = e.embed("same").unwrap();
        let idx = SimilarityIndex::exact(vec![(9u32, v.clone()), (3, v.clone()), (5, v.clone())]).unwrap();
        let got: Vec<u32> = idx.top_k(&v, &[9, 3, 5], 3).unwrap().iter().map(|s| s.id).collect();
        assert_eq!(got, vec![3, 5, 9]);
    }

    #[test]
    fn errors() {
        let entries = corpus(3);
        let idx = SimilarityIndex::exact(entries.clone()).unwrap();
        assert!(idx.top_k(&entries[0].1, &[0], 0).is_err());
        assert!(idx.top_k(&entries[0].1, &[], 1).is_err());
        assert!(idx.top_k(&entries[0].1, &[99], 1).is_err());
        let dup = vec![(1u32, entries[0].1.clone()), (1, entries[1].1.clone())];
        assert!(SimilarityIndex::exact(dup).is_err());
    }

    proptest::proptest! {
        #[test]
        fn exact_equals_full_sort(n in 1usize..64, k in 1usize..12, qi in 0usize..64, mask in proptest::collection::vec(proptest::bool::ANY, 64)) {
            let entries = corpus(n);
            let idx = SimilarityIndex::exact(entries.clone()).unwrap();
            let mut pool: Vec<u32> = (0..n as u32).filter(|i| mask[*i as usize]).collect();
            if pool.is_empty() { pool.push(0); }
            let q = &entries[qi % n].1;
            let before = idx.comparisons();
            let got = idx.top_k(q, &pool, k).unwrap();
            proptest::prop_assert_eq!(idx.comparisons() - before, pool.len() as u64);
            let want = oracle(&entries, q, &pool, k);
            proptest::prop_assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                proptest::prop_assert_eq!(g.id, w.0);
            }
        }
    }
}
