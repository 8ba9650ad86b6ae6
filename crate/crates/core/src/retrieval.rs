//! Multi-embedding exemplar retrieval.
//!
//! For every embedding model, the test questions are scored against the train
//! questions by cosine similarity and the top `n` per test question are kept.
//! The scores of that model's whole top-`n` matrix are then z-normalized with a
//! single mean and population standard deviation, which makes them comparable
//! with the scores of the other models. Each model's hits are merged into the
//! running result; a train question found by several models keeps its best
//! z-score.
//!
//! Ordering is total everywhere: z-score descending, raw score descending,
//! train id ascending. When the same train question ties on both scores under
//! two models, the model configured first wins.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::Serialize;

use crate::error::Error;

/// Below this population standard deviation every z-score is defined as 0.
pub const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub model_id: String,
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(model_id: impl Into<String>, values: Vec<f64>) -> Result<Self, Error> {
        let model_id = model_id.into();
        if values.is_empty() {
            return Err(Error::EmptyInput("embedding vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { id: model_id });
        }
        Ok(Self { model_id, values })
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }
}

/// Vectors of one embedding model keyed by id, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    model_id: String,
    dims: usize,
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    norms: Vec<f64>,
    index: BTreeMap<String, usize>,
}

impl VectorStore {
    pub fn new(model_id: impl Into<String>, dims: usize) -> Self {
        Self {
            model_id: model_id.into(),
            dims,
            ids: Vec::new(),
            vectors: Vec::new(),
            norms: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, values: Vec<f64>) -> Result<(), Error> {
        let id = id.into();
        if values.len() != self.dims {
            return Err(Error::DimensionMismatch { expected: self.dims, found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { id });
        }
        let norm = l2_norm(&values);
        if norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.push(values);
        self.norms.push(norm);
        Ok(())
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.vectors[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids.iter().map(String::as_str).zip(self.vectors.iter().map(Vec::as_slice))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExemplarHit {
    pub train_question_id: String,
    pub raw_score: f64,
    pub z_score: f64,
    pub source_model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExemplarSet {
    pub test_question_id: String,
    pub hits: Vec<ExemplarHit>,
    pub capacity: usize,
}

impl ExemplarSet {
    pub fn empty(test_question_id: impl Into<String>, capacity: usize) -> Self {
        Self { test_question_id: test_question_id.into(), hits: Vec::new(), capacity }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.train_question_id.as_str())
    }

    /// Checks size, ordering and uniqueness invariants.
    pub fn is_well_formed(&self) -> bool {
        let sorted = self.hits.windows(2).all(|w| hit_order(&w[0], &w[1]) != Ordering::Greater);
        let mut ids: Vec<&str> = self.ids().collect();
        ids.sort_unstable();
        let distinct = ids.windows(2).all(|w| w[0] != w[1]);
        self.hits.len() <= self.capacity && sorted && distinct
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2_norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

fn desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

fn hit_order(a: &ExemplarHit, b: &ExemplarHit) -> Ordering {
    desc(a.z_score, b.z_score)
        .then_with(|| desc(a.raw_score, b.raw_score))
        .then_with(|| a.train_question_id.cmp(&b.train_question_id))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, Error> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(dot(a, b) / (na * nb))
}

/// The `n` train entries most similar to `query`, best first, ties by ascending id.
///
/// `exclude` drops one train id before ranking; it is used when the train set
/// is retrieved against itself.
pub fn top_n_similar(
    query: &[f64],
    train: &VectorStore,
    n: usize,
    exclude: Option<&str>,
) -> Result<Vec<(String, f64)>, Error> {
    if query.len() != train.dims {
        return Err(Error::DimensionMismatch { expected: train.dims, found: query.len() });
    }
    let query_norm = l2_norm(query);
    if query_norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let mut scored: Vec<(usize, f64)> = train
        .vectors
        .iter()
        .zip(&train.norms)
        .enumerate()
        .filter(|(i, _)| exclude != Some(train.ids[*i].as_str()))
        .map(|(i, (v, norm))| (i, dot(query, v) / (query_norm * norm)))
        .collect();

    let cmp = |a: &(usize, f64), b: &(usize, f64)| desc(a.1, b.1).then_with(|| train.ids[a.0].cmp(&train.ids[b.0]));
    if n < scored.len() {
        if n > 0 {
            scored.select_nth_unstable_by(n - 1, cmp);
        }
        scored.truncate(n);
    }
    scored.sort_unstable_by(cmp);
    Ok(scored.into_iter().map(|(i, s)| (train.ids[i].clone(), s)).collect())
}

/// Z-normalizes a ragged score matrix with one mean and one population
/// standard deviation taken over all of its entries.
pub fn z_normalize(scores: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let count = scores.iter().map(Vec::len).sum::<usize>();
    if count == 0 {
        return scores.to_vec();
    }
    let mean = scores.iter().flatten().sum::<f64>() / count as f64;
    let variance = scores.iter().flatten().map(|x| (x - mean) * (x - mean)).sum::<f64>() / count as f64;
    let std = libm::sqrt(variance);
    scores.iter().map(|row| row.iter().map(|x| if std < MIN_STD { 0.0 } else { (x - mean) / std }).collect()).collect()
}

/// One model's z-scored candidates for one test question.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidates {
    pub test_question_id: String,
    /// `(train id, raw score, z-score)`
    pub candidates: Vec<(String, f64, f64)>,
}

/// Folds one model's candidates into the accumulated exemplar sets.
///
/// An empty `accumulated` slice means this is the first model.
pub fn sort_and_merge(
    accumulated: Vec<ExemplarSet>,
    new_hits: &[ScoredCandidates],
    n: usize,
    model_id: &str,
) -> Result<Vec<ExemplarSet>, Error> {
    let accumulated = if accumulated.is_empty() {
        new_hits.iter().map(|c| ExemplarSet::empty(c.test_question_id.clone(), n)).collect()
    } else {
        accumulated
    };
    if accumulated.len() != new_hits.len() {
        return Err(Error::Alignment(alloc::format!(
            "{} accumulated sets but {} new candidate lists",
            accumulated.len(),
            new_hits.len()
        )));
    }

    accumulated
        .into_iter()
        .zip(new_hits)
        .map(|(mut set, new)| {
            if set.test_question_id != new.test_question_id {
                return Err(Error::Alignment(alloc::format!(
                    "test question {} paired with {}",
                    set.test_question_id,
                    new.test_question_id
                )));
            }
            for (id, raw, z) in &new.candidates {
                let hit = ExemplarHit {
                    train_question_id: id.clone(),
                    raw_score: *raw,
                    z_score: *z,
                    source_model: String::from(model_id),
                };
                match set.hits.iter_mut().find(|h| &h.train_question_id == id) {
                    // strictly better only: on a full tie the earlier model keeps it
                    Some(existing) => {
                        if hit_order(&hit, existing) == Ordering::Less {
                            *existing = hit;
                        }
                    }
                    None => set.hits.push(hit),
                }
            }
            set.hits.sort_by(hit_order);
            set.hits.truncate(n);
            set.capacity = n;
            Ok(set)
        })
        .collect()
}

/// Train and test vectors produced by one embedding model.
#[derive(Debug, Clone, Copy)]
pub struct ModelVectors<'a> {
    pub train: &'a VectorStore,
    pub test: &'a VectorStore,
}

/// Runs the full multi-embedding retrieval over `models` in configured order.
///
/// Candidates are every entry of each model's train store. With `exclude_self`
/// a test question never retrieves the train entry carrying its own id.
pub fn retrieve(
    test_ids: &[String],
    models: &[ModelVectors<'_>],
    n: usize,
    exclude_self: bool,
) -> Result<Vec<ExemplarSet>, Error> {
    if models.is_empty() {
        return Err(Error::EmptyInput("embedding providers"));
    }
    let mut result: Vec<ExemplarSet> = Vec::new();
    for model in models {
        if model.train.dims != model.test.dims {
            return Err(Error::DimensionMismatch { expected: model.train.dims, found: model.test.dims });
        }
        let mut ranked = Vec::with_capacity(test_ids.len());
        for id in test_ids {
            let query = model
                .test
                .get(id)
                .ok_or_else(|| Error::Alignment(alloc::format!("no {} vector for {id}", model.test.model_id)))?;
            let exclude = exclude_self.then_some(id.as_str());
            ranked.push(top_n_similar(query, model.train, n, exclude)?);
        }
        let raw: Vec<Vec<f64>> = ranked.iter().map(|r| r.iter().map(|(_, s)| *s).collect()).collect();
        let z = z_normalize(&raw);
        let scored: Vec<ScoredCandidates> = test_ids
            .iter()
            .zip(ranked)
            .zip(z)
            .map(|((id, row), zrow)| ScoredCandidates {
                test_question_id: id.clone(),
                candidates: row.into_iter().zip(zrow).map(|((tid, raw), z)| (tid, raw, z)).collect(),
            })
            .collect();
        result = sort_and_merge(core::mem::take(&mut result), &scored, n, &model.train.model_id)?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn store(model: &str, entries: &[(&str, &[f64])]) -> VectorStore {
        let mut s = VectorStore::new(model, entries[0].1.len());
        for (id, v) in entries {
            s.insert(*id, v.to_vec()).unwrap();
        }
        s
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -2.0, 7.5];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let expected = 32.0 / (libm::sqrt(14.0) * libm::sqrt(77.0));
        let got = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.974631).abs() < 1e-6);
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(cosine_similarity(&[1.0], &[1.0, 2.0]), Err(Error::DimensionMismatch { expected: 1, found: 2 }));
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]), Err(Error::ZeroVector));
    }

    #[test]
    fn store_rejects_bad_vectors() {
        let mut s = VectorStore::new("m", 2);
        assert!(matches!(s.insert("a", vec![1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(s.insert("a", vec![f64::NAN, 1.0]), Err(Error::NonFiniteValue { .. })));
        assert_eq!(s.insert("a", vec![0.0, 0.0]), Err(Error::ZeroVector));
        s.insert("a", vec![1.0, 0.0]).unwrap();
        assert_eq!(s.insert("a", vec![1.0, 0.0]), Err(Error::DuplicateId("a".into())));
    }

    #[test]
    fn top_n_orders_and_clamps() {
        // cosines against (1, 0): a = 0.9, b = 0.1, c = 0.5
        let train = store(
            "m",
            &[
                ("a", &[0.9, libm::sqrt(1.0 - 0.81)]),
                ("b", &[0.1, libm::sqrt(1.0 - 0.01)]),
                ("c", &[0.5, libm::sqrt(0.75)]),
            ],
        );
        let top = top_n_similar(&[1.0, 0.0], &train, 2, None).unwrap();
        let ids: Vec<&str> = top.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert!((top[0].1 - 0.9).abs() < 1e-12 && (top[1].1 - 0.5).abs() < 1e-12);

        let all = top_n_similar(&[1.0, 0.0], &train, 10, None).unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(all[2].0, "b");

        let excluded = top_n_similar(&[1.0, 0.0], &train, 2, Some("a")).unwrap();
        assert_eq!(excluded[0].0, "c");
    }

    #[test]
    fn top_n_ties_break_by_id() {
        let train = store("m", &[("z", &[1.0, 0.0]), ("b", &[2.0, 0.0]), ("k", &[0.0, 1.0])]);
        let top = top_n_similar(&[1.0, 0.0], &train, 2, None).unwrap();
        assert_eq!(top[0].0, "b");
        assert_eq!(top[1].0, "z");
    }

    #[test]
    fn z_normalize_single_row() {
        let z = z_normalize(&[vec![0.2, 0.4, 0.6]]);
        // mean 0.4, population std sqrt(0.08 / 3) = 0.163299...
        let s = libm::sqrt(0.08 / 3.0);
        assert!((s - 0.16330).abs() < 1e-5);
        let expected = [-0.2 / s, 0.0, 0.2 / s];
        for (got, want) in z[0].iter().zip(expected) {
            assert!((got - want).abs() < 1e-9);
        }
        assert!((z[0][2] - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn z_normalize_constant_is_zero() {
        let z = z_normalize(&[vec![0.7, 0.7], vec![0.7]]);
        assert_eq!(z, vec![vec![0.0, 0.0], vec![0.0]]);
        assert!(z_normalize(&[vec![]]).iter().all(Vec::is_empty));
    }

    fn candidates(test: &str, hits: &[(&str, f64)]) -> ScoredCandidates {
        ScoredCandidates {
            test_question_id: test.into(),
            candidates: hits.iter().map(|(id, z)| (String::from(*id), 0.0, *z)).collect(),
        }
    }

    #[test]
    fn merge_keeps_max_on_overlap() {
        let first = sort_and_merge(vec![], &[candidates("q", &[("a", 1.2), ("b", 0.3)])], 3, "m1").unwrap();
        let merged = sort_and_merge(first, &[candidates("q", &[("b", 0.9), ("c", 0.5)])], 3, "m2").unwrap();
        let got: Vec<(&str, f64, &str)> =
            merged[0].hits.iter().map(|h| (h.train_question_id.as_str(), h.z_score, h.source_model.as_str())).collect();
        assert_eq!(got, [("a", 1.2, "m1"), ("b", 0.9, "m2"), ("c", 0.5, "m2")]);
    }

    #[test]
    fn merge_first_model_sorts_and_truncates() {
        let merged = sort_and_merge(vec![], &[candidates("q", &[("c", 0.1), ("a", 0.9), ("b", 0.5)])], 2, "m").unwrap();
        assert_eq!(merged[0].ids().collect::<Vec<_>>(), ["a", "b"]);
        assert!(merged[0].is_well_formed());
    }

    #[test]
    fn merge_full_tie_keeps_earlier_model() {
        let first = sort_and_merge(vec![], &[candidates("q", &[("a", 1.0)])], 2, "m1").unwrap();
        let merged = sort_and_merge(first, &[candidates("q", &[("a", 1.0)])], 2, "m2").unwrap();
        assert_eq!(merged[0].hits[0].source_model, "m1");
    }

    #[test]
    fn merge_rejects_misaligned() {
        let first = sort_and_merge(vec![], &[candidates("q1", &[("a", 1.0)])], 2, "m1").unwrap();
        let err = sort_and_merge(first.clone(), &[candidates("q2", &[("a", 1.0)])], 2, "m2");
        assert!(matches!(err, Err(Error::Alignment(_))));
        let err = sort_and_merge(first, &[candidates("q1", &[]), candidates("q2", &[])], 2, "m2");
        assert!(matches!(err, Err(Error::Alignment(_))));
    }

    #[test]
    fn two_models_merge_by_z_score() {
        let s3 = libm::sqrt(3.0);
        // cosines against (1, 0)
        // model a: t1 1.0, t3 0.7071, t2 0.0, t5 -0.7071, t4 -1.0
        // model b: t2 1.0, t4 0.5, t5 0.0, t1 -1.0, t3 -1.0
        let train_a = store(
            "a",
            &[
                ("t1", &[1.0, 0.0]),
                ("t2", &[0.0, 1.0]),
                ("t3", &[1.0, 1.0]),
                ("t4", &[-1.0, 0.0]),
                ("t5", &[-1.0, 1.0]),
            ],
        );
        let train_b = store(
            "b",
            &[("t1", &[-1.0, 0.0]), ("t2", &[1.0, 0.0]), ("t3", &[-1.0, 0.0]), ("t4", &[1.0, s3]), ("t5", &[0.0, 1.0])],
        );
        let test_a = store("a", &[("q", &[1.0, 0.0])]);
        let test_b = store("b", &[("q", &[1.0, 0.0])]);
        let models = [ModelVectors { train: &train_a, test: &test_a }, ModelVectors { train: &train_b, test: &test_b }];
        let ids = [String::from("q")];

        // top-3 z-scores, by hand:
        //   a: mean 0.5690, std 0.4198 -> t1 1.0267, t3 0.3289, t2 -1.3556
        //   b: mean 0.5, std 0.4082   -> t2 1.2247, t4 0.0, t5 -1.2247
        // t2 keeps b's 1.2247; the merged top 3 is t2 (b), t1 (a), t3 (a)
        let merged = retrieve(&ids, &models, 3, false).unwrap();
        let got: Vec<(&str, &str)> =
            merged[0].hits.iter().map(|h| (h.train_question_id.as_str(), h.source_model.as_str())).collect();
        assert_eq!(got, [("t2", "b"), ("t1", "a"), ("t3", "a")]);
        let z: Vec<f64> = merged[0].hits.iter().map(|h| h.z_score).collect();
        assert!((z[0] - 1.2247).abs() < 1e-4);
        assert!((z[1] - 1.0267).abs() < 1e-4);
        assert!((z[2] - 0.3289).abs() < 1e-4);
        assert!(merged[0].is_well_formed());

        let single = retrieve(&ids, &models[..1], 3, false).unwrap();
        assert_eq!(single[0].ids().collect::<Vec<_>>(), ["t1", "t3", "t2"]);
    }

    #[test]
    fn duplicated_model_is_idempotent() {
        let train = store("a", &[("t1", &[1.0, 0.2]), ("t2", &[0.3, 1.0]), ("t3", &[0.5, 0.5])]);
        let test = store("a", &[("q1", &[1.0, 0.0]), ("q2", &[0.0, 1.0])]);
        let ids = [String::from("q1"), String::from("q2")];
        let one = retrieve(&ids, &[ModelVectors { train: &train, test: &test }], 2, false).unwrap();
        let two = retrieve(
            &ids,
            &[ModelVectors { train: &train, test: &test }, ModelVectors { train: &train, test: &test }],
            2,
            false,
        )
        .unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn retrieve_requires_a_provider_and_vectors() {
        let train = store("a", &[("t1", &[1.0, 0.0])]);
        let test = store("a", &[("q1", &[1.0, 0.0])]);
        assert!(matches!(retrieve(&[], &[], 1, false), Err(Error::EmptyInput(_))));
        let err = retrieve(&[String::from("missing")], &[ModelVectors { train: &train, test: &test }], 1, false);
        assert!(matches!(err, Err(Error::Alignment(_))));
    }
}
