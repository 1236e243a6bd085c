//! Domain types shared by every stage: roles, queries, judgments, pair
//! embeddings and ranked runs, plus their on-disk formats.

mod embed;
mod formats;

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::toy_embed;
pub use formats::{
    load_embeddings, load_qrels, load_queries, load_rewrites, load_run, parse_embeddings,
    parse_qrels, parse_queries, parse_rewrites, parse_run, write_embeddings, write_qrels,
    write_queries, write_rewrites, write_run,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate query id `{qid}`")]
    DuplicateQuery { line: usize, qid: String },
    #[error("line {line}: grade {grade} out of range for {levels} relevance levels")]
    GradeOutOfRange { line: usize, grade: i64, levels: u32 },
    #[error("unsupported number of relevance levels {0} (expected 3 or 5)")]
    Levels(u32),
    #[error("line {line}: unknown role `{role}`")]
    UnknownRole { line: usize, role: String },
    #[error("line {line}: embedding dimension {found} differs from {expected}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}: non-finite value in embedding")]
    NonFinite { line: usize },
    #[error("line {line}: duplicate document `{docid}` for query `{qid}`")]
    DuplicateDoc { line: usize, qid: String, docid: String },
    #[error("embedding dimension must be at least 2, got {0}")]
    EmbedDim(usize),
    #[error("embedding inputs must be non-empty")]
    EmptyText,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Who issued (or rewrote) a query. `Original` is the user's raw query; the
/// other four are the simulated demographic personas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Original,
    Woman,
    Man,
    Student,
    Elder,
}

impl Role {
    pub const COUNT: usize = 5;
    pub const ALL: [Role; 5] = [Role::Original, Role::Woman, Role::Man, Role::Student, Role::Elder];
    pub const PERSONAS: [Role; 4] = [Role::Woman, Role::Man, Role::Student, Role::Elder];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(k: usize) -> Option<Role> {
        Role::ALL.get(k).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Original => "original",
            Role::Woman => "woman",
            Role::Man => "man",
            Role::Student => "student",
            Role::Elder => "elder",
        }
    }

    /// Noun phrase substituted for `{agent}` in prompts.
    pub fn persona_phrase(self) -> &'static str {
        match self {
            Role::Original => "the original user",
            Role::Woman => "a woman",
            Role::Man => "a man",
            Role::Student => "a student",
            Role::Elder => "an elderly person",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" => Ok(Role::Original),
            "woman" => Ok(Role::Woman),
            "man" => Ok(Role::Man),
            "student" => Ok(Role::Student),
            "elder" | "old" => Ok(Role::Elder),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub qid: String,
    pub text: String,
    pub role: Role,
}

/// Queries in insertion order, unique on `(qid, role)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QuerySet {
    queries: Vec<Query>,
}

impl QuerySet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, query: Query) -> Result<(), DataError> {
        if query.text.trim().is_empty() {
            return Err(DataError::Invalid(format!("query `{}` has empty text", query.qid)));
        }
        if self.get(&query.qid, query.role).is_some() {
            return Err(DataError::Invalid(format!(
                "duplicate query `{}` for role {}",
                query.qid, query.role
            )));
        }
        self.queries.push(query);
        Ok(())
    }

    pub fn get(&self, qid: &str, role: Role) -> Option<&Query> {
        self.queries.iter().find(|q| q.qid == qid && q.role == role)
    }

    pub fn originals(&self) -> impl Iterator<Item = &Query> {
        self.queries.iter().filter(|q| q.role == Role::Original)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Query> {
        self.queries.iter()
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewriteStatus {
    Accepted,
    FallbackOriginal,
}

/// Outcome of the rewrite loop for one `(qid, role)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteRecord {
    pub qid: String,
    pub role: Role,
    pub original_text: String,
    pub rewritten_text: String,
    pub intent_summary: String,
    pub iterations: u32,
    pub semantic_score: i8,
    pub persona_score: i8,
    pub status: RewriteStatus,
    /// Prompt templates used for each generation, in order (`b`, then `d`/`e`/`f`).
    pub templates: Vec<char>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub docid: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

/// Graded relevance judgments, kept in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Qrels {
    levels: u32,
    judgments: IndexMap<String, IndexMap<String, u32>>,
    duplicates: usize,
}

impl Qrels {
    pub fn new(levels: u32) -> Result<Self, DataError> {
        if levels != 3 && levels != 5 {
            return Err(DataError::Levels(levels));
        }
        Ok(Self { levels, judgments: IndexMap::new(), duplicates: 0 })
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    /// Inserts a judgment; a repeated `(qid, docid)` overwrites the earlier
    /// grade and bumps the duplicate counter.
    pub fn insert(&mut self, qid: &str, docid: &str, grade: u32) -> Result<(), DataError> {
        if grade >= self.levels {
            return Err(DataError::GradeOutOfRange {
                line: 0,
                grade: grade as i64,
                levels: self.levels,
            });
        }
        let docs = self.judgments.entry(qid.to_string()).or_default();
        if docs.insert(docid.to_string(), grade).is_some() {
            self.duplicates += 1;
        }
        Ok(())
    }

    pub fn grade(&self, qid: &str, docid: &str) -> Option<u32> {
        self.judgments.get(qid)?.get(docid).copied()
    }

    pub fn query(&self, qid: &str) -> Option<&IndexMap<String, u32>> {
        self.judgments.get(qid)
    }

    pub fn qids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.judgments
            .iter()
            .flat_map(|(q, docs)| docs.iter().map(move |(d, g)| (q.as_str(), d.as_str(), *g)))
    }

    /// Number of overwritten duplicate entries seen while loading.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(IndexMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEmbedding {
    pub qid: String,
    pub role: Role,
    pub docid: String,
    pub vec: Vec<f64>,
}

/// One scored ranking per query for a single role.
///
/// Rankings are kept sorted by descending score with ties broken by docid,
/// so the order is a deterministic function of the scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedRun {
    pub role: Role,
    pub tag: String,
    rankings: IndexMap<String, Vec<(String, f64)>>,
}

impl RankedRun {
    pub fn new(role: Role, tag: impl Into<String>) -> Self {
        Self { role, tag: tag.into(), rankings: IndexMap::new() }
    }

    /// Sets the ranking for `qid`, sorting it canonically.
    pub fn set(&mut self, qid: &str, mut scored: Vec<(String, f64)>) -> Result<(), DataError> {
        if scored.iter().any(|(_, s)| !s.is_finite()) {
            return Err(DataError::Invalid(format!("non-finite score for query `{qid}`")));
        }
        sort_ranking(&mut scored);
        if let Some(w) = scored.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(DataError::DuplicateDoc {
                line: 0,
                qid: qid.to_string(),
                docid: w[0].0.clone(),
            });
        }
        self.rankings.insert(qid.to_string(), scored);
        Ok(())
    }

    pub fn ranking(&self, qid: &str) -> Option<&[(String, f64)]> {
        self.rankings.get(qid).map(Vec::as_slice)
    }

    pub fn docids(&self, qid: &str) -> Option<Vec<&str>> {
        self.rankings.get(qid).map(|r| r.iter().map(|(d, _)| d.as_str()).collect())
    }

    pub fn qids(&self) -> impl Iterator<Item = &str> {
        self.rankings.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[(String, f64)])> {
        self.rankings.iter().map(|(q, r)| (q.as_str(), r.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.rankings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }
}

/// Descending score, ascending docid.
pub fn sort_ranking(scored: &mut [(String, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn role_indices_are_stable() {
        for (k, role) in Role::ALL.iter().enumerate() {
            assert_eq!(role.index(), k);
            assert_eq!(Role::from_index(k), Some(*role));
            assert_eq!(role.as_str().parse::<Role>().unwrap(), *role);
        }
        assert_eq!(Role::Original.index(), 0);
        assert!(Role::from_index(5).is_none());
        assert!("robot".parse::<Role>().is_err());
    }

    #[test]
    fn query_set_rejects_duplicates_and_blank_text() {
        let mut set = QuerySet::new();
        let q = Query { qid: "q1".into(), text: "bike chain".into(), role: Role::Original };
        set.push(q.clone()).unwrap();
        assert!(set.push(q.clone()).is_err());
        set.push(Query { role: Role::Woman, ..q.clone() }).unwrap();
        assert!(set.push(Query { qid: "q2".into(), text: "  ".into(), role: Role::Original }).is_err());
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn qrels_validate_levels_and_count_duplicates() {
        assert!(Qrels::new(4).is_err());
        let mut qrels = Qrels::new(3).unwrap();
        qrels.insert("q1", "d1", 2).unwrap();
        assert!(qrels.insert("q1", "d2", 3).is_err());
        qrels.insert("q1", "d1", 1).unwrap();
        assert_eq!(qrels.grade("q1", "d1"), Some(1));
        assert_eq!(qrels.duplicates(), 1);
    }

    #[test]
    fn ranked_run_sorts_and_breaks_ties_by_docid() {
        let mut run = RankedRun::new(Role::Original, "t");
        run.set(
            "q1",
            vec![("b".into(), 1.0), ("c".into(), 2.0), ("a".into(), 1.0)],
        )
        .unwrap();
        assert_eq!(run.docids("q1").unwrap(), vec!["c", "a", "b"]);
        assert!(run.set("q2", vec![("a".into(), 1.0), ("a".into(), 0.5)]).is_err());
        assert!(run.set("q3", vec![("a".into(), f64::NAN)]).is_err());
    }
}
