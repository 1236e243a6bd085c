use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, HarnessError};
use crate::data::{PairEmbedding, Qrels, Query, QuerySet, RewriteRecord, RewriteStatus, Role};

/// Shape of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_queries: usize,
    pub docs_per_query: usize,
    pub num_roles: usize,
    pub noise_scale: f64,
    pub seed: u64,
    pub dim: usize,
    pub levels: u32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { num_queries: 200, docs_per_query: 20, num_roles: 5, noise_scale: 0.3, seed: 7, dim: 16, levels: 3 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.num_queries == 0 || self.docs_per_query == 0 {
            return bad("num_queries and docs_per_query must be positive");
        }
        if self.num_roles != Role::COUNT {
            return bad("num_roles must be 5");
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be finite and >= 0");
        }
        if self.dim < 4 || !self.dim.is_multiple_of(2) {
            return bad("dim must be an even number >= 4");
        }
        if self.levels != 3 && self.levels != 5 {
            return bad("levels must be 3 or 5");
        }
        Ok(())
    }
}

// The first half of each vector is a "semantic" channel shared verbatim by
// all role variants of a pair. The second half is a "surface" channel that
// also carries the relevance signal for the original query, but each persona
// rewrites it with its own noise level and partially erases the signal.
const SEMANTIC_SIGNAL: f64 = 1.0;
const SEMANTIC_NOISE: f64 = 0.5;
const SURFACE_SIGNAL: f64 = 1.0;
const SURFACE_NOISE: f64 = 0.5;
const TOPIC_NOISE: f64 = 0.3;
/// Persona noise multipliers (woman, man, student, elder).
const PERSONA_NOISE: [f64; 4] = [1.0, 2.0, 4.0, 6.0];
/// Fraction of the surface relevance signal each persona loses per unit of
/// `noise_scale`.
const PERSONA_DRIFT: [f64; 4] = [0.3, 0.6, 1.2, 1.8];

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn grade_of(z: f64, levels: u32) -> u32 {
    let cuts: &[f64] = if levels == 3 { &[0.0, 1.0] } else { &[-0.5, 0.3, 0.9, 1.5] };
    cuts.iter().filter(|&&c| z > c).count() as u32
}

/// Deterministic synthetic ranking data. Every `(query, doc)` pair gets one
/// embedding per role; role variants share the pair's relevance grade.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, HarnessError> {
    spec.validate()?;
    let half = spec.dim / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sem_dir = unit_vector(&mut rng, half);
    let surf_dir = unit_vector(&mut rng, half);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let width = spec.num_queries.to_string().len().max(3);
    let doc_width = spec.docs_per_query.to_string().len().max(2);
    let mut queries = QuerySet::new();
    let mut rewrites = Vec::new();
    let mut qrels = Qrels::new(spec.levels)?;
    let mut embeddings = Vec::with_capacity(spec.num_queries * spec.docs_per_query * Role::COUNT);

    for qi in 0..spec.num_queries {
        let qid = format!("q{qi:0width$}");
        let text = format!("synthetic query {qi}");
        queries.push(Query { qid: qid.clone(), text: text.clone(), role: Role::Original })?;
        for role in Role::PERSONAS {
            let rewritten = format!("{text} as {}", role.persona_phrase());
            queries.push(Query { qid: qid.clone(), text: rewritten.clone(), role })?;
            rewrites.push(RewriteRecord {
                qid: qid.clone(),
                role,
                original_text: text.clone(),
                rewritten_text: rewritten,
                intent_summary: text.clone(),
                iterations: 1,
                semantic_score: 1,
                persona_score: 1,
                status: RewriteStatus::Accepted,
                templates: vec!['b'],
            });
        }
        let topic: Vec<f64> = (0..spec.dim).map(|_| TOPIC_NOISE * normal.sample(&mut rng)).collect();
        for di in 0..spec.docs_per_query {
            let docid = format!("{qid}-d{di:0doc_width$}");
            let z: f64 = normal.sample(&mut rng);
            qrels.insert(&qid, &docid, grade_of(z, spec.levels))?;

            let mut base = topic.clone();
            for i in 0..half {
                base[i] += SEMANTIC_SIGNAL * z * sem_dir[i] + SEMANTIC_NOISE * normal.sample(&mut rng);
                base[half + i] += SURFACE_NOISE * normal.sample(&mut rng);
            }
            for role in Role::ALL {
                let mut v = base.clone();
                let (noise, drift) = match role {
                    Role::Original => (0.0, 0.0),
                    r => (PERSONA_NOISE[r.index() - 1], PERSONA_DRIFT[r.index() - 1]),
                };
                let keep = (1.0 - spec.noise_scale * drift).max(0.0);
                for i in 0..half {
                    let eta: f64 = normal.sample(&mut rng);
                    v[half + i] += SURFACE_SIGNAL * keep * z * surf_dir[i] + spec.noise_scale * noise * eta;
                }
                embeddings.push(PairEmbedding { qid: qid.clone(), role, docid: docid.clone(), vec: v });
            }
        }
    }
    Dataset::new(queries, rewrites, qrels, embeddings)
}
