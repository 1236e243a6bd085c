//! Multi-persona query rewriting: intent extraction, persona rewrite, a
//! two-axis quality check, and score-driven regeneration, all over a
//! pluggable text-completion backend.

mod backend;
#[cfg(feature = "http")]
mod http;
mod prompts;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Query, QuerySet, RewriteRecord, RewriteStatus, Role};

pub use backend::{Backend, BackendError, BackendRequest, BackendResponse, MockBackend, RetryPolicy, ScriptedBackend};
#[cfg(feature = "http")]
pub use http::{extract_content, HttpBackend, HttpConfig, DEFAULT_TOKEN_ENV};
pub use prompts::{parse_score_pair, PromptContext, PromptSet, TemplateId};

#[derive(Debug, Error, PartialEq)]
pub enum RewriteError {
    #[error("qid {qid}: {source} (step {template})")]
    Backend {
        qid: String,
        template: TemplateId,
        #[source]
        source: BackendError,
    },
    #[error("qid {qid}: retry budget exhausted at step {template}; last problem: {last}")]
    Exhausted { qid: String, template: TemplateId, last: String },
    #[error("could not parse two scores from {text:?}")]
    Parse { text: String },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("template error: {0}")]
    Template(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckScores {
    pub s0: i8,
    pub s1: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub semantic: u8,
    pub persona: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteConfig {
    pub max_iters: u32,
    /// Accept only when both check scores are 1.
    pub strict: bool,
    /// Bound on concurrently running pipelines.
    pub jobs: usize,
    pub retry: RetryPolicy,
    pub temperature: f64,
    pub max_tokens: u32,
    pub prompts: PromptSet,
}

impl Default for RewriteConfig {
    fn default() -> Self {
        Self {
            max_iters: 5,
            strict: false,
            jobs: 1,
            retry: RetryPolicy::default(),
            temperature: 0.7,
            max_tokens: 256,
            prompts: PromptSet::default(),
        }
    }
}

/// One backend call as seen by the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub qid: String,
    pub role: Option<Role>,
    pub template: TemplateId,
    pub attempt: u32,
    pub prompt: String,
    pub response: Option<String>,
    pub error: Option<String>,
    pub backend_tag: Option<String>,
}

/// A sequence of backend calls on behalf of one query (and optionally one
/// role), sharing a retry budget and a transcript.
pub struct Session<'a> {
    backend: &'a dyn Backend,
    config: &'a RewriteConfig,
    qid: String,
    role: Option<Role>,
    budget: u32,
    transcript: Vec<TranscriptEntry>,
}

fn flatten(text: &str) -> String {
    text.trim().replace(['\n', '\r', '\t'], " ")
}

impl<'a> Session<'a> {
    pub fn new(backend: &'a dyn Backend, config: &'a RewriteConfig, qid: &str, role: Option<Role>) -> Self {
        Self { backend, config, qid: qid.to_string(), role, budget: config.retry.retries, transcript: Vec::new() }
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn into_transcript(self) -> Vec<TranscriptEntry> {
        self.transcript
    }

    fn call<T>(
        &mut self,
        template: TemplateId,
        prompt: String,
        parse: impl Fn(&str) -> Result<T, RewriteError>,
    ) -> Result<T, RewriteError> {
        let request = BackendRequest {
            prompt,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let mut attempt = 0u32;
        loop {
            let mut entry = TranscriptEntry {
                qid: self.qid.clone(),
                role: self.role,
                template,
                attempt,
                prompt: request.prompt.clone(),
                response: None,
                error: None,
                backend_tag: None,
            };
            let problem: String = match self.backend.complete(&request) {
                Ok(resp) => {
                    entry.backend_tag = Some(resp.backend_tag);
                    entry.response = Some(resp.text.clone());
                    if resp.text.trim().is_empty() {
                        "empty response".to_string()
                    } else {
                        match parse(&resp.text) {
                            Ok(v) => {
                                self.transcript.push(entry);
                                return Ok(v);
                            }
                            Err(e) => e.to_string(),
                        }
                    }
                }
                Err(BackendError::Fatal(msg)) => {
                    entry.error = Some(msg.clone());
                    self.transcript.push(entry);
                    return Err(RewriteError::Backend {
                        qid: self.qid.clone(),
                        template,
                        source: BackendError::Fatal(msg),
                    });
                }
                Err(e) => e.to_string(),
            };
            entry.error = Some(problem.clone());
            self.transcript.push(entry);
            if self.budget == 0 {
                return Err(RewriteError::Exhausted { qid: self.qid.clone(), template, last: problem });
            }
            self.config.retry.pause(attempt);
            self.budget -= 1;
            attempt += 1;
        }
    }

    /// Prompt (a): a summary of what the query is looking for.
    pub fn extract_intent(&mut self, q: &Query) -> Result<String, RewriteError> {
        if q.role != Role::Original {
            return Err(RewriteError::Input(format!("intent extraction needs an original query, got {}", q.role)));
        }
        let ctx = PromptContext { query: &q.text, ..Default::default() };
        let prompt = self.config.prompts.render(TemplateId::AIntent, &ctx);
        self.call(TemplateId::AIntent, prompt, |t| Ok(flatten(t)))
    }

    /// Prompts (b) and (d)–(f). `previous` is the rejected candidate and is
    /// required by the regeneration templates.
    pub fn persona_rewrite(
        &mut self,
        intent: &str,
        q: &Query,
        role: Role,
        template: TemplateId,
        previous: Option<&str>,
    ) -> Result<String, RewriteError> {
        if role == Role::Original {
            return Err(RewriteError::Input("persona rewrite needs a persona role".into()));
        }
        if !template.is_generation() {
            return Err(RewriteError::Input(format!("template {template} does not generate rewrites")));
        }
        if template != TemplateId::BRewrite && previous.is_none() {
            return Err(RewriteError::Input(format!("template {template} needs the previous candidate")));
        }
        let ctx = PromptContext { query: &q.text, rewriting: previous.unwrap_or(""), intent, role: Some(role) };
        let prompt = self.config.prompts.render(template, &ctx);
        self.call(template, prompt, |t| Ok(flatten(t)))
    }

    /// Prompt (c): semantic fidelity `s0` and persona conformity `s1`.
    pub fn check_query(&mut self, original: &Query, candidate: &str, role: Role) -> Result<CheckScores, RewriteError> {
        if candidate.trim().is_empty() {
            return Err(RewriteError::Input("empty candidate".into()));
        }
        let ctx = PromptContext { query: &original.text, rewriting: candidate, intent: "", role: Some(role) };
        let prompt = self.config.prompts.render(TemplateId::CCheck, &ctx);
        self.call(TemplateId::CCheck, prompt, |t| {
            parse_score_pair(t, -1, 1).map(|(a, b)| CheckScores { s0: a as i8, s1: b as i8 })
        })
    }

    /// 0–5 ratings of semantic fidelity and persona match.
    pub fn judge_quality(&mut self, original: &Query, rewritten: &str, role: Role) -> Result<JudgeScores, RewriteError> {
        if rewritten.trim().is_empty() {
            return Err(RewriteError::Input("empty rewrite".into()));
        }
        let ctx = PromptContext { query: &original.text, rewriting: rewritten, intent: "", role: Some(role) };
        let prompt = self.config.prompts.render(TemplateId::Judge, &ctx);
        self.call(TemplateId::Judge, prompt, |t| {
            parse_score_pair(t, 0, 5).map(|(a, b)| JudgeScores { semantic: a as u8, persona: b as u8 })
        })
    }

    /// The check/regenerate loop for one role, given the query's intent.
    pub fn rewrite_role(&mut self, q: &Query, intent: &str, role: Role) -> Result<RewriteRecord, RewriteError> {
        let max_iters = self.config.max_iters;
        if max_iters == 0 {
            return Err(RewriteError::Input("max_iters must be at least 1".into()));
        }
        let pass = if self.config.strict { 1 } else { 0 };
        let mut templates = vec![TemplateId::BRewrite];
        let mut candidate = self.persona_rewrite(intent, q, role, TemplateId::BRewrite, None)?;
        let mut scores = self.check_query(q, &candidate, role)?;
        let mut iterations = 1;
        loop {
            let (bad0, bad1) = (scores.s0 < pass, scores.s1 < pass);
            if !bad0 && !bad1 {
                return Ok(self.record(q, role, intent, candidate, iterations, scores, &templates, true));
            }
            if iterations >= max_iters {
                return Ok(self.record(q, role, intent, q.text.clone(), iterations, scores, &templates, false));
            }
            let next = match (bad0, bad1) {
                (true, false) => TemplateId::DFixSemantic,
                (false, true) => TemplateId::EFixPersona,
                _ => TemplateId::FFixBoth,
            };
            candidate = self.persona_rewrite(intent, q, role, next, Some(&candidate))?;
            templates.push(next);
            scores = self.check_query(q, &candidate, role)?;
            iterations += 1;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        q: &Query,
        role: Role,
        intent: &str,
        rewritten_text: String,
        iterations: u32,
        scores: CheckScores,
        templates: &[TemplateId],
        accepted: bool,
    ) -> RewriteRecord {
        RewriteRecord {
            qid: q.qid.clone(),
            role,
            original_text: q.text.clone(),
            rewritten_text,
            intent_summary: intent.to_string(),
            iterations,
            semantic_score: scores.s0,
            persona_score: scores.s1,
            status: if accepted { RewriteStatus::Accepted } else { RewriteStatus::FallbackOriginal },
            templates: templates.iter().map(|t| t.letter()).collect(),
        }
    }
}

pub fn extract_intent(q: &Query, backend: &dyn Backend, config: &RewriteConfig) -> Result<String, RewriteError> {
    Session::new(backend, config, &q.qid, None).extract_intent(q)
}

pub fn check_query(
    original: &Query,
    candidate: &str,
    role: Role,
    backend: &dyn Backend,
    config: &RewriteConfig,
) -> Result<CheckScores, RewriteError> {
    Session::new(backend, config, &original.qid, Some(role)).check_query(original, candidate, role)
}

pub fn judge_quality(
    original: &Query,
    rewritten: &str,
    role: Role,
    backend: &dyn Backend,
    config: &RewriteConfig,
) -> Result<JudgeScores, RewriteError> {
    Session::new(backend, config, &original.qid, Some(role)).judge_quality(original, rewritten, role)
}

/// Applies `f` to every item with at most `jobs` running at once. Results
/// come back in input order.
pub(crate) fn bounded_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = std::iter::repeat_with(|| None).take(items.len()).collect();
    let done: Vec<Vec<(usize, R)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|_| {
                s.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break out;
                        }
                        out.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    for (i, r) in done.into_iter().flatten() {
        slots[i] = Some(r);
    }
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewriteOutput {
    /// Sorted by qid, then role index.
    pub records: Vec<RewriteRecord>,
    /// Per query: the intent call, then each role's calls in role order.
    pub transcript: Vec<TranscriptEntry>,
}

/// Rewrites every original query in `queries` for each of `roles`.
pub fn rewrite_all(
    queries: &QuerySet,
    roles: &[Role],
    backend: &dyn Backend,
    config: &RewriteConfig,
) -> Result<RewriteOutput, RewriteError> {
    if config.max_iters == 0 {
        return Err(RewriteError::Input("max_iters must be at least 1".into()));
    }
    if roles.is_empty() || roles.contains(&Role::Original) {
        return Err(RewriteError::Input("roles must be a non-empty list of personas".into()));
    }
    let mut roles = roles.to_vec();
    roles.sort_by_key(|r| r.index());
    roles.dedup();

    let mut originals: Vec<&Query> = queries.originals().collect();
    originals.sort_by(|a, b| a.qid.cmp(&b.qid));

    let intents = bounded_map(&originals, config.jobs, |q| {
        let mut s = Session::new(backend, config, &q.qid, None);
        let intent = s.extract_intent(q);
        (intent, s.into_transcript())
    });

    let mut pairs = Vec::with_capacity(originals.len() * roles.len());
    for (qi, q) in originals.iter().enumerate() {
        if let Ok(intent) = &intents[qi].0 {
            for &role in &roles {
                pairs.push((qi, *q, intent.clone(), role));
            }
        }
    }
    let results = bounded_map(&pairs, config.jobs, |(_, q, intent, role)| {
        let role = *role;
        let mut s = Session::new(backend, config, &q.qid, Some(role));
        let rec = s.rewrite_role(q, intent, role);
        (rec, s.into_transcript())
    });

    let mut records = Vec::with_capacity(pairs.len());
    let mut transcript = Vec::new();
    let mut by_query = results.into_iter().zip(&pairs).peekable();
    for (qi, (intent, log)) in intents.into_iter().enumerate() {
        transcript.extend(log);
        intent?;
        while let Some(((rec, log), _)) = by_query.next_if(|(_, p)| p.0 == qi) {
            transcript.extend(log);
            records.push(rec?);
        }
    }
    Ok(RewriteOutput { records, transcript })
}
