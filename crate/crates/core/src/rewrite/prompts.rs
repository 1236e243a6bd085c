use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::RewriteError;
use crate::data::Role;

/// Which prompt a backend call was rendered from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    /// (a) intent extraction
    AIntent,
    /// (b) first persona rewrite
    BRewrite,
    /// (c) two-axis quality check
    CCheck,
    /// (d) regenerate, semantics failed
    DFixSemantic,
    /// (e) regenerate, persona failed
    EFixPersona,
    /// (f) regenerate, both failed
    FFixBoth,
    /// 0–5 quality judge
    Judge,
}

impl TemplateId {
    pub const TABLE: [TemplateId; 6] = [
        TemplateId::AIntent,
        TemplateId::BRewrite,
        TemplateId::CCheck,
        TemplateId::DFixSemantic,
        TemplateId::EFixPersona,
        TemplateId::FFixBoth,
    ];

    pub fn letter(self) -> char {
        match self {
            TemplateId::AIntent => 'a',
            TemplateId::BRewrite => 'b',
            TemplateId::CCheck => 'c',
            TemplateId::DFixSemantic => 'd',
            TemplateId::EFixPersona => 'e',
            TemplateId::FFixBoth => 'f',
            TemplateId::Judge => 'j',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'a' => Some(TemplateId::AIntent),
            'b' => Some(TemplateId::BRewrite),
            'c' => Some(TemplateId::CCheck),
            'd' => Some(TemplateId::DFixSemantic),
            'e' => Some(TemplateId::EFixPersona),
            'f' => Some(TemplateId::FFixBoth),
            'j' => Some(TemplateId::Judge),
            _ => None,
        }
    }

    pub fn is_generation(self) -> bool {
        matches!(
            self,
            TemplateId::BRewrite | TemplateId::DFixSemantic | TemplateId::EFixPersona | TemplateId::FFixBoth
        )
    }

    fn index(self) -> usize {
        match self {
            TemplateId::AIntent => 0,
            TemplateId::BRewrite => 1,
            TemplateId::CCheck => 2,
            TemplateId::DFixSemantic => 3,
            TemplateId::EFixPersona => 4,
            TemplateId::FFixBoth => 5,
            TemplateId::Judge => 6,
        }
    }

    /// Placeholders a template for this id must contain.
    fn required(self) -> &'static [&'static str] {
        match self {
            TemplateId::AIntent => &["{query}"],
            TemplateId::BRewrite => &["{agent}", "{intent}"],
            TemplateId::CCheck => &["{query}", "{rewriting query}", "{agent}"],
            TemplateId::DFixSemantic | TemplateId::EFixPersona | TemplateId::FFixBoth => {
                &["{agent}", "{intent}", "{query}", "{rewriting query}"]
            }
            TemplateId::Judge => &["{query}", "{rewriting query}", "{agent}"],
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for TemplateId {
    type Err = RewriteError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::from_letter(c.to_ascii_lowercase()),
            _ => None,
        }
        .ok_or_else(|| RewriteError::Template(format!("unknown template id {s:?}")))
    }
}

const PLACEHOLDERS: [&str; 4] = ["{query}", "{rewriting query}", "{agent}", "{intent}"];

const CONTEXT_B: &str = "\n\nIntent: {intent}";
const CONTEXT_FIX: &str = "\n\nIntent: {intent}\nOriginal query: {query}\nPrevious rewrite: {rewriting query}";

/// Values substituted into a template.
#[derive(Debug, Clone, Default)]
pub struct PromptContext<'a> {
    pub query: &'a str,
    pub rewriting: &'a str,
    pub intent: &'a str,
    pub role: Option<Role>,
}

/// The six rewriting prompts plus the judge prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    templates: Vec<String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        let a = "The search query is {query}. Please analyze and determine the actual intention or meaning \
                 that the person is trying to convey through this search query.";
        let b = "Assuming you are {agent}, what changes might you make when rewriting the query? \
                 Please rewrite the query to align it with your role.";
        let c = "The original query is: {query}. The rephrased query is: {rewriting query}. Evaluate the \
                 following:1. Are these two queries describing the same information? 2. Does the modified \
                 query align with the query posed by {agent}? Assign judgment scores of -1, 0, or 1. A score \
                 of -1 implies no match, 0 suggests an approximate match, and 1 indicates an exact match.";
        let d = "Assuming you are {agent}, please rephrase the query in accordance with your role while \
                 preserving the original meaning of the question.";
        let e = "Assuming you are {agent}, please rephrase the query according to your role and rewrite it \
                 more in line with the character's attributes.";
        let f = "Assuming you are {agent}, please rephrase the question consistent with your role, \
                 maintaining the essence of the original query and aligning it with the character's attributes.";
        let judge = "The original query is: {query}. The rewritten query is: {rewriting query}. Rate two \
                     metrics on a 0 to 5 scale, with 0 being the poorest and 5 being the optimal: 1. semantic \
                     fidelity of the rewritten query to the original; 2. how well the rewritten query matches \
                     a query posed by {agent}. Answer with the two integers.";
        Self {
            templates: vec![
                a.to_string(),
                format!("{b}{CONTEXT_B}"),
                c.to_string(),
                format!("{d}{CONTEXT_FIX}"),
                format!("{e}{CONTEXT_FIX}"),
                format!("{f}{CONTEXT_FIX}"),
                judge.to_string(),
            ],
        }
    }
}

impl PromptSet {
    pub fn template(&self, id: TemplateId) -> &str {
        &self.templates[id.index()]
    }

    /// Replaces one template after checking it carries the placeholders its
    /// role needs.
    pub fn set(&mut self, id: TemplateId, template: impl Into<String>) -> Result<(), RewriteError> {
        let template = template.into();
        for p in id.required() {
            if !template.contains(p) {
                return Err(RewriteError::Template(format!("template {id} lacks placeholder {p}")));
            }
        }
        self.templates[id.index()] = template;
        Ok(())
    }

    pub fn render(&self, id: TemplateId, ctx: &PromptContext<'_>) -> String {
        let agent = ctx.role.map(Role::persona_phrase).unwrap_or("");
        let mut out = self.template(id).to_string();
        // Substitute user-controlled values last-to-first so inserted text
        // is never rescanned for placeholders.
        let mut pieces: Vec<(usize, &str, &str)> = Vec::new();
        for (p, v) in PLACEHOLDERS.iter().zip([ctx.query, ctx.rewriting, agent, ctx.intent]) {
            for (at, _) in out.match_indices(p) {
                pieces.push((at, p, v));
            }
        }
        pieces.sort_by_key(|piece| std::cmp::Reverse(piece.0));
        for (at, p, v) in pieces {
            out.replace_range(at..at + p.len(), v);
        }
        out
    }
}

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+(?:\.\d+)?").unwrap());

/// First two integer tokens of `text` within `[lo, hi]`, in reading order.
/// Decimal tokens and out-of-range integers are skipped.
pub fn parse_score_pair(text: &str, lo: i64, hi: i64) -> Result<(i64, i64), RewriteError> {
    let mut found = NUMBER
        .find_iter(text)
        .filter(|m| !m.as_str().contains('.'))
        .filter_map(|m| m.as_str().parse::<i64>().ok())
        .filter(|v| (lo..=hi).contains(v));
    match (found.next(), found.next()) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(RewriteError::Parse { text: text.chars().take(200).collect() }),
    }
}
