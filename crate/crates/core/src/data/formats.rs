//! Line-oriented file formats: queries TSV, TREC qrels and runs, and JSONL
//! for rewrites and embeddings. All UTF-8 with LF line endings.

use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::Deserialize;

use super::{DataError, PairEmbedding, Qrels, Query, QuerySet, RankedRun, RewriteRecord, Role};

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.is_empty())
}

/// Parses `qid<TAB>text` lines into original queries.
pub fn parse_queries(text: &str) -> Result<QuerySet, DataError> {
    let mut set = QuerySet::new();
    let mut seen = HashSet::new();
    for (line, raw) in lines(text) {
        let (qid, body) = raw.split_once('\t').ok_or_else(|| DataError::Malformed {
            line,
            message: "expected `qid<TAB>text`".into(),
        })?;
        if qid.is_empty() || body.trim().is_empty() {
            return Err(DataError::Malformed { line, message: "empty qid or query text".into() });
        }
        if !seen.insert(qid.to_string()) {
            return Err(DataError::DuplicateQuery { line, qid: qid.to_string() });
        }
        set.push(Query { qid: qid.to_string(), text: body.to_string(), role: Role::Original })?;
    }
    Ok(set)
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<QuerySet, DataError> {
    parse_queries(&fs::read_to_string(path)?)
}

pub fn write_queries<W: Write>(mut out: W, queries: &QuerySet) -> io::Result<()> {
    for q in queries.originals() {
        writeln!(out, "{}\t{}", q.qid, q.text)?;
    }
    Ok(())
}

/// Parses TREC qrels (`qid 0 docid grade`). Duplicate `(qid, docid)` pairs
/// keep the last grade; [`Qrels::duplicates`] reports how many were replaced.
pub fn parse_qrels(text: &str, num_levels: u32) -> Result<Qrels, DataError> {
    let mut qrels = Qrels::new(num_levels)?;
    for (line, raw) in lines(text) {
        let cols: Vec<&str> = raw.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(DataError::Malformed {
                line,
                message: format!("expected 4 columns, found {}", cols.len()),
            });
        }
        let grade: i64 = cols[3].parse().map_err(|_| DataError::Malformed {
            line,
            message: format!("grade `{}` is not an integer", cols[3]),
        })?;
        if grade < 0 || grade >= num_levels as i64 {
            return Err(DataError::GradeOutOfRange { line, grade, levels: num_levels });
        }
        qrels.insert(cols[0], cols[2], grade as u32)?;
    }
    Ok(qrels)
}

pub fn load_qrels(path: impl AsRef<Path>, num_levels: u32) -> Result<Qrels, DataError> {
    parse_qrels(&fs::read_to_string(path)?, num_levels)
}

pub fn write_qrels<W: Write>(mut out: W, qrels: &Qrels) -> io::Result<()> {
    for (qid, docid, grade) in qrels.iter() {
        writeln!(out, "{qid} 0 {docid} {grade}")?;
    }
    Ok(())
}

/// Parses a TREC 6-column run (`qid Q0 docid rank score tag`). The rank
/// column is ignored; rankings are rebuilt from scores.
pub fn parse_run(text: &str, role: Role) -> Result<RankedRun, DataError> {
    let mut tag: Option<String> = None;
    let mut grouped: IndexMap<String, Vec<(String, f64)>> = IndexMap::new();
    let mut seen = HashSet::new();
    for (line, raw) in lines(text) {
        let cols: Vec<&str> = raw.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(DataError::Malformed {
                line,
                message: format!("expected 6 columns, found {}", cols.len()),
            });
        }
        let score: f64 = cols[4].parse().map_err(|_| DataError::Malformed {
            line,
            message: format!("score `{}` is not a number", cols[4]),
        })?;
        if !score.is_finite() {
            return Err(DataError::Malformed { line, message: "non-finite score".into() });
        }
        match &tag {
            None => tag = Some(cols[5].to_string()),
            Some(t) if t != cols[5] => {
                return Err(DataError::Malformed {
                    line,
                    message: format!("run tag `{}` differs from `{t}`", cols[5]),
                })
            }
            Some(_) => {}
        }
        if !seen.insert((cols[0].to_string(), cols[2].to_string())) {
            return Err(DataError::DuplicateDoc {
                line,
                qid: cols[0].to_string(),
                docid: cols[2].to_string(),
            });
        }
        grouped.entry(cols[0].to_string()).or_default().push((cols[2].to_string(), score));
    }
    let mut run = RankedRun::new(role, tag.unwrap_or_default());
    for (qid, scored) in grouped {
        run.set(&qid, scored)?;
    }
    Ok(run)
}

pub fn load_run(path: impl AsRef<Path>, role: Role) -> Result<RankedRun, DataError> {
    parse_run(&fs::read_to_string(path)?, role)
}

pub fn write_run<W: Write>(mut out: W, run: &RankedRun) -> io::Result<()> {
    for (qid, ranking) in run.iter() {
        for (rank, (docid, score)) in ranking.iter().enumerate() {
            writeln!(out, "{qid} Q0 {docid} {} {score} {}", rank + 1, run.tag)?;
        }
    }
    Ok(())
}

pub fn parse_rewrites(text: &str) -> Result<Vec<RewriteRecord>, DataError> {
    lines(text)
        .map(|(line, raw)| {
            serde_json::from_str(raw)
                .map_err(|e| DataError::Malformed { line, message: e.to_string() })
        })
        .collect()
}

pub fn load_rewrites(path: impl AsRef<Path>) -> Result<Vec<RewriteRecord>, DataError> {
    parse_rewrites(&fs::read_to_string(path)?)
}

pub fn write_rewrites<W: Write>(mut out: W, records: &[RewriteRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct RawEmbedding {
    qid: String,
    role: String,
    docid: String,
    vec: Vec<f64>,
}

/// Parses embeddings JSONL. Every line must share one dimension and name a
/// known role.
pub fn parse_embeddings(text: &str) -> Result<Vec<PairEmbedding>, DataError> {
    let mut out = Vec::new();
    let mut dim: Option<usize> = None;
    for (line, raw) in lines(text) {
        let rec: RawEmbedding = serde_json::from_str(raw)
            .map_err(|e| DataError::Malformed { line, message: e.to_string() })?;
        let role: Role =
            rec.role.parse().map_err(|_| DataError::UnknownRole { line, role: rec.role.clone() })?;
        match dim {
            None => dim = Some(rec.vec.len()),
            Some(d) if d != rec.vec.len() => {
                return Err(DataError::DimensionMismatch { line, expected: d, found: rec.vec.len() })
            }
            Some(_) => {}
        }
        if rec.vec.iter().any(|x| !x.is_finite()) {
            return Err(DataError::NonFinite { line });
        }
        out.push(PairEmbedding { qid: rec.qid, role, docid: rec.docid, vec: rec.vec });
    }
    Ok(out)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Vec<PairEmbedding>, DataError> {
    parse_embeddings(&fs::read_to_string(path)?)
}

pub fn write_embeddings<W: Write>(mut out: W, embeddings: &[PairEmbedding]) -> io::Result<()> {
    for e in embeddings {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RewriteStatus;
    use proptest::prelude::*;

    #[test]
    fn single_query_line() {
        let set = parse_queries("q1\thow to fix bike chain\n").unwrap();
        assert_eq!(set.len(), 1);
        let q = set.iter().next().unwrap();
        assert_eq!(q.qid, "q1");
        assert_eq!(q.text, "how to fix bike chain");
        assert_eq!(q.role, Role::Original);
    }

    #[test]
    fn empty_query_file_is_empty_set() {
        assert!(parse_queries("").unwrap().is_empty());
    }

    #[test]
    fn missing_tab_names_the_line() {
        let err = parse_queries("q1").unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 1, .. }), "{err}");
        assert!(err.to_string().starts_with("line 1:"));
        let err = parse_queries("q1\tok\nq2 no tab\n").unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 2, .. }));
    }

    #[test]
    fn duplicate_qid_is_an_error() {
        let err = parse_queries("q1\ta\nq1\tb\n").unwrap_err();
        assert!(matches!(err, DataError::DuplicateQuery { line: 2, .. }));
    }

    #[test]
    fn load_queries_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.tsv");
        fs::write(&path, "q1\t自行车链条\n").unwrap();
        let set = load_queries(&path).unwrap();
        assert_eq!(set.iter().next().unwrap().text, "自行车链条");
    }

    #[test]
    fn qrels_single_record_and_bounds() {
        let q = parse_qrels("q1 0 d1 2\n", 3).unwrap();
        assert_eq!(q.grade("q1", "d1"), Some(2));
        assert_eq!(q.len(), 1);
        assert!(matches!(
            parse_qrels("q1 0 d1 4\n", 3).unwrap_err(),
            DataError::GradeOutOfRange { line: 1, grade: 4, .. }
        ));
        assert!(matches!(parse_qrels("q1 0 d1 x\n", 3).unwrap_err(), DataError::Malformed { .. }));
        assert!(matches!(parse_qrels("q1 0 d1 1.5\n", 5).unwrap_err(), DataError::Malformed { .. }));
        assert!(parse_qrels("q1 0 d1\n", 3).is_err());
    }

    #[test]
    fn qrels_duplicates_last_write_wins() {
        let q = parse_qrels("q1 0 d1 1\nq1 0 d2 0\nq1 0 d1 2\n", 3).unwrap();
        assert_eq!(q.grade("q1", "d1"), Some(2));
        assert_eq!(q.duplicates(), 1);
        assert_eq!(q.len(), 2);
    }

    #[test]
    fn run_parsing_resorts_and_checks_tags() {
        let text = "q1 Q0 d2 1 0.2 t\nq1 Q0 d1 2 0.9 t\n";
        let run = parse_run(text, Role::Man).unwrap();
        assert_eq!(run.docids("q1").unwrap(), vec!["d1", "d2"]);
        assert_eq!(run.role, Role::Man);
        assert!(parse_run("q1 Q0 d1 1 0.2 a\nq1 Q0 d2 2 0.1 b\n", Role::Man).is_err());
        let dup = parse_run("q1 Q0 d1 1 0.2 a\nq1 Q0 d1 2 0.1 a\n", Role::Man).unwrap_err();
        assert!(matches!(dup, DataError::DuplicateDoc { line: 2, .. }));
    }

    #[test]
    fn embeddings_dimension_and_role_checks() {
        let ok = "{\"qid\":\"q1\",\"role\":\"original\",\"docid\":\"d1\",\"vec\":[1,2,3,4]}\n\
                  {\"qid\":\"q1\",\"role\":\"woman\",\"docid\":\"d1\",\"vec\":[1,2,3,4.5]}\n";
        let recs = parse_embeddings(ok).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].vec.len(), 4);
        assert_eq!(recs[1].role, Role::Woman);

        let mismatch = "{\"qid\":\"q1\",\"role\":\"original\",\"docid\":\"d1\",\"vec\":[1,2,3,4]}\n\
                        {\"qid\":\"q1\",\"role\":\"man\",\"docid\":\"d1\",\"vec\":[1,2,3,4,5]}\n";
        assert!(matches!(
            parse_embeddings(mismatch).unwrap_err(),
            DataError::DimensionMismatch { line: 2, expected: 4, found: 5 }
        ));

        let robot = "{\"qid\":\"q1\",\"role\":\"robot\",\"docid\":\"d1\",\"vec\":[1,2]}\n";
        assert!(matches!(
            parse_embeddings(robot).unwrap_err(),
            DataError::UnknownRole { line: 1, .. }
        ));
    }

    fn ident() -> impl Strategy<Value = String> {
        "[a-z][a-z0-9_]{0,6}"
    }

    proptest! {
        #[test]
        fn queries_round_trip(ids in prop::collection::btree_set(ident(), 0..8),
                              text in "[^\t\n\r]{1,20}") {
            prop_assume!(!text.trim().is_empty());
            let file: String = ids.iter().map(|q| format!("{q}\t{text}\n")).collect();
            let mut out = Vec::new();
            write_queries(&mut out, &parse_queries(&file).unwrap()).unwrap();
            prop_assert_eq!(String::from_utf8(out).unwrap(), file);
        }

        #[test]
        fn qrels_and_runs_round_trip(
            docs in prop::collection::btree_map(ident(), (0u32..5, -1.0e3f64..1.0e3), 1..8)
        ) {
            let qrels_file: String = docs.iter().map(|(d, (g, _))| format!("q1 0 {d} {g}\n")).collect();
            let mut out = Vec::new();
            write_qrels(&mut out, &parse_qrels(&qrels_file, 5).unwrap()).unwrap();
            prop_assert_eq!(String::from_utf8(out).unwrap(), qrels_file);

            let mut run = RankedRun::new(Role::Student, "tag");
            run.set("q1", docs.iter().map(|(d, (_, s))| (d.clone(), *s)).collect()).unwrap();
            let mut canonical = Vec::new();
            write_run(&mut canonical, &run).unwrap();
            let canonical = String::from_utf8(canonical).unwrap();
            let reparsed = parse_run(&canonical, Role::Student).unwrap();
            prop_assert_eq!(&reparsed, &run);
            let mut again = Vec::new();
            write_run(&mut again, &reparsed).unwrap();
            prop_assert_eq!(String::from_utf8(again).unwrap(), canonical);
        }

        #[test]
        fn jsonl_round_trip(v in prop::collection::vec(-1.0e6f64..1.0e6, 2..6), it in 1u32..6) {
            let emb = vec![PairEmbedding { qid: "q".into(), role: Role::Elder, docid: "d".into(), vec: v }];
            let mut out = Vec::new();
            write_embeddings(&mut out, &emb).unwrap();
            let text = String::from_utf8(out).unwrap();
            prop_assert_eq!(&parse_embeddings(&text).unwrap(), &emb);

            let rec = vec![RewriteRecord {
                qid: "q1".into(), role: Role::Woman, original_text: "a".into(),
                rewritten_text: "b".into(), intent_summary: "i".into(), iterations: it,
                semantic_score: 0, persona_score: 1, status: RewriteStatus::Accepted,
                templates: vec!['b'],
            }];
            let mut out = Vec::new();
            write_rewrites(&mut out, &rec).unwrap();
            let text = String::from_utf8(out).unwrap();
            let back = parse_rewrites(&text).unwrap();
            prop_assert_eq!(&back, &rec);
            let mut again = Vec::new();
            write_rewrites(&mut again, &back).unwrap();
            prop_assert_eq!(String::from_utf8(again).unwrap(), text);
        }
    }
}
