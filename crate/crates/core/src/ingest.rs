//! Document intake: section-preserving segmentation and structured
//! method/relation extraction through a pluggable extractor.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::http::TextEndpoint;

pub const DEFAULT_SEGMENT_LENGTH: usize = 4000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub section_id: String,
    pub heading: String,
    pub body: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub sections: Vec<Section>,
}

impl Document {
    /// `L(D)`: total body length in characters.
    pub fn length(&self) -> usize {
        self.sections.iter().map(|s| s.body.chars().count()).sum()
    }

    pub fn body(&self) -> String {
        self.sections.iter().map(|s| s.body.as_str()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sections.is_empty() {
            return Err(Error::validation(format!("document `{}` has no sections", self.doc_id)));
        }
        if let Some(s) = self.sections.iter().find(|s| s.body.is_empty()) {
            return Err(Error::validation(format!(
                "document `{}` section `{}` has an empty body",
                self.doc_id, s.section_id
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub segment_id: String,
    pub doc_id: String,
    pub first_section: String,
    pub last_section: String,
    pub text: String,
}

impl Segment {
    pub fn length(&self) -> usize {
        self.text.chars().count()
    }
}

/// Reads a line-delimited corpus, one document per line.
pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut docs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line)
            .map_err(|e| Error::validation(format!("{}:{}: {e}", path.display(), n + 1)))?;
        doc.validate()?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Splits a document into segments without ever cutting inside a section.
///
/// Documents no longer than `max_len` stay whole. Otherwise consecutive
/// sections are packed greedily while the segment stays within `max_len`;
/// an oversize section becomes a segment on its own.
pub fn segment(doc: &Document, max_len: usize) -> Result<Vec<Segment>> {
    if max_len == 0 {
        return Err(Error::validation("segment length threshold must be > 0"));
    }
    doc.validate()?;
    let make = |index: usize, sections: &[Section]| Segment {
        segment_id: format!("{}#{:04}", doc.doc_id, index),
        doc_id: doc.doc_id.clone(),
        first_section: sections[0].section_id.clone(),
        last_section: sections[sections.len() - 1].section_id.clone(),
        text: sections.iter().map(|s| s.body.as_str()).collect(),
    };
    if doc.length() <= max_len {
        return Ok(vec![make(0, &doc.sections)]);
    }
    let mut out = Vec::new();
    let mut start = 0;
    let mut len = 0;
    for (i, s) in doc.sections.iter().enumerate() {
        let l = s.body.chars().count();
        if i > start && len + l > max_len {
            out.push(make(out.len(), &doc.sections[start..i]));
            start = i;
            len = 0;
        }
        len += l;
    }
    out.push(make(out.len(), &doc.sections[start..]));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodDescriptor {
    pub name: String,
    pub summary: String,
    pub keywords: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationDescriptor {
    pub src: String,
    pub dst: String,
    /// Raw rating as reported; validated against 1..=5 by [`extract`].
    pub rating: i64,
    pub explanation: String,
}

/// What an extractor reports before validation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawExtraction {
    pub methods: Vec<MethodDescriptor>,
    pub relations: Vec<RelationDescriptor>,
    /// Problems the extractor itself noticed (malformed lines and the like).
    pub diagnostics: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub segment_id: String,
    pub doc_id: String,
    pub pre_methods: Vec<MethodDescriptor>,
    pub post_methods: Vec<MethodDescriptor>,
    pub relations: Vec<RelationDescriptor>,
}

impl ExtractionRecord {
    pub fn methods(&self) -> impl Iterator<Item = &MethodDescriptor> {
        self.pre_methods.iter().chain(&self.post_methods)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExtractOutcome {
    Accepted(ExtractionRecord),
    Rejected {
        segment_id: String,
        diagnostics: Vec<String>,
    },
}

pub trait Extractor: Send + Sync {
    fn id(&self) -> &str;
    fn extract(&self, segment: &Segment) -> Result<RawExtraction>;
}

/// Parses the line-oriented annotation grammar:
///
/// ```text
/// METHOD <name>:: <summary>[:: <kw>, <kw>, ...]
/// REL <src> -> <dst> @<rating>:: <explanation>
/// ```
///
/// Without an explicit keyword list the keywords are the name's tokens.
pub fn parse_annotations(text: &str) -> RawExtraction {
    let mut out = RawExtraction::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix("METHOD ") {
            match parse_method(rest) {
                Some(m) => {
                    if !out.methods.iter().any(|x| x.name == m.name) {
                        out.methods.push(m);
                    }
                }
                None => out.diagnostics.push(format!("line {}: malformed METHOD `{line}`", n + 1)),
            }
        } else if let Some(rest) = line.strip_prefix("REL ") {
            match parse_relation(rest) {
                Some(r) => out.relations.push(r),
                None => out.diagnostics.push(format!("line {}: malformed REL `{line}`", n + 1)),
            }
        }
    }
    out
}

fn parse_method(rest: &str) -> Option<MethodDescriptor> {
    let mut parts = rest.splitn(3, "::");
    let name = parts.next()?.trim();
    let summary = parts.next()?.trim();
    if name.is_empty() {
        return None;
    }
    let keywords = match parts.next() {
        Some(kw) => kw
            .split(',')
            .map(|k| k.trim().to_lowercase())
            .filter(|k| !k.is_empty())
            .collect(),
        None => crate::embed::tokenize(name).collect(),
    };
    Some(MethodDescriptor {
        name: name.to_string(),
        summary: summary.to_string(),
        keywords,
    })
}

fn parse_relation(rest: &str) -> Option<RelationDescriptor> {
    let (head, explanation) = rest.split_once("::")?;
    let (pair, rating) = head.rsplit_once('@')?;
    let (src, dst) = pair.split_once("->")?;
    let (src, dst) = (src.trim(), dst.trim());
    if src.is_empty() || dst.is_empty() {
        return None;
    }
    Some(RelationDescriptor {
        src: src.to_string(),
        dst: dst.to_string(),
        rating: rating.trim().parse().ok()?,
        explanation: explanation.trim().to_string(),
    })
}

/// Deterministic extractor that reads annotations embedded in segment text.
#[derive(Clone, Copy, Debug, Default)]
pub struct RuleExtractor;

impl Extractor for RuleExtractor {
    fn id(&self) -> &str {
        "rule"
    }

    fn extract(&self, segment: &Segment) -> Result<RawExtraction> {
        Ok(parse_annotations(&segment.text))
    }
}

/// Posts segment text to an endpoint that answers in the annotation grammar.
#[derive(Clone, Debug)]
pub struct HttpExtractor {
    endpoint: TextEndpoint,
}

impl HttpExtractor {
    pub fn new(url: impl Into<String>) -> Self {
        HttpExtractor {
            endpoint: TextEndpoint::new(url),
        }
    }
}

impl Extractor for HttpExtractor {
    fn id(&self) -> &str {
        "http"
    }

    fn extract(&self, segment: &Segment) -> Result<RawExtraction> {
        Ok(parse_annotations(&self.endpoint.post("extractor", &segment.text)?))
    }
}

/// Runs the extractor and validates relation endpoints and ratings.
pub fn extract(segment: &Segment, extractor: &dyn Extractor) -> Result<ExtractOutcome> {
    let raw = extractor.extract(segment)?;
    let mut diagnostics = raw.diagnostics.clone();
    let declared: BTreeSet<&str> = raw.methods.iter().map(|m| m.name.as_str()).collect();
    for r in &raw.relations {
        for end in [&r.src, &r.dst] {
            if !declared.contains(end.as_str()) {
                diagnostics.push(format!(
                    "relation {} -> {} names undeclared method `{end}`",
                    r.src, r.dst
                ));
            }
        }
        if !(1..=5).contains(&r.rating) {
            diagnostics.push(format!(
                "relation {} -> {} has rating {} outside 1..=5",
                r.src, r.dst, r.rating
            ));
        }
        if r.src == r.dst {
            diagnostics.push(format!("relation {} -> {} is a self-loop", r.src, r.dst));
        }
    }
    if !diagnostics.is_empty() {
        return Ok(ExtractOutcome::Rejected {
            segment_id: segment.segment_id.clone(),
            diagnostics,
        });
    }
    let derived: BTreeSet<&str> = raw.relations.iter().map(|r| r.dst.as_str()).collect();
    let (post, pre): (Vec<_>, Vec<_>) = raw
        .methods
        .iter()
        .cloned()
        .partition(|m| derived.contains(m.name.as_str()));
    Ok(ExtractOutcome::Accepted(ExtractionRecord {
        segment_id: segment.segment_id.clone(),
        doc_id: segment.doc_id.clone(),
        pre_methods: pre,
        post_methods: post,
        relations: raw.relations,
    }))
}

/// Extracts all segments in parallel; outcomes come back ordered by
/// `(doc_id, segment_id)` regardless of scheduling.
pub fn extract_all(segments: &[Segment], extractor: &dyn Extractor) -> Result<Vec<ExtractOutcome>> {
    let mut indexed: Vec<(&Segment, ExtractOutcome)> = segments
        .par_iter()
        .map(|s| extract(s, extractor).map(|o| (s, o)))
        .collect::<Result<_>>()?;
    indexed.sort_by(|a, b| {
        (a.0.doc_id.as_str(), a.0.segment_id.as_str()).cmp(&(b.0.doc_id.as_str(), b.0.segment_id.as_str()))
    });
    Ok(indexed.into_iter().map(|(_, o)| o).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(lengths: &[usize]) -> Document {
        Document {
            doc_id: "d".into(),
            title: "t".into(),
            sections: lengths
                .iter()
                .enumerate()
                .map(|(i, l)| Section {
                    section_id: format!("s{i}"),
                    heading: format!("h{i}"),
                    body: "x".repeat(*l),
                })
                .collect(),
        }
    }

    fn seg(text: &str) -> Segment {
        Segment {
            segment_id: "d#0000".into(),
            doc_id: "d".into(),
            first_section: "s0".into(),
            last_section: "s0".into(),
            text: text.into(),
        }
    }

    /// Greedy packing recomputed from section lengths alone.
    fn packing_oracle(lengths: &[usize], max_len: usize) -> Vec<usize> {
        if lengths.iter().sum::<usize>() <= max_len {
            return vec![lengths.iter().sum()];
        }
        let mut out = vec![];
        let mut cur: Option<usize> = None;
        for l in lengths {
            cur = match cur {
                Some(c) if c + l <= max_len => Some(c + l),
                Some(c) => {
                    out.push(c);
                    Some(*l)
                }
                None => Some(*l),
            };
        }
        out.extend(cur);
        out
    }

    #[test]
    fn short_document_stays_whole() {
        let segs = segment(&doc(&[300, 500]), 1000).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].length(), 800);
    }

    #[test]
    fn three_sections_that_do_not_pair() {
        let segs = segment(&doc(&[600, 600, 600]), 1000).unwrap();
        assert_eq!(segs.len(), 3);
        assert_eq!(packing_oracle(&[600, 600, 600], 1000), vec![600, 600, 600]);
    }

    #[test]
    fn oversize_section_is_never_cut() {
        let segs = segment(&doc(&[5000]), 1000).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].length(), 5000);
    }

    #[test]
    fn zero_sections_rejected() {
        assert!(segment(&doc(&[]), 10).is_err());
        assert!(segment(&doc(&[5]), 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn segmentation_is_total_and_bounded(lengths in proptest::collection::vec(1usize..400, 1..20), max_len in 1usize..1200) {
            let d = doc(&lengths);
            let segs = segment(&d, max_len).unwrap();
            let joined: String = segs.iter().map(|s| s.text.as_str()).collect();
            proptest::prop_assert_eq!(joined, d.body());
            for s in &segs {
                let single = s.first_section == s.last_section;
                proptest::prop_assert!(s.length() <= max_len || single);
            }
            let got: Vec<usize> = segs.iter().map(Segment::length).collect();
            proptest::prop_assert_eq!(got, packing_oracle(&lengths, max_len));
        }
    }

    #[test]
    fn annotated_segment_extracts_one_relation() {
        let s = seg("intro\nMETHOD A:: first method\nMETHOD B:: second method\nREL A -> B @5:: B extends A\n");
        let ExtractOutcome::Accepted(rec) = extract(&s, &RuleExtractor).unwrap() else {
            panic!("rejected");
        };
        assert_eq!(rec.relations.len(), 1);
        assert_eq!(rec.relations[0].rating, 5);
        assert_eq!(crate::model::rating_to_weight(rec.relations[0].rating as u8).unwrap(), 1.0);
        assert_eq!(rec.pre_methods[0].name, "A");
        assert_eq!(rec.post_methods[0].name, "B");
        assert_eq!(rec.pre_methods[0].keywords, vec!["a".to_string()]);
    }

    #[test]
    fn plain_text_extracts_nothing() {
        let ExtractOutcome::Accepted(rec) = extract(&seg("nothing here\n"), &RuleExtractor).unwrap() else {
            panic!("rejected");
        };
        assert!(rec.pre_methods.is_empty() && rec.post_methods.is_empty() && rec.relations.is_empty());
    }

    #[test]
    fn undeclared_endpoint_is_rejected_by_name() {
        let s = seg("METHOD A:: a\nMETHOD B:: b\nREL A -> C @3:: nope\n");
        match extract(&s, &RuleExtractor).unwrap() {
            ExtractOutcome::Rejected { diagnostics, .. } => {
                assert!(diagnostics.iter().any(|d| d.contains("`C`")), "{diagnostics:?}");
            }
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn bad_rating_is_rejected() {
        let s = seg("METHOD A:: a\nMETHOD B:: b\nREL A -> B @7:: too strong\n");
        assert!(matches!(extract(&s, &RuleExtractor).unwrap(), ExtractOutcome::Rejected { .. }));
    }

    #[test]
    fn explicit_keywords_and_multiword_names() {
        let raw = parse_annotations("METHOD Gradient Descent:: first-order optimizer:: Optimization, SGD\nREL Gradient Descent -> Adam @4:: adds moments");
        assert_eq!(raw.methods[0].keywords, vec!["optimization", "sgd"]);
        assert_eq!(raw.relations[0].src, "Gradient Descent");
        assert_eq!(raw.relations[0].dst, "Adam");
    }

    #[test]
    fn extraction_is_pure() {
        let s = seg("METHOD A:: a\nMETHOD B:: b\nREL A -> B @2:: weak\n");
        assert_eq!(extract(&s, &RuleExtractor).unwrap(), extract(&s, &RuleExtractor).unwrap());
    }

    #[test]
    fn http_extractor_uses_annotation_grammar() {
        let url = crate::http::testing::serve(1, |_| "METHOD X:: x\nMETHOD Y:: y\nREL X -> Y @4:: z".into());
        let rec = extract(&seg("whatever"), &HttpExtractor::new(url)).unwrap();
        let ExtractOutcome::Accepted(rec) = rec else { panic!() };
        assert_eq!(rec.relations.len(), 1);
    }
}
