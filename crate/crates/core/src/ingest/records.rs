//! Input record types and their line-oriented parsers.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    AddToCart,
    Purchase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: String,
    pub item_id: String,
    pub kind: EventKind,
    #[serde(rename = "ts")]
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub item_id: String,
    pub category: String,
    pub product_type: String,
    pub price_band: u8,
    pub brand_rank: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectAnnotation {
    pub item_id: String,
    pub aspect_id: String,
    pub aspect_text: String,
    pub asp_rel: f64,
    /// `[variant_a, variant_b]`: the "Similar items ..." and "Customers say ..." renderings.
    pub headers: [String; 2],
}

impl AspectAnnotation {
    pub fn header_variant_a(&self) -> &str {
        &self.headers[0]
    }

    pub fn header_variant_b(&self) -> &str {
        &self.headers[1]
    }
}

/// Strict parsing aborts on the first malformed record; lenient parsing
/// skips it and counts it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub skipped: usize,
}

fn parse_lines<T, R, F>(reader: R, mode: ParseMode, mut parse: F) -> Result<Parsed<T>, IngestError>
where
    R: BufRead,
    F: FnMut(&str) -> Result<T, String>,
{
    let mut records = Vec::new();
    let mut skipped = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse(&line) {
            Ok(rec) => records.push(rec),
            Err(message) => match mode {
                ParseMode::Strict => return Err(IngestError::Record { line: idx + 1, message }),
                ParseMode::Lenient => {
                    log::debug!("skipping line {}: {message}", idx + 1);
                    skipped += 1;
                }
            },
        }
    }
    Ok(Parsed { records, skipped })
}

fn json_record<T: DeserializeOwned>(line: &str) -> Result<T, String> {
    serde_json::from_str(line).map_err(|e| e.to_string())
}

pub fn parse_sessions<R: BufRead>(reader: R, mode: ParseMode) -> Result<Parsed<SessionEvent>, IngestError> {
    parse_lines(reader, mode, |line| {
        let ev: SessionEvent = json_record(line)?;
        if ev.item_id.is_empty() {
            return Err("empty item_id".into());
        }
        Ok(ev)
    })
}

/// Parses the catalog into a map keyed by item id. Duplicate ids are record errors.
pub fn parse_catalog<R: BufRead>(
    reader: R,
    mode: ParseMode,
) -> Result<(BTreeMap<String, CatalogItem>, usize), IngestError> {
    let mut seen = BTreeSet::new();
    let parsed = parse_lines(reader, mode, |line| {
        let item: CatalogItem = json_record(line)?;
        if item.item_id.is_empty() {
            return Err("empty item_id".into());
        }
        if item.price_band > 5 {
            return Err(format!("price_band {} outside 0..=5", item.price_band));
        }
        if item.category.is_empty() || item.product_type.is_empty() {
            return Err("empty category or product_type".into());
        }
        if !seen.insert(item.item_id.clone()) {
            return Err(format!("duplicate item_id {:?}", item.item_id));
        }
        Ok(item)
    })?;
    let map = parsed.records.into_iter().map(|c| (c.item_id.clone(), c)).collect();
    Ok((map, parsed.skipped))
}

pub fn parse_aspects<R: BufRead>(reader: R, mode: ParseMode) -> Result<Parsed<AspectAnnotation>, IngestError> {
    let mut seen = BTreeSet::new();
    parse_lines(reader, mode, |line| {
        let a: AspectAnnotation = json_record(line)?;
        if a.item_id.is_empty() || a.aspect_id.is_empty() {
            return Err("empty item_id or aspect_id".into());
        }
        if !(a.asp_rel > 0.0 && a.asp_rel <= 1.0) {
            return Err(format!("asp_rel {} outside (0,1]", a.asp_rel));
        }
        if a.headers.iter().any(|h| h.is_empty()) {
            return Err("empty header variant".into());
        }
        if !seen.insert((a.item_id.clone(), a.aspect_id.clone())) {
            return Err(format!("duplicate aspect {:?} for item {:?}", a.aspect_id, a.item_id));
        }
        Ok(a)
    })
}

pub fn parse_similarity<R: BufRead>(reader: R, mode: ParseMode) -> Result<Parsed<(String, String)>, IngestError> {
    parse_lines(reader, mode, |line| {
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                Ok((a.to_owned(), b.to_owned()))
            }
            _ => Err("expected item_a<TAB>item_b".into()),
        }
    })
}

pub fn write_jsonl<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    out
}

/// Groups annotations by item id, keeping input order within each item.
pub fn aspects_by_item(aspects: &[AspectAnnotation]) -> BTreeMap<String, Vec<AspectAnnotation>> {
    let mut map: BTreeMap<String, Vec<AspectAnnotation>> = BTreeMap::new();
    for a in aspects {
        map.entry(a.item_id.clone()).or_default().push(a.clone());
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    const PURCHASE: &str = r#"{"session_id":"s1","item_id":"A","kind":"purchase","ts":100}"#;

    #[test]
    fn one_purchase_line() {
        let p = parse_sessions(PURCHASE.as_bytes(), ParseMode::Strict).unwrap();
        assert_eq!(p.records.len(), 1);
        assert_eq!(p.records[0].kind, EventKind::Purchase);
        assert_eq!(p.records[0].timestamp, 100);
    }

    #[test]
    fn empty_input() {
        let p = parse_sessions(&b""[..], ParseMode::Strict).unwrap();
        assert!(p.records.is_empty());
        assert_eq!(p.skipped, 0);
    }

    #[test]
    fn missing_item_id_cites_line() {
        let bad = r#"{"session_id":"s1","kind":"purchase","ts":1}"#;
        let err = parse_sessions(bad.as_bytes(), ParseMode::Strict).unwrap_err();
        match err {
            IngestError::Record { line, ref message } => {
                assert_eq!(line, 1);
                assert!(message.contains("item_id"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lenient_skips_and_counts() {
        let input = format!("{PURCHASE}\nnot json\n{{\"session_id\":\"s\",\"item_id\":\"B\",\"kind\":\"browse\",\"ts\":1}}\n{PURCHASE}\n");
        let p = parse_sessions(input.as_bytes(), ParseMode::Lenient).unwrap();
        assert_eq!(p.records.len(), 2);
        assert_eq!(p.skipped, 2);
        let err = parse_sessions(input.as_bytes(), ParseMode::Strict).unwrap_err();
        assert!(matches!(err, IngestError::Record { line: 2, .. }));
    }

    #[test]
    fn catalog_validation() {
        let ok = r#"{"item_id":"A","category":"home","product_type":"lamp","price_band":3,"brand_rank":10}"#;
        let bad_band = r#"{"item_id":"B","category":"home","product_type":"lamp","price_band":6,"brand_rank":1}"#;
        let (cat, _) = parse_catalog(ok.as_bytes(), ParseMode::Strict).unwrap();
        assert_eq!(cat["A"].price_band, 3);
        let err = parse_catalog(format!("{ok}\n{bad_band}").as_bytes(), ParseMode::Strict).unwrap_err();
        assert!(matches!(err, IngestError::Record { line: 2, .. }));
        let err = parse_catalog(format!("{ok}\n{ok}").as_bytes(), ParseMode::Strict).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn aspect_validation() {
        let ok = r#"{"item_id":"A","aspect_id":"stylish","aspect_text":"stylish","asp_rel":0.5,"headers":["Similar items that are stylish","Customers say these are stylish"]}"#;
        let p = parse_aspects(ok.as_bytes(), ParseMode::Strict).unwrap();
        assert_eq!(p.records[0].header_variant_b(), "Customers say these are stylish");
        let zero = ok.replace("0.5", "0.0");
        assert!(parse_aspects(zero.as_bytes(), ParseMode::Strict).is_err());
        let one_header = ok.replace(r#","Customers say these are stylish""#, "");
        assert!(parse_aspects(one_header.as_bytes(), ParseMode::Strict).is_err());
        let dup = format!("{ok}\n{ok}");
        assert!(parse_aspects(dup.as_bytes(), ParseMode::Strict).is_err());
    }

    #[test]
    fn similarity_tsv() {
        let p = parse_similarity("A\tB\nC\tD\n".as_bytes(), ParseMode::Strict).unwrap();
        assert_eq!(p.records, vec![("A".into(), "B".into()), ("C".into(), "D".into())]);
        assert!(parse_similarity("A B\n".as_bytes(), ParseMode::Strict).is_err());
    }
}
