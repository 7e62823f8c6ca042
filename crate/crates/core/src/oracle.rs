//! Brute-force reference implementations used to cross-check the fast paths.
//! Nothing here shares code with `recall` or `carousel`.

use std::collections::BTreeMap;

use crate::ingest::AspectAnnotation;

/// Winning aspect for a recall list by direct enumeration of every
/// (recall item, aspect) pair. Ties go to the larger support, then the
/// smaller aspect id.
pub fn oracle_select_aspect(
    recall: &[(String, f64)],
    aspects: &BTreeMap<String, Vec<AspectAnnotation>>,
) -> Option<String> {
    let mut universe: Vec<&str> = Vec::new();
    for (item, _) in recall {
        if let Some(list) = aspects.get(item) {
            for a in list {
                if !universe.contains(&a.aspect_id.as_str()) {
                    universe.push(&a.aspect_id);
                }
            }
        }
    }
    let mut best: Option<(f64, usize, &str)> = None;
    for &asp in &universe {
        let mut total = 0.0;
        let mut n = 0usize;
        for (item, ann) in recall {
            for a in aspects.get(item).into_iter().flatten() {
                if a.aspect_id == asp {
                    total += ann * a.asp_rel;
                    n += 1;
                }
            }
        }
        let score = total / n as f64;
        let better = match best {
            None => true,
            Some((bs, bn, bid)) => score > bs || (score == bs && (n > bn || (n == bn && asp < bid))),
        };
        if better {
            best = Some((score, n, asp));
        }
    }
    best.map(|b| b.2.to_string())
}

/// Every row's squared distance to `query`, sorted ascending with ties by id,
/// truncated to `p`, mapped to `1/(1+d²)`.
pub fn exhaustive_nn(ids: &[String], rows: &[Vec<f32>], query: &[f32], p: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(f64, &String)> = Vec::new();
    for (id, row) in ids.iter().zip(rows) {
        let mut d = 0.0f64;
        for k in 0..row.len() {
            let diff = row[k] as f64 - query[k] as f64;
            d += diff * diff;
        }
        all.push((d, id));
    }
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)));
    all.into_iter().take(p).map(|(d, id)| (id.clone(), 1.0 / (1.0 + d))).collect()
}
