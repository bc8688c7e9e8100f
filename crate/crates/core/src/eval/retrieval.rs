use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_KS: [usize; 5] = [1, 5, 10, 20, 50];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallEntry {
    pub k: usize,
    /// `k` after clamping to the gallery size.
    pub effective_k: usize,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub gallery_size: usize,
    pub num_queries: usize,
    pub entries: Vec<RecallEntry>,
    pub warnings: Vec<String>,
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    let d = (aa * bb).sqrt();
    if d == 0.0 {
        0.0
    } else {
        ab / d
    }
}

/// Gallery indices ordered by decreasing cosine similarity; equal
/// similarities keep gallery order.
pub fn ranking(gallery: &[Vec<f32>], query: &[f32]) -> Vec<usize> {
    let sims: Vec<f64> = gallery.iter().map(|g| cosine(g, query)).collect();
    let mut idx: Vec<usize> = (0..gallery.len()).collect();
    idx.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    idx
}

/// Fraction of queries whose class appears among the `k` nearest gallery
/// items. A query is not removed from the gallery, so a gallery that
/// contains the query set retrieves each query first.
pub fn recall_at_k(
    gallery: &[Vec<f32>],
    gallery_labels: &[usize],
    queries: &[Vec<f32>],
    query_labels: &[usize],
    ks: &[usize],
) -> Result<RetrievalResult> {
    if gallery.is_empty() {
        return Err(Error::InvalidSpec("retrieval gallery is empty".into()));
    }
    if gallery.len() != gallery_labels.len() || queries.len() != query_labels.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![gallery.len(), queries.len()],
            actual: vec![gallery_labels.len(), query_labels.len()],
        });
    }
    let mut warnings = Vec::new();
    let kmax = ks.iter().map(|&k| k.min(gallery.len())).max().unwrap_or(0);
    // First rank at which each query finds its class (usize::MAX if never).
    let first_hit: Vec<usize> = queries
        .iter()
        .zip(query_labels)
        .map(|(q, &y)| {
            ranking(gallery, q)
                .into_iter()
                .take(kmax)
                .position(|g| gallery_labels[g] == y)
                .unwrap_or(usize::MAX)
        })
        .collect();
    let entries = ks
        .iter()
        .map(|&k| {
            let effective_k = k.min(gallery.len());
            if effective_k < k {
                let msg = format!("K={k} exceeds gallery size {}; clamped", gallery.len());
                log::warn!("{msg}");
                warnings.push(msg);
            }
            let hits = first_hit.iter().filter(|&&r| r < effective_k).count();
            RecallEntry {
                k,
                effective_k,
                recall: if queries.is_empty() { 0.0 } else { hits as f64 / queries.len() as f64 },
            }
        })
        .collect();
    Ok(RetrievalResult {
        gallery_size: gallery.len(),
        num_queries: queries.len(),
        entries,
        warnings,
    })
}
