use crate::data::LabelSet;
use crate::error::{Error, Result};

/// Dice overlap `2|A ∩ B| / (|A| + |B|)` of two label sets.
pub fn pair_f1(query: &LabelSet, item: &LabelSet) -> Result<f64> {
    if query.is_empty() {
        return Err(Error::contract("query label set is empty"));
    }
    if item.is_empty() {
        return Ok(0.0);
    }
    let common = query.intersection(item).count();
    Ok(2.0 * common as f64 / (query.len() + item.len()) as f64)
}

/// `|A ∩ B| / |A ∪ B|`, 0 when both are empty.
pub fn jaccard(a: &LabelSet, b: &LabelSet) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn dcg(relevances: &[f64]) -> f64 {
    relevances
        .iter()
        .enumerate()
        .map(|(i, r)| r / ((i + 2) as f64).log2())
        .sum()
}

/// Normalized DCG of the first `k` entries of a ranked relevance list. The
/// ideal ordering is the same list sorted descending; an all-zero list
/// scores 0.
pub fn ndcg_at_k(relevances: &[f64], k: usize) -> Result<f64> {
    if relevances.is_empty() {
        return Err(Error::contract("ndcg needs at least one relevance"));
    }
    if k == 0 {
        return Err(Error::contract("ndcg cutoff k must be at least 1"));
    }
    if let Some(r) = relevances.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
        return Err(Error::contract(format!(
            "relevances must be finite and non-negative, got {r}"
        )));
    }
    let cut = k.min(relevances.len());
    let mut ideal = relevances.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(&ideal[..cut]);
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok((dcg(&relevances[..cut]) / idcg).min(1.0))
}
