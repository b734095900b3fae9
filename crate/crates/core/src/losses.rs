//! The three training objectives and their scheduled combination.
//!
//! For a batch of `T` aligned tuples seen by modalities `j` and `k`:
//!
//! * **MIM** is a contrastive cross-entropy over cross-modal embeddings `z`.
//!   Row `i` of one modality is pulled toward row `i` of the other and pushed
//!   away from the other `T - 1` rows. The positive pair is *not* part of the
//!   softmax denominator unless [`LossWeights::include_positive_in_denominator`]
//!   is set.
//! * **MDE** is the negative mean softplus of the cosine similarity between
//!   aligned modal-specific features `y`; minimizing it drives aligned pairs
//!   toward similarity 1.
//! * **MSP** is the negative mean cosine similarity between each feature and
//!   its nearest other feature (Euclidean) of the same modality within the
//!   batch. The neighbor choice is a constant of the batch; gradients flow to
//!   both the anchor and the chosen neighbor.
//!
//! The total is `mim + alpha * mde + beta * msp`, with `alpha` and `beta`
//! grown geometrically over training by [`schedule_weight`].

use crate::error::{Error, Result};
use crate::tensor::{squared_distance, Tape, Tensor, Var};

pub const DEFAULT_TAU: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    /// Use the standard contrastive denominator that also contains the
    /// positive pair.
    pub include_positive_in_denominator: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            tau: DEFAULT_TAU,
            include_positive_in_denominator: false,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, tau: f64) -> Result<Self> {
        let w = Self {
            alpha,
            beta,
            tau,
            include_positive_in_denominator: false,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::contract(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::contract(format!(
                "loss weights must be non-negative, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Values of one evaluation of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub mim: f64,
    pub mde: f64,
    pub msp: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Tape handles of the combined objective and its parts.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub mim: Var,
    pub mde: Var,
    pub msp: Var,
    pub total: Var,
}

fn check_pair(tape: &Tape, a: Var, b: Var, op: &'static str) -> Result<usize> {
    let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
    if sa.len() != 2 || sa != sb {
        return Err(Error::dim(
            op,
            format!("need equal T x d matrices, got {sa:?} and {sb:?}"),
        ));
    }
    if sa[0] < 2 {
        return Err(Error::contract(format!(
            "{op} needs a batch of at least 2 tuples, got {}",
            sa[0]
        )));
    }
    Ok(sa[0])
}

/// Column of per-anchor contrastive terms from rows of a scaled similarity
/// matrix whose diagonal holds the positives.
fn contrastive_terms(tape: &mut Tape, scaled: Var, include_positive: bool) -> Result<Var> {
    let lse = tape.row_logsumexp(scaled, !include_positive)?;
    let pos = tape.diag(scaled)?;
    tape.sub(lse, pos)
}

fn scaled_similarity(tape: &mut Tape, z_src: Var, z_tgt: Var, tau: f64) -> Result<Var> {
    let ns = tape.normalize_rows(z_src)?;
    let nt = tape.normalize_rows(z_tgt)?;
    let nt_t = tape.transpose(nt)?;
    let sim = tape.matmul(ns, nt_t)?;
    Ok(tape.scale(sim, 1.0 / tau))
}

/// All contrastive terms `l^i(src, tgt)` for `i in 0..T` as a `T x 1` column.
pub fn nt_xent_terms(
    tape: &mut Tape,
    z_src: Var,
    z_tgt: Var,
    weights: &LossWeights,
) -> Result<Var> {
    weights.validate()?;
    check_pair(tape, z_src, z_tgt, "nt_xent")?;
    let scaled = scaled_similarity(tape, z_src, z_tgt, weights.tau)?;
    contrastive_terms(tape, scaled, weights.include_positive_in_denominator)
}

/// Contrastive term for anchor `i`: minus the log of the positive pair's
/// share of `exp(S / tau)` over the other rows of the target modality.
pub fn nt_xent_term(
    tape: &mut Tape,
    i: usize,
    z_src: Var,
    z_tgt: Var,
    weights: &LossWeights,
) -> Result<Var> {
    let terms = nt_xent_terms(tape, z_src, z_tgt, weights)?;
    let picked = tape.gather_rows(terms, &[i])?;
    Ok(tape.sum(picked))
}

/// Symmetric contrastive loss, averaged over both directions and all tuples.
pub fn loss_mim(tape: &mut Tape, z_j: Var, z_k: Var, weights: &LossWeights) -> Result<Var> {
    weights.validate()?;
    let t = check_pair(tape, z_j, z_k, "loss_mim")?;
    let include = weights.include_positive_in_denominator;
    let scaled = scaled_similarity(tape, z_j, z_k, weights.tau)?;
    let forward = contrastive_terms(tape, scaled, include)?;
    let scaled_t = tape.transpose(scaled)?;
    let backward = contrastive_terms(tape, scaled_t, include)?;
    let both = tape.add(forward, backward)?;
    let total = tape.sum(both);
    Ok(tape.div_scalar(total, (2 * t) as f64))
}

/// `-(1/T) sum_i ln(1 + exp(S(y_i^j, y_i^k)))`.
pub fn loss_mde(tape: &mut Tape, y_j: Var, y_k: Var) -> Result<Var> {
    let t = check_pair(tape, y_j, y_k, "loss_mde")?;
    let cos = tape.row_cosine(y_j, y_k)?;
    let sp = tape.softplus(cos);
    let s = tape.sum(sp);
    let neg = tape.scale(s, -1.0);
    Ok(tape.div_scalar(neg, t as f64))
}

/// Index of each row's nearest other row by Euclidean distance; exact ties
/// go to the lowest index.
pub fn nearest_neighbors(features: &Tensor) -> Result<Vec<usize>> {
    let (t, _) = features.as_rows()?;
    if t < 2 {
        return Err(Error::contract(format!(
            "nearest neighbors need at least 2 rows, got {t}"
        )));
    }
    Ok((0..t)
        .map(|i| {
            let anchor = features.row(i);
            let mut best = (usize::MAX, f64::INFINITY);
            for k in (0..t).filter(|&k| k != i) {
                let d = squared_distance(anchor, features.row(k));
                if d < best.1 || best.0 == usize::MAX {
                    best = (k, d);
                }
            }
            best.0
        })
        .collect())
}

/// `s_i = S(y_i, y_{nn(i)})` for every anchor as a `T x 1` column.
pub fn neighbor_similarities(tape: &mut Tape, y: Var, neighbors: &[usize]) -> Result<Var> {
    let t = tape.value(y).shape()[0];
    if neighbors.len() != t {
        return Err(Error::dim(
            "neighbor_similarities",
            format!("{} neighbor indices for {t} rows", neighbors.len()),
        ));
    }
    if let Some((i, _)) = neighbors.iter().enumerate().find(|(i, &n)| n == *i) {
        return Err(Error::contract(format!(
            "row {i} is listed as its own neighbor"
        )));
    }
    let nn = tape.gather_rows(y, neighbors)?;
    tape.row_cosine(y, nn)
}

/// Intra-modal similarity loss with neighbors chosen from the current values.
pub fn loss_msp(tape: &mut Tape, y_j: Var, y_k: Var) -> Result<Var> {
    check_pair(tape, y_j, y_k, "loss_msp")?;
    let nn_j = nearest_neighbors(tape.value(y_j))?;
    let nn_k = nearest_neighbors(tape.value(y_k))?;
    loss_msp_with(tape, y_j, y_k, &nn_j, &nn_k)
}

/// Intra-modal similarity loss with fixed neighbor indices.
pub fn loss_msp_with(
    tape: &mut Tape,
    y_j: Var,
    y_k: Var,
    nn_j: &[usize],
    nn_k: &[usize],
) -> Result<Var> {
    let t = check_pair(tape, y_j, y_k, "loss_msp")?;
    let s_j = neighbor_similarities(tape, y_j, nn_j)?;
    let s_k = neighbor_similarities(tape, y_k, nn_k)?;
    let both = tape.add(s_j, s_k)?;
    let s = tape.sum(both);
    let neg = tape.scale(s, -1.0);
    Ok(tape.div_scalar(neg, (2 * t) as f64))
}

/// Fixed neighbor indices for both modalities of an MSP evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrozenNeighbors {
    pub j: Vec<usize>,
    pub k: Vec<usize>,
}

impl FrozenNeighbors {
    pub fn select(y_j: &Tensor, y_k: &Tensor) -> Result<Self> {
        Ok(Self {
            j: nearest_neighbors(y_j)?,
            k: nearest_neighbors(y_k)?,
        })
    }
}

/// `mim + alpha * mde + beta * msp` on one modality pair.
pub fn combined_loss(
    tape: &mut Tape,
    z_j: Var,
    z_k: Var,
    y_j: Var,
    y_k: Var,
    weights: &LossWeights,
) -> Result<(LossVars, LossBreakdown)> {
    combined_loss_with(tape, z_j, z_k, y_j, y_k, weights, None)
}

/// [`combined_loss`] with optionally pre-selected MSP neighbors.
pub fn combined_loss_with(
    tape: &mut Tape,
    z_j: Var,
    z_k: Var,
    y_j: Var,
    y_k: Var,
    weights: &LossWeights,
    neighbors: Option<&FrozenNeighbors>,
) -> Result<(LossVars, LossBreakdown)> {
    let tz = tape.value(z_j).shape()[0];
    let ty = tape.value(y_j).shape()[0];
    if tz != ty {
        return Err(Error::dim(
            "combined_loss",
            format!("embedding batch {tz} vs feature batch {ty}"),
        ));
    }
    let mim = loss_mim(tape, z_j, z_k, weights)?;
    let mde = loss_mde(tape, y_j, y_k)?;
    let msp = match neighbors {
        Some(n) => loss_msp_with(tape, y_j, y_k, &n.j, &n.k)?,
        None => loss_msp(tape, y_j, y_k)?,
    };
    let wa = tape.scale(mde, weights.alpha);
    let wb = tape.scale(msp, weights.beta);
    let reg = tape.add(wa, wb)?;
    let total = tape.add(mim, reg)?;
    let breakdown = LossBreakdown {
        mim: tape.scalar(mim)?,
        mde: tape.scalar(mde)?,
        msp: tape.scalar(msp)?,
        total: tape.scalar(total)?,
        alpha: weights.alpha,
        beta: weights.beta,
    };
    Ok((
        LossVars {
            mim,
            mde,
            msp,
            total,
        },
        breakdown,
    ))
}

/// Geometric growth from `initial` at epoch 0 to exactly 1 at the last epoch:
/// `initial^((E - 1 - e) / (E - 1))`.
pub fn schedule_weight(epoch: usize, total_epochs: usize, initial: f64) -> Result<f64> {
    if total_epochs == 0 || epoch >= total_epochs {
        return Err(Error::contract(format!(
            "schedule epoch {epoch} outside 0..{total_epochs}"
        )));
    }
    if !(initial > 0.0 && initial <= 1.0) {
        return Err(Error::contract(format!(
            "initial weight must be in (0, 1], got {initial}"
        )));
    }
    if total_epochs == 1 || epoch == total_epochs - 1 {
        return Ok(1.0);
    }
    if epoch == 0 {
        return Ok(initial);
    }
    let last = (total_epochs - 1) as f64;
    Ok(initial.powf((last - epoch as f64) / last))
}
