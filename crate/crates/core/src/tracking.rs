//! Multiplicity detection and coarse-to-fine mode correspondence by frequency (FEC) or
//! by the modal assurance criterion (MAC).

use crate::assembly::SparseMat;
use crate::eigen::{dot, spmv};
use crate::error::{PlateError, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrackMethod {
    #[default]
    Fec,
    Mac,
}

impl TrackMethod {
    pub fn name(self) -> &'static str {
        match self {
            TrackMethod::Fec => "fec",
            TrackMethod::Mac => "mac",
        }
    }
}

/// Contiguous mode indices start..start+n.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeSet {
    pub start: usize,
    pub n: usize,
}

impl ModeSet {
    pub fn single(i: usize) -> Self {
        ModeSet { start: i, n: 1 }
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.n
    }

    pub fn last(&self) -> usize {
        self.start + self.n - 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub coarse: ModeSet,
    pub fine: ModeSet,
    pub method: TrackMethod,
    /// Frequency gap for FEC, largest (subspace) MAC for MAC.
    pub score: f64,
}

impl Correspondence {
    /// Same indices on both sides.
    pub fn identity(set: ModeSet, method: TrackMethod) -> Self {
        Correspondence { coarse: set, fine: set, method, score: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingConfig {
    /// Multiplicity threshold relative to the largest frequency considered.
    pub tau_lambda_mul_rel: f64,
    pub tau_mac: f64,
    /// Band widening margin; None uses 0.1 of the band width, or 0.1 of the top frequency
    /// when the width is within the multiplicity threshold.
    pub margin: Option<f64>,
    /// Frequency band of a sweep. When set, every search window covers the widened band.
    pub band: Option<[f64; 2]>,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        TrackingConfig { tau_lambda_mul_rel: 1e-3, tau_mac: 0.9, margin: None, band: None }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_mac > 0.0 && self.tau_mac < 1.0) {
            return Err(PlateError::Argument(format!("tau_mac must lie in (0,1), got {}", self.tau_mac)));
        }
        if !(self.tau_lambda_mul_rel >= 0.0) {
            return Err(PlateError::Argument("tau_lambda_mul_rel must be non-negative".into()));
        }
        if let Some(a) = self.margin {
            if !(a >= 0.0) {
                return Err(PlateError::Argument(format!("margin must be non-negative, got {a}")));
            }
        }
        Ok(())
    }

    pub fn margin_for(&self, lo: f64, hi: f64) -> f64 {
        self.margin.unwrap_or(if hi - lo > self.threshold(hi) { 0.1 * (hi - lo) } else { 0.1 * hi.abs() })
    }

    /// Search margin around a tracked mode set. The set's own spread says nothing about the
    /// coarse-to-fine shift, so the default is never below 0.1 of the top frequency.
    pub fn set_margin(&self, lo: f64, hi: f64) -> f64 {
        self.margin.unwrap_or((0.1 * (hi - lo)).max(0.1 * hi.abs()))
    }

    /// Frequency range searched for the fine modes of a coarse set spanning [lo, hi].
    pub fn search_range(&self, lo: f64, hi: f64) -> (f64, f64) {
        let a = self.set_margin(lo, hi);
        let (mut l, mut h) = (lo - a, hi + a);
        if let Some([bl, bh]) = self.band {
            let b = self.margin_for(bl, bh);
            l = l.min(bl - b);
            h = h.max(bh + b);
        }
        (l, h)
    }

    pub fn threshold(&self, lambda_max: f64) -> f64 {
        self.tau_lambda_mul_rel * lambda_max.abs()
    }
}

/// Maximal run of consecutive frequency gaps <= threshold containing `start`.
pub fn detect_multiplicity_fec(freqs: &[f64], start: usize, threshold: f64) -> Result<ModeSet> {
    if start >= freqs.len() {
        return Err(PlateError::Argument(format!("mode {start} is beyond the spectrum of {} modes", freqs.len())));
    }
    let (lo, hi) = expand_run(start, freqs.len(), |a, b| (freqs[b] - freqs[a]).abs() <= threshold);
    Ok(ModeSet { start: lo, n: hi - lo + 1 })
}

/// Grows [i, i] while `linked(j, j+1)` holds at either end.
fn expand_run(i: usize, len: usize, linked: impl Fn(usize, usize) -> bool) -> (usize, usize) {
    let mut lo = i;
    while lo > 0 && linked(lo - 1, lo) {
        lo -= 1;
    }
    let mut hi = i;
    while hi + 1 < len && linked(hi, hi + 1) {
        hi += 1;
    }
    (lo, hi)
}

/// (a^T M b)^2 / ((a^T M a)(b^T M b))
pub fn mac_value(a: &[f64], b: &[f64], m: &SparseMat) -> Result<f64> {
    let mb = spmv(m, b);
    let ma = spmv(m, a);
    mac_from_products(a, &ma, b, &mb)
}

fn mac_from_products(a: &[f64], ma: &[f64], b: &[f64], mb: &[f64]) -> Result<f64> {
    let (aa, bb) = (dot(a, ma), dot(b, mb));
    if aa <= 0.0 || bb <= 0.0 {
        return Err(PlateError::Argument("MAC of a zero vector".into()));
    }
    Ok((dot(a, mb).powi(2) / (aa * bb)).clamp(0.0, 1.0))
}

/// MAC matrix: rows are the (fine-space) coarse vectors, columns the fine vectors.
pub fn mac_matrix(coarse: &[Vec<f64>], fine: &[Vec<f64>], m: &SparseMat) -> Result<Vec<Vec<f64>>> {
    let mf: Vec<Vec<f64>> = fine.par_iter().map(|f| spmv(m, f)).collect();
    coarse
        .par_iter()
        .map(|c| {
            let mc = spmv(m, c);
            fine.iter().zip(&mf).map(|(f, mfv)| mac_from_products(c, &mc, f, mfv)).collect()
        })
        .collect()
}

/// Squared M-norm of the projection of each fine vector onto span(coarse), relative to its
/// squared M-norm. Equals the MAC for a single coarse vector.
pub fn subspace_mac(coarse: &[Vec<f64>], fine: &[Vec<f64>], m: &SparseMat) -> Result<Vec<f64>> {
    let mut q: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for c in coarse {
        let mut v = c.clone();
        for _ in 0..2 {
            for (b, mb) in &q {
                let s = dot(&v, mb);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= s * y);
            }
        }
        let mv = spmv(m, &v);
        let nv = dot(&v, &mv).max(0.0).sqrt();
        if nv == 0.0 {
            return Err(PlateError::Argument("MAC of a zero or dependent coarse vector".into()));
        }
        q.push((v.iter().map(|x| x / nv).collect(), mv.iter().map(|x| x / nv).collect()));
    }
    fine.par_iter()
        .map(|f| {
            let mf = spmv(m, f);
            let ff = dot(f, &mf);
            if ff <= 0.0 {
                return Err(PlateError::Argument("MAC of a zero vector".into()));
            }
            Ok((q.iter().map(|(_, mb)| dot(f, mb).powi(2)).sum::<f64>() / ff).clamp(0.0, 1.0))
        })
        .collect()
}

/// Indices of `freqs` inside [lo - a, hi + a].
pub fn window(freqs: &[f64], lo: f64, hi: f64, a: f64) -> Vec<usize> {
    (0..freqs.len()).filter(|&j| freqs[j] >= lo - a && freqs[j] <= hi + a).collect()
}

/// Nearest fine frequency to the first coarse mode, expanded by the fine gap rule.
pub fn locate_fec(
    coarse: ModeSet,
    coarse_freqs: &[f64],
    fine_freqs: &[f64],
    cfg: &TrackingConfig,
) -> Result<Correspondence> {
    let set = &coarse_freqs[coarse.indices()];
    let (lo, hi) = (set[0], set[set.len() - 1]);
    let (l, h) = cfg.search_range(lo, hi);
    let cand = window(fine_freqs, l, h, 0.0);
    let best = cand
        .iter()
        .copied()
        .min_by(|&a, &b| (fine_freqs[a] - lo).abs().total_cmp(&(fine_freqs[b] - lo).abs()).then(a.cmp(&b)))
        .ok_or_else(|| PlateError::Tracking(format!("no fine mode near coarse mode {} ({lo})", coarse.start)))?;
    let thr = cfg.threshold(hi.max(fine_freqs[best]));
    let fine = detect_multiplicity_fec(fine_freqs, best, thr)?;
    Ok(Correspondence { coarse, fine, method: TrackMethod::Fec, score: (fine_freqs[best] - lo).abs() })
}

/// Largest subspace MAC over the widened band, expanded by consecutive MAC >= tau_mac.
/// `coarse_vectors` are the coarse set's vectors already expressed in the fine space.
pub fn locate_mac(
    coarse: ModeSet,
    coarse_freqs: &[f64],
    coarse_vectors: &[Vec<f64>],
    fine_freqs: &[f64],
    fine_vectors: &[Vec<f64>],
    m: &SparseMat,
    cfg: &TrackingConfig,
) -> Result<Correspondence> {
    let set = &coarse_freqs[coarse.indices()];
    let (lo, hi) = (set[0], set[set.len() - 1]);
    let (l, h) = cfg.search_range(lo, hi);
    let cand = window(fine_freqs, l, h, 0.0);
    if cand.is_empty() {
        return Err(PlateError::Tracking(format!("no fine mode near coarse mode {} ({lo})", coarse.start)));
    }
    let vecs: Vec<Vec<f64>> = cand.iter().map(|&j| fine_vectors[j].clone()).collect();
    let s = subspace_mac(coarse_vectors, &vecs, m)?;
    let (bk, &bs) = s
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("non-empty window");
    if bs < 1e-6 {
        return Err(PlateError::Tracking(format!("no fine mode resembles coarse mode {}", coarse.start)));
    }
    let (a, b) = expand_run(bk, cand.len(), |x, y| cand[y] == cand[x] + 1 && s[x].min(s[y]) >= cfg.tau_mac);
    Ok(Correspondence { coarse, fine: ModeSet { start: cand[a], n: b - a + 1 }, method: TrackMethod::Mac, score: bs })
}
