//! Wilcoxon signed-rank test for paired samples.
//!
//! Zero differences are dropped, tied absolute differences share their
//! average rank. Up to [`WilcoxonConfig::exact_max_n`] non-zero pairs the
//! p-value is exact: the null distribution of `W+` is counted over all `2^n`
//! sign assignments by dynamic programming on doubled ranks (which are
//! integers even with ties). Above that the normal approximation with tie
//! correction and continuity correction is used.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSamples {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PairedSamples {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::invalid(format!(
                "paired samples differ in length: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        if a.is_empty() {
            return Err(Error::invalid("paired samples are empty"));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::invalid("paired samples contain non-finite values"));
        }
        Ok(Self { a, b })
    }

    pub fn differences(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(x, y)| x - y).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// `a` tends to exceed `b`.
    Greater,
    /// `a` tends to fall below `b`.
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    Normal,
    /// Every difference was zero.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonConfig {
    pub alternative: Alternative,
    pub exact_max_n: usize,
}

impl Default for WilcoxonConfig {
    fn default() -> Self {
        Self {
            alternative: Alternative::TwoSided,
            exact_max_n: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)` for the two-sided test, `W+` for one-sided tests.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub method: PValueMethod,
}

impl WilcoxonResult {
    pub fn is_degenerate(&self) -> bool {
        self.method == PValueMethod::Degenerate
    }
}

/// Two-sided test with the default exact/normal switch-over.
pub fn wilcoxon_signed_rank(ps: &PairedSamples) -> WilcoxonResult {
    wilcoxon_signed_rank_with(ps, &WilcoxonConfig::default())
}

pub fn wilcoxon_signed_rank_with(ps: &PairedSamples, cfg: &WilcoxonConfig) -> WilcoxonResult {
    let ranked = rank_differences(&ps.differences());
    let n = ranked.len();
    if n == 0 {
        return WilcoxonResult {
            statistic: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            p_value: 1.0,
            n_effective: 0,
            method: PValueMethod::Degenerate,
        };
    }
    let doubled_plus: u64 = ranked.iter().filter(|r| r.positive).map(|r| r.doubled_rank).sum();
    let doubled_total = (n * (n + 1)) as u64;
    let doubled_minus = doubled_total - doubled_plus;
    let w_plus = doubled_plus as f64 / 2.0;
    let w_minus = doubled_minus as f64 / 2.0;
    let statistic = match cfg.alternative {
        Alternative::TwoSided => w_plus.min(w_minus),
        _ => w_plus,
    };

    let (p_value, method) = if n <= cfg.exact_max_n.min(EXACT_HARD_LIMIT) {
        let ranks: Vec<u64> = ranked.iter().map(|r| r.doubled_rank).collect();
        let dist = null_counts(&ranks);
        let total = 2f64.powi(n as i32);
        let le = |x: u64| dist[..=x as usize].iter().sum::<u128>();
        let ge = |x: u64| dist[x as usize..].iter().sum::<u128>();
        let p = match cfg.alternative {
            Alternative::TwoSided => {
                let count = le(doubled_plus.min(doubled_minus));
                (2.0 * count as f64 / total).min(1.0)
            }
            Alternative::Greater => ge(doubled_plus) as f64 / total,
            Alternative::Less => le(doubled_plus) as f64 / total,
        };
        (p, PValueMethod::Exact)
    } else {
        (normal_p(&ranked, w_plus, cfg.alternative), PValueMethod::Normal)
    };

    WilcoxonResult {
        statistic,
        w_plus,
        w_minus,
        p_value,
        n_effective: n,
        method,
    }
}

/// Beyond this the u128 counts of the exact distribution could overflow.
const EXACT_HARD_LIMIT: usize = 120;

#[derive(Debug, Clone, Copy)]
struct Ranked {
    doubled_rank: u64,
    positive: bool,
    /// Size of the tie group this rank belongs to.
    tie: usize,
}

fn rank_differences(diffs: &[f64]) -> Vec<Ranked> {
    let mut nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    nz.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    let mut out = Vec::with_capacity(nz.len());
    let mut i = 0;
    while i < nz.len() {
        let mut j = i;
        while j + 1 < nz.len() && nz[j + 1].abs() == nz[i].abs() {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share (i+1 + j+1) / 2; doubled that is an integer.
        let doubled = (i + 1 + j + 1) as u64;
        for d in &nz[i..=j] {
            out.push(Ranked {
                doubled_rank: doubled,
                positive: *d > 0.0,
                tie: j - i + 1,
            });
        }
        i = j + 1;
    }
    out
}

/// `counts[s]` = number of sign assignments whose doubled `W+` equals `s`.
fn null_counts(doubled_ranks: &[u64]) -> Vec<u128> {
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0u128; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0 {
                counts[s + r] += c;
            }
        }
        reach += r;
    }
    counts
}

fn normal_p(ranked: &[Ranked], w_plus: f64, alternative: Alternative) -> f64 {
    let n = ranked.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < ranked.len() {
        let t = ranked[i].tie as f64;
        tie_term += t * t * t - t;
        i += ranked[i].tie;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return 1.0;
    }
    let upper_tail = |z: f64| 0.5 * erfc(z / std::f64::consts::SQRT_2);
    match alternative {
        Alternative::TwoSided => {
            let z = (((w_plus - mean).abs() - 0.5) / sd).max(0.0);
            (2.0 * upper_tail(z)).min(1.0)
        }
        Alternative::Greater => upper_tail((w_plus - mean - 0.5) / sd),
        Alternative::Less => 1.0 - upper_tail((w_plus - mean + 0.5) / sd),
    }
}
