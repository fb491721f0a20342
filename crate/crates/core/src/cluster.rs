//! Exceedance-probability risk clustering.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::compare::Outcome;
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::sampler::PosteriorSamples;

pub const DEFAULT_TR: f64 = 1.0;
pub const DEFAULT_TP: f64 = 0.9;

/// Area-versus-locality category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    HH,
    HL,
    LH,
    LL,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::HH, Category::HL, Category::LH, Category::LL];

    pub fn area_high(self) -> bool {
        matches!(self, Category::HH | Category::HL)
    }

    pub fn locality_high(self) -> bool {
        matches!(self, Category::HH | Category::LH)
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::HH => "HH",
            Category::HL => "HL",
            Category::LH => "LH",
            Category::LL => "LL",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Category {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HH" => Ok(Category::HH),
            "HL" => Ok(Category::HL),
            "LH" => Ok(Category::LH),
            "LL" => Ok(Category::LL),
            other => Err(Error::InvalidParameter(format!("unknown category {other:?}"))),
        }
    }
}

/// Fraction of draws (draws × areas) strictly above `tr`, per area.
pub fn exceedance_prob(draws: &[Vec<f64>], tr: f64) -> Vec<f64> {
    let Some(first) = draws.first() else {
        return Vec::new();
    };
    let b = draws.len() as f64;
    (0..first.len())
        .map(|i| draws.iter().filter(|d| d[i] > tr).count() as f64 / b)
        .collect()
}

/// Per draw, the mean of each area's neighbours.
pub fn locality_risk(draws: &[Vec<f64>], graph: &SpatialGraph) -> Result<Vec<Vec<f64>>> {
    draws
        .iter()
        .map(|d| {
            if d.len() != graph.n() {
                return Err(Error::DimensionMismatch(format!(
                    "draw of length {} on a graph with {} areas",
                    d.len(),
                    graph.n()
                )));
            }
            Ok(graph
                .neighbor_sum(d)
                .into_iter()
                .zip(graph.degrees())
                .map(|(s, &deg)| s / deg as f64)
                .collect())
        })
        .collect()
}

pub fn classify(p_area: &[f64], p_locality: &[f64], tp: f64) -> Vec<Category> {
    p_area
        .iter()
        .zip(p_locality)
        .map(|(&a, &l)| match (a > tp, l > tp) {
            (true, true) => Category::HH,
            (true, false) => Category::HL,
            (false, true) => Category::LH,
            (false, false) => Category::LL,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BivariateLabel {
    pub y1: Category,
    pub y2: Category,
}

impl BivariateLabel {
    /// Cell name such as `HH,LL`, ordered mortality then prevalence.
    pub fn cell(&self) -> String {
        format!("{},{}", self.y1, self.y2)
    }

    /// Within-area label such as `M:H-P:L`.
    pub fn collapsed(&self) -> String {
        let hl = |high: bool| if high { 'H' } else { 'L' };
        format!("M:{}-P:{}", hl(self.y1.area_high()), hl(self.y2.area_high()))
    }
}

/// Cross-tabulation counts indexed `[y1 category][y2 category]`.
pub type CrossTab = [[usize; 4]; 4];

pub fn bivariate_classify(k1: &[Category], k2: &[Category]) -> Result<(Vec<BivariateLabel>, CrossTab)> {
    if k1.len() != k2.len() {
        return Err(Error::LengthMismatch(k1.len(), k2.len()));
    }
    let mut tab = [[0usize; 4]; 4];
    let labels = k1
        .iter()
        .zip(k2)
        .map(|(&y1, &y2)| {
            tab[y1.index()][y2.index()] += 1;
            BivariateLabel { y1, y2 }
        })
        .collect();
    Ok((labels, tab))
}

/// Counts per category in [`Category::ALL`] order.
pub fn category_counts(cats: &[Category]) -> [usize; 4] {
    let mut out = [0; 4];
    for c in cats {
        out[c.index()] += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeClusters {
    pub outcome: Outcome,
    pub p_area: Vec<f64>,
    pub p_locality: Vec<f64>,
    pub categories: Vec<Category>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub tr: f64,
    pub tp: f64,
    pub y1: OutcomeClusters,
    pub y2: OutcomeClusters,
    pub bivariate: Vec<BivariateLabel>,
    pub crosstab: CrossTab,
}

/// Clusters one outcome from risk draws (draws × areas).
pub fn cluster_outcome(outcome: Outcome, draws: &[Vec<f64>], graph: &SpatialGraph, tr: f64, tp: f64) -> Result<OutcomeClusters> {
    let p_area = exceedance_prob(draws, tr);
    let p_locality = exceedance_prob(&locality_risk(draws, graph)?, tr);
    let categories = classify(&p_area, &p_locality, tp);
    Ok(OutcomeClusters {
        outcome,
        p_area,
        p_locality,
        categories,
    })
}

pub fn cluster_from_draws(rho1: &[Vec<f64>], risk2: &[Vec<f64>], graph: &SpatialGraph, tr: f64, tp: f64) -> Result<ClusterReport> {
    if !(0.0..=1.0).contains(&tp) {
        return Err(Error::InvalidParameter(format!("T_P must lie in [0, 1], got {tp}")));
    }
    let y1 = cluster_outcome(Outcome::Y1, rho1, graph, tr, tp)?;
    let y2 = cluster_outcome(Outcome::Y2, risk2, graph, tr, tp)?;
    let (bivariate, crosstab) = bivariate_classify(&y1.categories, &y2.categories)?;
    Ok(ClusterReport {
        tr,
        tp,
        y1,
        y2,
        bivariate,
        crosstab,
    })
}

/// Mortality from `ρ₁` draws, prevalence from the areal `exp(ζ₂)` draws.
pub fn cluster_report(samples: &PosteriorSamples, graph: &SpatialGraph, tr: f64, tp: f64) -> Result<ClusterReport> {
    let rho1: Vec<Vec<f64>> = samples.chains.iter().flat_map(|c| c.rho1.iter().cloned()).collect();
    let risk2: Vec<Vec<f64>> = samples
        .chains
        .iter()
        .flat_map(|c| c.zeta2.iter().map(|z| z.iter().map(|v| v.exp()).collect()))
        .collect();
    cluster_from_draws(&rho1, &risk2, graph, tr, tp)
}
