//! Agreement statistics: MAE±STD, weighted kappa, ICC(2,1), Bland-Altman
//! limits of agreement, ordinary least squares, and the Wilcoxon
//! signed-rank test.
//!
//! Kappa works on the fixed 21-category grade scale (0..=100 step 5) even
//! when categories are unobserved, so expected proportions stay well-defined
//! across folds.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::synth::{round_to_grade, Grade};

const GRADE_BINS: usize = 21;

/// n subjects x k raters, no missing entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingTable {
    n: usize,
    k: usize,
    values: Vec<f64>,
    labels: Vec<String>,
}

impl RatingTable {
    pub fn new(n: usize, k: usize, values: Vec<f64>, labels: Vec<String>) -> Result<RatingTable> {
        if n < 2 || k < 2 {
            return Err(Error::InvalidArgument(format!(
                "rating table needs n >= 2 subjects and k >= 2 raters, got {n} x {k}"
            )));
        }
        if values.len() != n * k {
            return Err(Error::InvalidArgument(format!(
                "rating table payload {} does not match {n} x {k}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "rating table entries must be finite".into(),
            ));
        }
        if !labels.is_empty() && labels.len() != k {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {k} raters",
                labels.len()
            )));
        }
        Ok(RatingTable {
            n,
            k,
            values,
            labels,
        })
    }

    /// Two-column table from paired series.
    pub fn from_pair(a: &[f64], b: &[f64]) -> Result<RatingTable> {
        if a.len() != b.len() {
            return Err(Error::InvalidArgument(format!(
                "paired series lengths differ: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        let mut values = Vec::with_capacity(2 * a.len());
        for i in 0..a.len() {
            values.push(a[i]);
            values.push(b[i]);
        }
        RatingTable::new(a.len(), 2, values, Vec::new())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n, self.k)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    #[inline]
    pub fn at(&self, subject: usize, rater: usize) -> f64 {
        self.values[subject * self.k + rater]
    }
}

/// Mean absolute error and the population standard deviation of |pred-truth|.
pub fn mae_std(pred: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need equal non-empty series, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let abs: Vec<f64> = pred
        .iter()
        .zip(truth.iter())
        .map(|(&p, &t)| (p - t).abs())
        .collect();
    let n = abs.len() as f64;
    let mean = abs.iter().sum::<f64>() / n;
    let var = abs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    Ok((mean, libm::sqrt(var)))
}

/// Disagreement weight scheme for kappa.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum KappaWeighting {
    Linear,
    Quadratic,
}

impl KappaWeighting {
    #[inline]
    fn weight(&self, i: usize, j: usize) -> f64 {
        let d = (i as f64 - j as f64).abs() / (GRADE_BINS - 1) as f64;
        match self {
            KappaWeighting::Linear => d,
            KappaWeighting::Quadratic => d * d,
        }
    }
}

/// Weighted kappa over the full 21x21 grade table.
///
/// kappa = 1 - sum(w * O) / sum(w * E), with E the outer product of the
/// marginals. Errors when both raters are constant and identical (zero
/// expected disagreement).
pub fn weighted_kappa(a: &[Grade], b: &[Grade], weighting: KappaWeighting) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "weighted kappa needs equal lengths >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let mut observed = [[0.0f64; GRADE_BINS]; GRADE_BINS];
    let mut marg_a = [0.0f64; GRADE_BINS];
    let mut marg_b = [0.0f64; GRADE_BINS];
    for (&ga, &gb) in a.iter().zip(b.iter()) {
        observed[ga.bin()][gb.bin()] += 1.0 / n;
        marg_a[ga.bin()] += 1.0 / n;
        marg_b[gb.bin()] += 1.0 / n;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..GRADE_BINS {
        for j in 0..GRADE_BINS {
            let w = weighting.weight(i, j);
            num += w * observed[i][j];
            den += w * marg_a[i] * marg_b[j];
        }
    }
    if den == 0.0 {
        return Err(Error::UndefinedKappa);
    }
    Ok(1.0 - num / den)
}

/// ICC(2,1): single-rating, absolute-agreement, two-way random effects.
pub fn icc_2_1(table: &RatingTable) -> Result<f64> {
    let (n, k) = table.shape();
    let nf = n as f64;
    let kf = k as f64;
    let grand: f64 = table.values.iter().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = (0..n)
        .map(|i| (0..k).map(|j| table.at(i, j)).sum::<f64>() / kf)
        .collect();
    let col_means: Vec<f64> = (0..k)
        .map(|j| (0..n).map(|i| table.at(i, j)).sum::<f64>() / nf)
        .collect();
    let msr = kf * row_means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (nf - 1.0);
    let msc = nf * col_means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (kf - 1.0);
    let mut sse = 0.0;
    for i in 0..n {
        for j in 0..k {
            let r = table.at(i, j) - row_means[i] - col_means[j] + grand;
            sse += r * r;
        }
    }
    let mse = sse / ((nf - 1.0) * (kf - 1.0));
    let den = msr + (kf - 1.0) * mse + (kf / nf) * (msc - mse);
    if den == 0.0 || !den.is_finite() {
        return Err(Error::UndefinedIcc);
    }
    Ok((msr - mse) / den)
}

/// Mean difference and 1.96-sigma limits of agreement.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlandAltman {
    pub mean_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
}

/// Bland-Altman analysis of paired series (sample std for the limits).
pub fn bland_altman(a: &[f64], b: &[f64]) -> Result<BlandAltman> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "Bland-Altman needs equal lengths >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b.iter()).map(|(&x, &y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let sd = libm::sqrt(var);
    Ok(BlandAltman {
        mean_diff: mean,
        loa_low: mean - 1.96 * sd,
        loa_high: mean + 1.96 * sd,
    })
}

/// Ordinary least squares fit y = slope * x + intercept.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "linear fit needs equal lengths >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y.iter()) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateFit);
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Two-sided Wilcoxon signed-rank p-value.
///
/// Zero differences are dropped; |d| gets average ranks on ties. Exact null
/// distribution (conditional on the observed ranks) for n <= 25, normal
/// approximation with tie correction and continuity correction otherwise.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "signed-rank test needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| x - y)
        .filter(|&v| v != 0.0)
        .collect();
    let n = d.len();
    if n == 0 {
        return Err(Error::UndefinedTest);
    }

    // average ranks of |d|, doubled so ties stay integral
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].abs().partial_cmp(&d[j].abs()).expect("finite diffs"));
    let mut rank2 = vec![0u64; n];
    let mut tie_sizes: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d[order[j + 1]].abs() == d[order[i]].abs() {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the average (i + j + 2) / 2; doubled: i + j + 2
        let doubled = (i + j + 2) as u64;
        for &idx in &order[i..=j] {
            rank2[idx] = doubled;
        }
        tie_sizes.push(j - i + 1);
        i = j + 1;
    }

    let w_plus2: u64 = d
        .iter()
        .zip(rank2.iter())
        .filter(|(&di, _)| di > 0.0)
        .map(|(_, &r)| r)
        .sum();
    let total2: u64 = rank2.iter().sum();
    let w_min2 = w_plus2.min(total2 - w_plus2);

    if n <= 25 {
        // subset-sum counts over the doubled ranks
        let mut counts = vec![0u64; total2 as usize + 1];
        counts[0] = 1;
        for &r in &rank2 {
            for s in (r as usize..counts.len()).rev() {
                counts[s] += counts[s - r as usize];
            }
        }
        let le: u64 = counts[..=w_min2 as usize].iter().sum();
        let p = 2.0 * le as f64 / libm::pow(2.0, n as f64);
        Ok(p.min(1.0))
    } else {
        let nf = n as f64;
        let mu = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = tie_sizes
            .iter()
            .map(|&t| {
                let tf = t as f64;
                tf * tf * tf - tf
            })
            .sum::<f64>()
            / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let w = w_min2 as f64 / 2.0;
        let z = ((mu - w - 0.5) / libm::sqrt(var)).max(0.0);
        Ok((libm::erfc(z / core::f64::consts::SQRT_2)).min(1.0))
    }
}

/// Full agreement bundle for one pattern.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AgreementReport {
    pub mae: f64,
    pub mae_std: f64,
    pub wk: f64,
    pub icc: f64,
    pub bland_altman: BlandAltman,
    pub fit: (f64, f64),
    pub wilcoxon_p: Option<f64>,
}

/// Bundle of every metric above. Kappa is computed on the series rounded to
/// grades; the fit regresses pred on truth. Wilcoxon is absent when all
/// paired differences are zero.
pub fn agreement_report(
    pred: &[f64],
    truth: &[f64],
    weighting: KappaWeighting,
) -> Result<AgreementReport> {
    let (mae, mae_sd) = mae_std(pred, truth)?;
    let gp: Vec<Grade> = pred.iter().map(|&v| round_to_grade(v)).collect::<Result<_>>()?;
    let gt: Vec<Grade> = truth.iter().map(|&v| round_to_grade(v)).collect::<Result<_>>()?;
    let wk = weighted_kappa(&gp, &gt, weighting)?;
    let icc = icc_2_1(&RatingTable::from_pair(pred, truth)?)?;
    let ba = bland_altman(pred, truth)?;
    let fit = linear_fit(truth, pred)?;
    let wilcoxon_p = match wilcoxon_signed_rank(pred, truth) {
        Ok(p) => Some(p),
        Err(Error::UndefinedTest) => None,
        Err(e) => return Err(e),
    };
    Ok(AgreementReport {
        mae,
        mae_std: mae_sd,
        wk,
        icc,
        bland_altman: ba,
        fit,
        wilcoxon_p,
    })
}
