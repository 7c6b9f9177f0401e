//! Distribution distances/similarities and rank-based comparison of algorithms.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::{Error, Matrix, Result};

/// Simplex tolerance for inputs to [`score`].
pub const SIMPLEX_TOL: f64 = 1e-6;
/// Floor applied to predicted entries inside the KL logarithm.
pub const KL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Chebyshev,
    Clark,
    Canberra,
    Kl,
    Cosine,
    Intersection,
    Sorensen,
}

impl Measure {
    pub const ALL: [Measure; 7] = [
        Measure::Chebyshev,
        Measure::Clark,
        Measure::Canberra,
        Measure::Kl,
        Measure::Cosine,
        Measure::Intersection,
        Measure::Sorensen,
    ];

    pub fn higher_is_better(self) -> bool {
        matches!(self, Measure::Cosine | Measure::Intersection)
    }

    pub fn name(self) -> &'static str {
        match self {
            Measure::Chebyshev => "chebyshev",
            Measure::Clark => "clark",
            Measure::Canberra => "canberra",
            Measure::Kl => "kl",
            Measure::Cosine => "cosine",
            Measure::Intersection => "intersection",
            Measure::Sorensen => "sorensen",
        }
    }

    pub fn index(self) -> usize {
        Measure::ALL.iter().position(|&m| m == self).unwrap()
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Measure::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidSpec(format!("unknown measure `{s}`")))
    }
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn check_distribution(v: &[f64], which: &str) -> Result<()> {
    if v.iter().any(|&x| !x.is_finite() || x < -SIMPLEX_TOL) {
        return Err(Error::InvalidDistribution(format!("{which} has negative or non-finite entries")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidDistribution(format!("{which} sums to {s}")));
    }
    Ok(())
}

/// Scores a predicted distribution against the true one.
pub fn score(truth: &[f64], pred: &[f64], measure: Measure) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: pred.len(),
        });
    }
    check_distribution(truth, "truth")?;
    check_distribution(pred, "prediction")?;
    Ok(score_unchecked(truth, pred, measure))
}

/// Ratio `num/den` with the `0/0 = 0` convention.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn score_unchecked(d: &[f64], p: &[f64], measure: Measure) -> f64 {
    let pairs = d.iter().zip(p);
    match measure {
        Measure::Chebyshev => pairs.map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        Measure::Clark => pairs
            .map(|(a, b)| ratio(a - b, a + b).powi(2))
            .sum::<f64>()
            .sqrt(),
        Measure::Canberra => pairs.map(|(a, b)| ratio((a - b).abs(), a + b)).sum(),
        Measure::Kl => pairs
            .map(|(&a, &b)| if a > 0.0 { a * (a / b.max(KL_FLOOR)).ln() } else { 0.0 })
            .sum(),
        Measure::Cosine => {
            let dot: f64 = pairs.map(|(a, b)| a * b).sum();
            let na: f64 = d.iter().map(|a| a * a).sum();
            let nb: f64 = p.iter().map(|b| b * b).sum();
            ratio(dot, (na * nb).sqrt()).min(1.0)
        }
        Measure::Intersection => pairs.map(|(a, b)| a.min(*b)).sum(),
        Measure::Sorensen => {
            let num: f64 = pairs.clone().map(|(a, b)| (a - b).abs()).sum();
            let den: f64 = pairs.map(|(a, b)| a + b).sum();
            ratio(num, den)
        }
    }
}

/// Means and standard deviations of the seven measures over an evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub chebyshev: f64,
    pub clark: f64,
    pub canberra: f64,
    pub kl: f64,
    pub cosine: f64,
    pub intersection: f64,
    pub sorensen: f64,
    /// Standard deviations in [`Measure::ALL`] order.
    pub stds: [f64; 7],
    /// `n × 7` scores, row-major in [`Measure::ALL`] order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_instance: Option<Vec<[f64; 7]>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl MetricReport {
    fn from_means(means: [f64; 7], stds: [f64; 7]) -> Self {
        Self {
            chebyshev: means[0],
            clark: means[1],
            canberra: means[2],
            kl: means[3],
            cosine: means[4],
            intersection: means[5],
            sorensen: means[6],
            stds,
            per_instance: None,
            warnings: Vec::new(),
        }
    }

    pub fn get(&self, measure: Measure) -> f64 {
        self.means()[measure.index()]
    }

    /// Means in [`Measure::ALL`] order.
    pub fn means(&self) -> [f64; 7] {
        [
            self.chebyshev,
            self.clark,
            self.canberra,
            self.kl,
            self.cosine,
            self.intersection,
            self.sorensen,
        ]
    }

    /// Combines repeated runs: mean of the run means, sample standard deviation across runs.
    /// A single report is returned unchanged.
    pub fn aggregate(reports: &[MetricReport]) -> MetricReport {
        assert!(!reports.is_empty(), "nothing to aggregate");
        if reports.len() == 1 {
            return reports[0].clone();
        }
        let rows: Vec<[f64; 7]> = reports.iter().map(MetricReport::means).collect();
        let (means, stds) = column_moments(&rows);
        let mut out = MetricReport::from_means(means, stds);
        out.warnings = reports.iter().flat_map(|r| r.warnings.iter().cloned()).collect();
        out
    }

    /// One `name value` line per measure.
    pub fn summary_lines(&self) -> Vec<String> {
        Measure::ALL
            .iter()
            .map(|&m| format!("{} {:.6} ± {:.6}", m.name(), self.get(m), self.stds[m.index()]))
            .collect()
    }
}

fn column_moments(rows: &[[f64; 7]]) -> ([f64; 7], [f64; 7]) {
    let n = rows.len() as f64;
    let mut means = [0.0; 7];
    for r in rows {
        for k in 0..7 {
            means[k] += r[k] / n;
        }
    }
    let mut stds = [0.0; 7];
    if rows.len() > 1 {
        for r in rows {
            for k in 0..7 {
                stds[k] += (r[k] - means[k]).powi(2);
            }
        }
        for s in &mut stds {
            *s = (*s / (n - 1.0)).sqrt();
        }
    }
    (means, stds)
}

/// Scores every row of `pred` against `truth`. Standard deviations use the `n − 1` divisor and
/// are zero for a single instance.
pub fn report(truth: &Matrix, pred: &Matrix) -> Result<MetricReport> {
    if truth.shape() != pred.shape() {
        return Err(Error::ShapeMismatch(format!(
            "truth {:?} vs prediction {:?}",
            truth.shape(),
            pred.shape()
        )));
    }
    if truth.nrows() == 0 {
        return Err(Error::Validation("cannot score an empty evaluation set".into()));
    }
    let mut per_instance = Vec::with_capacity(truth.nrows());
    for i in 0..truth.nrows() {
        let t: Vec<f64> = truth.row(i).iter().copied().collect();
        let p: Vec<f64> = pred.row(i).iter().copied().collect();
        let mut row = [0.0; 7];
        for (k, &m) in Measure::ALL.iter().enumerate() {
            row[k] = score(&t, &p, m)?;
        }
        per_instance.push(row);
    }
    let (means, stds) = column_moments(&per_instance);
    let mut out = MetricReport::from_means(means, stds);
    out.per_instance = Some(per_instance);
    Ok(out)
}

/// Per-dataset ranks of K algorithms over N datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub algorithms: Vec<String>,
    pub datasets: Vec<String>,
    /// `N × K`.
    pub ranks: Vec<Vec<f64>>,
    pub average_ranks: Vec<f64>,
}

impl RankTable {
    /// Builds a table from explicit rank rows, computing the averages.
    pub fn from_ranks(algorithms: Vec<String>, datasets: Vec<String>, ranks: Vec<Vec<f64>>) -> Result<Self> {
        let k = algorithms.len();
        if ranks.len() != datasets.len() || ranks.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch("rank rows disagree with names".into()));
        }
        let n = ranks.len() as f64;
        let average_ranks = (0..k).map(|j| ranks.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        Ok(Self {
            algorithms,
            datasets,
            ranks,
            average_ranks,
        })
    }

    pub fn k(&self) -> usize {
        self.algorithms.len()
    }

    pub fn n(&self) -> usize {
        self.datasets.len()
    }

    /// CSV with a `dataset` column followed by one column per algorithm.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset");
        for a in &self.algorithms {
            out.push(',');
            out.push_str(a);
        }
        out.push('\n');
        for (name, row) in self.datasets.iter().zip(&self.ranks) {
            out.push_str(name);
            for r in row {
                out.push_str(&format!(",{r}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Ranks of one row of scores; rank 1 is best, ties share the mean of their positions.
pub fn rank_row(scores: &[f64], higher_is_better: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let c = scores[a].total_cmp(&scores[b]);
        if higher_is_better {
            c.reverse()
        } else {
            c
        }
    });
    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let shared = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = shared;
        }
        start = end;
    }
    ranks
}

/// Ranks an `N × K` score matrix row by row.
pub fn average_ranks(scores: &[Vec<f64>], higher_is_better: bool, algorithms: Vec<String>, datasets: Vec<String>) -> Result<RankTable> {
    if scores.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation("score table has missing or non-finite entries".into()));
    }
    let ranks = scores.iter().map(|row| rank_row(row, higher_is_better)).collect();
    RankTable::from_ranks(algorithms, datasets, ranks)
}

/// Friedman statistics `(χ²_F, F_F)`.
pub fn friedman(ranks: &RankTable) -> Result<(f64, f64)> {
    let (k, n) = (ranks.k() as f64, ranks.n() as f64);
    if ranks.k() < 3 || ranks.n() < 2 {
        return Err(Error::InvalidSpec(format!(
            "Friedman test needs K ≥ 3 and N ≥ 2, got K = {}, N = {}",
            ranks.k(),
            ranks.n()
        )));
    }
    let sum_sq: f64 = ranks.average_ranks.iter().map(|r| r * r).sum();
    let chi2 = 12.0 * n / (k * (k + 1.0)) * (sum_sq - k * (k + 1.0).powi(2) / 4.0);
    let denom = n * (k - 1.0) - chi2;
    if denom.abs() <= 1e-12 * n * k {
        return Err(Error::DegenerateRanks);
    }
    Ok((chi2, (n - 1.0) * chi2 / denom))
}

/// Upper `alpha` quantile of the F distribution with `(K−1, (K−1)(N−1))` degrees of freedom.
pub fn friedman_critical_value(k: usize, n: usize, alpha: f64) -> Result<f64> {
    if k < 2 || n < 2 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidSpec("critical value needs K ≥ 2, N ≥ 2, 0 < α < 1".into()));
    }
    let d1 = (k - 1) as f64;
    let d2 = ((k - 1) * (n - 1)) as f64;
    let dist = FisherSnedecor::new(d1, d2).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    Ok(dist.inverse_cdf(1.0 - alpha))
}

/// Whether `F_F` exceeds the critical value, i.e. the algorithms do not perform equally.
pub fn rejects_equal_performance(f_f: f64, critical_value: f64) -> bool {
    f_f > critical_value
}

/// Critical difference `q_α √(k(k+1)/(6n))` of the post-hoc test.
pub fn critical_difference(q_alpha: f64, k: usize, n: usize) -> f64 {
    assert!(q_alpha > 0.0 && k >= 2 && n >= 1, "invalid critical-difference arguments");
    let (k, n) = (k as f64, n as f64);
    q_alpha * (k * (k + 1.0) / (6.0 * n)).sqrt()
}
