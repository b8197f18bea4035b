//! Retrieval evaluation: P@1/P@5/R@1000/MRR, paired significance testing,
//! the late-fusion weight grid search, creator-attribute ablation, and the
//! six-column run-file format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CreatorAttribute, TrainingPair};
use crate::error::{Error, Result};
use crate::retrieval::RankedList;

/// Binary relevance judgments: every embedded tweet of an article is
/// relevant to it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Qrels {
    map: BTreeMap<String, BTreeSet<String>>,
}

impl Qrels {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a TrainingPair>) -> Self {
        let mut map: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for pair in pairs {
            map.entry(pair.article_id.clone())
                .or_default()
                .insert(pair.tweet_id.clone());
        }
        Qrels { map }
    }

    /// Parses `article_id<TAB>tweet_id` lines.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (article_id, tweet_id) = line
                .split_once('\t')
                .ok_or_else(|| Error::MalformedLine("qrels", lineno + 1, "missing tab".into()))?;
            map.entry(article_id.to_string())
                .or_default()
                .insert(tweet_id.to_string());
        }
        Ok(Qrels { map })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Qrels::from_tsv(&std::fs::read_to_string(path)?)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (article_id, tweets) in &self.map {
            for tweet_id in tweets {
                let _ = writeln!(out, "{article_id}\t{tweet_id}");
            }
        }
        out
    }

    pub fn relevant(&self, article_id: &str) -> Option<&BTreeSet<String>> {
        self.map.get(article_id)
    }

    pub fn queries(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    P1,
    P5,
    R1000,
    Mrr,
}

impl MetricName {
    pub const ALL: [MetricName; 4] = [
        MetricName::P1,
        MetricName::P5,
        MetricName::R1000,
        MetricName::Mrr,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MetricName::P1 => "p@1",
            MetricName::P5 => "p@5",
            MetricName::R1000 => "r@1000",
            MetricName::Mrr => "mrr",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "p@1" | "p1" => Some(MetricName::P1),
            "p@5" | "p5" => Some(MetricName::P5),
            "r@1000" | "r1000" | "recall" => Some(MetricName::R1000),
            "mrr" => Some(MetricName::Mrr),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub p1: f64,
    pub p5: f64,
    pub r1000: f64,
    pub mrr: f64,
}

impl QueryMetrics {
    pub fn get(&self, metric: MetricName) -> f64 {
        match metric {
            MetricName::P1 => self.p1,
            MetricName::P5 => self.p5,
            MetricName::R1000 => self.r1000,
            MetricName::Mrr => self.mrr,
        }
    }
}

/// Per-query metrics (sorted by query id) and their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_query: Vec<QueryMetrics>,
    pub mean_p1: f64,
    pub mean_p5: f64,
    pub mean_r1000: f64,
    pub mean_mrr: f64,
}

impl MetricReport {
    pub fn mean(&self, metric: MetricName) -> f64 {
        match metric {
            MetricName::P1 => self.mean_p1,
            MetricName::P5 => self.mean_p5,
            MetricName::R1000 => self.mean_r1000,
            MetricName::Mrr => self.mean_mrr,
        }
    }

    /// Per-query values in query-id order, for paired testing.
    pub fn metric_vector(&self, metric: MetricName) -> Vec<f64> {
        self.per_query.iter().map(|q| q.get(metric)).collect()
    }

    pub fn query_ids(&self) -> Vec<&str> {
        self.per_query.iter().map(|q| q.query_id.as_str()).collect()
    }
}

fn precision_at(items: &[(String, f64)], relevant: &BTreeSet<String>, k: usize) -> f64 {
    let hits = items
        .iter()
        .take(k)
        .filter(|(id, _)| relevant.contains(id))
        .count();
    hits as f64 / k as f64
}

/// P@1, P@5, R@1000 (relevant found in the top 1000 over total relevant),
/// and MRR (reciprocal rank of the first relevant item, 0 when absent).
pub fn compute_metrics(runs: &[RankedList], qrels: &Qrels) -> Result<MetricReport> {
    if runs.is_empty() {
        return Err(Error::EmptyInput("runs"));
    }
    let mut per_query = Vec::with_capacity(runs.len());
    for run in runs {
        let relevant = qrels
            .relevant(&run.query_id)
            .ok_or_else(|| Error::UnknownId {
                entity: "qrels query",
                id: run.query_id.clone(),
            })?;
        let found_1000 = run
            .items
            .iter()
            .take(1000)
            .filter(|(id, _)| relevant.contains(id))
            .count();
        let mrr = run
            .items
            .iter()
            .position(|(id, _)| relevant.contains(id))
            .map_or(0.0, |pos| 1.0 / (pos + 1) as f64);
        per_query.push(QueryMetrics {
            query_id: run.query_id.clone(),
            p1: precision_at(&run.items, relevant, 1),
            p5: precision_at(&run.items, relevant, 5),
            r1000: found_1000 as f64 / relevant.len() as f64,
            mrr,
        });
    }
    per_query.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    let n = per_query.len() as f64;
    let mean = |f: fn(&QueryMetrics) -> f64| per_query.iter().map(f).sum::<f64>() / n;
    Ok(MetricReport {
        mean_p1: mean(|q| q.p1),
        mean_p5: mean(|q| q.p5),
        mean_r1000: mean(|q| q.r1000),
        mean_mrr: mean(|q| q.mrr),
        per_query,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    /// Two-tailed p below 0.05.
    pub significant: bool,
}

/// Two-sided paired Student's t-test on the per-query differences a - b.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::EmptyInput("need at least two paired samples"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let df = n - 1;
    let (t, p) = if sd == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = mean / (sd / (n as f64).sqrt());
        (t, student_t_two_tailed_p(t, df))
    };
    Ok(TTestResult {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: p,
        significant: p < 0.05,
    })
}

// Student's t CDF through the regularized incomplete beta function,
// evaluated with the standard continued fraction (modified Lentz).

const LANCZOS: [f64; 8] = [
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

fn ln_gamma(x: f64) -> f64 {
    // Only called with x >= 0.5 here (a = df/2, b = 1/2, and their sum).
    let x = x - 1.0;
    let mut acc = 0.999_999_999_999_809_9;
    for (i, &c) in LANCZOS.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const FPMIN: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Two-tailed p-value of Student's t with `df` degrees of freedom:
/// I_x(df/2, 1/2) at x = df / (df + t^2).
pub fn student_t_two_tailed_p(t: f64, df: usize) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    let dff = df as f64;
    let x = dff / (dff + t * t);
    regularized_incomplete_beta(dff / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Grid-search outcome for the late fusion weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaSearch {
    pub best_alpha: f64,
    /// (alpha, mean dev MRR) in grid order.
    pub trace: Vec<(f64, f64)>,
}

pub fn default_alpha_grid() -> Vec<f64> {
    (0..=20).map(|i| f64::from(i) / 20.0).collect()
}

/// Picks the grid weight maximizing mean dev MRR; ties go to the smaller
/// alpha.
pub fn grid_search_late_weight(
    mut dev_eval: impl FnMut(f64) -> Result<MetricReport>,
    grid: &[f64],
) -> Result<AlphaSearch> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("alpha grid"));
    }
    for &alpha in grid {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::WeightOutOfRange(alpha));
        }
    }
    let mut trace = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &alpha in grid {
        let mrr = dev_eval(alpha)?.mean_mrr;
        trace.push((alpha, mrr));
        best = match best {
            None => Some((alpha, mrr)),
            Some((ba, bm)) if mrr > bm || (mrr == bm && alpha < ba) => Some((alpha, mrr)),
            keep => keep,
        };
    }
    Ok(AlphaSearch {
        best_alpha: best.unwrap().0,
        trace,
    })
}

pub const ABLATION_FULL: &str = "none";
pub const ABLATION_NO_CONTEXT: &str = "all-excluded";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub average_test_loss: Option<f64>,
    pub diverged: bool,
}

/// Average test loss per configuration, keyed by the excluded attribute
/// (plus "none" for all attributes and "all-excluded" for no context).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: BTreeMap<String, AblationRow>,
}

impl AblationReport {
    pub fn loss(&self, label: &str) -> Option<f64> {
        self.rows.get(label).and_then(|r| r.average_test_loss)
    }
}

/// Runs one full train-and-evaluate cycle per configuration: all attributes,
/// each single exclusion, and no context. A failing or non-finite cycle is
/// recorded as a diverged row rather than aborting the sweep.
pub fn run_ablation(
    attributes: &[CreatorAttribute],
    mut train_and_eval: impl FnMut(&BTreeSet<CreatorAttribute>) -> Result<f64>,
) -> AblationReport {
    let all: BTreeSet<CreatorAttribute> = attributes.iter().copied().collect();
    let mut configs: Vec<(String, BTreeSet<CreatorAttribute>)> =
        vec![(ABLATION_FULL.to_string(), all.clone())];
    for &attr in attributes {
        let mut included = all.clone();
        included.remove(&attr);
        configs.push((attr.prefix().to_string(), included));
    }
    configs.push((ABLATION_NO_CONTEXT.to_string(), BTreeSet::new()));

    let mut rows = BTreeMap::new();
    for (label, included) in configs {
        let row = match train_and_eval(&included) {
            Ok(loss) if loss.is_finite() => AblationRow {
                average_test_loss: Some(loss),
                diverged: false,
            },
            _ => AblationRow {
                average_test_loss: None,
                diverged: true,
            },
        };
        rows.insert(label, row);
    }
    AblationReport { rows }
}

/// Renders runs as six-column lines:
/// `<query_id> Q0 <tweet_id> <rank> <score> <tag>`, rank from 1, score with
/// six decimal places. Byte-deterministic for identical input.
pub fn emit_run_file(runs: &[RankedList], tag: &str) -> String {
    let mut out = String::new();
    for run in runs {
        for (i, (tweet_id, score)) in run.items.iter().enumerate() {
            let _ = writeln!(
                out,
                "{} Q0 {} {} {:.6} {}",
                run.query_id,
                tweet_id,
                i + 1,
                score,
                tag
            );
        }
    }
    out
}

/// Parses a six-column run file back into per-query ranked lists, ordered by
/// query id.
pub fn parse_run_file(text: &str) -> Result<Vec<RankedList>> {
    let mut by_query: BTreeMap<String, Vec<(u32, String, f64)>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::MalformedLine(
                "run file",
                lineno + 1,
                format!("expected 6 columns, got {}", fields.len()),
            ));
        }
        let rank: u32 = fields[3]
            .parse()
            .map_err(|e| Error::MalformedLine("run file", lineno + 1, format!("bad rank: {e}")))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|e| Error::MalformedLine("run file", lineno + 1, format!("bad score: {e}")))?;
        by_query.entry(fields[0].to_string()).or_default().push((
            rank,
            fields[2].to_string(),
            score,
        ));
    }
    let mut runs = Vec::with_capacity(by_query.len());
    for (query_id, mut items) in by_query {
        items.sort_by_key(|(rank, _, _)| *rank);
        let items: Vec<(String, f64)> = items
            .into_iter()
            .map(|(_, id, score)| (id, score))
            .collect();
        let k = items.len();
        runs.push(RankedList::new(query_id, items, k.max(1))?);
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(query: &str, ids: &[&str]) -> RankedList {
        let items: Vec<(String, f64)> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), 1.0 - i as f64 * 0.01))
            .collect();
        let k = items.len();
        RankedList::new(query, items, k).unwrap()
    }

    fn qrels(entries: &[(&str, &[&str])]) -> Qrels {
        let pairs: Vec<TrainingPair> = entries
            .iter()
            .flat_map(|(a, ts)| ts.iter().map(|t| TrainingPair::new(*a, *t)))
            .collect();
        Qrels::from_pairs(&pairs)
    }

    #[test]
    fn metrics_relevant_at_rank_one() {
        let q = qrels(&[("a1", &["t1"])]);
        let report = compute_metrics(&[run("a1", &["t1", "x", "y", "z", "w"])], &q).unwrap();
        let m = &report.per_query[0];
        assert_eq!(m.p1, 1.0);
        assert!((m.p5 - 0.2).abs() < 1e-12);
        assert_eq!(m.r1000, 1.0);
        assert_eq!(m.mrr, 1.0);
    }

    #[test]
    fn metrics_relevant_at_rank_three() {
        let q = qrels(&[("a1", &["t1"])]);
        let report = compute_metrics(&[run("a1", &["x", "y", "t1", "z", "w"])], &q).unwrap();
        let m = &report.per_query[0];
        assert_eq!(m.p1, 0.0);
        assert!((m.p5 - 0.2).abs() < 1e-12);
        assert_eq!(m.r1000, 1.0);
        assert_eq!(m.mrr, 1.0 / 3.0);
    }

    #[test]
    fn metrics_two_relevant_at_ranks_two_and_seven() {
        let q = qrels(&[("a1", &["r1", "r2"])]);
        let report =
            compute_metrics(&[run("a1", &["x", "r1", "y", "z", "w", "v", "r2"])], &q).unwrap();
        let m = &report.per_query[0];
        assert_eq!(m.p1, 0.0);
        assert!((m.p5 - 0.2).abs() < 1e-12);
        assert_eq!(m.r1000, 1.0);
        assert_eq!(m.mrr, 0.5);
    }

    #[test]
    fn metrics_no_relevant_found() {
        let q = qrels(&[("a1", &["t1"])]);
        let report = compute_metrics(&[run("a1", &["x", "y"])], &q).unwrap();
        assert_eq!(report.per_query[0].mrr, 0.0);
        assert_eq!(report.per_query[0].r1000, 0.0);
    }

    #[test]
    fn metrics_missing_query_errors() {
        let q = qrels(&[("a1", &["t1"])]);
        assert!(matches!(
            compute_metrics(&[run("ghost", &["t1"])], &q),
            Err(Error::UnknownId { .. })
        ));
    }

    #[test]
    fn metrics_means_average_per_query() {
        let q = qrels(&[("a1", &["t1"]), ("a2", &["t2"])]);
        let report = compute_metrics(&[run("a1", &["t1"]), run("a2", &["x", "t2"])], &q).unwrap();
        assert!((report.mean_mrr - 0.75).abs() < 1e-12);
        assert!((report.mean_p1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn t_test_identical_samples() {
        let a = vec![0.1, 0.4, 0.9];
        let result = paired_t_test(&a, &a).unwrap();
        assert_eq!(result.t_statistic, 0.0);
        assert_eq!(result.p_value, 1.0);
        assert!(!result.significant);
    }

    #[test]
    fn t_test_hand_derived_differences() {
        // Differences 0.1, 0.2, 0.3: t = 2*sqrt(3), df = 2, p ~ 0.0742.
        let a = vec![0.2, 0.4, 0.6];
        let b = vec![0.1, 0.2, 0.3];
        let result = paired_t_test(&a, &b).unwrap();
        assert!((result.t_statistic - 3.464_101_615_137_755).abs() < 1e-9);
        assert_eq!(result.degrees_of_freedom, 2);
        assert!((result.p_value - 0.074_179_900_227_448_5).abs() < 1e-6);
        assert!(!result.significant);
    }

    #[test]
    fn t_test_flags_small_p() {
        // Consistent positive differences with low variance.
        let a = vec![0.50, 0.61, 0.72, 0.55, 0.66];
        let b = vec![0.40, 0.50, 0.60, 0.45, 0.55];
        let result = paired_t_test(&a, &b).unwrap();
        assert!(result.p_value < 0.05);
        assert!(result.significant);
    }

    #[test]
    fn t_test_length_mismatch_and_tiny_n() {
        assert!(paired_t_test(&[1.0], &[1.0, 2.0]).is_err());
        assert!(paired_t_test(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn p_values_match_published_tables() {
        // Two-tailed references computed from the t distribution.
        let table = [
            (2usize, 1.0, 0.422_649_730_8),
            (2, 2.0, 0.183_503_419_1),
            (2, 3.0, 0.095_465_966_3),
            (5, 1.0, 0.363_217_467_6),
            (5, 2.0, 0.101_939_478_8),
            (5, 3.0, 0.030_099_247_9),
            (10, 1.0, 0.340_893_132_3),
            (10, 2.0, 0.073_388_034_8),
            (10, 3.0, 0.013_343_655_0),
            (30, 1.0, 0.325_308_615_4),
            (30, 2.0, 0.054_625_045_0),
            (30, 3.0, 0.005_389_964_1),
        ];
        for (df, t, expected) in table {
            let p = student_t_two_tailed_p(t, df);
            assert!(
                (p - expected).abs() < 1e-3,
                "df={df} t={t}: got {p}, want {expected}"
            );
        }
    }

    #[test]
    fn grid_search_picks_argmax() {
        let report_with_mrr = |mrr: f64| MetricReport {
            per_query: vec![],
            mean_p1: 0.0,
            mean_p5: 0.0,
            mean_r1000: 0.0,
            mean_mrr: mrr,
        };
        let search = grid_search_late_weight(
            |alpha| {
                Ok(report_with_mrr(if alpha == 0.5 {
                    0.5
                } else if alpha == 1.0 {
                    0.4
                } else {
                    0.3
                }))
            },
            &[0.0, 0.5, 1.0],
        )
        .unwrap();
        assert_eq!(search.best_alpha, 0.5);
        assert_eq!(search.trace.len(), 3);
    }

    #[test]
    fn grid_search_tie_prefers_smaller_alpha() {
        let flat = |_: f64| {
            Ok(MetricReport {
                per_query: vec![],
                mean_p1: 0.0,
                mean_p5: 0.0,
                mean_r1000: 0.0,
                mean_mrr: 0.25,
            })
        };
        let search = grid_search_late_weight(flat, &[0.6, 0.2, 0.9]).unwrap();
        assert_eq!(search.best_alpha, 0.2);
    }

    #[test]
    fn grid_search_returns_grid_element() {
        let grid = default_alpha_grid();
        assert_eq!(grid.len(), 21);
        let search = grid_search_late_weight(
            |alpha| {
                Ok(MetricReport {
                    per_query: vec![],
                    mean_p1: 0.0,
                    mean_p5: 0.0,
                    mean_r1000: 0.0,
                    mean_mrr: alpha * (1.0 - alpha),
                })
            },
            &grid,
        )
        .unwrap();
        assert!(grid.contains(&search.best_alpha));
        assert_eq!(search.best_alpha, 0.5);
    }

    #[test]
    fn ablation_labels_and_divergence() {
        let report = run_ablation(&CreatorAttribute::ALL, |included| {
            if included.is_empty() {
                Err(Error::NonFinite("loss".into()))
            } else {
                Ok(0.1 + 0.01 * (5 - included.len()) as f64)
            }
        });
        assert_eq!(report.rows.len(), 7);
        assert!(report.rows[ABLATION_NO_CONTEXT].diverged);
        assert!(!report.rows["bio"].diverged);
        assert!(report.loss("bio").unwrap() > report.loss(ABLATION_FULL).unwrap());
    }

    #[test]
    fn run_file_format_contract() {
        let runs = vec![RankedList::new("q1", vec![("t9".to_string(), 0.5)], 1).unwrap()];
        assert_eq!(emit_run_file(&runs, "tag"), "q1 Q0 t9 1 0.500000 tag\n");
        assert_eq!(emit_run_file(&[], "tag"), "");
        let again = emit_run_file(&runs, "tag");
        assert_eq!(again, emit_run_file(&runs, "tag"));
    }

    #[test]
    fn run_file_roundtrip() {
        let runs = vec![run("a1", &["t3", "t1", "t2"]), run("a2", &["t9"])];
        let text = emit_run_file(&runs, "x");
        let parsed = parse_run_file(&text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].query_id, "a1");
        let ids: Vec<&str> = parsed[0].items.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, vec!["t3", "t1", "t2"]);
    }

    #[test]
    fn qrels_tsv_roundtrip() {
        let q = qrels(&[("a1", &["t1", "t2"]), ("a2", &["t3"])]);
        let text = q.to_tsv();
        let back = Qrels::from_tsv(&text).unwrap();
        assert_eq!(back, q);
    }
}
