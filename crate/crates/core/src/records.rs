//! Per-sample analysis records and per-model aggregate summaries.
//!
//! [`analyze_model`] runs the full metric report plus the configured
//! attacks over validation samples and flattens everything into
//! [`SampleRecord`] rows. [`aggregate`] reduces rows to a [`SweepSummary`]:
//! medians and MADs per column, attack failure counts, correlations, and
//! the bound-term ratio medians behind the per-model trend plots.
//!
//! CSV output is deterministic: fixed column order, 9-significant-digit
//! numeric rendering, empty cells for missing values. Regenerating a
//! report from the same records reproduces it byte for byte.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{empirical_robustness, AttackConfig, AttackKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::bound_report;
use crate::network::Network;
use crate::stats::{mad, median, pearson, spearman};

/// One analyzed validation sample, flattened for CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleRecord {
    pub sample_index: usize,
    pub true_label: usize,
    pub predicted_class: Option<usize>,
    pub j_star: Option<usize>,
    pub alpha: Option<f64>,
    pub alpha_dagger: Option<f64>,
    pub rho_tilde: Option<f64>,
    pub rho_grad: Option<f64>,
    pub rho_pgd: Option<f64>,
    pub rho_cw: Option<f64>,
    pub beta_dagger: Option<f64>,
    pub norm_g: Option<f64>,
    pub norm_g_dagger: Option<f64>,
    pub bound_t2a: Option<f64>,
    pub bound_t2b: Option<f64>,
    pub bound_t3: Option<f64>,
    pub xi_alignment_term: Option<f64>,
    pub gdagger_g_distance: Option<f64>,
    pub gdagger_gamma_distance: Option<f64>,
    pub linear_term: Option<f64>,
    pub psi_dagger: Option<f64>,
    pub f_xi_equals_f_x: Option<bool>,
}

type Getter = fn(&SampleRecord) -> Option<f64>;

/// Numeric columns in CSV order (between the index/class prefix and the
/// trailing flag).
pub const NUMERIC_COLUMNS: &[(&str, Getter)] = &[
    ("alpha", |r| r.alpha),
    ("alpha_dagger", |r| r.alpha_dagger),
    ("rho_tilde", |r| r.rho_tilde),
    ("rho_grad", |r| r.rho_grad),
    ("rho_pgd", |r| r.rho_pgd),
    ("rho_cw", |r| r.rho_cw),
    ("beta_dagger", |r| r.beta_dagger),
    ("norm_g", |r| r.norm_g),
    ("norm_g_dagger", |r| r.norm_g_dagger),
    ("bound_t2a", |r| r.bound_t2a),
    ("bound_t2b", |r| r.bound_t2b),
    ("bound_t3", |r| r.bound_t3),
    ("xi_alignment_term", |r| r.xi_alignment_term),
    ("gdagger_g_distance", |r| r.gdagger_g_distance),
    ("gdagger_gamma_distance", |r| r.gdagger_gamma_distance),
    ("linear_term", |r| r.linear_term),
    ("psi_dagger", |r| r.psi_dagger),
];

/// Analyzes the first `n_samples` points of `dataset`: metric report plus
/// every configured attack per sample, in deterministic sample order.
/// Degenerate-saliency failures leave the affected fields empty; they never
/// abort the batch.
pub fn analyze_model(
    net: &Network,
    dataset: &Dataset,
    attack_cfgs: &[(AttackKind, AttackConfig)],
    n_samples: usize,
) -> Result<Vec<SampleRecord>> {
    let n = n_samples.min(dataset.len());
    // Warm the shared analysis graph before fanning out.
    if n > 0 {
        let _ = net.logits(dataset.sample(0))?;
    }
    (0..n)
        .into_par_iter()
        .map(|i| analyze_sample(net, dataset, attack_cfgs, i))
        .collect()
}

fn analyze_sample(
    net: &Network,
    dataset: &Dataset,
    attack_cfgs: &[(AttackKind, AttackConfig)],
    index: usize,
) -> Result<SampleRecord> {
    let x = dataset.sample(index);
    let mut rec = SampleRecord {
        sample_index: index,
        true_label: dataset.label(index),
        ..SampleRecord::default()
    };

    match bound_report(net, x) {
        Ok(report) => {
            rec.predicted_class = Some(report.i_star);
            rec.j_star = Some(report.j_star);
            rec.alpha = report.alpha;
            rec.alpha_dagger = Some(report.alpha_dagger);
            rec.rho_tilde = Some(report.rho_tilde);
            rec.beta_dagger = Some(report.beta_dagger);
            rec.norm_g = Some(report.g.norm());
            rec.norm_g_dagger = Some(report.g_dagger.norm());
            rec.bound_t2a = Some(report.bound_t2a);
            rec.bound_t2b = report.bound_t2b;
            rec.bound_t3 = report.bound_t3;
            rec.xi_alignment_term = report.xi_alignment_term;
            rec.gdagger_g_distance = report.gdagger_g_distance;
            rec.gdagger_gamma_distance = report.gdagger_gamma_distance;
            rec.linear_term = Some(x.dot(&report.g_dagger)?.abs());
            rec.psi_dagger = Some(report.psi_dagger.abs());
            rec.f_xi_equals_f_x = report.f_xi_equals_f_x;
        }
        Err(Error::DegenerateSaliency(msg)) => {
            log::warn!("sample {index}: degenerate saliency, metrics missing ({msg})");
            rec.predicted_class = net.predict(x).ok();
        }
        Err(e) => return Err(e),
    }

    if !attack_cfgs.is_empty() {
        let (_, results) = empirical_robustness(net, x, attack_cfgs)?;
        for r in results {
            match r.kind {
                AttackKind::Gradient => rec.rho_grad = r.norm,
                AttackKind::Pgd => rec.rho_pgd = r.norm,
                AttackKind::Cw => rec.rho_cw = r.norm,
            }
        }
    }
    Ok(rec)
}

/// Median/MAD/count triple for one numeric column.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ColumnSummary {
    pub name: String,
    pub median: Option<f64>,
    pub mad: Option<f64>,
    pub count: usize,
}

/// Per-model aggregate over a record set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepSummary {
    pub model: String,
    pub lambda: Option<f64>,
    pub n_records: usize,
    pub columns: Vec<ColumnSummary>,
    /// Missing-value counts for the three attack columns (failures, plus
    /// attacks that were not run).
    pub fail_grad: usize,
    pub fail_pgd: usize,
    pub fail_cw: usize,
    pub pearson_rho_tilde_rho_cw: Option<f64>,
    pub spearman_rho_tilde_rho_cw: Option<f64>,
    pub pearson_rho_tilde_alpha: Option<f64>,
    pub spearman_rho_tilde_alpha: Option<f64>,
    /// Median of alpha_dagger / bound_t2a: the alignment share of the first
    /// gap bound.
    pub ratio_t2a_median: Option<f64>,
    /// Median of alpha / bound_t2b.
    pub ratio_t2b_median: Option<f64>,
    /// Median of xi_alignment_term / bound_t3.
    pub ratio_t3_median: Option<f64>,
    /// median(|<x, g_dagger>|) / median(|psi_dagger|): how much of the
    /// binarized score the linear term explains.
    pub linearity_ratio: Option<f64>,
}

fn pairwise(records: &[SampleRecord], fx: Getter, fy: Getter) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in records {
        if let (Some(x), Some(y)) = (fx(r), fy(r)) {
            xs.push(x);
            ys.push(y);
        }
    }
    (xs, ys)
}

fn ratio_median(records: &[SampleRecord], num: Getter, den: Getter) -> Option<f64> {
    let ratios: Vec<f64> = records
        .iter()
        .filter_map(|r| match (num(r), den(r)) {
            (Some(n), Some(d)) if d > 0.0 => Some(n / d),
            _ => None,
        })
        .collect();
    median(&ratios)
}

/// Reduces records to the per-model summary row.
pub fn aggregate(records: &[SampleRecord], lambda: Option<f64>, model: &str) -> Result<SweepSummary> {
    if records.is_empty() {
        return Err(Error::InvalidConfig("cannot aggregate zero records".into()));
    }
    let columns = NUMERIC_COLUMNS
        .iter()
        .map(|(name, get)| {
            let values: Vec<f64> = records.iter().filter_map(|r| get(r)).collect();
            ColumnSummary {
                name: (*name).to_string(),
                median: median(&values),
                mad: mad(&values),
                count: values.len(),
            }
        })
        .collect();

    let missing = |get: Getter| records.iter().filter(|r| get(r).is_none()).count();
    let (rho_t, rho_cw) = pairwise(records, |r| r.rho_tilde, |r| r.rho_cw);
    let (rho_t2, alpha) = pairwise(records, |r| r.rho_tilde, |r| r.alpha);

    Ok(SweepSummary {
        model: model.to_string(),
        lambda,
        n_records: records.len(),
        columns,
        fail_grad: missing(|r| r.rho_grad),
        fail_pgd: missing(|r| r.rho_pgd),
        fail_cw: missing(|r| r.rho_cw),
        pearson_rho_tilde_rho_cw: pearson(&rho_t, &rho_cw),
        spearman_rho_tilde_rho_cw: spearman(&rho_t, &rho_cw),
        pearson_rho_tilde_alpha: pearson(&rho_t2, &alpha),
        spearman_rho_tilde_alpha: spearman(&rho_t2, &alpha),
        ratio_t2a_median: ratio_median(records, |r| r.alpha_dagger, |r| r.bound_t2a),
        ratio_t2b_median: ratio_median(records, |r| r.alpha, |r| r.bound_t2b),
        ratio_t3_median: ratio_median(records, |r| r.xi_alignment_term, |r| r.bound_t3),
        linearity_ratio: {
            let num: Vec<f64> = records.iter().filter_map(|r| r.linear_term).collect();
            let den: Vec<f64> = records.iter().filter_map(|r| r.psi_dagger).collect();
            match (median(&num), median(&den)) {
                (Some(n), Some(d)) if d > 0.0 => Some(n / d),
                _ => None,
            }
        },
    })
}

// ---------------------------------------------------------------------------
// Deterministic CSV rendering
// ---------------------------------------------------------------------------

/// 9-significant-digit rendering used by every report artifact.
pub fn fmt_f64(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v }; // normalize -0.0
    format!("{v:.8e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map(|u| u.to_string()).unwrap_or_default()
}

fn fmt_opt_bool(v: Option<bool>) -> String {
    v.map(|b| b.to_string()).unwrap_or_default()
}

/// CSV header for [`SampleRecord`] rows: exactly the field names.
pub fn records_csv_header() -> String {
    let mut cols = vec![
        "sample_index".to_string(),
        "true_label".to_string(),
        "predicted_class".to_string(),
        "j_star".to_string(),
    ];
    cols.extend(NUMERIC_COLUMNS.iter().map(|(n, _)| (*n).to_string()));
    cols.push("f_xi_equals_f_x".to_string());
    cols.join(",")
}

pub fn records_to_csv(records: &[SampleRecord]) -> String {
    let mut out = records_csv_header();
    out.push('\n');
    for r in records {
        let mut cells = vec![
            r.sample_index.to_string(),
            r.true_label.to_string(),
            fmt_opt_usize(r.predicted_class),
            fmt_opt_usize(r.j_star),
        ];
        cells.extend(NUMERIC_COLUMNS.iter().map(|(_, get)| fmt_opt(get(r))));
        cells.push(fmt_opt_bool(r.f_xi_equals_f_x));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn parse_opt_f64(cell: &str, line: usize) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::parse(line, format!("bad float '{cell}'")))
}

fn parse_opt_usize(cell: &str, line: usize) -> Result<Option<usize>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<usize>()
        .map(Some)
        .map_err(|_| Error::parse(line, format!("bad integer '{cell}'")))
}

pub fn records_from_csv(text: &str) -> Result<Vec<SampleRecord>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(0, "empty records file"))?;
    if header != records_csv_header() {
        return Err(Error::parse(0, format!("unexpected header '{header}'")));
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let expected = 4 + NUMERIC_COLUMNS.len() + 1;
        if cells.len() != expected {
            return Err(Error::parse(
                lineno + 1,
                format!("{} cells, expected {expected}", cells.len()),
            ));
        }
        let mut r = SampleRecord {
            sample_index: cells[0]
                .parse()
                .map_err(|_| Error::parse(lineno + 1, "bad sample_index"))?,
            true_label: cells[1]
                .parse()
                .map_err(|_| Error::parse(lineno + 1, "bad true_label"))?,
            predicted_class: parse_opt_usize(cells[2], lineno + 1)?,
            j_star: parse_opt_usize(cells[3], lineno + 1)?,
            ..SampleRecord::default()
        };
        let values: Vec<Option<f64>> = cells[4..4 + NUMERIC_COLUMNS.len()]
            .iter()
            .map(|c| parse_opt_f64(c, lineno + 1))
            .collect::<Result<_>>()?;
        [
            &mut r.alpha,
            &mut r.alpha_dagger,
            &mut r.rho_tilde,
            &mut r.rho_grad,
            &mut r.rho_pgd,
            &mut r.rho_cw,
            &mut r.beta_dagger,
            &mut r.norm_g,
            &mut r.norm_g_dagger,
            &mut r.bound_t2a,
            &mut r.bound_t2b,
            &mut r.bound_t3,
            &mut r.xi_alignment_term,
            &mut r.gdagger_g_distance,
            &mut r.gdagger_gamma_distance,
            &mut r.linear_term,
            &mut r.psi_dagger,
        ]
        .into_iter()
        .zip(values)
        .for_each(|(slot, v)| *slot = v);
        let flag = cells[4 + NUMERIC_COLUMNS.len()];
        r.f_xi_equals_f_x = match flag {
            "" => None,
            "true" => Some(true),
            "false" => Some(false),
            other => return Err(Error::parse(lineno + 1, format!("bad flag '{other}'"))),
        };
        out.push(r);
    }
    Ok(out)
}

/// Wide CSV: one row per model summary.
pub fn summaries_to_csv(summaries: &[SweepSummary]) -> String {
    let mut header = vec!["model".to_string(), "lambda".to_string(), "n_records".to_string()];
    for (name, _) in NUMERIC_COLUMNS {
        header.push(format!("median_{name}"));
        header.push(format!("mad_{name}"));
        header.push(format!("count_{name}"));
    }
    header.extend(
        [
            "fail_grad",
            "fail_pgd",
            "fail_cw",
            "pearson_rho_tilde_rho_cw",
            "spearman_rho_tilde_rho_cw",
            "pearson_rho_tilde_alpha",
            "spearman_rho_tilde_alpha",
            "ratio_t2a_median",
            "ratio_t2b_median",
            "ratio_t3_median",
            "linearity_ratio",
        ]
        .map(String::from),
    );
    let mut out = header.join(",");
    out.push('\n');
    for s in summaries {
        let mut cells = vec![s.model.clone(), fmt_opt(s.lambda), s.n_records.to_string()];
        for col in &s.columns {
            cells.push(fmt_opt(col.median));
            cells.push(fmt_opt(col.mad));
            cells.push(col.count.to_string());
        }
        cells.push(s.fail_grad.to_string());
        cells.push(s.fail_pgd.to_string());
        cells.push(s.fail_cw.to_string());
        cells.push(fmt_opt(s.pearson_rho_tilde_rho_cw));
        cells.push(fmt_opt(s.spearman_rho_tilde_rho_cw));
        cells.push(fmt_opt(s.pearson_rho_tilde_alpha));
        cells.push(fmt_opt(s.spearman_rho_tilde_alpha));
        cells.push(fmt_opt(s.ratio_t2a_median));
        cells.push(fmt_opt(s.ratio_t2b_median));
        cells.push(fmt_opt(s.ratio_t3_median));
        cells.push(fmt_opt(s.linearity_ratio));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn summaries_to_json(summaries: &[SweepSummary]) -> Result<String> {
    Ok(serde_json::to_string_pretty(summaries)?)
}

/// Long-format (model, metric, value) CSV for plotting; missing values are
/// omitted.
pub fn summaries_to_long_csv(summaries: &[SweepSummary]) -> String {
    let mut out = String::from("model,metric,value\n");
    for s in summaries {
        let mut push = |metric: &str, value: Option<f64>| {
            if let Some(v) = value {
                out.push_str(&format!("{},{},{}\n", s.model, metric, fmt_f64(v)));
            }
        };
        push("lambda", s.lambda);
        for col in &s.columns {
            push(&format!("median_{}", col.name), col.median);
            push(&format!("mad_{}", col.name), col.mad);
        }
        push("pearson_rho_tilde_rho_cw", s.pearson_rho_tilde_rho_cw);
        push("spearman_rho_tilde_rho_cw", s.spearman_rho_tilde_rho_cw);
        push("pearson_rho_tilde_alpha", s.pearson_rho_tilde_alpha);
        push("spearman_rho_tilde_alpha", s.spearman_rho_tilde_alpha);
        push("ratio_t2a_median", s.ratio_t2a_median);
        push("ratio_t2b_median", s.ratio_t2b_median);
        push("ratio_t3_median", s.ratio_t3_median);
        push("linearity_ratio", s.linearity_ratio);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_dataset, synth_gaussian_blobs};
    use crate::tensor::Tensor;

    fn cheap_attacks() -> Vec<(AttackKind, AttackConfig)> {
        let mut pgd = AttackConfig::pgd_default();
        pgd.max_iterations = 30;
        pgd.binary_search_steps = 12;
        let mut cw = AttackConfig::cw_default();
        cw.max_iterations = 120;
        cw.binary_search_steps = 6;
        vec![
            (AttackKind::Gradient, AttackConfig::gradient_default()),
            (AttackKind::Pgd, pgd),
            (AttackKind::Cw, cw),
        ]
    }

    fn linear_blob_records(n: usize) -> Vec<SampleRecord> {
        let net = Network::linear(
            Tensor::matrix(&[&[1.0, 0.2], &[-0.4, 0.9], &[-0.6, -1.0]]).unwrap(),
            None,
        )
        .unwrap();
        let ds = synth_gaussian_blobs(3, 60, 2, 4.0, 41).unwrap();
        let split = split_dataset(&ds, 0.5, 3).unwrap();
        analyze_model(&net, &split.validation, &cheap_attacks(), n).unwrap()
    }

    #[test]
    fn linear_model_records_match_linear_theory() {
        let records = linear_blob_records(100);
        assert_eq!(records.len(), 90); // validation split is 90 samples
        for r in &records {
            let rho = r.rho_tilde.unwrap();
            // Linear equality: binarized alignment is the robustness.
            let ad = r.alpha_dagger.unwrap();
            assert!((rho - ad).abs() < 1e-8 * rho.max(1.0));
            // CW converges to the closed-form distance on linear models.
            let cw = r.rho_cw.unwrap();
            assert!((rho - cw).abs() < 5e-3, "rho {rho} vs cw {cw}");
            assert!(r.beta_dagger.unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn empty_analysis_is_empty() {
        let records = linear_blob_records(0);
        assert!(records.is_empty());
    }

    #[test]
    fn record_bounds_hold_where_present() {
        for r in linear_blob_records(40) {
            if let (Some(rho), Some(t2a)) = (r.rho_tilde, r.bound_t2a) {
                assert!(rho <= t2a + 1e-9);
                if let Some(t2b) = r.bound_t2b {
                    assert!(t2a <= t2b + 1e-9);
                }
            }
            if let (Some(rho), Some(t3)) = (r.rho_tilde, r.bound_t3) {
                assert!(rho <= t3 + 1e-9);
            }
            assert!(r.psi_dagger.unwrap() >= 0.0);
            assert!(r.norm_g.unwrap() >= 0.0);
        }
    }

    #[test]
    fn aggregate_hand_case() {
        let mut records = Vec::new();
        for (i, a) in [1.0, 2.0, 9.0].iter().enumerate() {
            records.push(SampleRecord {
                sample_index: i,
                alpha: Some(*a),
                ..SampleRecord::default()
            });
        }
        let s = aggregate(&records, None, "hand").unwrap();
        let col = s.columns.iter().find(|c| c.name == "alpha").unwrap();
        assert_eq!(col.median, Some(2.0));
        assert_eq!(col.mad, Some(1.0));
        assert_eq!(col.count, 3);
        // All-missing column reports count 0 and no median.
        let rho = s.columns.iter().find(|c| c.name == "rho_tilde").unwrap();
        assert_eq!(rho.count, 0);
        assert_eq!(rho.median, None);
        assert_eq!(s.fail_cw, 3);
    }

    #[test]
    fn aggregate_single_record_degenerates_gracefully() {
        let records = vec![SampleRecord {
            alpha: Some(3.0),
            rho_tilde: Some(1.5),
            rho_cw: Some(1.4),
            ..SampleRecord::default()
        }];
        let s = aggregate(&records, Some(1.0), "single").unwrap();
        let col = s.columns.iter().find(|c| c.name == "alpha").unwrap();
        assert_eq!(col.median, Some(3.0));
        assert_eq!(col.mad, Some(0.0));
        assert_eq!(s.pearson_rho_tilde_rho_cw, None);
        assert_eq!(s.spearman_rho_tilde_alpha, None);
    }

    #[test]
    fn linear_model_correlation_is_essentially_one() {
        let records = linear_blob_records(90);
        let s = aggregate(&records, Some(0.0), "linear").unwrap();
        let p = s.pearson_rho_tilde_rho_cw.unwrap();
        assert!(p > 0.999, "pearson {p}");
        for ratio in [s.ratio_t2a_median, s.ratio_t2b_median, s.ratio_t3_median] {
            let v = ratio.unwrap();
            assert!((0.0..=1.0 + 1e-12).contains(&v), "ratio {v}");
        }
    }

    #[test]
    fn csv_rendering_is_stable_and_idempotent() {
        let records = linear_blob_records(25);
        let csv = records_to_csv(&records);
        assert!(csv.starts_with("sample_index,true_label,predicted_class,j_star,alpha,"));
        assert!(csv.trim_end().lines().count() == 26);
        let parsed = records_from_csv(&csv).unwrap();
        assert_eq!(parsed.len(), records.len());
        // Re-rendering parsed records reproduces the bytes exactly.
        assert_eq!(records_to_csv(&parsed), csv);

        let s1 = aggregate(&parsed, Some(0.5), "m").unwrap();
        let s2 = aggregate(&records_from_csv(&csv).unwrap(), Some(0.5), "m").unwrap();
        assert_eq!(summaries_to_csv(&[s1.clone()]), summaries_to_csv(&[s2.clone()]));
        assert_eq!(
            summaries_to_json(&[s1.clone()]).unwrap(),
            summaries_to_json(&[s2]).unwrap()
        );
        let long = summaries_to_long_csv(&[s1]);
        assert!(long.starts_with("model,metric,value\n"));
        assert!(long.contains("median_rho_tilde"));
    }

    #[test]
    fn csv_rejects_bad_header_and_cells() {
        assert!(records_from_csv("nope\n1,2\n").is_err());
        let mut csv = records_csv_header();
        csv.push_str("\n0,1,0,1,x");
        assert!(records_from_csv(&csv).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn nine_digit_rendering() {
        assert_eq!(fmt_f64(1.4), "1.40000000e0");
        assert_eq!(fmt_f64(-0.0), "0.00000000e0");
        assert_eq!(fmt_f64(0.7071067811865476), "7.07106781e-1");
        assert_eq!("7.07106781e-1".parse::<f64>().unwrap(), 0.707106781);
    }
}
