//! Embedding-space statistics: distance distributions per class, box
//! summaries and the mean-distance threshold test with its error rates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{euclidean, Tensor};

/// Minimum members and non-members for an error estimate.
pub const MIN_GUARD: usize = 20;
pub const DEFAULT_ALPHA: f64 = 0.025;
pub const DEFAULT_BETA: f64 = 0.025;

/// Probabilities reported by [`box_stats`].
pub const BOX_PROBS: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    Intra,
    Inter,
}

impl DistanceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DistanceKind::Intra => "intra",
            DistanceKind::Inter => "inter",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub q025: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q975: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub class_label: i64,
    pub kind: DistanceKind,
    #[serde(flatten)]
    pub stats: BoxStats,
    pub sample_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorPair {
    pub type1: f64,
    pub type2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub class_label: i64,
    pub alpha: f64,
    pub beta: f64,
    /// Threshold at the `1 - alpha` quantile of member statistics.
    pub at_alpha: ErrorPair,
    /// Threshold at the `beta` quantile of non-member statistics.
    pub at_beta: ErrorPair,
    pub threshold_alpha: f64,
    pub threshold_beta: f64,
    pub members: usize,
    pub non_members: usize,
}

/// Full `N × N` Euclidean distance matrix, each pair computed once.
pub fn pairwise_distances(x: &Tensor) -> Result<Tensor> {
    let (n, _) = x.dims2()?;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclidean(x.row(i), x.row(j));
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    Tensor::new(vec![n, n], out)
}

fn members_of(labels: &[i64], class_label: i64) -> (Vec<usize>, Vec<usize>) {
    (0..labels.len()).partition(|&i| labels[i] == class_label)
}

fn check_rows(embeddings: &Tensor, labels: &[i64]) -> Result<()> {
    let (n, d) = embeddings.dims2()?;
    if n != labels.len() {
        return Err(Error::dim("analytics", &[n, d], &[labels.len(), d]));
    }
    Ok(())
}

/// Intra: every unordered pair inside the class. Inter: every member to
/// every sample of another label.
pub fn class_distances(
    embeddings: &Tensor,
    labels: &[i64],
    class_label: i64,
    kind: DistanceKind,
) -> Result<Vec<f64>> {
    check_rows(embeddings, labels)?;
    let (inside, outside) = members_of(labels, class_label);
    match kind {
        DistanceKind::Intra => {
            if inside.len() < 2 {
                return Err(Error::Domain(format!(
                    "class {class_label} has {} member(s); intra distances need 2",
                    inside.len()
                )));
            }
            let mut out = Vec::with_capacity(inside.len() * (inside.len() - 1) / 2);
            for (k, &i) in inside.iter().enumerate() {
                for &j in &inside[k + 1..] {
                    out.push(euclidean(embeddings.row(i), embeddings.row(j)));
                }
            }
            Ok(out)
        }
        DistanceKind::Inter => {
            if inside.is_empty() || outside.is_empty() {
                return Err(Error::Domain(format!(
                    "class {class_label} needs members and non-members for inter distances ({} / {})",
                    inside.len(),
                    outside.len()
                )));
            }
            let mut out = Vec::with_capacity(inside.len() * outside.len());
            for &i in &inside {
                for &j in &outside {
                    out.push(euclidean(embeddings.row(i), embeddings.row(j)));
                }
            }
            Ok(out)
        }
    }
}

/// Linearly interpolated quantile of ascending `sorted`, `h = (n - 1)p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_copy(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("NaN in quantile input".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::Domain("box statistics of an empty list".into()));
    }
    let v = sorted_copy(values)?;
    let [q025, q25, median, q75, q975] = BOX_PROBS.map(|p| quantile_sorted(&v, p));
    Ok(BoxStats {
        q025,
        q25,
        median,
        q75,
        q975,
    })
}

pub fn summarize(
    embeddings: &Tensor,
    labels: &[i64],
    class_label: i64,
    kind: DistanceKind,
) -> Result<DistanceSummary> {
    let d = class_distances(embeddings, labels, class_label, kind)?;
    Ok(DistanceSummary {
        class_label,
        kind,
        stats: box_stats(&d)?,
        sample_count: d.len(),
    })
}

/// Mean distance from sample `x_index` to the members of `class_label`,
/// leaving `x_index` itself out.
pub fn mean_distance_statistic(
    x_index: usize,
    embeddings: &Tensor,
    labels: &[i64],
    class_label: i64,
) -> Result<f64> {
    check_rows(embeddings, labels)?;
    if x_index >= labels.len() {
        return Err(Error::Index {
            context: "mean_distance_statistic",
            index: x_index as i64,
            limit: labels.len() as i64,
        });
    }
    let x = embeddings.row(x_index);
    let (mut sum, mut count) = (0.0, 0usize);
    for (j, &l) in labels.iter().enumerate() {
        if l == class_label && j != x_index {
            sum += euclidean(x, embeddings.row(j));
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Domain(format!(
            "class {class_label} has no members besides sample {x_index}"
        )));
    }
    Ok(sum / count as f64)
}

fn fraction(values: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    values.iter().filter(|&&v| pred(v)).count() as f64 / values.len() as f64
}

/// Error rates of the rule "accept membership iff T(x) < q" at the two
/// thresholds.
pub fn quantile_error_estimates(
    embeddings: &Tensor,
    labels: &[i64],
    class_label: i64,
    alpha: f64,
    beta: f64,
) -> Result<ErrorEstimate> {
    check_rows(embeddings, labels)?;
    for (name, v) in [("alpha", alpha), ("beta", beta)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Domain(format!("{name} must lie in (0, 1), got {v}")));
        }
    }
    let (inside, outside) = members_of(labels, class_label);
    if inside.len() < MIN_GUARD || outside.len() < MIN_GUARD {
        return Err(Error::Domain(format!(
            "class {class_label} has {} members and {} non-members; at least {MIN_GUARD} of each are required",
            inside.len(),
            outside.len()
        )));
    }
    let stat = |i: usize| mean_distance_statistic(i, embeddings, labels, class_label);
    let t_in = sorted_copy(
        &inside
            .iter()
            .map(|&i| stat(i))
            .collect::<Result<Vec<_>>>()?,
    )?;
    let t_out = sorted_copy(
        &outside
            .iter()
            .map(|&i| stat(i))
            .collect::<Result<Vec<_>>>()?,
    )?;

    let qa = quantile_sorted(&t_in, 1.0 - alpha);
    let qb = quantile_sorted(&t_out, beta);
    Ok(ErrorEstimate {
        class_label,
        alpha,
        beta,
        at_alpha: ErrorPair {
            type1: fraction(&t_in, |t| t >= qa),
            type2: fraction(&t_out, |t| t < qa),
        },
        at_beta: ErrorPair {
            type1: fraction(&t_in, |t| t >= qb),
            type2: fraction(&t_out, |t| t < qb),
        },
        threshold_alpha: qa,
        threshold_beta: qb,
        members: inside.len(),
        non_members: outside.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub class_label: i64,
    pub what: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsReport {
    pub alpha: f64,
    pub beta: f64,
    /// Ascending label, intra before inter.
    pub summaries: Vec<DistanceSummary>,
    /// Labeled classes only, ascending.
    pub estimates: Vec<ErrorEstimate>,
    pub skipped: Vec<Skipped>,
}

fn skip_or<T>(
    r: Result<T>,
    label: i64,
    what: &str,
    skipped: &mut Vec<Skipped>,
) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Domain(reason)) => {
            skipped.push(Skipped {
                class_label: label,
                what: what.into(),
                reason,
            });
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Summaries for every present label and error estimates for labels `>= 0`.
/// Classes too small for a statistic are listed in `skipped`.
pub fn analyze(
    embeddings: &Tensor,
    labels: &[i64],
    alpha: f64,
    beta: f64,
) -> Result<AnalyticsReport> {
    check_rows(embeddings, labels)?;
    let present: BTreeSet<i64> = labels.iter().copied().collect();
    if present.len() < 2 {
        return Err(Error::Domain(format!(
            "analysis needs >= 2 labels, found {}",
            present.len()
        )));
    }
    let mut report = AnalyticsReport {
        alpha,
        beta,
        summaries: Vec::new(),
        estimates: Vec::new(),
        skipped: Vec::new(),
    };
    for &label in &present {
        for kind in [DistanceKind::Intra, DistanceKind::Inter] {
            let s = summarize(embeddings, labels, label, kind);
            if let Some(s) = skip_or(s, label, kind.as_str(), &mut report.skipped)? {
                report.summaries.push(s);
            }
        }
        if label >= 0 {
            let e = quantile_error_estimates(embeddings, labels, label, alpha, beta);
            if let Some(e) = skip_or(e, label, "errors", &mut report.skipped)? {
                report.estimates.push(e);
            }
        }
    }
    Ok(report)
}

pub fn write_error_csv<W: Write>(estimates: &[ErrorEstimate], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    out.write_record([
        "class",
        "type1_at_alpha",
        "type2_at_alpha",
        "type1_at_beta",
        "type2_at_beta",
    ])
    .map_err(fmt)?;
    for e in estimates {
        out.write_record([
            e.class_label.to_string(),
            e.at_alpha.type1.to_string(),
            e.at_alpha.type2.to_string(),
            e.at_beta.type1.to_string(),
            e.at_beta.type2.to_string(),
        ])
        .map_err(fmt)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(summaries: &[DistanceSummary], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    out.write_record([
        "class",
        "kind",
        "q025",
        "q25",
        "median",
        "q75",
        "q975",
        "sample_count",
    ])
    .map_err(fmt)?;
    for s in summaries {
        let b = &s.stats;
        out.write_record([
            s.class_label.to_string(),
            s.kind.as_str().to_string(),
            b.q025.to_string(),
            b.q25.to_string(),
            b.median.to_string(),
            b.q75.to_string(),
            b.q975.to_string(),
            s.sample_count.to_string(),
        ])
        .map_err(fmt)?;
    }
    out.flush()?;
    Ok(())
}

const PLOT_HEIGHT: f64 = 320.0;
const TOP: f64 = 40.0;
const LEFT: f64 = 70.0;
const SLOT: f64 = 60.0;

/// Box-and-whisker chart, one box per summary in input order.
pub fn render_boxplots(summaries: &[DistanceSummary], title: &str) -> Result<String> {
    if summaries.is_empty() {
        return Err(Error::Domain("nothing to plot".into()));
    }
    let top_value = summaries.iter().map(|s| s.stats.q975).fold(0.0, f64::max);
    let scale = if top_value > 0.0 {
        top_value * 1.05
    } else {
        1.0
    };
    let y = |v: f64| TOP + PLOT_HEIGHT * (1.0 - v / scale);
    let width = LEFT + SLOT * summaries.len() as f64 + 20.0;
    let height = TOP + PLOT_HEIGHT + 60.0;
    let bottom = TOP + PLOT_HEIGHT;

    let mut s = String::new();
    // Writing to a String cannot fail.
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    let _ = writeln!(s, r#"<g class="axes" stroke="black">"#);
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{bottom}"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{bottom}" x2="{}" y2="{bottom}"/>"#,
        width - 10.0
    );
    let _ = writeln!(s, "</g>");
    for i in 0..=4 {
        let v = scale * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text class="tick" x="{}" y="{:.2}" text-anchor="end">{:.3}</text>"#,
            LEFT - 6.0,
            y(v) + 4.0,
            v
        );
    }
    let _ = writeln!(
        s,
        r#"<text class="axis-label" x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">distance</text>"#,
        TOP + PLOT_HEIGHT / 2.0,
        TOP + PLOT_HEIGHT / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text class="axis-label" x="{:.2}" y="{:.2}" text-anchor="middle">class</text>"#,
        LEFT + SLOT * summaries.len() as f64 / 2.0,
        height - 12.0
    );
    for (i, summary) in summaries.iter().enumerate() {
        let b = &summary.stats;
        let cx = LEFT + SLOT * (i as f64 + 0.5);
        let (x0, x1) = (cx - SLOT * 0.3, cx + SLOT * 0.3);
        let _ = writeln!(
            s,
            r#"<g class="box" data-class="{}" data-kind="{}" stroke="black" fill="none">"#,
            summary.class_label,
            summary.kind.as_str()
        );
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}"/>"#,
            y(b.q975),
            y(b.q75)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}"/>"#,
            y(b.q25),
            y(b.q025)
        );
        for v in [b.q025, b.q975] {
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#,
                cx - SLOT * 0.15,
                y(v),
                cx + SLOT * 0.15,
                y(v)
            );
        }
        let _ = writeln!(
            s,
            r##"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#cfe0f3"/>"##,
            y(b.q75),
            x1 - x0,
            y(b.q25) - y(b.q75)
        );
        let _ = writeln!(
            s,
            r#"<line class="median" x1="{x0:.2}" y1="{:.2}" x2="{x1:.2}" y2="{:.2}" stroke-width="2"/>"#,
            y(b.median),
            y(b.median)
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" stroke="none" fill="black">{}</text>"#,
            bottom + 16.0,
            summary.class_label
        );
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Summaries grouped by kind, for one chart per kind.
pub fn by_kind(summaries: &[DistanceSummary]) -> BTreeMap<DistanceKind, Vec<DistanceSummary>> {
    let mut out: BTreeMap<DistanceKind, Vec<DistanceSummary>> = BTreeMap::new();
    for s in summaries {
        out.entry(s.kind).or_default().push(s.clone());
    }
    out
}

#[cfg(test)]
mod tests;
