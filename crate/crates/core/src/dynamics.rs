//! Probability mass a model places on the four rule categories of a fixed
//! set of equal-length words, and how it moves during training.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::check_vocab;
use crate::grammar::{check_rule, Language, Rule};
use crate::model::{ArModel, CategoryMasses, TraceRecord, TrainTrace};
use crate::token::{completed, Token};

/// Longest content length the probe will enumerate.
pub const MAX_CONTENT_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleCategory {
    R1AndR2,
    R1Only,
    R2Only,
    Neither,
}

impl RuleCategory {
    /// Index order shared with [`CategoryMasses`].
    pub const ALL: [RuleCategory; 4] = [
        RuleCategory::R1AndR2,
        RuleCategory::R1Only,
        RuleCategory::R2Only,
        RuleCategory::Neither,
    ];

    pub fn of(r1: bool, r2: bool) -> Self {
        match (r1, r2) {
            (true, true) => RuleCategory::R1AndR2,
            (true, false) => RuleCategory::R1Only,
            (false, true) => RuleCategory::R2Only,
            (false, false) => RuleCategory::Neither,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn column(self) -> &'static str {
        match self {
            RuleCategory::R1AndR2 => "mass_r1_and_r2",
            RuleCategory::R1Only => "mass_r1_only",
            RuleCategory::R2Only => "mass_r2_only",
            RuleCategory::Neither => "mass_neither",
        }
    }
}

/// Every word of exactly `content_length` letters, as `SOS word EOS`,
/// grouped by which rules it satisfies.
#[derive(Clone, Debug, PartialEq)]
pub struct CategorySet {
    pub language: Language,
    pub content_length: usize,
    pub sequences: [Vec<Vec<Token>>; 4],
}

impl CategorySet {
    pub fn counts(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|i| self.sequences[i].len())
    }

    pub fn total(&self) -> usize {
        self.counts().iter().sum()
    }

    /// All sequences with their category, in enumeration order per category.
    pub fn iter(&self) -> impl Iterator<Item = (RuleCategory, &Vec<Token>)> {
        RuleCategory::ALL
            .into_iter()
            .flat_map(move |c| self.sequences[c.index()].iter().map(move |s| (c, s)))
    }
}

pub fn build_category_set(lang: Language, content_length: usize) -> Result<CategorySet> {
    if content_length > MAX_CONTENT_LEN {
        return Err(Error::Resource(format!(
            "content length {content_length} exceeds the enumeration guard {MAX_CONTENT_LEN}"
        )));
    }
    let alphabet = lang.alphabet();
    let k = alphabet.len();
    let total = k
        .checked_pow(content_length as u32)
        .filter(|&n| n <= 1 << 24)
        .ok_or_else(|| Error::Resource(format!("{k}^{content_length} words is too many to enumerate")))?;
    let mut sequences: [Vec<Vec<Token>>; 4] = Default::default();
    let mut word = vec![alphabet[0]; content_length];
    for mut code in 0..total {
        // Most significant digit first, so the order is lexicographic.
        for slot in word.iter_mut().rev() {
            *slot = alphabet[code % k];
            code /= k;
        }
        let r1 = check_rule(lang, Rule::R1, &word)?;
        let r2 = check_rule(lang, Rule::R2, &word)?;
        sequences[RuleCategory::of(r1, r2).index()].push(completed(&word));
    }
    Ok(CategorySet {
        language: lang,
        content_length,
        sequences,
    })
}

/// One probe reading: category masses normalized over the enumerated set,
/// plus the log of the unnormalized total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassRow {
    pub epoch: usize,
    pub masses: CategoryMasses,
    pub log_total: f64,
}

/// Per-sequence log-probabilities in [`CategorySet::iter`] order.
pub fn sequence_scores(model: &ArModel, set: &CategorySet) -> Result<Vec<f64>> {
    check_vocab(model, set.language)?;
    let seqs: Vec<Vec<Token>> = set.iter().map(|(_, s)| s.clone()).collect();
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(256) {
        out.extend(model.sequence_log_probs(chunk)?);
    }
    Ok(out)
}

pub fn category_masses(model: &ArModel, set: &CategorySet, epoch: usize) -> Result<MassRow> {
    let scores = sequence_scores(model, set)?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut masses = [0.0; 4];
    for ((c, _), lp) in set.iter().zip(&scores) {
        masses[c.index()] += (lp - max).exp();
    }
    let sum: f64 = masses.iter().sum();
    masses.iter_mut().for_each(|m| *m /= sum);
    Ok(MassRow {
        epoch,
        masses,
        log_total: max + sum.ln(),
    })
}

/// Training-hook helper: fill the record's category masses.
pub fn record_masses(model: &ArModel, set: &CategorySet, record: &mut TraceRecord) -> Result<()> {
    record.masses = Some(category_masses(model, set, record.epoch)?.masses);
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MassTrace {
    pub rows: Vec<MassRow>,
}

impl MassTrace {
    /// Rows of every trace record that carries masses. The unnormalized
    /// total is not kept in training records, so it reads as NaN.
    pub fn from_trace(trace: &TrainTrace) -> Self {
        let rows = trace
            .records
            .iter()
            .filter_map(|r| {
                r.masses.map(|masses| MassRow {
                    epoch: r.epoch,
                    masses,
                    log_total: f64::NAN,
                })
            })
            .collect();
        MassTrace { rows }
    }

    pub fn order_stats(&self) -> Result<OrderStats> {
        order_stats(self)
    }
}

/// When each category took the lead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderStats {
    /// First epoch at which the R2-only mass reached its maximum.
    pub r2_only_peak_epoch: usize,
    pub r2_only_peak_mass: f64,
    /// First epoch with R1∩R2 mass above one half.
    pub majority_epoch: Option<usize>,
    /// First epoch with R1∩R2 mass above each other category.
    pub dominance_epoch: Option<usize>,
    pub final_r1_and_r2: f64,
}

impl OrderStats {
    /// The R2-only peak strictly precedes the R1∩R2 majority.
    pub fn r2_first(&self) -> bool {
        self.majority_epoch.is_some_and(|e| self.r2_only_peak_epoch < e)
    }
}

pub fn order_stats(trace: &MassTrace) -> Result<OrderStats> {
    let last = trace
        .rows
        .last()
        .ok_or_else(|| Error::Contract("cannot order an empty mass trace".into()))?;
    let both = RuleCategory::R1AndR2.index();
    let r2 = RuleCategory::R2Only.index();
    let mut peak = &trace.rows[0];
    for row in &trace.rows {
        if row.masses[r2] > peak.masses[r2] {
            peak = row;
        }
    }
    let majority_epoch = trace.rows.iter().find(|r| r.masses[both] > 0.5).map(|r| r.epoch);
    let dominance_epoch = trace
        .rows
        .iter()
        .find(|r| (0..4).all(|i| i == both || r.masses[both] > r.masses[i]))
        .map(|r| r.epoch);
    Ok(OrderStats {
        r2_only_peak_epoch: peak.epoch,
        r2_only_peak_mass: peak.masses[r2],
        majority_epoch,
        dominance_epoch,
        final_r1_and_r2: last.masses[both],
    })
}

pub fn write_mass_csv<W: Write>(trace: &MassTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["epoch"];
    header.extend(RuleCategory::ALL.map(RuleCategory::column));
    w.write_record(&header).map_err(crate::eval::csv_err)?;
    for row in &trace.rows {
        let mut rec = vec![row.epoch.to_string()];
        rec.extend(row.masses.iter().map(|m| format!("{m:.12}")));
        w.write_record(&rec).map_err(crate::eval::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Raw per-sequence log-probabilities for heatmap-style plots.
pub fn write_sequence_csv<W: Write>(set: &CategorySet, scores: &[f64], out: W) -> Result<()> {
    if scores.len() != set.total() {
        return Err(Error::Shape(format!(
            "{} scores for {} sequences",
            scores.len(),
            set.total()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sequence", "category", "log_prob"])
        .map_err(crate::eval::csv_err)?;
    for ((c, s), lp) in set.iter().zip(scores) {
        let text = crate::data::render(crate::token::strip_specials(s), set.language);
        w.write_record([text, format!("{c:?}"), format!("{lp:.12}")])
            .map_err(crate::eval::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

const COLORS: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#7f7f7f"];

/// Four-line chart of normalized mass against epoch.
pub fn render_svg(trace: &MassTrace, title: &str) -> String {
    let (w, h, m) = (640.0, 360.0, 48.0);
    let max_epoch = trace.rows.iter().map(|r| r.epoch).max().unwrap_or(0).max(1) as f64;
    let x = |e: usize| m + (w - 2.0 * m) * e as f64 / max_epoch;
    let y = |v: f64| h - m - (h - 2.0 * m) * v;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{m}" y="24">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{m},{} V{} H{}" fill="none" stroke="black"/>"#,
        m,
        h - m,
        w - m
    );
    for tick in [0.0, 0.5, 1.0] {
        let _ = writeln!(s, r#"<text x="8" y="{:.1}">{tick:.1}</text>"#, y(tick) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, w - m - 30.0, h - m + 20.0, max_epoch);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">epoch</text>"#, w / 2.0, h - 12.0);
    for (i, c) in RuleCategory::ALL.into_iter().enumerate() {
        let pts: Vec<String> = trace
            .rows
            .iter()
            .map(|r| format!("{:.1},{:.1}", x(r.epoch), y(r.masses[i])))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            pts.join(" "),
            COLORS[i]
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" fill="{}">{}</text>"#,
            w - m - 110.0,
            m + 16.0 * i as f64,
            COLORS[i],
            &c.column()[5..]
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, LinearConfig, ModelConfig};

    #[test]
    fn l3_counts() {
        let set = build_category_set(Language::L3, 8).unwrap();
        assert_eq!(set.counts(), [1, 69, 8, 178]);
        let aaaabbbb = completed(&[Token::A, Token::A, Token::A, Token::A, Token::B, Token::B, Token::B, Token::B]);
        assert_eq!(set.sequences[0], vec![aaaabbbb]);
        assert!(set.sequences[2].contains(&completed(&[Token::A; 8])));
        assert!(matches!(build_category_set(Language::L3, 17), Err(Error::Resource(_))));
    }

    #[test]
    fn uniform_model_masses_follow_counts() {
        let set = build_category_set(Language::L3, 8).unwrap();
        let mut m = init_model(ModelConfig::Linear(LinearConfig { window: 2, bias: true }), 5, 0).unwrap();
        m.params.fill(0.0);
        let row = category_masses(&m, &set, 0).unwrap();
        for (got, n) in row.masses.iter().zip([1.0, 69.0, 8.0, 178.0]) {
            assert!((got - n / 256.0).abs() < 1e-12);
        }
        assert!((row.log_total - (256.0f64.ln() + 9.0 * (0.2f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn ordering_statistics() {
        let row = |epoch, m: [f64; 4]| MassRow {
            epoch,
            masses: m,
            log_total: 0.0,
        };
        let trace = MassTrace {
            rows: vec![
                row(0, [0.01, 0.3, 0.03, 0.66]),
                row(100, [0.05, 0.1, 0.6, 0.25]),
                row(200, [0.4, 0.1, 0.45, 0.05]),
                row(300, [0.95, 0.02, 0.02, 0.01]),
            ],
        };
        let s = order_stats(&trace).unwrap();
        assert_eq!(s.r2_only_peak_epoch, 100);
        assert_eq!(s.majority_epoch, Some(300));
        assert_eq!(s.dominance_epoch, Some(300));
        assert!(s.r2_first());
        assert!(order_stats(&MassTrace::default()).is_err());

        let single = MassTrace {
            rows: vec![row(0, [0.25; 4])],
        };
        let s = order_stats(&single).unwrap();
        assert_eq!(s.majority_epoch, None);
        assert!(!s.r2_first());
    }

    #[test]
    fn csv_and_svg() {
        let trace = MassTrace {
            rows: vec![MassRow {
                epoch: 0,
                masses: [0.25; 4],
                log_total: 0.0,
            }],
        };
        let mut buf = Vec::new();
        write_mass_csv(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,mass_r1_and_r2,mass_r1_only,mass_r2_only,mass_neither\n"));
        let svg = render_svg(&trace, "a<b");
        assert!(svg.contains("a&lt;b") && svg.ends_with("</svg>\n"));
    }
}
