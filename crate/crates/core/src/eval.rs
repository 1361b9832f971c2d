//! Per-SNR accuracy and confusion matrices, with CSV/SVG/JSON rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::scalar::Scalar;
use crate::train::argmax;

/// SNR labels averaged into the "high SNR" figure.
pub const HIGH_SNR_MIN: i32 = 10;
pub const HIGH_SNR_MAX: i32 = 18;

const EVAL_CHUNK: usize = 128;

/// Anything that maps frames to class indices.
pub trait Classifier: Sync {
    fn num_classes(&self) -> usize;

    /// Predicted class of each example at `indices`.
    fn classify(&self, data: &Dataset, indices: &[usize]) -> Result<Vec<usize>>;
}

impl<T: Scalar> Classifier for Network<T> {
    fn num_classes(&self) -> usize {
        Network::num_classes(self)
    }

    fn classify(&self, data: &Dataset, indices: &[usize]) -> Result<Vec<usize>> {
        let probs = self.predict_proba(data.frames(indices))?;
        Ok(probs.data().chunks_exact(self.num_classes()).map(argmax).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Series label used in plots.
    pub model: String,
    pub classes: Vec<String>,
    /// Rows are true classes, columns predictions.
    pub confusion: BTreeMap<i32, Vec<Vec<u64>>>,
    pub accuracy: BTreeMap<i32, f64>,
    pub counts: BTreeMap<i32, u64>,
    pub overall_accuracy: f64,
    /// Mean accuracy over the SNR labels in `[10, 18]` that are present.
    pub high_snr_accuracy: Option<f64>,
    pub accuracy_at_18: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisclassRow {
    pub true_class: usize,
    pub predicted: usize,
    pub true_name: String,
    pub predicted_name: String,
    /// Share of the true class's examples given this prediction, in percent.
    pub percent: f64,
}

pub fn evaluate<C: Classifier + ?Sized>(model: &C, test: &Dataset, label: &str) -> Result<EvalReport> {
    if model.num_classes() != test.num_classes() {
        return Err(Error::config(format!(
            "model predicts {} classes but the data has {}",
            model.num_classes(),
            test.num_classes()
        )));
    }
    let idx: Vec<usize> = (0..test.len()).collect();
    let preds: Vec<Vec<usize>> = idx
        .par_chunks(EVAL_CHUNK)
        .map(|c| model.classify(test, c))
        .collect::<Result<_>>()?;
    let nc = test.num_classes();
    let mut confusion: BTreeMap<i32, Vec<Vec<u64>>> = BTreeMap::new();
    for (e, p) in test.examples().iter().zip(preds.into_iter().flatten()) {
        if p >= nc {
            return Err(Error::Index(format!("prediction {p} out of range for {nc} classes")));
        }
        confusion.entry(e.snr).or_insert_with(|| vec![vec![0; nc]; nc])[e.class][p] += 1;
    }
    Ok(EvalReport::from_confusion(label, test.classes().to_vec(), confusion))
}

fn trace_total(m: &[Vec<u64>]) -> (u64, u64) {
    let trace = (0..m.len()).map(|i| m[i][i]).sum();
    let total = m.iter().flatten().sum();
    (trace, total)
}

impl EvalReport {
    /// Derives every summary from the per-SNR matrices.
    pub fn from_confusion(model: &str, classes: Vec<String>, confusion: BTreeMap<i32, Vec<Vec<u64>>>) -> Self {
        let mut accuracy = BTreeMap::new();
        let mut counts = BTreeMap::new();
        let (mut hits, mut all) = (0u64, 0u64);
        for (&snr, m) in &confusion {
            let (t, n) = trace_total(m);
            accuracy.insert(snr, if n == 0 { 0.0 } else { t as f64 / n as f64 });
            counts.insert(snr, n);
            hits += t;
            all += n;
        }
        let high: Vec<f64> = accuracy
            .range(HIGH_SNR_MIN..=HIGH_SNR_MAX)
            .map(|(_, &a)| a)
            .collect();
        EvalReport {
            model: model.to_string(),
            classes,
            high_snr_accuracy: (!high.is_empty()).then(|| high.iter().sum::<f64>() / high.len() as f64),
            accuracy_at_18: accuracy.get(&18).copied(),
            confusion,
            accuracy,
            counts,
            overall_accuracy: if all == 0 { 0.0 } else { hits as f64 / all as f64 },
        }
    }

    pub fn snrs(&self) -> Vec<i32> {
        self.confusion.keys().copied().collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("bad report JSON: {e}")))
    }

    /// `(true, predicted)` percentage of row `true` at `snr`.
    pub fn percent(&self, snr: i32, true_class: usize, predicted: usize) -> Option<f64> {
        let row = self.confusion.get(&snr)?.get(true_class)?;
        let n: u64 = row.iter().sum();
        Some(if n == 0 { 0.0 } else { 100.0 * *row.get(predicted)? as f64 / n as f64 })
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.eq_ignore_ascii_case(name))
    }
}

/// Off-diagonal cells at `snr` holding at least `threshold` percent of their
/// row, largest first.
pub fn misclass_table(report: &EvalReport, snr: i32, threshold: f64) -> Result<Vec<MisclassRow>> {
    if !report.confusion.contains_key(&snr) {
        return Err(Error::Index(format!("no confusion matrix at {snr} dB")));
    }
    let nc = report.classes.len();
    let mut rows = Vec::new();
    for t in 0..nc {
        for p in (0..nc).filter(|&p| p != t) {
            let percent = report.percent(snr, t, p).unwrap_or(0.0);
            if percent >= threshold {
                rows.push(MisclassRow {
                    true_class: t,
                    predicted: p,
                    true_name: report.classes[t].clone(),
                    predicted_name: report.classes[p].clone(),
                    percent,
                });
            }
        }
    }
    rows.sort_by(|a, b| b.percent.total_cmp(&a.percent));
    Ok(rows)
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| Error::io(path, e))
}

pub fn accuracy_csv(report: &EvalReport) -> String {
    let mut s = String::from("snr,accuracy,n\n");
    for (snr, acc) in &report.accuracy {
        writeln!(s, "{snr},{acc:.6},{}", report.counts[snr]).unwrap();
    }
    s
}

pub fn confusion_csv(report: &EvalReport, snr: i32) -> Option<String> {
    let m = report.confusion.get(&snr)?;
    let mut s = String::from("true\\predicted");
    for c in &report.classes {
        write!(s, ",{c}").unwrap();
    }
    s.push('\n');
    for (c, row) in report.classes.iter().zip(m) {
        s.push_str(c);
        for v in row {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    Some(s)
}

pub fn misclass_csv(rows: &[MisclassRow]) -> String {
    let mut s = String::from("true,predicted,percent\n");
    for r in rows {
        writeln!(s, "{},{},{:.2}", r.true_name, r.predicted_name, r.percent).unwrap();
    }
    s
}

/// Writes `report.json`, `accuracy.csv`, one `confusion_<snr>.csv` per SNR,
/// `accuracy.svg` and, when +18 dB was evaluated, `confusion_18.svg`.
pub fn render(report: &EvalReport, out_dir: impl AsRef<Path>) -> Result<()> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir, "report.json", &report.to_json())?;
    write(dir, "accuracy.csv", &accuracy_csv(report))?;
    for &snr in report.confusion.keys() {
        write(dir, &format!("confusion_{snr}.csv"), &confusion_csv(report, snr).unwrap())?;
    }
    write(dir, "accuracy.svg", &accuracy_svg(std::slice::from_ref(report)))?;
    if let Some(svg) = confusion_svg(report, 18) {
        write(dir, "confusion_18.svg", &svg)?;
    }
    Ok(())
}

/// Side-by-side outputs for several evaluated models: `accuracy.svg` with
/// one series each, `accuracy_by_model.csv` and `summary.csv`.
pub fn render_comparison(reports: &[EvalReport], out_dir: impl AsRef<Path>) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::contract("no reports to compare"));
    }
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir, "accuracy.svg", &accuracy_svg(reports))?;
    let mut snrs: Vec<i32> = reports.iter().flat_map(|r| r.snrs()).collect();
    snrs.sort_unstable();
    snrs.dedup();
    let mut s = String::from("snr");
    for r in reports {
        write!(s, ",{}", r.model).unwrap();
    }
    s.push('\n');
    for snr in snrs {
        write!(s, "{snr}").unwrap();
        for r in reports {
            match r.accuracy.get(&snr) {
                Some(a) => write!(s, ",{a:.6}").unwrap(),
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    write(dir, "accuracy_by_model.csv", &s)?;
    let opt = |v: Option<f64>| v.map(|a| format!("{a:.6}")).unwrap_or_default();
    let mut s = String::from("model,overall,high_snr_mean,at_18\n");
    for r in reports {
        writeln!(
            s,
            "{},{:.6},{},{}",
            r.model,
            r.overall_accuracy,
            opt(r.high_snr_accuracy),
            opt(r.accuracy_at_18)
        )
        .unwrap();
    }
    write(dir, "summary.csv", &s)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Accuracy against SNR, one polyline per report.
pub fn accuracy_svg(reports: &[EvalReport]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 150.0, 20.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let snrs: Vec<i32> = reports.iter().flat_map(|r| r.snrs()).collect();
    let lo = snrs.iter().copied().min().unwrap_or(-20) as f64;
    let hi = snrs.iter().copied().max().unwrap_or(18) as f64;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x = |snr: f64| left + (snr - lo) / span * pw;
    let y = |acc: f64| top + (1.0 - acc) * ph;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#).unwrap();
    for k in 0..=5 {
        let acc = k as f64 / 5.0;
        writeln!(
            s,
            r##"<line x1="{left:.2}" y1="{yy:.2}" x2="{x2:.2}" y2="{yy:.2}" stroke="#dddddd"/><text x="{tx:.2}" y="{ty:.2}" text-anchor="end">{acc:.1}</text>"##,
            yy = y(acc),
            x2 = left + pw,
            tx = left - 6.0,
            ty = y(acc) + 4.0
        )
        .unwrap();
    }
    let mut tick = lo;
    while tick <= hi {
        writeln!(
            s,
            r#"<text x="{tx:.2}" y="{ty:.2}" text-anchor="middle">{tick}</text>"#,
            tx = x(tick),
            ty = top + ph + 16.0
        )
        .unwrap();
        tick += 4.0;
    }
    writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{cx:.2}" y="{by:.2}" text-anchor="middle">SNR (dB)</text>"#,
        cx = left + pw / 2.0,
        by = h - 12.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{cy:.2}" text-anchor="middle" transform="rotate(-90 16 {cy:.2})">Accuracy</text>"#,
        cy = top + ph / 2.0
    )
    .unwrap();
    for (i, r) in reports.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = r
            .accuracy
            .iter()
            .map(|(&snr, &a)| format!("{:.2},{:.2}", x(snr as f64), y(a)))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        )
        .unwrap();
        let ly = top + 10.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            esc(&r.model)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Row-normalised heat map of the confusion matrix at `snr`.
pub fn confusion_svg(report: &EvalReport, snr: i32) -> Option<String> {
    let m = report.confusion.get(&snr)?;
    let n = report.classes.len();
    let cell = 40.0;
    let (left, top) = (80.0, 40.0);
    let w = left + cell * n as f64 + 20.0;
    let h = top + cell * n as f64 + 80.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="10">"#
    )
    .unwrap();
    writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="12">{} at {snr} dB</text>"#,
        left + cell * n as f64 / 2.0,
        esc(&report.model)
    )
    .unwrap();
    for (t, row) in m.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for (p, &v) in row.iter().enumerate() {
            let frac = if total == 0 { 0.0 } else { v as f64 / total as f64 };
            let shade = (255.0 * (1.0 - frac)).round() as u8;
            let (cx, cy) = (left + cell * p as f64, top + cell * t as f64);
            let ink = if frac > 0.5 { "white" } else { "black" };
            writeln!(
                s,
                r##"<rect x="{cx}" y="{cy}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="#888888"/><text x="{:.2}" y="{:.2}" text-anchor="middle" fill="{ink}">{:.0}</text>"##,
                cx + cell / 2.0,
                cy + cell / 2.0 + 4.0,
                100.0 * frac
            )
            .unwrap();
        }
    }
    for (i, c) in report.classes.iter().enumerate() {
        let c = esc(c);
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{c}</text>"#,
            left - 6.0,
            top + cell * i as f64 + cell / 2.0 + 4.0
        )
        .unwrap();
        let (tx, ty) = (left + cell * i as f64 + cell / 2.0, top + cell * n as f64 + 10.0);
        writeln!(
            s,
            r#"<text x="{tx:.2}" y="{ty:.2}" text-anchor="end" transform="rotate(-60 {tx:.2} {ty:.2})">{c}</text>"#
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="20" y="{:.2}" transform="rotate(-90 20 {:.2})" text-anchor="middle">true</text>"#,
        top + cell * n as f64 / 2.0,
        top + cell * n as f64 / 2.0
    )
    .unwrap();
    s.push_str("</svg>\n");
    Some(s)
}
