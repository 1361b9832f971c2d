//! Evaluation and rendering against stub classifiers.

mod common;

use modrec_core::eval::{self, Classifier, EvalReport};
use modrec_core::{Dataset, Result};

struct Oracle;

impl Classifier for Oracle {
    fn num_classes(&self) -> usize {
        4
    }

    fn classify(&self, data: &Dataset, indices: &[usize]) -> Result<Vec<usize>> {
        Ok(data.labels(indices))
    }
}

/// Right at high SNR, class 0 otherwise.
struct Threshold;

impl Classifier for Threshold {
    fn num_classes(&self) -> usize {
        4
    }

    fn classify(&self, data: &Dataset, indices: &[usize]) -> Result<Vec<usize>> {
        Ok(indices
            .iter()
            .map(|&i| {
                let e = &data.examples()[i];
                if e.snr >= 10 {
                    e.class
                } else {
                    0
                }
            })
            .collect())
    }
}

fn snrs() -> Vec<i32> {
    (-20..=18).step_by(2).collect()
}

#[test]
fn row_sums_match_cell_counts() {
    let d = common::dataset(4, &snrs(), 5, 1);
    let (_, _, test) = d.split(0).unwrap();
    let r = eval::evaluate(&Threshold, &test, "t").unwrap();
    let cells = test.cell_counts();
    for (&snr, m) in &r.confusion {
        for (c, row) in m.iter().enumerate() {
            assert_eq!(row.iter().sum::<u64>() as usize, cells[&(c, snr)]);
        }
        let want = if snr >= 10 { 1.0 } else { 0.25 };
        assert!((r.accuracy[&snr] - want).abs() < 1e-12);
    }
    assert_eq!(r.high_snr_accuracy, Some(1.0));
    assert_eq!(r.accuracy_at_18, Some(1.0));
}

#[test]
fn rendering_is_complete_and_deterministic() {
    let d = common::dataset(4, &snrs(), 5, 2);
    let r = eval::evaluate(&Oracle, &d, "oracle").unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    eval::render(&r, a.path()).unwrap();
    eval::render(&r, b.path()).unwrap();
    let csv = std::fs::read_to_string(a.path().join("accuracy.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    let mut names: Vec<String> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.contains(&"confusion_18.svg".to_string()));
    assert!(names.contains(&"confusion_-20.csv".to_string()));
    assert_eq!(names.len(), 4 + 20);
    for n in &names {
        assert_eq!(std::fs::read(a.path().join(n)).unwrap(), std::fs::read(b.path().join(n)).unwrap(), "{n}");
    }
    let back = EvalReport::from_json(&std::fs::read_to_string(a.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn svg_is_well_formed_with_one_series_per_model() {
    let d = common::dataset(4, &snrs(), 5, 3);
    let r1 = eval::evaluate(&Oracle, &d, "oracle").unwrap();
    let r2 = eval::evaluate(&Threshold, &d, "threshold <10 dB").unwrap();
    let r3 = eval::evaluate(&Threshold, &d, "again").unwrap();
    let reports = [r1, r2, r3];
    let svg = eval::accuracy_svg(&reports);
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let lines = doc.descendants().filter(|n| n.has_tag_name("polyline")).count();
    assert_eq!(lines, 3);
    let texts: Vec<&str> = doc.descendants().filter_map(|n| n.text()).collect();
    assert!(texts.iter().any(|t| t.contains("SNR")));
    assert!(texts.iter().any(|t| t.contains("ccuracy")));

    let heat = eval::confusion_svg(&reports[1], 18).unwrap();
    let doc = roxmltree::Document::parse(&heat).unwrap();
    let cells = doc.descendants().filter(|n| n.has_tag_name("rect")).count();
    assert!(cells >= 16);
    assert!(eval::confusion_svg(&reports[1], 7).is_none());
}

#[test]
fn comparison_outputs() {
    let d = common::dataset(4, &snrs(), 5, 4);
    let reports = [
        eval::evaluate(&Oracle, &d, "a").unwrap(),
        eval::evaluate(&Threshold, &d, "b").unwrap(),
    ];
    let dir = tempfile::tempdir().unwrap();
    eval::render_comparison(&reports, dir.path()).unwrap();
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.contains("a,1.000000,1.000000,1.000000"));
    let by_model = std::fs::read_to_string(dir.path().join("accuracy_by_model.csv")).unwrap();
    assert_eq!(by_model.lines().next().unwrap(), "snr,a,b");
    assert!(eval::render_comparison(&[], dir.path()).is_err());
}
