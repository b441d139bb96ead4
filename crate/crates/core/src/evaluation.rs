//! Category-stratified accuracy, multi-seed aggregation, Welch's t-test and
//! result tables.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::dataset::{Category, ReferenceInstance};
use crate::features::FeatureArchive;
use crate::model::{predict, ModelError, ParameterSet};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predictions} predictions for {instances} instances")]
    LengthMismatch { predictions: usize, instances: usize },
    #[error("prediction {index} is {value}; expected 0 (target) or 1 (distractor)")]
    BadPrediction { index: usize, value: usize },
    #[error("no runs to aggregate")]
    NoRuns,
    #[error("sample {which} has {n} values; at least 2 needed")]
    SampleTooSmall { which: char, n: usize },
    #[error("both samples have zero variance and different means")]
    ZeroVariance,
    #[error("non-finite value in sample {0}")]
    NonFinite(char),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Percentages in `[0, 100]` with the counts they came from. A category with
/// no instances is absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoryAccuracy {
    pub visual: Option<f64>,
    pub blind: Option<f64>,
    pub all: f64,
    pub visual_correct: usize,
    pub visual_count: usize,
    pub blind_correct: usize,
    pub blind_count: usize,
}

fn pct(correct: usize, count: usize) -> Option<f64> {
    (count > 0).then(|| 100.0 * correct as f64 / count as f64)
}

impl CategoryAccuracy {
    pub fn from_counts(
        visual_correct: usize,
        visual_count: usize,
        blind_correct: usize,
        blind_count: usize,
    ) -> Self {
        CategoryAccuracy {
            visual: pct(visual_correct, visual_count),
            blind: pct(blind_correct, blind_count),
            all: pct(visual_correct + blind_correct, visual_count + blind_count).unwrap_or(0.0),
            visual_correct,
            visual_count,
            blind_correct,
            blind_count,
        }
    }

    pub fn correct_total(&self) -> usize {
        self.visual_correct + self.blind_correct
    }

    pub fn count_total(&self) -> usize {
        self.visual_count + self.blind_count
    }

    pub fn get(&self, field: Field) -> Option<f64> {
        match field {
            Field::Visual => self.visual,
            Field::Blind => self.blind,
            Field::All => Some(self.all),
        }
    }

    /// `visual=… blind=… all=…`, one decimal, `absent` for a missing category.
    pub fn summary_line(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "absent".into(), |v| format!("{v:.1}"));
        format!(
            "visual={} blind={} all={:.1}",
            f(self.visual),
            f(self.blind),
            self.all
        )
    }
}

/// Accuracy columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Visual,
    Blind,
    All,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::Visual, Field::Blind, Field::All];

    pub fn as_str(self) -> &'static str {
        match self {
            Field::Visual => "visual",
            Field::Blind => "blind",
            Field::All => "all",
        }
    }
}

/// `predicted[i]` is the chosen candidate of instance `i`: 0 for the target,
/// 1 for the distractor.
pub fn accuracy(
    predicted: &[usize],
    instances: &[ReferenceInstance],
) -> Result<CategoryAccuracy, EvalError> {
    if predicted.len() != instances.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predicted.len(),
            instances: instances.len(),
        });
    }
    let mut counts = [[0usize; 2]; 2];
    for (index, (&p, inst)) in predicted.iter().zip(instances).enumerate() {
        if p > 1 {
            return Err(EvalError::BadPrediction { index, value: p });
        }
        let c = match inst.category {
            Category::Visual => 0,
            Category::Blind => 1,
        };
        counts[c][1] += 1;
        counts[c][0] += usize::from(p == 0);
    }
    Ok(CategoryAccuracy::from_counts(
        counts[0][0],
        counts[0][1],
        counts[1][0],
        counts[1][1],
    ))
}

/// Runs the model over `instances` and scores the predictions.
pub fn evaluate(
    instances: &[ReferenceInstance],
    archive: &FeatureArchive,
    params: &ParameterSet,
) -> Result<CategoryAccuracy, ModelError> {
    let preds: Vec<usize> = predict(instances, archive, params)?
        .iter()
        .map(|p| p.predicted_index)
        .collect();
    Ok(accuracy(&preds, instances).expect("one prediction per instance"))
}

/// A mean with its sample standard deviation (absent for a single value).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: Option<f64>,
}

pub fn aggregate(values: &[f64]) -> Result<Stat, EvalError> {
    if values.is_empty() {
        return Err(EvalError::NoRuns);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    Ok(Stat { mean, std })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateAccuracy {
    /// Absent unless every run has the category.
    pub visual: Option<Stat>,
    pub blind: Option<Stat>,
    pub all: Stat,
    pub runs: usize,
}

pub fn aggregate_runs(runs: &[CategoryAccuracy]) -> Result<AggregateAccuracy, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::NoRuns);
    }
    let column = |f: Field| -> Result<Option<Stat>, EvalError> {
        let vals: Option<Vec<f64>> = runs.iter().map(|r| r.get(f)).collect();
        vals.map(|v| aggregate(&v)).transpose()
    };
    Ok(AggregateAccuracy {
        visual: column(Field::Visual)?,
        blind: column(Field::Blind)?,
        all: column(Field::All)?.expect("all is always present"),
        runs: runs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub dof: f64,
    /// Two-tailed.
    pub p: f64,
    /// Set when both samples are constant with equal means; `p` is then 1 by
    /// convention.
    pub degenerate: bool,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Welch's unequal-variance two-sample t-test, two-tailed.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TestResult, EvalError> {
    for (which, s) in [('a', a), ('b', b)] {
        if s.len() < 2 {
            return Err(EvalError::SampleTooSmall { which, n: s.len() });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::NonFinite(which));
        }
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (qa, qb) = (va / na, vb / nb);
    let se2 = qa + qb;
    if se2 == 0.0 {
        if ma == mb {
            return Ok(TestResult {
                t: 0.0,
                dof: na + nb - 2.0,
                p: 1.0,
                degenerate: true,
            });
        }
        return Err(EvalError::ZeroVariance);
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    Ok(TestResult {
        t,
        dof,
        p: student_t_two_tailed(t, dof),
        degenerate: false,
    })
}

/// Welch tests of two groups of runs on every accuracy column present in
/// both groups.
pub fn compare_runs(
    a: &[CategoryAccuracy],
    b: &[CategoryAccuracy],
) -> Vec<(Field, Result<TestResult, EvalError>)> {
    Field::ALL
        .into_iter()
        .filter_map(|f| {
            let xa: Option<Vec<f64>> = a.iter().map(|r| r.get(f)).collect();
            let xb: Option<Vec<f64>> = b.iter().map(|r| r.get(f)).collect();
            Some((f, welch_t(&xa?, &xb?)))
        })
        .collect()
}

/// `P(|T| ≥ |t|)` for Student's t with `dof` degrees of freedom.
pub fn student_t_two_tailed(t: f64, dof: f64) -> f64 {
    if t.is_nan() || dof.is_nan() || dof <= 0.0 {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = dof / (dof + t * t);
    regularized_incomplete_beta(x, dof / 2.0, 0.5).clamp(0.0, 1.0)
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut sum = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        sum += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + sum.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// `I_x(a, b)`, the regularized incomplete beta function.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

/// One line of a result table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub model: String,
    pub split: String,
    pub visual: Option<Stat>,
    pub blind: Option<Stat>,
    pub all: Option<Stat>,
}

impl ResultRow {
    pub fn from_aggregate(model: &str, split: &str, agg: &AggregateAccuracy) -> Self {
        ResultRow {
            model: model.to_string(),
            split: split.to_string(),
            visual: agg.visual,
            blind: agg.blind,
            all: Some(agg.all),
        }
    }

    fn cells(&self) -> [Option<Stat>; 3] {
        [self.visual, self.blind, self.all]
    }
}

const RESULT_HEADER: [&str; 8] = [
    "split",
    "model",
    "visual",
    "visual_std",
    "blind",
    "blind_std",
    "all",
    "all_std",
];

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Writes rows as CSV; absent values are empty fields.
pub fn write_results<W: io::Write>(rows: &[ResultRow], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_HEADER)?;
    for r in rows {
        let mut rec = vec![r.split.clone(), r.model.clone()];
        for cell in r.cells() {
            rec.push(opt_num(cell.map(|s| s.mean)));
            rec.push(opt_num(cell.and_then(|s| s.std)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results<R: io::Read>(input: R) -> Result<Vec<ResultRow>, EvalError> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(RESULT_HEADER) {
        return Err(EvalError::Parse(format!(
            "expected header {}",
            RESULT_HEADER.join(",")
        )));
    }
    let num = |s: &str| -> Result<Option<f64>, EvalError> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| EvalError::Parse(format!("not a number: {s:?}")))
        }
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut cells = [None; 3];
        for (i, cell) in cells.iter_mut().enumerate() {
            let mean = num(&rec[2 + 2 * i])?;
            let std = num(&rec[3 + 2 * i])?;
            *cell = mean.map(|mean| Stat { mean, std });
        }
        rows.push(ResultRow {
            split: rec[0].to_string(),
            model: rec[1].to_string(),
            visual: cells[0],
            blind: cells[1],
            all: cells[2],
        });
    }
    Ok(rows)
}

pub fn write_results_file(rows: &[ResultRow], path: &Path) -> Result<(), EvalError> {
    write_results(rows, std::fs::File::create(path)?)
}

pub fn read_results_file(path: &Path) -> Result<Vec<ResultRow>, EvalError> {
    read_results(std::fs::File::open(path)?)
}

fn render_cell(s: Option<Stat>) -> String {
    match s {
        None => "-".to_string(),
        Some(Stat { mean, std: None }) => format!("{mean:.1}"),
        Some(Stat {
            mean,
            std: Some(sd),
        }) => format!("{mean:.1} ({sd:.1})"),
    }
}

const TABLE_COLUMNS: [&str; 4] = ["Model", "Visual", "Blind", "All"];
const COLUMN_GAP: &str = "  ";

/// Fixed-width table: a `Split: <split>` title, a header and one line per
/// row. Means and stds have one decimal; a missing std prints the mean
/// alone, a missing value prints `-`. Lines carry no trailing spaces.
pub fn render_table(rows: &[ResultRow], split: &str) -> String {
    let body: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            let [v, b, a] = r.cells().map(render_cell);
            [r.model.clone(), v, b, a]
        })
        .collect();
    let mut widths = TABLE_COLUMNS.map(str::len);
    for line in &body {
        for (w, cell) in widths.iter_mut().zip(line) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let join = |cells: [&str; 4]| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        padded.join(COLUMN_GAP).trim_end().to_string()
    };
    let mut out = String::new();
    let _ = writeln!(out, "Split: {split}");
    let _ = writeln!(out, "{}", join(TABLE_COLUMNS));
    for line in &body {
        let _ = writeln!(out, "{}", join([&line[0], &line[1], &line[2], &line[3]]));
    }
    out
}

fn parse_cell(s: &str) -> Result<Option<Stat>, EvalError> {
    let s = s.trim();
    let bad = || EvalError::Parse(format!("bad cell {s:?}"));
    if s == "-" {
        return Ok(None);
    }
    match s.split_once(" (") {
        Some((mean, rest)) => {
            let sd = rest.strip_suffix(')').ok_or_else(bad)?;
            Ok(Some(Stat {
                mean: mean.parse().map_err(|_| bad())?,
                std: Some(sd.parse().map_err(|_| bad())?),
            }))
        }
        None => Ok(Some(Stat {
            mean: s.parse().map_err(|_| bad())?,
            std: None,
        })),
    }
}

/// Inverse of [`render_table`] for rows whose numbers have one decimal.
pub fn parse_table(text: &str) -> Result<(String, Vec<ResultRow>), EvalError> {
    let mut lines = text.lines();
    let split = lines
        .next()
        .and_then(|l| l.strip_prefix("Split: "))
        .ok_or_else(|| EvalError::Parse("missing 'Split:' title".into()))?
        .to_string();
    let header = lines
        .next()
        .ok_or_else(|| EvalError::Parse("missing header".into()))?;
    let mut offsets = [0usize; 4];
    let mut from = 0;
    for (i, name) in TABLE_COLUMNS.iter().enumerate() {
        let at = header[from..]
            .find(name)
            .ok_or_else(|| EvalError::Parse(format!("header lacks {name}")))?
            + from;
        offsets[i] = at;
        from = at + name.len();
    }
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let field = |i: usize| -> &str {
            let start = offsets[i].min(line.len());
            let end = offsets.get(i + 1).map_or(line.len(), |&e| e.min(line.len()));
            &line[start..end]
        };
        rows.push(ResultRow {
            model: field(0).trim_end().to_string(),
            split: split.clone(),
            visual: parse_cell(field(1))?,
            blind: parse_cell(field(2))?,
            all: parse_cell(field(3))?,
        });
    }
    Ok((split, rows))
}

/// `x,y` CSV for external plotting.
pub fn write_plot_data<W: io::Write>(
    x_name: &str,
    y_name: &str,
    points: &[(f64, f64)],
    out: W,
) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([x_name, y_name])?;
    for (x, y) in points {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
