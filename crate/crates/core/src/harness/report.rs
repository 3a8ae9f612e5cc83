//! CSV output for convergence curves and capacity sweeps.
//!
//! Every file starts with one `#` comment line naming the schema and the
//! number format, then a header row. Reals are written with exactly nine
//! decimal places; an empty field means "not applicable".
//!
//! Convergence: `step,avg_reward,accept_prob,accept_c1..accept_cG,epsilon,loss`
//!
//! Sweep: `capacity_units,scheme,seed,avg_reward,accept_prob,accept_c1..accept_cG`

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Error;
use crate::harness::config::Scheme;

pub const REAL_PRECISION: usize = 9;

pub fn fmt_real(x: f64) -> String {
    format!("{x:.prec$}", prec = REAL_PRECISION)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

/// One logged point of a training (or greedy) run. Rates cover the
/// decision epochs since the previous row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub avg_reward: f64,
    pub accept_prob: f64,
    pub accept_by_class: Vec<f64>,
    /// Exploration rate at the end of the window; empty for greedy.
    pub epsilon: Option<f64>,
    /// Mean minibatch loss over the window; empty without updates.
    pub loss: Option<f64>,
}

/// One (capacity, scheme, seed) cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub capacity_units: u32,
    pub scheme: Scheme,
    pub seed: u64,
    pub avg_reward: f64,
    pub accept_prob: f64,
    pub accept_by_class: Vec<f64>,
}

fn class_columns(classes: usize) -> impl Iterator<Item = String> {
    (1..=classes).map(|g| format!("accept_c{g}"))
}

pub fn convergence_header(classes: usize) -> Vec<String> {
    let mut h = vec!["step".to_string(), "avg_reward".into(), "accept_prob".into()];
    h.extend(class_columns(classes));
    h.extend(["epsilon".to_string(), "loss".into()]);
    h
}

pub fn sweep_header(classes: usize) -> Vec<String> {
    let mut h = vec![
        "capacity_units".to_string(),
        "scheme".into(),
        "seed".into(),
        "avg_reward".into(),
        "accept_prob".into(),
    ];
    h.extend(class_columns(classes));
    h
}

impl MetricsRow {
    fn fields(&self) -> Vec<String> {
        let mut f = vec![
            self.step.to_string(),
            fmt_real(self.avg_reward),
            fmt_real(self.accept_prob),
        ];
        f.extend(self.accept_by_class.iter().copied().map(fmt_real));
        f.push(fmt_opt(self.epsilon));
        f.push(fmt_opt(self.loss));
        f
    }
}

impl SweepRow {
    fn fields(&self) -> Vec<String> {
        let mut f = vec![
            self.capacity_units.to_string(),
            self.scheme.to_string(),
            self.seed.to_string(),
            fmt_real(self.avg_reward),
            fmt_real(self.accept_prob),
        ];
        f.extend(self.accept_by_class.iter().copied().map(fmt_real));
        f
    }
}

/// Writes a comment line, the header and one record per row.
pub fn emit_csv<I>(path: &Path, schema: &str, header: &[String], rows: I) -> Result<(), Error>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(
        out,
        "# metaslice {schema} v1; reals fixed to {REAL_PRECISION} decimal places; empty = not applicable"
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::InvalidInput(format!(
                "row has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_convergence(path: &Path, classes: usize, rows: &[MetricsRow]) -> Result<(), Error> {
    emit_csv(
        path,
        "convergence",
        &convergence_header(classes),
        rows.iter().map(MetricsRow::fields),
    )
}

pub fn write_sweep(path: &Path, classes: usize, rows: &[SweepRow]) -> Result<(), Error> {
    emit_csv(path, "sweep", &sweep_header(classes), rows.iter().map(SweepRow::fields))
}

/// Reads back a file written by [`emit_csv`]: header and raw records.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), Error> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

/// Parses convergence rows back into typed records.
pub fn read_convergence(path: &Path) -> Result<Vec<MetricsRow>, Error> {
    let (header, rows) = read_csv(path)?;
    let classes = header.len().saturating_sub(5);
    if header != convergence_header(classes) {
        return Err(Error::InvalidInput(format!("unexpected convergence header {header:?}")));
    }
    let num =
        |s: &str| -> Result<f64, Error> { s.parse().map_err(|_| Error::InvalidInput(format!("bad number {s:?}"))) };
    let opt = |s: &str| -> Result<Option<f64>, Error> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s).map(Some)
        }
    };
    rows.iter()
        .map(|r| {
            Ok(MetricsRow {
                step: r[0]
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad step {:?}", r[0])))?,
                avg_reward: num(&r[1])?,
                accept_prob: num(&r[2])?,
                accept_by_class: r[3..3 + classes].iter().map(|s| num(s)).collect::<Result<_, _>>()?,
                epsilon: opt(&r[3 + classes])?,
                loss: opt(&r[4 + classes])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_rows_give_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        write_convergence(&path, 3, &[]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("# metaslice convergence v1"));
        assert_eq!(
            lines[1],
            "step,avg_reward,accept_prob,accept_c1,accept_c2,accept_c3,epsilon,loss"
        );
    }

    #[test]
    fn sweep_column_order() {
        assert_eq!(
            sweep_header(3).join(","),
            "capacity_units,scheme,seed,avg_reward,accept_prob,accept_c1,accept_c2,accept_c3"
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let row = SweepRow {
            capacity_units: 10,
            scheme: Scheme::Greedy,
            seed: 3,
            avg_reward: 0.5,
            accept_prob: 0.25,
            accept_by_class: vec![0.1, 0.2, 0.3],
        };
        write_sweep(&path, 3, &[row]).unwrap();
        let (_, rows) = read_csv(&path).unwrap();
        assert_eq!(
            rows,
            vec![vec![
                "10",
                "greedy",
                "3",
                "0.500000000",
                "0.250000000",
                "0.100000000",
                "0.200000000",
                "0.300000000"
            ]]
        );
    }

    #[test]
    fn mismatched_row_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let header = vec!["a".to_string(), "b".into()];
        assert!(emit_csv(&dir.path().join("x.csv"), "x", &header, [vec!["1".to_string()]]).is_err());
    }

    proptest! {
        #[test]
        fn convergence_round_trip(rows in prop::collection::vec(
            (0u64..1_000_000, -10.0f64..10.0, 0.0f64..=1.0, prop::collection::vec(0.0f64..=1.0, 3),
             prop::option::of(0.0f64..=1.0), prop::option::of(0.0f64..1e4)), 0..20)) {
            let rows: Vec<MetricsRow> = rows.into_iter().map(|(step, r, a, c, e, l)| MetricsRow {
                step, avg_reward: r, accept_prob: a, accept_by_class: c, epsilon: e, loss: l,
            }).collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c.csv");
            write_convergence(&path, 3, &rows).unwrap();
            let back = read_convergence(&path).unwrap();
            prop_assert_eq!(back.len(), rows.len());
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
            for (x, y) in rows.iter().zip(&back) {
                prop_assert_eq!(x.step, y.step);
                prop_assert!(close(x.avg_reward, y.avg_reward) && close(x.accept_prob, y.accept_prob));
                for (a, b) in x.accept_by_class.iter().zip(&y.accept_by_class) {
                    prop_assert!(close(*a, *b));
                }
                prop_assert_eq!(x.epsilon.is_some(), y.epsilon.is_some());
                prop_assert_eq!(x.loss.is_some(), y.loss.is_some());
                if let (Some(a), Some(b)) = (x.loss, y.loss) { prop_assert!(close(a, b)); }
            }
        }
    }
}
