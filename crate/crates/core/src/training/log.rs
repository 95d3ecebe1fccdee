//! Loss and epoch-metric CSV files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::LossReport;

pub const LOSS_HEADER: &str = "iteration,epoch,step,loss_d,loss_g_adv,loss_g_rec,loss_total";
pub const EPOCH_HEADER: &str = "epoch,iteration,train_mse,test_mse";

/// One row of the loss log. `epoch` and `step` are 1-based.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub epoch: u64,
    pub step: u64,
    pub report: LossReport,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: u64,
    pub iteration: u64,
    pub train_mse: f64,
    pub test_mse: f64,
}

/// Nine significant digits in plain decimal; enough to recover any `f32`.
pub fn decimal(v: f32) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    // The exponent of the shortest scientific form is exact, unlike log10.
    let sci = format!("{v:e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    let places = (8 - exp).max(0) as usize;
    format!("{v:.places$}")
}

impl LossRow {
    pub fn to_csv(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{},{},{},{}",
            r.iteration,
            self.epoch,
            self.step,
            decimal(r.l_disc),
            decimal(r.l_adv_g),
            decimal(r.l_rec),
            decimal(r.l_total)
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed loss log row {line:?}"));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return Err(bad());
        }
        let int = |s: &str| s.parse::<u64>().map_err(|_| bad());
        let real = |s: &str| s.parse::<f32>().map_err(|_| bad());
        Ok(LossRow {
            epoch: int(f[1])?,
            step: int(f[2])?,
            report: LossReport {
                iteration: int(f[0])?,
                l_disc: real(f[3])?,
                l_adv_g: real(f[4])?,
                l_rec: real(f[5])?,
                l_total: real(f[6])?,
            },
        })
    }
}

impl EpochRow {
    pub fn to_csv(&self) -> String {
        format!("{},{},{:.9e},{:.9e}", self.epoch, self.iteration, self.train_mse, self.test_mse)
    }
}

/// Read a loss log written by [`CsvLog`].
pub fn read_loss_log(path: &Path) -> Result<Vec<LossRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_HEADER) {
        return Err(Error::Config(format!("{} is not a loss log", path.display())));
    }
    lines.filter(|l| !l.trim().is_empty()).map(LossRow::parse).collect()
}

/// Append-only CSV with a fixed header. Reopening for a resumed run keeps the
/// rows whose first field is at most `keep_through` and drops the rest.
pub struct CsvLog {
    out: BufWriter<fs::File>,
}

impl CsvLog {
    pub fn open(path: &Path, header: &str, keep_through: Option<u64>) -> Result<Self> {
        let mut kept = String::new();
        if let (Some(limit), true) = (keep_through, path.exists()) {
            let text = fs::read_to_string(path)?;
            for line in text.lines().skip(1) {
                let first = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
                match first {
                    Some(k) if k <= limit => {
                        kept.push_str(line);
                        kept.push('\n');
                    }
                    _ => {}
                }
            }
        }
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "{header}")?;
        out.write_all(kept.as_bytes())?;
        Ok(CsvLog { out })
    }

    pub fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
