use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::config::validate_arm_name;
use super::experiment::MetricsRecord;

/// Metrics written per arm, in file-name form.
pub const CSV_METRICS: [&str; 3] = ["train_loss", "test_loss", "test_accuracy"];

fn metric(record: &MetricsRecord, name: &str) -> f64 {
    match name {
        "train_loss" => record.train_loss,
        "test_loss" => record.test_loss,
        _ => record.test_accuracy,
    }
}

fn value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `<arm>_<metric>.csv` for every arm and metric.
///
/// With one seed each file has an `epoch,value` header. With several seeds
/// the per-run file gets a `seed,epoch,value` header and a companion
/// `<arm>_<metric>_mean.csv` holds the per-epoch mean across seeds. Wall
/// time is left out so reruns produce identical bytes.
pub fn write_csv(records: &[MetricsRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Argument("no records to write".into()));
    }
    let mut arms: Vec<&str> = Vec::new();
    for r in records {
        validate_arm_name(&r.arm)?;
        if !arms.contains(&r.arm.as_str()) {
            arms.push(&r.arm);
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut written = Vec::new();
    let mut write = |name: String, body: String| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    for arm in arms {
        let rows: Vec<&MetricsRecord> = records.iter().filter(|r| r.arm == arm).collect();
        let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        for m in CSV_METRICS {
            if seeds.len() == 1 {
                let mut body = String::from("epoch,value\n");
                for r in &rows {
                    writeln!(body, "{},{}", r.epoch, value(metric(r, m))).unwrap();
                }
                write(format!("{arm}_{m}.csv"), body)?;
                continue;
            }
            let mut body = String::from("seed,epoch,value\n");
            let mut by_epoch: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for r in &rows {
                writeln!(body, "{},{},{}", r.seed, r.epoch, value(metric(r, m))).unwrap();
                by_epoch.entry(r.epoch).or_default().push(metric(r, m));
            }
            write(format!("{arm}_{m}.csv"), body)?;

            let mut mean = String::from("epoch,value\n");
            for (epoch, vs) in by_epoch {
                // An epoch some seeds never reached has no mean.
                let v = if vs.len() == seeds.len() {
                    vs.iter().sum::<f64>() / vs.len() as f64
                } else {
                    f64::NAN
                };
                writeln!(mean, "{epoch},{}", value(v)).unwrap();
            }
            write(format!("{arm}_{m}_mean.csv"), mean)?;
        }
    }
    Ok(written)
}
