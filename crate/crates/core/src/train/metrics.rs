use std::path::Path;

use crate::data::disk::write_atomic;
use crate::error::Result;

pub const CSV_HEADER: &str = "epoch,split,loss,acc,lr,seconds";

/// One row of a metrics file.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub acc: f64,
    pub lr: f64,
    pub seconds: f64,
}

pub fn to_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.split, r.loss, r.acc, r.lr, r.seconds
        ));
    }
    s
}

/// Rewrites the whole file atomically, so readers never see a partial row.
pub fn write_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    write_atomic(path, to_csv(records).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let r = MetricsRecord {
            epoch: 1,
            split: "val".into(),
            loss: 0.5,
            acc: 0.25,
            lr: 3e-4,
            seconds: 0.0,
        };
        assert_eq!(
            to_csv(&[r]),
            "epoch,split,loss,acc,lr,seconds\n1,val,0.5,0.25,0.0003,0\n"
        );
    }
}
