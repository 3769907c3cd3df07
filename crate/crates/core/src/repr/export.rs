use std::io::Write;

use diffcore::Tensor;

use crate::error::{Error, Result};
use crate::repr::stats::{NUM_STATS, STAT_NAMES};

/// One row per sample: `id, label, c0_min, ..., c{C-1}_q95`. Unlabeled rows
/// leave the label empty.
pub fn write_repr_csv<W: Write>(out: W, ids: &[String], labels: Option<&[usize]>, z: &Tensor<f64>) -> Result<()> {
    let &[b, c, k] = z.shape() else {
        return Err(Error::Invalid(format!("representations must be [B, C, 9], got {:?}", z.shape())));
    };
    if k != NUM_STATS || ids.len() != b || labels.is_some_and(|l| l.len() != b) {
        return Err(Error::Invalid("ids, labels and representations disagree in size".into()));
    }
    let csv_err = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "label".to_string()];
    for ch in 0..c {
        header.extend(STAT_NAMES.iter().map(|s| format!("c{ch}_{s}")));
    }
    w.write_record(&header).map_err(csv_err)?;
    for (i, row) in z.data().chunks_exact(c * k).enumerate() {
        let mut rec = vec![ids[i].clone(), labels.map(|l| l[i].to_string()).unwrap_or_default()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
