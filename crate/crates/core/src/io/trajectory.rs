use std::path::Path;

use super::{csv_error, parse_f64, IoError};
use crate::flow::FlowSample;

/// Columns `t, k_0 … k_{d−1}, f, proj_grad_norm, min_g`.
pub fn write_trajectory(path: &Path, samples: &[FlowSample]) -> Result<(), IoError> {
    let d = samples.first().map_or(0, |s| s.k.len());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|i| format!("k_{i}")));
    header.extend(["f", "proj_grad_norm", "min_g"].map(String::from));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for s in samples {
        let mut rec = vec![s.t.to_string()];
        rec.extend(s.k.iter().map(f64::to_string));
        rec.extend([s.f, s.proj_grad_norm, s.min_g].map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

pub fn read_trajectory(path: &Path) -> Result<Vec<FlowSample>, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let cols = r.headers().map_err(|e| csv_error(path, e))?.len();
    if cols < 5 {
        return Err(IoError::Parse(format!("{}: trajectory needs at least 5 columns", path.display())));
    }
    let d = cols - 4;
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let field = format!("row {}", row + 1);
        let v = rec.iter().map(|s| parse_f64(&field, s)).collect::<Result<Vec<_>, _>>()?;
        out.push(FlowSample { t: v[0], k: v[1..=d].to_vec(), f: v[d + 1], proj_grad_norm: v[d + 2], min_g: v[d + 3] });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_round_trip() {
        let samples = vec![
            FlowSample { t: 0.0, k: vec![-0.6, 0.5], f: 0.51, proj_grad_norm: 0.3, min_g: 0.4 },
            FlowSample { t: 0.01, k: vec![-0.59, 0.49999999999999994], f: 0.509, proj_grad_norm: 0.29, min_g: f64::INFINITY },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_trajectory(&path, &samples).unwrap();
        assert_eq!(read_trajectory(&path).unwrap(), samples);
    }
}
