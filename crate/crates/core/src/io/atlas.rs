use std::path::Path;

use super::{csv_error, parse_f64, IoError};
use crate::linalg::Mat;
use crate::passivity::{PassivityCertificate, PassivityMode, Strictness};
use crate::region::{GainCube, RegionCell, RejectedCube, VerifiedRegion};

/// Alias kept for readability at call sites that deal with files.
pub type Atlas = VerifiedRegion;

const VERIFIED: &str = "verified";
const REJECTED: &str = "rejected";

/// One row per tested cube:
/// `status, coord_*, center_*, edge, mode, lambda_max, lambda_min_p,
/// equality_residual, port_degenerate, p_<i>_<j>`. Rejected cubes leave the
/// certificate columns empty and store their best `λ_max`.
pub fn write_atlas(path: &Path, region: &VerifiedRegion) -> Result<(), IoError> {
    let d = region.dim();
    let n = region
        .cubes
        .iter()
        .find_map(|c| c.cube.certificate.as_ref().map(|cert| cert.p.nrows()))
        .unwrap_or(0);
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["status".to_string()];
    header.extend((0..d).map(|i| format!("coord_{i}")));
    header.extend((0..d).map(|i| format!("center_{i}")));
    header.extend(["edge", "mode", "lambda_max", "lambda_min_p", "equality_residual", "port_degenerate"].map(String::from));
    for i in 0..n {
        header.extend((0..n).map(|j| format!("p_{i}_{j}")));
    }
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    let blank = |k: usize| std::iter::repeat_n(String::new(), k);
    for cell in &region.cubes {
        let mut rec = vec![VERIFIED.to_string()];
        rec.extend(cell.coord.iter().map(i64::to_string));
        rec.extend(cell.cube.center.iter().map(f64::to_string));
        rec.push(cell.cube.edge.to_string());
        match &cell.cube.certificate {
            Some(cert) => {
                rec.push(mode_name(cert.mode.kind).into());
                rec.push(cert.lambda_max_constraint.to_string());
                rec.push(cert.lambda_min_p.to_string());
                rec.push(cert.equality_residual.to_string());
                rec.push(cert.port_degenerate.to_string());
                rec.extend(cert.p.row_iter().flat_map(|r| r.iter().map(f64::to_string).collect::<Vec<_>>()));
            }
            None => rec.extend(blank(5 + n * n)),
        }
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    for rej in &region.rejected {
        let mut rec = vec![REJECTED.to_string()];
        rec.extend(rej.coord.iter().map(i64::to_string));
        rec.extend(rej.center.iter().map(f64::to_string));
        rec.push(region.edge.to_string());
        rec.push(String::new());
        rec.push(rej.best_lambda_max.to_string());
        rec.extend(blank(3 + n * n));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

fn mode_name(kind: Strictness) -> &'static str {
    match kind {
        Strictness::Strict => "strict",
        Strictness::Nonstrict => "nonstrict",
    }
}

pub fn read_atlas(path: &Path) -> Result<VerifiedRegion, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_error(path, e))?.iter().map(String::from).collect();
    let d = header.iter().filter(|h| h.starts_with("coord_")).count();
    let np = header.iter().filter(|h| h.starts_with("p_")).count();
    let n = (np as f64).sqrt().round() as usize;
    if d == 0 || n * n != np || header.len() != 1 + 2 * d + 6 + np {
        return Err(IoError::Parse(format!("{}: unexpected atlas header", path.display())));
    }
    let mut cubes = Vec::new();
    let mut rejected = Vec::new();
    let mut edge = f64::NAN;
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let field = |name: &str| format!("row {} {name}", row + 1);
        let coord = (0..d)
            .map(|i| rec[1 + i].trim().parse::<i64>().map_err(|_| IoError::field(field("coord"), "not an integer")))
            .collect::<Result<Vec<_>, _>>()?;
        let center = (0..d).map(|i| parse_f64(&field("center"), &rec[1 + d + i])).collect::<Result<Vec<_>, _>>()?;
        let base = 1 + 2 * d;
        edge = parse_f64(&field("edge"), &rec[base])?;
        match &rec[0] {
            VERIFIED => {
                let certificate = if rec[base + 1].is_empty() {
                    None
                } else {
                    let kind = match &rec[base + 1] {
                        "strict" => Strictness::Strict,
                        "nonstrict" => Strictness::Nonstrict,
                        other => return Err(IoError::field(field("mode"), format!("unknown mode `{other}`"))),
                    };
                    let port_degenerate = rec[base + 5]
                        .parse::<bool>()
                        .map_err(|_| IoError::field(field("port_degenerate"), "expected true or false"))?;
                    let p = (0..np)
                        .map(|i| parse_f64(&field("p"), &rec[base + 6 + i]))
                        .collect::<Result<Vec<_>, _>>()?;
                    Some(PassivityCertificate {
                        p: Mat::from_row_slice(n, n, &p),
                        mode: PassivityMode::from_kind(kind),
                        lambda_max_constraint: parse_f64(&field("lambda_max"), &rec[base + 2])?,
                        lambda_min_p: parse_f64(&field("lambda_min_p"), &rec[base + 3])?,
                        equality_residual: parse_f64(&field("equality_residual"), &rec[base + 4])?,
                        port_degenerate,
                    })
                };
                cubes.push(RegionCell { coord, cube: GainCube { center, edge, certificate } });
            }
            REJECTED => {
                let best_lambda_max = parse_f64(&field("lambda_max"), &rec[base + 2])?;
                rejected.push(RejectedCube { coord, center, best_lambda_max });
            }
            other => return Err(IoError::field(field("status"), format!("unknown status `{other}`"))),
        }
    }
    let Some(first) = cubes.iter().find(|c| c.coord.iter().all(|v| *v == 0)).or(cubes.first()) else {
        return Err(IoError::Parse(format!("{}: atlas has no verified cubes", path.display())));
    };
    let grid_anchor = first.cube.center.iter().zip(&first.coord).map(|(c, k)| c - *k as f64 * edge).collect();
    cubes.sort_by(|a, b| a.coord.cmp(&b.coord));
    Ok(VerifiedRegion { cubes, grid_anchor, edge, rejected })
}
