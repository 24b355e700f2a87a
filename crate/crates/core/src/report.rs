//! Artifact writers: nodal fields as CSV, grids and reports as JSON, and the
//! continuation convergence table. Float formatting uses the shortest
//! round-trip representation, so identical runs produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::continuation::ContinuationReport;
use crate::error::Result;
use crate::grid::{Grid, ScalarField};

/// CSV rows `x[,y],value`, one per node.
pub fn field_csv(field: &ScalarField) -> String {
    let grid = field.grid();
    let mut out = String::new();
    if grid.dim() == 1 {
        out.push_str("x,value\n");
        for n in 0..grid.node_count() {
            let _ = writeln!(out, "{},{}", grid.coord(n, 0), field.get(n));
        }
    } else {
        out.push_str("x,y,value\n");
        for n in 0..grid.node_count() {
            let _ = writeln!(out, "{},{},{}", grid.coord(n, 0), grid.coord(n, 1), field.get(n));
        }
    }
    out
}

pub fn write_field_csv(path: &Path, field: &ScalarField) -> Result<()> {
    fs::write(path, field_csv(field))?;
    Ok(())
}

/// Reads a field back from the CSV layout of [`field_csv`]; values are taken
/// in row order and must match the grid node count.
pub fn read_field_csv(path: &Path, grid: &Grid) -> Result<ScalarField> {
    let text = fs::read_to_string(path)?;
    let mut values = Vec::with_capacity(grid.node_count());
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let last = line.rsplit(',').next().unwrap_or_default();
        values.push(last.trim().parse::<f64>().map_err(|e| {
            crate::error::Error::InvalidParameter(format!("bad CSV value {last:?}: {e}"))
        })?);
    }
    ScalarField::from_values(grid, values)
}

pub fn write_grid_json(path: &Path, grid: &Grid) -> Result<()> {
    let text = serde_json::to_string_pretty(&grid.descriptor())?;
    fs::write(path, text)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Convergence table: one row per rung with norms, slacks, residuals, and
/// the Cauchy difference to the previous rung.
pub fn convergence_csv(report: &ContinuationReport) -> String {
    let mut out = String::from(
        "n,eps,h1_u,h1_v,h1_pair,cauchy_diff,slack_u,slack_v,residual,ordering_max,penalty_max\n",
    );
    for (k, rung) in report.rungs.iter().enumerate() {
        let cauchy = if k == 0 {
            String::new()
        } else {
            report
                .cauchy_differences
                .get(k - 1)
                .map(|c| c.to_string())
                .unwrap_or_default()
        };
        let ordering = rung.solve.ordering.map(|o| o.max().to_string()).unwrap_or_default();
        let penalty = rung
            .solve
            .penalty_max
            .map(|(a, b)| a.max(b).to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            rung.n,
            rung.eps,
            rung.h1_u,
            rung.h1_v,
            rung.h1_pair,
            cauchy,
            rung.apriori_slack_u,
            rung.apriori_slack_v,
            rung.solve.final_residual,
            ordering,
            penalty,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainKind;

    #[test]
    fn field_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::build(DomainKind::Rectangle, &[1.0, 2.0], &[5, 4]).unwrap();
        let f = grid.sample(|x| x[0] * 3.0 - x[1]);
        let path = dir.path().join("f.csv");
        write_field_csv(&path, &f).unwrap();
        let back = read_field_csv(&path, &grid).unwrap();
        for n in 0..grid.node_count() {
            assert_eq!(f.get(n), back.get(n));
        }
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x,y,value\n"));
        assert_eq!(text.lines().count(), grid.node_count() + 1);
    }

    #[test]
    fn grid_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid =
            Grid::build_at(DomainKind::Disc, &[-1.0, -1.0], &[2.0, 2.0], &[9, 9]).unwrap();
        let path = dir.path().join("grid.json");
        write_grid_json(&path, &grid).unwrap();
        let desc: crate::grid::GridDescriptor =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        let back = Grid::from_descriptor(&desc).unwrap();
        assert!(back == grid);
        assert_eq!(back.interior_count(), grid.interior_count());
    }
}
