//! File formats for snapshots, learned models, trajectories and plans.
//!
//! Cell coordinates in files are 1-based, as in scenario documents.
//! Nothing is overwritten unless the caller asks for it.

use crate::feature_learning::{FeatureError, FeatureMatrix};
use crate::grid::Cell;
use crate::heuristic_planner::HeuristicPath;
use crate::neural_field::{NeuralField, ShuntingParams};
use crate::sim::{FeatureModel, TrajectoryRow};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

pub const FEATURES_FILE: &str = "features.csv";
pub const MATRIX_FILE: &str = "matrix.csv";
const FEATURES_HEADER: &str = "id,x,y,degree,represented_count";

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("{0} exists; pass the overwrite flag to replace it")]
    Exists(PathBuf),
    #[error("cannot access {path}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: invalid matrix")]
    Matrix { path: PathBuf, source: FeatureError },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `path`, refusing to replace an existing file unless
/// `overwrite` is set.
pub fn write_file(path: &Path, bytes: &[u8], overwrite: bool) -> Result<(), ExportError> {
    let mut opts = fs::OpenOptions::new();
    opts.write(true);
    if overwrite {
        opts.create(true).truncate(true);
    } else {
        opts.create_new(true);
    }
    let mut file = opts.open(path).map_err(|e| {
        if e.kind() == io::ErrorKind::AlreadyExists {
            ExportError::Exists(path.to_path_buf())
        } else {
            io_err(path)(e)
        }
    })?;
    file.write_all(bytes).map_err(io_err(path))
}

/// Activity rows from `y = 0` upward, six decimals, no trailing newline.
pub fn field_csv(field: &NeuralField) -> String {
    let g = field.grid();
    let rows: Vec<String> = (0..g.height)
        .map(|y| {
            (0..g.width)
                .map(|x| format!("{:.6}", field.activity(Cell::new(x, y))))
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    rows.join("\n")
}

/// Binary 8-bit PGM mapping `[-D, B]` linearly onto `[0, 255]`. The first
/// image row is the highest `y`, so the picture reads like a map.
pub fn field_pgm(field: &NeuralField, params: &ShuntingParams) -> Vec<u8> {
    let g = field.grid();
    let mut out = format!("P5\n{} {}\n255\n", g.width, g.height).into_bytes();
    let span = params.b + params.d;
    for y in (0..g.height).rev() {
        for x in 0..g.width {
            let z = field.activity(Cell::new(x, y));
            let v = ((z + params.d) / span * 255.0).round().clamp(0.0, 255.0);
            out.push(v as u8);
        }
    }
    out
}

pub fn features_csv(model: &FeatureModel) -> String {
    let mut s = String::from(FEATURES_HEADER);
    for (i, c) in model.cells.iter().enumerate() {
        s.push_str(&format!(
            "\n{},{},{},{},{}",
            i,
            c.x + 1,
            c.y + 1,
            model.degrees[i],
            model.represented[i]
        ));
    }
    s
}

/// K rows of K link distances, six decimals.
pub fn matrix_csv(matrix: &FeatureMatrix) -> String {
    (0..matrix.size())
        .map(|g| {
            matrix
                .row(g)
                .iter()
                .map(|v| format!("{v:.6}"))
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Writes `features.csv` and `matrix.csv` into `dir`, creating it if needed.
pub fn save_model(dir: &Path, model: &FeatureModel, overwrite: bool) -> Result<(), ExportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join(FEATURES_FILE), features_csv(model).as_bytes(), overwrite)?;
    write_file(&dir.join(MATRIX_FILE), matrix_csv(&model.matrix).as_bytes(), overwrite)
}

fn parse_fields<T: std::str::FromStr>(path: &Path, line: usize, text: &str) -> Result<Vec<T>, ExportError> {
    text.split(',')
        .map(|t| {
            t.trim().parse().map_err(|_| ExportError::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("bad value {t:?}"),
            })
        })
        .collect()
}

/// Reads a model written by [`save_model`].
pub fn load_model(dir: &Path) -> Result<FeatureModel, ExportError> {
    let fpath = dir.join(FEATURES_FILE);
    let text = fs::read_to_string(&fpath).map_err(io_err(&fpath))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == FEATURES_HEADER => {}
        _ => {
            return Err(ExportError::Parse {
                path: fpath,
                line: 1,
                msg: format!("expected header {FEATURES_HEADER:?}"),
            })
        }
    }
    let (mut cells, mut degrees, mut represented) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let v: Vec<usize> = parse_fields(&fpath, i + 1, line)?;
        if v.len() != 5 || v[0] != cells.len() || v[1] == 0 || v[2] == 0 {
            return Err(ExportError::Parse {
                path: fpath,
                line: i + 1,
                msg: "expected id,x,y,degree,represented_count with sequential ids and 1-based cells".into(),
            });
        }
        cells.push(Cell::new(v[1] - 1, v[2] - 1));
        degrees.push(v[3]);
        represented.push(v[4]);
    }
    let mpath = dir.join(MATRIX_FILE);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let rows = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_fields::<f64>(&mpath, i + 1, l))
        .collect::<Result<Vec<_>, _>>()?;
    let matrix = FeatureMatrix::from_rows(rows).map_err(|source| ExportError::Matrix {
        path: mpath.clone(),
        source,
    })?;
    if matrix.size() != cells.len() {
        return Err(ExportError::Parse {
            path: mpath,
            line: 1,
            msg: format!("{} rows for {} features", matrix.size(), cells.len()),
        });
    }
    Ok(FeatureModel {
        cells,
        matrix,
        degrees,
        represented,
    })
}

/// Rows of `tick,robot_id,x,y,theta,idle_flag` with theta in degrees.
pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut s = String::from("tick,robot_id,x,y,theta,idle_flag");
    for r in rows {
        s.push_str(&format!(
            "\n{},{},{:.6},{:.6},{:.6},{}",
            r.tick,
            r.robot,
            r.x,
            r.y,
            r.theta,
            u8::from(r.idle)
        ));
    }
    s
}

/// Waypoints as `idx,x,y`, then one summary line
/// `# length_m=..,waypoint_count=..,expanded_nodes=..`.
pub fn plan_csv(path: &HeuristicPath) -> String {
    let mut s = String::from("idx,x,y");
    for (i, c) in path.waypoints.iter().enumerate() {
        s.push_str(&format!("\n{},{},{}", i, c.x + 1, c.y + 1));
    }
    s.push_str(&format!(
        "\n# length_m={:.6},waypoint_count={},expanded_nodes={}",
        path.length,
        path.waypoints.len(),
        path.stats.expanded_nodes
    ));
    s
}
