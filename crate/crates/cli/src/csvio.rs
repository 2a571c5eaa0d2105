//! CSV emission and path-file loading. Dialect: RFC-4180 quoting, LF line
//! ends, '.' decimal, floats at full double precision ({:.16e}, 17
//! significant digits, lossless round-trip), a mandatory header row, and
//! '#'-prefixed comment lines above the header carrying provenance
//! (config hash, seed, summary scalars).

use std::path::Path;

use anyhow::{bail, Context, Result};

use sddelab_core::{GridSpec, PathGrid};

/// One CSV cell.
pub enum Cell {
    F(f64),
    /// Optional float; `None` renders as an empty field.
    OptF(Option<f64>),
    I(i64),
    U(u64),
    S(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}
impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        Cell::OptF(x)
    }
}
impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::U(x as u64)
    }
}
impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::U(x)
    }
}
impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::I(x)
    }
}
impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::S(x.to_string())
    }
}
impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::S(if x { "true" } else { "false" }.to_string())
    }
}

/// Full-precision float formatting used for every numeric field.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn escape(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn render(cell: &Cell) -> String {
    match cell {
        Cell::F(x) => fmt_f64(*x),
        Cell::OptF(Some(x)) => fmt_f64(*x),
        Cell::OptF(None) => String::new(),
        Cell::I(x) => x.to_string(),
        Cell::U(x) => x.to_string(),
        Cell::S(s) => escape(s),
    }
}

/// In-memory CSV builder. Comments first, then the header row, then data.
pub struct CsvBuilder {
    comments: Vec<String>,
    header: Vec<String>,
    rows: Vec<String>,
}

impl CsvBuilder {
    pub fn new(config_sha256: &str, seed: u64) -> Self {
        CsvBuilder {
            comments: vec![
                format!("# config_sha256 = {config_sha256}"),
                format!("# seed = {seed}"),
            ],
            header: Vec::new(),
            rows: Vec::new(),
        }
    }

    /// Add a `# key = value` provenance comment.
    pub fn comment(&mut self, key: &str, value: impl Into<Cell>) -> &mut Self {
        let cell = value.into();
        self.comments.push(format!("# {key} = {}", render(&cell)));
        self
    }

    pub fn header(&mut self, names: &[&str]) -> &mut Self {
        self.header = names.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn row(&mut self, cells: Vec<Cell>) -> &mut Self {
        assert_eq!(
            cells.len(),
            self.header.len(),
            "row width must match the header"
        );
        let line = cells.iter().map(render).collect::<Vec<_>>().join(",");
        self.rows.push(line);
        self
    }

    pub fn to_string(&self) -> String {
        assert!(!self.header.is_empty(), "header row is mandatory");
        let mut out = String::new();
        for c in &self.comments {
            out.push_str(c);
            out.push('\n');
        }
        out.push_str(&self.header.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string())
            .with_context(|| format!("writing {}", path.display()))
    }
}

/// Write a grid path as CSV: columns `time,x1,...,xd`, one row per node,
/// times running from -τ (history) through the horizon.
pub fn path_rows(builder: &mut CsvBuilder, path: &PathGrid) {
    let d = path.dim();
    let mut names: Vec<String> = vec!["time".into()];
    for i in 1..=d {
        names.push(format!("x{i}"));
    }
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    builder.header(&refs);
    for k in 0..path.n_nodes() {
        let mut cells: Vec<Cell> = vec![Cell::F(path.time(k))];
        for &v in path.node(k) {
            cells.push(Cell::F(v));
        }
        builder.row(cells);
    }
}

/// Load a path written by [`path_rows`] back into a `PathGrid`. The grid is
/// reconstructed from the time column: τ = -t₀, h = t₁ - t₀, horizon = t_N.
pub fn load_path_csv(path: &Path) -> Result<PathGrid> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading path file {}", path.display()))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());

    let (_, header) = lines
        .next()
        .with_context(|| format!("path file {} is empty", path.display()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"time") || cols.len() < 2 {
        bail!(
            "path file {}: expected header time,x1,... got {header:?}",
            path.display()
        );
    }
    let dim = cols.len() - 1;

    let mut times = Vec::new();
    let mut data = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            bail!(
                "path file {} line {}: expected {} fields, got {}",
                path.display(),
                lineno + 1,
                dim + 1,
                fields.len()
            );
        }
        for (i, f) in fields.iter().enumerate() {
            let v: f64 = f.trim().parse().with_context(|| {
                format!("path file {} line {}: bad number {f:?}", path.display(), lineno + 1)
            })?;
            if i == 0 {
                times.push(v);
            } else {
                data.push(v);
            }
        }
    }
    if times.len() < 2 {
        bail!("path file {}: need at least 2 rows", path.display());
    }

    let h = times[1] - times[0];
    if !(h > 0.0) {
        bail!("path file {}: non-increasing time column", path.display());
    }
    for (k, w) in times.windows(2).enumerate() {
        let gap = w[1] - w[0];
        if (gap - h).abs() > 1e-9 * h.max(1.0) {
            bail!(
                "path file {}: uneven time step at row {} ({} vs {})",
                path.display(),
                k + 2,
                gap,
                h
            );
        }
    }
    let tau = -times[0];
    if !(tau > 0.0) {
        bail!(
            "path file {}: first time must be -tau < 0, got {}",
            path.display(),
            times[0]
        );
    }
    let horizon = *times.last().expect("at least 2 rows checked");
    let grid = GridSpec::new(tau, h, horizon.max(0.0))
        .with_context(|| format!("path file {}: times do not form a grid", path.display()))?;
    PathGrid::new(grid, dim, data)
        .with_context(|| format!("path file {}: node count mismatch", path.display()))
}
