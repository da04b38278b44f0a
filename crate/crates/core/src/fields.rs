//! Grids, field containers, quadrature and the radial Laplacian.
//!
//! Radial fields live on a uniform cell-centered grid `r_i = (i+½)Δr`; the
//! origin is a cell face, never a node. Values are cell averages, so moments
//! integrate the weight `r^{2+s}` exactly over each cell. With `s = 0` this
//! makes the quadrature mass the quantity conserved by the flux scheme.

use std::f64::consts::PI;
use std::io::{BufRead, Read, Write};

use crate::diagnostics::DiagnosticsRow;
use crate::error::{Error, Result};

const FOUR_PI: f64 = 4.0 * PI;

/// Uniform radial grid on `[0, r_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialGrid {
    n_cells: usize,
    r_max: f64,
}

impl RadialGrid {
    pub fn new(n_cells: usize, r_max: f64) -> Result<Self> {
        if n_cells == 0 {
            return Err(Error::invalid("n_cells must be positive"));
        }
        if !(r_max.is_finite() && r_max > 0.0) {
            return Err(Error::invalid(format!("r_max must be positive, got {r_max}")));
        }
        Ok(Self { n_cells, r_max })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn dr(&self) -> f64 {
        self.r_max / self.n_cells as f64
    }

    /// Cell center `(i+½)Δr`.
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dr()
    }

    /// Left face of cell `i` (`face(n_cells) == r_max`).
    pub fn face(&self, i: usize) -> f64 {
        i as f64 * self.dr()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.center(i)).collect()
    }

    /// `∫_{cell i} r² dr`.
    pub fn cell_volume(&self, i: usize) -> f64 {
        let (a, b) = (self.face(i), self.face(i + 1));
        (b * b * b - a * a * a) / 3.0
    }

    /// `∫_{cell i} r^{2+s} dr`; infinite for the first cell when `s ≤ −3`.
    pub fn cell_moment(&self, i: usize, s: f64) -> f64 {
        let (a, b) = (self.face(i), self.face(i + 1));
        let q = 3.0 + s;
        if q.abs() < 1e-12 {
            if a == 0.0 {
                return f64::INFINITY;
            }
            return (b / a).ln();
        }
        if a == 0.0 && q < 0.0 {
            return f64::INFINITY;
        }
        (b.powf(q) - a.powf(q)) / q
    }

    /// Same grid stretched by `λ` (`r → λr`).
    pub fn dilated(&self, lambda: f64) -> Result<Self> {
        Self::new(self.n_cells, self.r_max * lambda)
    }
}

/// Radial density sampled at cell centers.
///
/// Fields are nonnegative unless built with [`RadialField::signed`], which is
/// used for auxiliary quantities such as Laplacians and right-hand sides.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialField {
    grid: RadialGrid,
    values: Vec<f64>,
    signed: bool,
}

impl RadialField {
    pub fn new(grid: RadialGrid, values: Vec<f64>) -> Result<Self> {
        Self::build(grid, values, false)
    }

    pub fn signed(grid: RadialGrid, values: Vec<f64>) -> Result<Self> {
        Self::build(grid, values, true)
    }

    fn build(grid: RadialGrid, values: Vec<f64>, signed: bool) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::invalid(format!(
                "expected {} values, got {}",
                grid.n_cells(),
                values.len()
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(i));
            }
            if !signed && v < 0.0 {
                return Err(Error::invalid(format!("negative density {v} at cell {i}")));
            }
        }
        Ok(Self { grid, values, signed })
    }

    pub fn zeros(grid: RadialGrid) -> Self {
        Self { grid, values: vec![0.0; grid.n_cells()], signed: false }
    }

    /// Samples `profile` at the cell centers.
    pub fn from_fn(grid: RadialGrid, profile: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.centers().into_iter().map(profile).collect();
        Self::new(grid, values)
    }

    pub(crate) fn from_parts_unchecked(grid: RadialGrid, values: Vec<f64>, signed: bool) -> Self {
        Self { grid, values, signed }
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest value (first one on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn scaled(&self, c: f64) -> Self {
        let values = self.values.iter().map(|v| v * c).collect();
        Self { grid: self.grid, values, signed: self.signed || c < 0.0 }
    }

    /// Same values on the stretched grid, i.e. the profile `f(r/λ)`.
    pub fn dilated(&self, lambda: f64) -> Result<Self> {
        Ok(Self { grid: self.grid.dilated(lambda)?, values: self.values.clone(), signed: self.signed })
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Linear interpolation in `r`; even extension below the first center,
    /// zero beyond `r_max`.
    pub fn interpolate(&self, r: f64) -> f64 {
        let g = &self.grid;
        let r = r.abs();
        if r >= g.r_max() {
            return 0.0;
        }
        let x = r / g.dr() - 0.5;
        if x <= 0.0 {
            // even reflection: f(r0 - d) = f(r0 + d) to second order
            let (f0, f1) = (self.values[0], *self.values.get(1).unwrap_or(&self.values[0]));
            let (r0, r1) = (g.center(0), g.center(1));
            let c2 = (f1 - f0) / (r1 * r1 - r0 * r0);
            return f0 + c2 * (r * r - r0 * r0);
        }
        let i = x.floor() as usize;
        if i + 1 >= self.values.len() {
            return self.values[self.values.len() - 1];
        }
        let t = x - i as f64;
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }
}

/// Moment `E_s(f) = 4π ∫ r^{2+s} f(r) dr`; `s = 0` is the mass.
pub fn integrate_radial(f: &RadialField, s: f64) -> Result<f64> {
    f.check_finite()?;
    if !s.is_finite() || s <= -3.0 {
        return Err(Error::invalid(format!("moment exponent must exceed -3, got {s}")));
    }
    let g = f.grid();
    let sum: f64 = f.values().iter().enumerate().map(|(i, &v)| v * g.cell_moment(i, s)).sum();
    Ok(FOUR_PI * sum)
}

/// `‖⟨r⟩^m f‖_{L^p}`; pass `f64::INFINITY` for the sup norm.
pub fn weighted_lp_norm(f: &RadialField, p: f64, m: f64) -> Result<f64> {
    f.check_finite()?;
    if p.is_nan() || p < 1.0 {
        return Err(Error::invalid(format!("p must be at least 1, got {p}")));
    }
    let g = f.grid();
    let bracket = |r: f64| (1.0 + r * r).powf(0.5 * m);
    if p.is_infinite() {
        return Ok(f
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| bracket(g.center(i)) * v.abs())
            .fold(0.0, f64::max));
    }
    let sum: f64 = f
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| (bracket(g.center(i)) * v.abs()).powf(p) * g.cell_volume(i))
        .sum();
    Ok((FOUR_PI * sum).powf(1.0 / p))
}

/// Second-order Laplacian `(1/r)(r f)″`.
///
/// The origin side uses the even reflection `f(−r) = f(r)`; the outer ghost
/// value comes from quadratic extrapolation, so polynomials of degree two
/// are reproduced at every node.
pub fn radial_laplacian(f: &RadialField) -> Result<RadialField> {
    let g = f.grid();
    let n = g.n_cells();
    if n < 4 {
        return Err(Error::invalid("radial_laplacian needs at least 4 cells"));
    }
    let dr2 = g.dr() * g.dr();
    let v = f.values();
    let u = |i: isize| -> f64 {
        if i < 0 {
            -g.center(0) * v[0]
        } else if i as usize >= n {
            let ghost = 3.0 * v[n - 1] - 3.0 * v[n - 2] + v[n - 3];
            (g.r_max() + 0.5 * g.dr()) * ghost
        } else {
            g.center(i as usize) * v[i as usize]
        }
    };
    let out = (0..n)
        .map(|i| {
            let ii = i as isize;
            (u(ii + 1) - 2.0 * u(ii) + u(ii - 1)) / (dr2 * g.center(i))
        })
        .collect();
    Ok(RadialField::from_parts_unchecked(*g, out, true))
}

/// Isotropic Gaussian `mass·(2πσ²)^{−3/2} exp(−r²/(2σ²))`.
pub fn gaussian_field(grid: RadialGrid, sigma: f64, mass: f64) -> Result<RadialField> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if !(mass.is_finite() && mass >= 0.0) {
        return Err(Error::invalid(format!("mass must be nonnegative, got {mass}")));
    }
    let peak = mass * (2.0 * PI * sigma * sigma).powf(-1.5);
    RadialField::from_fn(grid, |r| peak * (-r * r / (2.0 * sigma * sigma)).exp())
}

/// Lattice of cell centers on the box `[−L, L]³`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianGrid3 {
    n: usize,
    half_width: f64,
}

impl CartesianGrid3 {
    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        if n < 2 || n % 2 != 0 {
            return Err(Error::invalid(format!("samples per axis must be even and >= 2, got {n}")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::invalid("half-width must be positive"));
        }
        Ok(Self { n, half_width })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.spacing()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(3)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartesianField3 {
    grid: CartesianGrid3,
    values: Vec<f64>,
}

impl CartesianField3 {
    pub fn new(grid: CartesianGrid3, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid("value count does not match the lattice"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: CartesianGrid3, profile: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        let n = grid.n();
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    values.push(profile([grid.coord(i), grid.coord(j), grid.coord(k)]));
                }
            }
        }
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &CartesianGrid3 {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(i, j, k)]
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Time-stamped snapshots plus one diagnostics row per output time.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<RadialField>,
    pub rows: Vec<DiagnosticsRow>,
}

impl Trajectory {
    pub fn push(&mut self, t: f64, snapshot: Option<RadialField>, row: DiagnosticsRow) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(Error::invalid(format!("trajectory times must increase ({t} after {last})")));
            }
        }
        self.times.push(t);
        if let Some(s) = snapshot {
            self.snapshots.push(s);
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_snapshot(&self) -> Option<&RadialField> {
        self.snapshots.last()
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &str = "ksflow-checkpoint";

/// Solver state at one instant: text header, then little-endian `f64` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub field: RadialField,
    pub gamma: f64,
    pub time: f64,
    pub step: u64,
    pub initial_mass: f64,
    pub leaked: f64,
}

impl Checkpoint {
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let g = self.field.grid();
        // `{:?}` prints the shortest round-trip representation.
        writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        writeln!(out, "n_cells = {}", g.n_cells())?;
        writeln!(out, "r_max = {:?}", g.r_max())?;
        writeln!(out, "gamma = {:?}", self.gamma)?;
        writeln!(out, "time = {:?}", self.time)?;
        writeln!(out, "step = {}", self.step)?;
        writeln!(out, "initial_mass = {:?}", self.initial_mass)?;
        writeln!(out, "leaked = {:?}", self.leaked)?;
        writeln!(out, "byte_order = little")?;
        writeln!(out, "values = {}", self.field.len())?;
        writeln!(out, "end")?;
        for v in self.field.values() {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(input: impl Read) -> Result<Self> {
        let mut reader = std::io::BufReader::new(input);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let mut head = line.split_whitespace();
        if head.next() != Some(CHECKPOINT_MAGIC) {
            return Err(Error::Format("not a checkpoint".into()));
        }
        let version: u32 = parse_num(head.next().unwrap_or(""), "version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut kv = std::collections::BTreeMap::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Err(Error::Format("truncated header".into()));
            }
            let t = line.trim();
            if t == "end" {
                break;
            }
            let (k, v) = t.split_once('=').ok_or_else(|| Error::Format(format!("bad header line '{t}'")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| Error::Format(format!("missing '{k}'")));
        if get("byte_order")? != "little" {
            return Err(Error::Format("only little-endian checkpoints are supported".into()));
        }
        let n: usize = parse_num(get("n_cells")?, "n_cells")?;
        let count: usize = parse_num(get("values")?, "values")?;
        if count != n {
            return Err(Error::Format("value count does not match n_cells".into()));
        }
        let grid = RadialGrid::new(n, parse_num(get("r_max")?, "r_max")?)?;
        let mut bytes = vec![0u8; 8 * n];
        reader.read_exact(&mut bytes)?;
        let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self {
            field: RadialField::new(grid, values)?,
            gamma: parse_num(get("gamma")?, "gamma")?,
            time: parse_num(get("time")?, "time")?,
            step: parse_num(get("step")?, "step")?,
            initial_mass: parse_num(get("initial_mass")?, "initial_mass")?,
            leaked: parse_num(get("leaked")?, "leaked")?,
        })
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("cannot parse {what} from '{s}'")))
}
