//! Reference solution of the viscous Burgers problem
//! `u_t + u u_x = ν u_xx`, `u(x, 0) = −sin(πx)`, `u(±1, t) = 0`,
//! via the Cole–Hopf representation
//!
//! ```text
//! u(x,t) = −∫ sin(π(x−η)) f(x−η) e^{−η²/4νt} dη / ∫ f(x−η) e^{−η²/4νt} dη,
//! f(y) = exp(−cos(πy) / (2πν)).
//! ```
//!
//! Substituting `η = sqrt(4νt)·z` turns both integrals into Gaussian-weighted
//! integrals over `z`, evaluated with the trapezoid rule in log-sum-exp form.
//! Values are cached on a uniform grid and read back by bicubic
//! (Catmull–Rom) interpolation.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const ORACLE_NX: usize = 512;
pub const ORACLE_NT: usize = 201;

/// Cole–Hopf quadrature settings.
#[derive(Clone, Copy, Debug)]
pub struct ColeHopf {
    pub nu: f64,
    /// Half width of the integration interval in the scaled variable `z`.
    pub half_width: f64,
    /// Trapezoid spacing in `z`.
    pub dz: f64,
}

impl ColeHopf {
    pub fn new(nu: f64) -> Self {
        Self { nu, half_width: 14.0, dz: 0.01 }
    }

    pub fn solve(&self, x: f64, t: f64) -> f64 {
        if t <= 0.0 {
            return -(PI * x).sin();
        }
        let s = (4.0 * self.nu * t).sqrt();
        let k = 1.0 / (2.0 * PI * self.nu);
        let n = (2.0 * self.half_width / self.dz).round() as usize;
        let z0 = -self.half_width;
        let exponent = |z: f64| -z * z - k * (PI * (x - s * z)).cos();
        let mut emax = f64::NEG_INFINITY;
        for i in 0..=n {
            emax = emax.max(exponent(z0 + i as f64 * self.dz));
        }
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..=n {
            let z = z0 + i as f64 * self.dz;
            let arg = PI * (x - s * z);
            let (sn, cs) = arg.sin_cos();
            let w = (-z * z - k * cs - emax).exp();
            let w = if i == 0 || i == n { 0.5 * w } else { w };
            num += sn * w;
            den += w;
        }
        -num / den
    }
}

/// Cached reference solution on a uniform `nx × nt` grid over
/// `[-1, 1] × [0, 1]`. Row-major by time: entry `j * nx + i` is `u(x_i, t_j)`.
#[derive(Clone, Debug)]
pub struct BurgersOracle {
    nu: f64,
    nx: usize,
    nt: usize,
    values: Vec<f64>,
}

impl BurgersOracle {
    pub fn build(nu: f64, nx: usize, nt: usize) -> Self {
        Self::build_with(ColeHopf::new(nu), nx, nt)
    }

    pub fn build_with(solver: ColeHopf, nx: usize, nt: usize) -> Self {
        assert!(nx >= 4 && nt >= 4, "oracle grid too small");
        let mut values = vec![0.0; nx * nt];
        for j in 0..nt {
            let t = j as f64 / (nt - 1) as f64;
            // odd symmetry u(−x, t) = −u(x, t) about the grid centre
            for i in 0..nx.div_ceil(2) {
                let x = -1.0 + 2.0 * i as f64 / (nx - 1) as f64;
                let u = solver.solve(x, t);
                values[j * nx + i] = u;
                values[j * nx + (nx - 1 - i)] = -u;
            }
            values[j * nx] = 0.0;
            values[j * nx + nx - 1] = 0.0;
        }
        Self { nu: solver.nu, nx, nt, values }
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.nt)
    }

    pub fn x_at(&self, i: usize) -> f64 {
        -1.0 + 2.0 * i as f64 / (self.nx - 1) as f64
    }

    pub fn t_at(&self, j: usize) -> f64 {
        j as f64 / (self.nt - 1) as f64
    }

    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    /// Bicubic Catmull–Rom interpolation. Stencil points outside the grid
    /// are linearly extrapolated from the two nearest nodes.
    pub fn interpolate(&self, x: f64, t: f64) -> f64 {
        let fx = (x + 1.0) / 2.0 * (self.nx - 1) as f64;
        let ft = t * (self.nt - 1) as f64;
        let (ix, ax) = split(fx, self.nx);
        let (it, at) = split(ft, self.nt);
        let wx = catmull_rom(ax);
        let wt = catmull_rom(at);
        let row = |j: usize| -> f64 {
            let at = |i: usize| self.values[j * self.nx + i];
            wx.iter().enumerate().map(|(di, w)| w * ghosted(ix as isize + di as isize - 1, self.nx, at)).sum()
        };
        wt.iter().enumerate().map(|(dj, w)| w * ghosted(it as isize + dj as isize - 1, self.nt, row)).sum()
    }

    /// Writes `x,t,u` rows (time-major).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["x", "t", "u"]).map_err(|e| csv_err(path, e))?;
        for j in 0..self.nt {
            for i in 0..self.nx {
                w.write_record([format!("{:.17e}", self.x_at(i)), format!("{:.17e}", self.t_at(j)), format!("{:.17e}", self.node(i, j))])
                    .map_err(|e| csv_err(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::Io { path: path.display().to_string(), source: e })
    }

    /// Reads a cache written by [`BurgersOracle::write_csv`].
    pub fn read_csv(path: &Path, nu: f64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut xs = Vec::new();
        let mut ts = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k).and_then(|s| s.trim().parse().ok()).ok_or_else(|| Error::Format {
                    path: path.display().to_string(),
                    reason: format!("bad field {k} in record {}", values.len() + 1),
                })
            };
            xs.push(parse(0)?);
            ts.push(parse(1)?);
            values.push(parse(2)?);
        }
        let nx = ts.first().map_or(0, |t0| ts.iter().take_while(|t| *t == t0).count());
        if nx < 4 || values.len() % nx != 0 || !xs[..nx].windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Format { path: path.display().to_string(), reason: "not a rectangular grid".into() });
        }
        Ok(Self { nu, nx, nt: values.len() / nx, values })
    }

    /// Loads the cache from `path` when present, otherwise builds and writes it.
    pub fn load_or_build(path: &Path, nu: f64) -> Result<Self> {
        if path.exists() {
            return Self::read_csv(path, nu);
        }
        let oracle = Self::build(nu, ORACLE_NX, ORACLE_NT);
        oracle.write_csv(path)?;
        Ok(oracle)
    }
}

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv { path: path.display().to_string(), source }
}

fn split(f: f64, n: usize) -> (usize, f64) {
    let i = (f.floor().max(0.0) as usize).min(n - 2);
    (i, f - i as f64)
}

fn ghosted(i: isize, n: usize, f: impl Fn(usize) -> f64) -> f64 {
    match i {
        -1 => 2.0 * f(0) - f(1),
        i if i as usize == n => 2.0 * f(n - 1) - f(n - 2),
        i => f(i as usize),
    }
}

fn catmull_rom(a: f64) -> [f64; 4] {
    let a2 = a * a;
    let a3 = a2 * a;
    [0.5 * (-a3 + 2.0 * a2 - a), 0.5 * (3.0 * a3 - 5.0 * a2 + 2.0), 0.5 * (-3.0 * a3 + 4.0 * a2 + a), 0.5 * (a3 - a2)]
}

/// True viscosity of the benchmark, `0.01/π`.
pub fn true_viscosity() -> f64 {
    0.01 / PI
}

/// Process-wide oracle for the benchmark viscosity on the default grid.
pub fn default_oracle() -> &'static BurgersOracle {
    static ORACLE: OnceLock<BurgersOracle> = OnceLock::new();
    ORACLE.get_or_init(|| BurgersOracle::build(true_viscosity(), ORACLE_NX, ORACLE_NT))
}
