//! Radial and angular quadrature rules for the photon momentum shell σ ≤ |k| ≤ Λ.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadialScheme {
    Linear,
    Logarithmic,
}

impl fmt::Display for RadialScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RadialScheme::Linear => f.write_str("linear"),
            RadialScheme::Logarithmic => f.write_str("logarithmic"),
        }
    }
}

impl FromStr for RadialScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "linear" => Ok(RadialScheme::Linear),
            "logarithmic" | "log" => Ok(RadialScheme::Logarithmic),
            other => Err(Error::InvalidParameter(format!("unknown radial scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AngularScheme {
    Axes6,
    Icosa12,
    /// Gauss–Legendre in cos θ times a uniform φ grid.
    Product { n_theta: usize, n_phi: usize },
}

impl fmt::Display for AngularScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AngularScheme::Axes6 => f.write_str("axes6"),
            AngularScheme::Icosa12 => f.write_str("icosa12"),
            AngularScheme::Product { n_theta, n_phi } => write!(f, "product({n_theta},{n_phi})"),
        }
    }
}

impl FromStr for AngularScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "axes6" => return Ok(AngularScheme::Axes6),
            "icosa12" => return Ok(AngularScheme::Icosa12),
            _ => {}
        }
        let bad = || Error::InvalidParameter(format!("unknown angular scheme `{s}`"));
        let inner = s
            .strip_prefix("product(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(bad)?;
        let (a, b) = inner.split_once(',').ok_or_else(bad)?;
        let n_theta = a.trim().parse().map_err(|_| bad())?;
        let n_phi = b.trim().parse().map_err(|_| bad())?;
        if n_theta == 0 || n_phi == 0 {
            return Err(bad());
        }
        Ok(AngularScheme::Product { n_theta, n_phi })
    }
}

/// Unit direction with its solid-angle weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub unit: Vec3,
    pub weight: f64,
}

pub fn directions(scheme: AngularScheme) -> Vec<Direction> {
    match scheme {
        AngularScheme::Axes6 => {
            let w = 4.0 * PI / 6.0;
            [
                [1.0, 0.0, 0.0],
                [-1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, -1.0, 0.0],
                [0.0, 0.0, 1.0],
                [0.0, 0.0, -1.0],
            ]
            .into_iter()
            .map(|unit| Direction { unit, weight: w })
            .collect()
        }
        AngularScheme::Icosa12 => {
            let phi = (1.0 + 5f64.sqrt()) / 2.0;
            let norm = (1.0 + phi * phi).sqrt();
            let (a, b) = (1.0 / norm, phi / norm);
            let w = 4.0 * PI / 12.0;
            let mut out = Vec::with_capacity(12);
            for s1 in [1.0, -1.0] {
                for s2 in [1.0, -1.0] {
                    out.push([0.0, s1 * a, s2 * b]);
                    out.push([s1 * a, s2 * b, 0.0]);
                    out.push([s2 * b, 0.0, s1 * a]);
                }
            }
            out.into_iter().map(|unit| Direction { unit, weight: w }).collect()
        }
        AngularScheme::Product { n_theta, n_phi } => {
            let (nodes, weights) = gauss_legendre(n_theta);
            let dphi = 2.0 * PI / n_phi as f64;
            let mut out = Vec::with_capacity(n_theta * n_phi);
            for (&ct, &wt) in nodes.iter().zip(&weights) {
                let st = (1.0 - ct * ct).max(0.0).sqrt();
                for j in 0..n_phi {
                    let ph = dphi * (j as f64 + 0.5);
                    out.push(Direction { unit: [st * ph.cos(), st * ph.sin(), ct], weight: wt * dphi });
                }
            }
            out
        }
    }
}

/// True when every direction has its antipode in the set (within `tol`).
pub fn is_antipodal(dirs: &[Direction], tol: f64) -> bool {
    dirs.iter().all(|d| {
        dirs.iter().any(|o| {
            (0..3).all(|i| (d.unit[i] + o.unit[i]).abs() <= tol) && (d.weight - o.weight).abs() <= tol
        })
    })
}

/// Gauss–Legendre nodes and weights on [-1, 1], nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// One radial cell [lo, hi] with its node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shell {
    pub lo: f64,
    pub hi: f64,
    pub node: f64,
}

impl Shell {
    /// ∫_lo^hi r² dr.
    pub fn radial_volume(&self) -> f64 {
        (self.hi.powi(3) - self.lo.powi(3)) / 3.0
    }
}

pub fn shells(scheme: RadialScheme, count: usize, sigma: f64, lambda: f64) -> Vec<Shell> {
    match scheme {
        RadialScheme::Linear => {
            let dr = (lambda - sigma) / count as f64;
            (0..count)
                .map(|j| {
                    let lo = sigma + dr * j as f64;
                    let hi = if j + 1 == count { lambda } else { sigma + dr * (j + 1) as f64 };
                    Shell { lo, hi, node: 0.5 * (lo + hi) }
                })
                .collect()
        }
        RadialScheme::Logarithmic => {
            let ratio = (lambda / sigma).ln() / count as f64;
            (0..count)
                .map(|j| {
                    let lo = sigma * (ratio * j as f64).exp();
                    let hi = if j + 1 == count { lambda } else { sigma * (ratio * (j + 1) as f64).exp() };
                    Shell { lo, hi, node: (lo * hi).sqrt() }
                })
                .collect()
        }
    }
}
