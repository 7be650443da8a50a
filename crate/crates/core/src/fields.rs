//! Dense 2D scalar fields and the finite-difference operators shared by both
//! environments.
//!
//! Row index `i` is the y coordinate and column index `j` is the x coordinate.
//! Values outside the grid are treated as zero (Dirichlet boundary).

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A `d x d` grid of finite reals with a uniform spatial step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField2D {
    side: usize,
    spacing: f64,
    values: Vec<f64>,
}

impl ScalarField2D {
    pub fn zeros(side: usize, spacing: f64) -> Result<Self> {
        Self::from_vec(side, spacing, vec![0.0; side * side])
    }

    pub fn filled(side: usize, spacing: f64, value: f64) -> Result<Self> {
        Self::from_vec(side, spacing, vec![value; side * side])
    }

    /// Builds a field from row-major values.
    pub fn from_vec(side: usize, spacing: f64, values: Vec<f64>) -> Result<Self> {
        if side < 2 {
            return Err(Error::Dimension(format!("grid side must be >= 2, got {side}")));
        }
        if values.len() != side * side {
            return Err(Error::Dimension(format!(
                "expected {} values for a {side}x{side} grid, got {}",
                side * side,
                values.len()
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::Config(format!("spacing must be positive, got {spacing}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow("field contains non-finite entries".into()));
        }
        Ok(Self {
            side,
            spacing,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], spacing: f64) -> Result<Self> {
        let side = rows.len();
        if rows.iter().any(|r| r.len() != side) {
            return Err(Error::Dimension("rows must form a square grid".into()));
        }
        Self::from_vec(side, spacing, rows.concat())
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.side + j]
    }

    /// Value at `(i, j)` with zero outside the grid.
    #[inline]
    fn ghost(&self, i: isize, j: isize) -> f64 {
        let d = self.side as isize;
        if i < 0 || j < 0 || i >= d || j >= d {
            0.0
        } else {
            self.values[(i * d + j) as usize]
        }
    }

    /// Mutable access for in-crate integrators; callers must keep entries finite.
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NumericOverflow("field contains non-finite entries".into()))
        }
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.side != other.side {
            return Err(Error::Dimension(format!(
                "grid sides differ: {} vs {}",
                self.side, other.side
            )));
        }
        Ok(())
    }

    /// `alpha * self + beta * other`.
    pub fn lin_comb(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        self.same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        Self::from_vec(self.side, self.spacing, values)
    }

    /// Average-pools the field down to `target x target` cells.
    ///
    /// Uses area weighting so sides need not divide evenly.
    pub fn downsample(&self, target: usize) -> Result<Self> {
        if target == self.side {
            return Ok(self.clone());
        }
        if target < 2 || target > self.side {
            return Err(Error::Dimension(format!(
                "cannot downsample {} to {target}",
                self.side
            )));
        }
        let ratio = self.side as f64 / target as f64;
        let mut out = vec![0.0; target * target];
        // Per-axis overlap weights between coarse cell and fine cells.
        let weights: Vec<Vec<(usize, f64)>> = (0..target)
            .map(|c| {
                let lo = c as f64 * ratio;
                let hi = lo + ratio;
                (lo.floor() as usize..(hi.ceil() as usize).min(self.side))
                    .filter_map(|f| {
                        let w = (hi.min(f as f64 + 1.0) - lo.max(f as f64)).max(0.0);
                        (w > 0.0).then_some((f, w / ratio))
                    })
                    .collect()
            })
            .collect();
        for (ci, wi) in weights.iter().enumerate() {
            for (cj, wj) in weights.iter().enumerate() {
                let mut acc = 0.0;
                for &(fi, a) in wi {
                    for &(fj, b) in wj {
                        acc += a * b * self.get(fi, fj);
                    }
                }
                out[ci * target + cj] = acc;
            }
        }
        Self::from_vec(target, self.spacing * ratio, out)
    }

    /// Serializes to the plain-text grid format: `d spacing` then `d` rows.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.side, self.spacing);
        for row in self.values.chunks(self.side) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty field text".into()))?;
        let mut parts = header.split_whitespace();
        let side: usize = parse_token(parts.next(), "grid side")?;
        let spacing: f64 = parse_token(parts.next(), "spacing")?;
        let mut values = Vec::with_capacity(side * side);
        for (row, line) in lines.enumerate() {
            let before = values.len();
            for tok in line.split_whitespace() {
                values.push(parse_token::<f64>(Some(tok), "field value")?);
            }
            if values.len() - before != side {
                return Err(Error::Parse(format!(
                    "row {row} has {} values, expected {side}",
                    values.len() - before
                )));
            }
        }
        Self::from_vec(side, spacing, values)
    }
}

fn parse_token<T: FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Parse(format!("bad or missing {what}")))
}

/// Cell-centred velocity components matching a companion scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField2D {
    side: usize,
    vx: Vec<f64>,
    vy: Vec<f64>,
}

impl VelocityField2D {
    pub fn zeros(side: usize) -> Self {
        Self {
            side,
            vx: vec![0.0; side * side],
            vy: vec![0.0; side * side],
        }
    }

    pub fn new(side: usize, vx: Vec<f64>, vy: Vec<f64>) -> Result<Self> {
        if vx.len() != side * side || vy.len() != side * side {
            return Err(Error::Dimension("velocity components must be side x side".into()));
        }
        Ok(Self { side, vx, vy })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn vx(&self, i: usize, j: usize) -> f64 {
        self.vx[i * self.side + j]
    }

    pub fn vy(&self, i: usize, j: usize) -> f64 {
        self.vy[i * self.side + j]
    }

    pub fn max_speed(&self) -> f64 {
        self.vx
            .iter()
            .zip(&self.vy)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.vx.iter().chain(&self.vy).all(|v| *v == 0.0)
    }
}

/// Five-point stencil `(N + S + W + E - 4c) / spacing` with zero ghost cells.
pub fn laplacian(field: &ScalarField2D) -> Result<ScalarField2D> {
    let d = field.side as isize;
    let inv = 1.0 / field.spacing;
    let mut out = Vec::with_capacity(field.values.len());
    for i in 0..d {
        for j in 0..d {
            let c = field.ghost(i, j);
            let s = field.ghost(i - 1, j)
                + field.ghost(i + 1, j)
                + field.ghost(i, j - 1)
                + field.ghost(i, j + 1);
            out.push((s - 4.0 * c) * inv);
        }
    }
    ScalarField2D::from_vec(field.side, field.spacing, out)
}

/// First-order upwind flux through the face between `left` and `right`
/// cells, given face velocity `v` (positive toward `right`).
#[inline]
fn upwind_flux(v: f64, left: f64, right: f64) -> f64 {
    if v >= 0.0 {
        v * left
    } else {
        v * right
    }
}

/// Discrete divergence of `v * T` with first-order upwind fluxes.
///
/// Face velocities are the average of the two adjacent cell velocities; at
/// the boundary the outside cell has zero temperature and the face takes the
/// inner cell's velocity.
pub fn advect(field: &ScalarField2D, vel: &VelocityField2D) -> Result<ScalarField2D> {
    if field.side != vel.side {
        return Err(Error::Dimension(format!(
            "field side {} does not match velocity side {}",
            field.side, vel.side
        )));
    }
    let d = field.side;
    let inv = 1.0 / field.spacing;
    let idx = |i: usize, j: usize| i * d + j;
    let mut out = vec![0.0; d * d];
    if vel.is_zero() {
        return ScalarField2D::from_vec(d, field.spacing, out);
    }
    for i in 0..d {
        for j in 0..d {
            let t = field.values[idx(i, j)];
            let ux = vel.vx[idx(i, j)];
            let uy = vel.vy[idx(i, j)];

            let (v_w, t_w) = if j == 0 {
                (ux, 0.0)
            } else {
                (0.5 * (ux + vel.vx[idx(i, j - 1)]), field.values[idx(i, j - 1)])
            };
            let (v_e, t_e) = if j + 1 == d {
                (ux, 0.0)
            } else {
                (0.5 * (ux + vel.vx[idx(i, j + 1)]), field.values[idx(i, j + 1)])
            };
            let (v_s, t_s) = if i == 0 {
                (uy, 0.0)
            } else {
                (0.5 * (uy + vel.vy[idx(i - 1, j)]), field.values[idx(i - 1, j)])
            };
            let (v_n, t_n) = if i + 1 == d {
                (uy, 0.0)
            } else {
                (0.5 * (uy + vel.vy[idx(i + 1, j)]), field.values[idx(i + 1, j)])
            };

            let fx = upwind_flux(v_e, t, t_e) - upwind_flux(v_w, t_w, t);
            let fy = upwind_flux(v_n, t, t_n) - upwind_flux(v_s, t_s, t);
            out[idx(i, j)] = (fx + fy) * inv;
        }
    }
    ScalarField2D::from_vec(d, field.spacing, out)
}

/// Frobenius norm of the field.
pub fn l2_norm(field: &ScalarField2D) -> f64 {
    l2(field.values())
}

/// Euclidean norm of a slice.
pub fn l2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}
