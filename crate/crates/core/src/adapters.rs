//! Action descriptors and the adapters that map `k` action scalars onto an
//! executable action.
//!
//! Descriptor `i` is paired with action scalar `u[i]`; the ordering is part of
//! the contract.

use std::fmt::Write as _;

use serde::Deserialize;

use crate::envs::{AC_COLS, AC_ROWS, EXECUTABLE_DIM};
use crate::error::{Error, Result};

/// Ordered, distinct descriptor coordinates of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    dim: usize,
    coords: Vec<Vec<f64>>,
}

impl DescriptorSet {
    pub fn new(coords: Vec<Vec<f64>>) -> Result<Self> {
        let dim = coords
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Config("descriptor set must be non-empty".into()))?;
        if dim == 0 || coords.iter().any(|c| c.len() != dim) {
            return Err(Error::Dimension("descriptors must share a nonzero dimension".into()));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("descriptor coordinates must be finite".into()));
        }
        for (a, ca) in coords.iter().enumerate() {
            if coords[..a].iter().any(|cb| cb == ca) {
                return Err(Error::Config(format!("descriptor {a} duplicates an earlier one")));
            }
        }
        Ok(Self { dim, coords })
    }

    /// Like [`DescriptorSet::new`] but allows repeated coordinates.
    pub fn with_duplicates(coords: Vec<Vec<f64>>) -> Result<Self> {
        let dim = coords.first().map(Vec::len).unwrap_or(0);
        if dim == 0 || coords.iter().any(|c| c.len() != dim) {
            return Err(Error::Dimension("descriptors must share a nonzero dimension".into()));
        }
        Ok(Self { dim, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.coords[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.iter().map(Vec::as_slice)
    }

    /// `k m` header followed by one line of `m` coordinates per descriptor.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.len(), self.dim);
        for c in &self.coords {
            let line: Vec<String> = c.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<usize> = lines
            .next()
            .ok_or_else(|| Error::Parse("empty descriptor text".into()))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad header token {t:?}"))))
            .collect::<Result<_>>()?;
        let [k, m] = header[..] else {
            return Err(Error::Parse("descriptor header must be `k m`".into()));
        };
        let coords: Vec<Vec<f64>> = lines
            .map(|l| {
                l.split_whitespace()
                    .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad coordinate {t:?}"))))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        if coords.len() != k || coords.iter().any(|c| c.len() != m) {
            return Err(Error::Parse(format!("expected {k} lines of {m} coordinates")));
        }
        Self::new(coords)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorDomain {
    PdeModel,
    HeatInvader,
}

/// `n` evenly spaced points on `[lo, hi]`, endpoints included. A single point
/// sits at the midpoint.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Standard descriptor layouts for the two environments.
///
/// PDE model: a `sqrt(k) x sqrt(k)` lattice on `[-0.5, 0.5]^2`, row-major with
/// rows along y. Heat invader: `k <= 50` points on `[-1, 1]`; `k = 100` and
/// `k = 200` place 50 points along y for each of 2 or 4 x values.
pub fn make_descriptors(domain: DescriptorDomain, k: usize) -> Result<DescriptorSet> {
    match domain {
        DescriptorDomain::PdeModel => {
            let n = (k as f64).sqrt().round() as usize;
            if n == 0 || n * n != k {
                return Err(Error::Config(format!("PDE model needs a square k, got {k}")));
            }
            let axis = linspace(-0.5, 0.5, n);
            let coords = axis
                .iter()
                .flat_map(|&y| axis.iter().map(move |&x| vec![x, y]))
                .collect();
            DescriptorSet::new(coords)
        }
        DescriptorDomain::HeatInvader => {
            let xs: Vec<f64> = match k {
                1..=50 => {
                    return DescriptorSet::new(
                        linspace(-1.0, 1.0, k).into_iter().map(|v| vec![v]).collect(),
                    )
                }
                100 => vec![-1.0, 1.0],
                200 => linspace(-1.0, 1.0, 4),
                _ => {
                    return Err(Error::Config(format!(
                        "heat invader supports k <= 50, 100 or 200, got {k}"
                    )))
                }
            };
            let ys = linspace(-1.0, 1.0, AC_COLS);
            let coords = xs
                .iter()
                .flat_map(|&x| ys.iter().map(move |&y| vec![x, y]))
                .collect();
            DescriptorSet::new(coords)
        }
    }
}

fn check_len(c: &DescriptorSet, u: &[f64]) -> Result<()> {
    if c.len() != u.len() {
        return Err(Error::Dimension(format!(
            "{} action scalars for {} descriptors",
            u.len(),
            c.len()
        )));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Unnormalized Gaussian interpolation `sum_i exp(-|z - c_i|^2 / 2 sigma^2) u_i`.
pub fn gaussian_adapter(
    c: &DescriptorSet,
    u: &[f64],
    sigma: f64,
    queries: &[Vec<f64>],
) -> Result<Vec<f64>> {
    check_len(c, u)?;
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    queries
        .iter()
        .map(|z| {
            if z.len() != c.dim() {
                return Err(Error::Dimension("query dimension differs from descriptors".into()));
            }
            Ok(c.iter()
                .zip(u)
                .map(|(ci, ui)| (-sq_dist(z, ci) * inv).exp() * ui)
                .sum())
        })
        .collect()
}

/// Nearest-descriptor cells over an axis-aligned box. Ties go to the lower
/// descriptor index.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    descriptors: DescriptorSet,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Partition {
    pub fn voronoi(descriptors: &DescriptorSet, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != descriptors.dim() || hi.len() != descriptors.dim() {
            return Err(Error::Dimension("domain box dimension differs from descriptors".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::Config("domain box has lo > hi".into()));
        }
        let p = Self {
            descriptors: descriptors.clone(),
            lo,
            hi,
        };
        if let Some(i) = (0..descriptors.len()).find(|&i| !p.contains(descriptors.get(i))) {
            return Err(Error::Domain(format!("descriptor {i} lies outside the domain")));
        }
        Ok(p)
    }

    fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.lo.len()
            && z.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Index of the cell containing `z`.
    pub fn cell_of(&self, z: &[f64]) -> Result<usize> {
        if !self.contains(z) {
            return Err(Error::Domain(format!("{z:?}")));
        }
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.descriptors.iter().enumerate() {
            let d = sq_dist(z, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok(best.0)
    }

    pub fn descriptors(&self) -> &DescriptorSet {
        &self.descriptors
    }
}

/// Piecewise-constant adapter: each query takes the scalar of its cell.
pub fn partition_adapter(
    c: &DescriptorSet,
    partition: &Partition,
    u: &[f64],
    queries: &[Vec<f64>],
) -> Result<Vec<f64>> {
    check_len(c, u)?;
    if partition.descriptors() != c {
        return Err(Error::Config("partition was built for different descriptors".into()));
    }
    queries
        .iter()
        .map(|z| partition.cell_of(z).map(|i| u[i]))
        .collect()
}

/// Block-repeats `k` scalars onto the 4 x 50 conditioner layout.
pub fn repeat_adapter(u: &[f64]) -> Result<Vec<f64>> {
    let row_of_50: Vec<f64> = match u.len() {
        200 => return Ok(u.to_vec()),
        100 => {
            let mut out = Vec::with_capacity(EXECUTABLE_DIM);
            for line in u.chunks(AC_COLS) {
                out.extend_from_slice(line);
                out.extend_from_slice(line);
            }
            return Ok(out);
        }
        50 => u.to_vec(),
        25 => u.iter().flat_map(|&v| [v, v]).collect(),
        1 => vec![u[0]; AC_COLS],
        k => {
            return Err(Error::Config(format!(
                "repeat adapter supports k in {{1, 25, 50, 100, 200}}, got {k}"
            )))
        }
    };
    Ok(row_of_50.repeat(AC_ROWS))
}

/// Maps action scalars to the environment's executable action.
#[derive(Debug, Clone)]
pub enum Adapter {
    Partition {
        partition: Partition,
        queries: Vec<Vec<f64>>,
    },
    Gaussian {
        sigma: f64,
        queries: Vec<Vec<f64>>,
    },
    Repeat,
}

impl Adapter {
    /// Partition adapter over the cell centres of a `side x side` grid laid
    /// on `[-0.5, 0.5]^2`, matching the PDE model descriptor lattice.
    pub fn pde_grid(c: &DescriptorSet, side: usize) -> Result<Self> {
        let axis = linspace(-0.5, 0.5, side);
        let queries = axis
            .iter()
            .flat_map(|&y| axis.iter().map(move |&x| vec![x, y]))
            .collect();
        let partition = Partition::voronoi(c, vec![-0.5, -0.5], vec![0.5, 0.5])?;
        Ok(Adapter::Partition { partition, queries })
    }

    pub fn apply(&self, c: &DescriptorSet, u: &[f64]) -> Result<Vec<f64>> {
        match self {
            Adapter::Partition { partition, queries } => partition_adapter(c, partition, u, queries),
            Adapter::Gaussian { sigma, queries } => gaussian_adapter(c, u, *sigma, queries),
            Adapter::Repeat => {
                check_len(c, u)?;
                repeat_adapter(u)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set1d(xs: &[f64]) -> DescriptorSet {
        DescriptorSet::new(xs.iter().map(|x| vec![*x]).collect()).unwrap()
    }

    #[test]
    fn gaussian_spot_values() {
        let one = set1d(&[0.0]);
        assert_eq!(gaussian_adapter(&one, &[2.0], 0.7, &[vec![0.0]]).unwrap(), vec![2.0]);
        let two = set1d(&[-1.0, 1.0]);
        let out = gaussian_adapter(&two, &[1.0, 1.0], 1.0, &[vec![0.0]]).unwrap();
        assert!((out[0] - 1.21306).abs() < 1e-5);
        let zero = gaussian_adapter(&two, &[0.0, 0.0], 1.0, &[vec![0.3], vec![-2.0]]).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);
    }

    #[test]
    fn gaussian_rejects_mismatched_lengths() {
        let two = set1d(&[-1.0, 1.0]);
        assert!(matches!(
            gaussian_adapter(&two, &[1.0], 1.0, &[vec![0.0]]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn gaussian_concentrates_as_sigma_shrinks() {
        let c = set1d(&[-0.8, 0.1, 0.9]);
        let u = [0.3, -1.2, 0.7];
        for (j, z) in c.iter().enumerate() {
            let v = gaussian_adapter(&c, &u, 1e-3, &[z.to_vec()]).unwrap()[0];
            assert!((v - u[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn partition_single_cell_and_descriptor_points() {
        let c = set1d(&[0.0]);
        let p = Partition::voronoi(&c, vec![-1.0], vec![1.0]).unwrap();
        let q: Vec<Vec<f64>> = [-1.0, -0.3, 0.5, 1.0].iter().map(|v| vec![*v]).collect();
        assert_eq!(partition_adapter(&c, &p, &[0.7], &q).unwrap(), vec![0.7; 4]);

        let c = make_descriptors(DescriptorDomain::PdeModel, 16).unwrap();
        let p = Partition::voronoi(&c, vec![-0.5, -0.5], vec![0.5, 0.5]).unwrap();
        let u: Vec<f64> = (0..16).map(|i| i as f64 * 0.1 - 0.4).collect();
        let q: Vec<Vec<f64>> = c.iter().map(<[f64]>::to_vec).collect();
        assert_eq!(partition_adapter(&c, &p, &u, &q).unwrap(), u);
    }

    #[test]
    fn partition_rejects_outside_queries() {
        let c = set1d(&[0.0, 0.5]);
        let p = Partition::voronoi(&c, vec![-1.0], vec![1.0]).unwrap();
        assert!(matches!(
            partition_adapter(&c, &p, &[1.0, 2.0], &[vec![1.5]]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn partition_ties_go_to_lower_index() {
        let c = set1d(&[-1.0, 1.0]);
        let p = Partition::voronoi(&c, vec![-1.0], vec![1.0]).unwrap();
        assert_eq!(p.cell_of(&[0.0]).unwrap(), 0);
    }

    #[test]
    fn pde_grid_adapter_is_identity_when_k_matches_cells() {
        let c = make_descriptors(DescriptorDomain::PdeModel, 16).unwrap();
        let adapter = Adapter::pde_grid(&c, 4).unwrap();
        let u: Vec<f64> = (0..16).map(|i| (i * 7 % 16) as f64).collect();
        assert_eq!(adapter.apply(&c, &u).unwrap(), u);
    }

    #[test]
    fn pde_grid_adapter_coarse_descriptors() {
        let c = make_descriptors(DescriptorDomain::PdeModel, 4).unwrap();
        let adapter = Adapter::pde_grid(&c, 6).unwrap();
        let out = adapter.apply(&c, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        // top-left 3x3 block belongs to descriptor 0, bottom-right to 3
        assert_eq!(out[0], 1.0);
        assert_eq!(out[2 * 6 + 2], 1.0);
        assert_eq!(out[5], 2.0);
        assert_eq!(out[35], 4.0);
    }

    #[test]
    fn repeat_layouts() {
        let v: Vec<f64> = (0..200).map(|i| i as f64).collect();
        assert_eq!(repeat_adapter(&v).unwrap(), v);
        assert_eq!(repeat_adapter(&[-0.3]).unwrap(), vec![-0.3; 200]);
        let u: Vec<f64> = (1..=25).map(|i| i as f64).collect();
        let out = repeat_adapter(&u).unwrap();
        for r in 0..4 {
            for j in 0..25 {
                assert_eq!(out[r * 50 + 2 * j], u[j]);
                assert_eq!(out[r * 50 + 2 * j + 1], u[j]);
            }
        }
        let u: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let out = repeat_adapter(&u).unwrap();
        assert_eq!(&out[0..50], &u[0..50]);
        assert_eq!(&out[50..100], &u[0..50]);
        assert_eq!(&out[100..150], &u[50..100]);
        assert_eq!(&out[150..200], &u[50..100]);
        assert!(matches!(repeat_adapter(&[0.0; 7]), Err(Error::Config(_))));
    }

    #[test]
    fn descriptor_layouts() {
        let two = make_descriptors(DescriptorDomain::HeatInvader, 2).unwrap();
        assert_eq!(two.iter().collect::<Vec<_>>(), vec![&[-1.0][..], &[1.0][..]]);
        let hundred = make_descriptors(DescriptorDomain::HeatInvader, 100).unwrap();
        assert_eq!(hundred.iter().filter(|c| c[0] == -1.0).count(), 50);
        assert_eq!(hundred.iter().filter(|c| c[0] == 1.0).count(), 50);
        let two_hundred = make_descriptors(DescriptorDomain::HeatInvader, 200).unwrap();
        assert_eq!(two_hundred.len(), 200);
        let pde = make_descriptors(DescriptorDomain::PdeModel, 36).unwrap();
        assert_eq!(pde.len(), 36);
        assert!(pde.iter().flatten().all(|v| (-0.5..=0.5).contains(v)));
        assert!(make_descriptors(DescriptorDomain::PdeModel, 35).is_err());
        assert!(make_descriptors(DescriptorDomain::HeatInvader, 75).is_err());
    }

    #[test]
    fn descriptor_sets_reject_duplicates() {
        assert!(DescriptorSet::new(vec![vec![0.0], vec![0.0]]).is_err());
        assert!(DescriptorSet::with_duplicates(vec![vec![0.0], vec![0.0]]).is_ok());
        assert!(DescriptorSet::new(vec![]).is_err());
    }

    #[test]
    fn descriptor_text_round_trip() {
        let c = make_descriptors(DescriptorDomain::HeatInvader, 100).unwrap();
        let text = c.to_text();
        assert!(text.starts_with("100 2\n"));
        assert_eq!(DescriptorSet::from_text(&text).unwrap(), c);
    }

    proptest! {
        #[test]
        fn adapters_are_linear(u in prop::collection::vec(-1.0f64..1.0, 9),
                               w in prop::collection::vec(-1.0f64..1.0, 9),
                               a in -2.0f64..2.0, b in -2.0f64..2.0,
                               z in prop::collection::vec(-0.5f64..0.5, 2)) {
            let c = make_descriptors(DescriptorDomain::PdeModel, 9).unwrap();
            let mix: Vec<f64> = u.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
            let q = [z];
            let g = |v: &[f64]| gaussian_adapter(&c, v, 0.3, &q).unwrap()[0];
            let lhs = g(&mix);
            let rhs = a * g(&u) + b * g(&w);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0));

            let p = Partition::voronoi(&c, vec![-0.5, -0.5], vec![0.5, 0.5]).unwrap();
            let i = p.cell_of(&q[0]).unwrap();
            let pa = |v: &[f64]| partition_adapter(&c, &p, v, &q).unwrap()[0];
            prop_assert_eq!(pa(&mix), mix[i]);
            prop_assert_eq!(pa(&u), u[i]);
        }

        #[test]
        fn partition_is_piecewise_constant(z1 in prop::collection::vec(-0.5f64..0.5, 2),
                                           z2 in prop::collection::vec(-0.5f64..0.5, 2)) {
            let c = make_descriptors(DescriptorDomain::PdeModel, 9).unwrap();
            let p = Partition::voronoi(&c, vec![-0.5, -0.5], vec![0.5, 0.5]).unwrap();
            let u: Vec<f64> = (0..9).map(|i| i as f64).collect();
            let out = partition_adapter(&c, &p, &u, &[z1.clone(), z2.clone()]).unwrap();
            if p.cell_of(&z1).unwrap() == p.cell_of(&z2).unwrap() {
                prop_assert_eq!(out[0], out[1]);
            }
        }

        #[test]
        fn gaussian_slope_within_lipschitz_bound(u in prop::collection::vec(-1.0f64..1.0, 5),
                                                 z in -2.0f64..2.0, dz in 1e-4f64..0.5) {
            let c = set1d(&[-1.0, -0.5, 0.0, 0.5, 1.0]);
            let sigma = 0.4;
            let out = gaussian_adapter(&c, &u, sigma, &[vec![z], vec![z + dz]]).unwrap();
            let slope = (out[1] - out[0]).abs() / dz;
            let bound = u.iter().map(|v| v.abs()).sum::<f64>() * (-0.5f64).exp() / sigma;
            prop_assert!(slope <= bound * (1.0 + 1e-9));
        }

        #[test]
        fn repeat_only_duplicates_entries(k_idx in 0usize..5, seed in prop::collection::vec(-0.5f64..0.0, 200)) {
            let k = [1, 25, 50, 100, 200][k_idx];
            let u = &seed[..k];
            let out = repeat_adapter(u).unwrap();
            prop_assert_eq!(out.len(), 200);
            prop_assert!(out.iter().all(|v| u.contains(v)));
            prop_assert!(u.iter().all(|v| out.contains(v)));
        }
    }
}
