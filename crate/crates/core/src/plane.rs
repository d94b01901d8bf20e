//! Fixed laser-centered 2D grids and the temperature sections sampled on them.
//!
//! Two planes carry the full melt-pool information: the top-surface x–y cut
//! and the vertical x–z cut through the scan line. Axis 0 is always the scan
//! direction x, expressed relative to the laser center; axis 1 is y (absolute,
//! centerline at 0) or z (absolute, top surface at 1000 μm).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlaneKind {
    /// Top-surface cut, z = 1000 μm.
    Xy,
    /// Vertical cut along the scan line, y = 0.
    Xz,
}

impl PlaneKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlaneKind::Xy => "xy",
            PlaneKind::Xz => "xz",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "xy" | "x-y" | "XY" => Ok(PlaneKind::Xy),
            "xz" | "x-z" | "XZ" => Ok(PlaneKind::Xz),
            other => Err(Error::Config(format!("unknown plane {other:?}, want xy or xz"))),
        }
    }
}

/// Uniform 2D grid descriptor, coordinates in μm. Values laid out row-major
/// with axis 1 contiguous: index = i0 * n1 + i1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneGrid {
    pub kind: PlaneKind,
    pub n0: usize,
    pub n1: usize,
    pub start0_um: f64,
    pub step0_um: f64,
    pub start1_um: f64,
    pub step1_um: f64,
}

impl PlaneGrid {
    /// The canonical x–y grid: 101 points x ∈ [−1375, 1375] μm step 27.5,
    /// 51 points y ∈ [−220, 220] μm step 8.8.
    pub fn chi_xy() -> Self {
        Self {
            kind: PlaneKind::Xy,
            n0: 101,
            n1: 51,
            start0_um: -1375.0,
            step0_um: 27.5,
            start1_um: -220.0,
            step1_um: 8.8,
        }
    }

    /// The canonical x–z grid: 101 points x ∈ [−1375, 1375] μm step 27.5,
    /// 26 points z ∈ [750, 1000] μm step 10.
    pub fn chi_xz() -> Self {
        Self {
            kind: PlaneKind::Xz,
            n0: 101,
            n1: 26,
            start0_um: -1375.0,
            step0_um: 27.5,
            start1_um: 750.0,
            step1_um: 10.0,
        }
    }

    pub fn chi(kind: PlaneKind) -> Self {
        match kind {
            PlaneKind::Xy => Self::chi_xy(),
            PlaneKind::Xz => Self::chi_xz(),
        }
    }

    pub fn len(&self) -> usize {
        self.n0 * self.n1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn coord0_um(&self, i0: usize) -> f64 {
        self.start0_um + self.step0_um * i0 as f64
    }

    #[inline]
    pub fn coord1_um(&self, i1: usize) -> f64 {
        self.start1_um + self.step1_um * i1 as f64
    }

    /// Grid with the same span and both steps halved (2x refinement).
    pub fn refined(&self) -> Self {
        Self {
            kind: self.kind,
            n0: (self.n0 - 1) * 2 + 1,
            n1: (self.n1 - 1) * 2 + 1,
            step0_um: self.step0_um / 2.0,
            step1_um: self.step1_um / 2.0,
            ..*self
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.kind == other.kind && self.n0 == other.n0 && self.n1 == other.n1
    }
}

/// Temperature values (K) on a [`PlaneGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSection {
    pub grid: PlaneGrid,
    pub values_k: Vec<f64>,
    /// Set when any χ node fell outside the source domain and was clamped to
    /// the boundary value during extraction.
    pub clamped: bool,
}

impl PlaneSection {
    pub fn new(grid: PlaneGrid, values_k: Vec<f64>) -> Result<Self> {
        if values_k.len() != grid.len() {
            return Err(Error::Shape {
                expected: format!("{} values", grid.len()),
                got: format!("{}", values_k.len()),
            });
        }
        Ok(Self { grid, values_k, clamped: false })
    }

    pub fn uniform(grid: PlaneGrid, value_k: f64) -> Self {
        let n = grid.len();
        Self { grid, values_k: vec![value_k; n], clamped: false }
    }

    #[inline]
    pub fn at(&self, i0: usize, i1: usize) -> f64 {
        self.values_k[i0 * self.grid.n1 + i1]
    }

    /// Bilinear interpolation of this section onto another grid of the same
    /// plane kind; query points outside the span clamp to the boundary.
    pub fn resample(&self, target: &PlaneGrid) -> PlaneSection {
        let mut values = Vec::with_capacity(target.len());
        for i0 in 0..target.n0 {
            let u = (target.coord0_um(i0) - self.grid.start0_um) / self.grid.step0_um;
            for i1 in 0..target.n1 {
                let v = (target.coord1_um(i1) - self.grid.start1_um) / self.grid.step1_um;
                values.push(bilinear_clamped(
                    &self.values_k,
                    self.grid.n0,
                    self.grid.n1,
                    u,
                    v,
                ));
            }
        }
        PlaneSection { grid: *target, values_k: values, clamped: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SectionHeader {
    kind: String,
    grid: PlaneGrid,
    clamped: bool,
    params: Option<crate::params::ProcessParams>,
}

impl PlaneSection {
    /// Write this section as a binary container; `params` travel in the header.
    pub fn save(&self, path: &std::path::Path, params: Option<&crate::params::ProcessParams>) -> Result<()> {
        let header = SectionHeader {
            kind: "section".into(),
            grid: self.grid,
            clamped: self.clamped,
            params: params.copied(),
        };
        crate::container::write_file(
            path,
            crate::container::FIELD_MAGIC,
            crate::container::FIELD_FORMAT_VERSION,
            &header,
            &[&self.values_k],
        )
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, Option<crate::params::ProcessParams>)> {
        let (header, mut arrays): (SectionHeader, _) = crate::container::read_file(
            path,
            crate::container::FIELD_MAGIC,
            crate::container::FIELD_FORMAT_VERSION,
        )?;
        if arrays.len() != 1 {
            return Err(Error::Format("expected one value array".into()));
        }
        let mut section = Self::new(header.grid, arrays.pop().unwrap())?;
        section.clamped = header.clamped;
        Ok((section, header.params))
    }
}

/// Bilinear interpolation at fractional index (u, v) into a row-major
/// n0 x n1 array, clamping to the boundary outside [0, n0-1] x [0, n1-1].
pub(crate) fn bilinear_clamped(values: &[f64], n0: usize, n1: usize, u: f64, v: f64) -> f64 {
    let u = u.clamp(0.0, (n0 - 1) as f64);
    let v = v.clamp(0.0, (n1 - 1) as f64);
    let i = (u.floor() as usize).min(n0.saturating_sub(2));
    let j = (v.floor() as usize).min(n1.saturating_sub(2));
    let fu = u - i as f64;
    let fv = v - j as f64;
    let idx = |a: usize, b: usize| values[a * n1 + b];
    if n0 == 1 && n1 == 1 {
        return values[0];
    }
    if n0 == 1 {
        return idx(0, j) * (1.0 - fv) + idx(0, j + 1) * fv;
    }
    if n1 == 1 {
        return idx(i, 0) * (1.0 - fu) + idx(i + 1, 0) * fu;
    }
    idx(i, j) * (1.0 - fu) * (1.0 - fv)
        + idx(i + 1, j) * fu * (1.0 - fv)
        + idx(i, j + 1) * (1.0 - fu) * fv
        + idx(i + 1, j + 1) * fu * fv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_grids_match_published_spans() {
        let xy = PlaneGrid::chi_xy();
        assert_eq!(xy.len(), 101 * 51);
        assert!((xy.coord0_um(100) - 1375.0).abs() < 1e-9);
        assert!((xy.coord1_um(50) - 220.0).abs() < 1e-9);
        let xz = PlaneGrid::chi_xz();
        assert_eq!(xz.len(), 101 * 26);
        assert!((xz.coord1_um(25) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn refined_preserves_span() {
        let g = PlaneGrid::chi_xy().refined();
        assert_eq!(g.n0, 201);
        assert_eq!(g.n1, 101);
        assert!((g.coord0_um(200) - 1375.0).abs() < 1e-9);
    }

    #[test]
    fn bilinear_is_exact_on_linear_fields() {
        let g = PlaneGrid::chi_xy();
        let mut vals = vec![0.0; g.len()];
        for i0 in 0..g.n0 {
            for i1 in 0..g.n1 {
                vals[i0 * g.n1 + i1] = 300.0 + g.coord0_um(i0) / 10.0 + g.coord1_um(i1) / 7.0;
            }
        }
        let s = PlaneSection::new(g, vals).unwrap();
        let r = s.resample(&g.refined());
        for i0 in 0..r.grid.n0 {
            for i1 in 0..r.grid.n1 {
                let want = 300.0 + r.grid.coord0_um(i0) / 10.0 + r.grid.coord1_um(i1) / 7.0;
                assert!((r.at(i0, i1) - want).abs() < 1e-9);
            }
        }
    }
}
