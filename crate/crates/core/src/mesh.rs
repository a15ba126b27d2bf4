//! Periodic structured meshes on 1-D and 2-D model spaces, plus the scalar
//! and metric fields sampled on them.
//!
//! Nodes are numbered with the first axis fastest: `node = ix + nx * iy`.
//! Coordinates are chart coordinates `origin + index * spacing`. Every axis
//! wraps topologically. The per-axis `periodic` flag records whether data
//! sampled on the chart is itself periodic across the wrap; an axis with
//! `periodic == false` (a chart band such as a latitude strip of the sphere)
//! has a seam, and pointwise finite-difference diagnostics skip the nodes
//! next to it.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat2};

/// Smallest admissible eigenvalue of a sampled metric.
pub const METRIC_PD_FLOOR: f64 = 1e-10;

/// Minimum node count per axis; the finite-difference stencils reach two
/// layers out in each direction.
pub const MIN_NODES_PER_AXIS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mesh {
    dimension: usize,
    shape: Vec<usize>,
    spacing: Vec<f64>,
    origin: Vec<f64>,
    periodic: Vec<bool>,
}

impl Mesh {
    fn new(shape: Vec<usize>, extent: Vec<f64>, origin: Vec<f64>, periodic: Vec<bool>) -> Result<Self> {
        let dimension = shape.len();
        if !(1..=2).contains(&dimension) {
            return Err(Error::InvalidMesh(format!("dimension {dimension} not in {{1, 2}}")));
        }
        for (axis, (&n, &len)) in shape.iter().zip(&extent).enumerate() {
            if n < MIN_NODES_PER_AXIS {
                return Err(Error::InvalidMesh(format!(
                    "axis {axis} has {n} nodes; at least {MIN_NODES_PER_AXIS} are required"
                )));
            }
            if !(len > 0.0) || !len.is_finite() {
                return Err(Error::InvalidMesh(format!("axis {axis} has non-positive extent {len}")));
            }
        }
        let spacing = shape.iter().zip(&extent).map(|(&n, &len)| len / n as f64).collect();
        Ok(Self { dimension, shape, spacing, origin, periodic })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.spacing[axis] * self.shape[axis] as f64
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Chart volume of one cell (product of spacings).
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn index(&self, node: usize) -> [usize; 2] {
        let nx = self.shape[0];
        if self.dimension == 1 {
            [node, 0]
        } else {
            [node % nx, node / nx]
        }
    }

    pub fn node(&self, ix: usize, iy: usize) -> usize {
        if self.dimension == 1 {
            ix
        } else {
            ix + self.shape[0] * iy
        }
    }

    /// Node reached from `node` by moving `dx` steps along axis 0 and `dy`
    /// along axis 1, with periodic wrap.
    pub fn offset(&self, node: usize, dx: isize, dy: isize) -> usize {
        let [ix, iy] = self.index(node);
        let nx = self.shape[0] as isize;
        let jx = (ix as isize + dx).rem_euclid(nx) as usize;
        if self.dimension == 1 {
            return jx;
        }
        let ny = self.shape[1] as isize;
        let jy = (iy as isize + dy).rem_euclid(ny) as usize;
        self.node(jx, jy)
    }

    /// Neighbor along `axis` (0 or 1) at signed distance `step`.
    pub fn step(&self, node: usize, axis: usize, step: isize) -> usize {
        if axis == 0 {
            self.offset(node, step, 0)
        } else {
            self.offset(node, 0, step)
        }
    }

    /// The `2 * dimension` axis neighbors in the order -x, +x, -y, +y.
    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(2 * self.dimension);
        for axis in 0..self.dimension {
            out.push(self.step(node, axis, -1));
            out.push(self.step(node, axis, 1));
        }
        out
    }

    pub fn coordinates(&self, node: usize) -> [f64; 2] {
        let idx = self.index(node);
        let mut x = [0.0; 2];
        for axis in 0..self.dimension {
            x[axis] = self.origin[axis] + idx[axis] as f64 * self.spacing[axis];
        }
        x
    }

    /// Chart displacement from `a` to `b` using the shortest periodic image.
    pub fn displacement(&self, a: usize, b: usize) -> [f64; 2] {
        let (xa, xb) = (self.coordinates(a), self.coordinates(b));
        let mut d = [0.0; 2];
        for axis in 0..self.dimension {
            let len = self.extent(axis);
            let mut v = xb[axis] - xa[axis];
            v -= len * (v / len).round();
            d[axis] = v;
        }
        d
    }

    /// Euclidean chart distance with periodic images.
    pub fn chart_distance(&self, a: usize, b: usize) -> f64 {
        let d = self.displacement(a, b);
        (d[0] * d[0] + d[1] * d[1]).sqrt()
    }

    /// Nodes at least `margin` layers away from every non-periodic seam.
    pub fn seam_interior(&self, margin: usize) -> Vec<bool> {
        (0..self.len())
            .map(|node| {
                let idx = self.index(node);
                (0..self.dimension).all(|axis| {
                    self.periodic[axis] || (idx[axis] >= margin && idx[axis] + margin < self.shape[axis])
                })
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header = if self.dimension == 1 { "node,x" } else { "node,x,y" };
        writeln!(out, "{header}")?;
        for node in 0..self.len() {
            let x = self.coordinates(node);
            if self.dimension == 1 {
                writeln!(out, "{node},{}", x[0])?;
            } else {
                writeln!(out, "{node},{},{}", x[0], x[1])?;
            }
        }
        Ok(())
    }
}

pub fn build_circle_mesh(n_nodes: usize, circumference: f64) -> Result<Arc<Mesh>> {
    Mesh::new(vec![n_nodes], vec![circumference], vec![0.0], vec![true]).map(Arc::new)
}

pub fn build_torus_mesh(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Arc<Mesh>> {
    Mesh::new(vec![nx, ny], vec![lx, ly], vec![0.0, 0.0], vec![true, true]).map(Arc::new)
}

/// 2-D chart patch with an explicit origin. Axes flagged non-periodic carry a
/// seam at the wrap (see the module docs).
pub fn build_chart_mesh(shape: [usize; 2], extent: [f64; 2], origin: [f64; 2], periodic: [bool; 2]) -> Result<Arc<Mesh>> {
    Mesh::new(shape.to_vec(), extent.to_vec(), origin.to_vec(), periodic.to_vec()).map(Arc::new)
}

fn check_mesh(mesh: &Mesh, len: usize) -> Result<()> {
    if mesh.len() != len {
        return Err(Error::MeshMismatch { expected: mesh.len(), found: len });
    }
    Ok(())
}

/// One real value per mesh node.
#[derive(Debug, Clone)]
pub struct ScalarField {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn from_values(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<Self> {
        check_mesh(&mesh, values.len())?;
        if let Some((node, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { node, value });
        }
        Ok(Self { mesh, values })
    }

    pub fn constant(mesh: Arc<Mesh>, c: f64) -> Result<Self> {
        let n = mesh.len();
        Self::from_values(mesh, vec![c; n])
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
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

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Entrywise map; the result must stay finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_values(self.mesh.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn write_csv<W: Write>(&self, mut out: W, value_name: &str) -> Result<()> {
        let dim = self.mesh.dimension();
        let coords = if dim == 1 { "x" } else { "x,y" };
        writeln!(out, "node,{coords},{value_name}")?;
        for (node, v) in self.values.iter().enumerate() {
            let x = self.mesh.coordinates(node);
            if dim == 1 {
                writeln!(out, "{node},{},{v}", x[0])?;
            } else {
                writeln!(out, "{node},{},{},{v}", x[0], x[1])?;
            }
        }
        Ok(())
    }
}

pub fn sample_scalar(mesh: &Arc<Mesh>, f: impl Fn(&[f64]) -> f64) -> Result<ScalarField> {
    let dim = mesh.dimension();
    let mut values = Vec::with_capacity(mesh.len());
    for node in 0..mesh.len() {
        let x = mesh.coordinates(node);
        let v = f(&x[..dim]);
        if !v.is_finite() {
            return Err(Error::NonFinite { node, value: v });
        }
        values.push(v);
    }
    Ok(ScalarField { mesh: mesh.clone(), values })
}

/// Per-node symmetric positive definite d x d matrices.
#[derive(Debug, Clone)]
pub struct MetricField {
    mesh: Arc<Mesh>,
    values: Vec<Mat2>,
}

impl MetricField {
    pub fn from_values(mesh: Arc<Mesh>, values: Vec<Mat2>) -> Result<Self> {
        check_mesh(&mesh, values.len())?;
        let dim = mesh.dimension();
        for (node, g) in values.iter().enumerate() {
            validate_metric(node, g, dim)?;
        }
        Ok(Self { mesh, values })
    }

    /// Identity metric in chart coordinates.
    pub fn flat(mesh: &Arc<Mesh>) -> Self {
        let id = linalg::identity(mesh.dimension());
        Self { mesh: mesh.clone(), values: vec![id; mesh.len()] }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[Mat2] {
        &self.values
    }

    pub fn at(&self, node: usize) -> &Mat2 {
        &self.values[node]
    }

    /// Conformal rescaling `e^{2w} g`.
    pub fn conformal(&self, w: &ScalarField) -> Result<Self> {
        check_mesh(&self.mesh, w.len())?;
        let values = self
            .values
            .iter()
            .zip(w.values())
            .map(|(g, &wi)| linalg::scale(g, (2.0 * wi).exp()))
            .collect();
        Self::from_values(self.mesh.clone(), values)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let dim = self.mesh.dimension();
        if dim == 1 {
            writeln!(out, "node,x,g11")?;
        } else {
            writeln!(out, "node,x,y,g11,g12,g22")?;
        }
        for (node, g) in self.values.iter().enumerate() {
            let x = self.mesh.coordinates(node);
            if dim == 1 {
                writeln!(out, "{node},{},{}", x[0], g[0][0])?;
            } else {
                writeln!(out, "{node},{},{},{},{},{}", x[0], x[1], g[0][0], g[0][1], g[1][1])?;
            }
        }
        Ok(())
    }
}

fn validate_metric(node: usize, g: &Mat2, dim: usize) -> Result<()> {
    for row in g.iter().take(dim) {
        for &v in row.iter().take(dim) {
            if !v.is_finite() {
                return Err(Error::NonFinite { node, value: v });
            }
        }
    }
    if dim == 2 {
        let asym = (g[0][1] - g[1][0]).abs();
        if asym > 1e-12 * (g[0][1].abs() + g[1][0].abs()).max(1.0) {
            return Err(Error::NotPositiveDefinite { node, min_eigenvalue: f64::NAN });
        }
    }
    let lo = linalg::min_eigenvalue(g, dim);
    if !(lo >= METRIC_PD_FLOOR) {
        return Err(Error::NotPositiveDefinite { node, min_eigenvalue: lo });
    }
    Ok(())
}

pub fn sample_metric(mesh: &Arc<Mesh>, f: impl Fn(&[f64]) -> Mat2) -> Result<MetricField> {
    let dim = mesh.dimension();
    let mut values = Vec::with_capacity(mesh.len());
    for node in 0..mesh.len() {
        let x = mesh.coordinates(node);
        let mut g = f(&x[..dim]);
        if dim == 1 {
            g = [[g[0][0], 0.0], [0.0, 0.0]];
        }
        validate_metric(node, &g, dim)?;
        values.push(g);
    }
    Ok(MetricField { mesh: mesh.clone(), values })
}
