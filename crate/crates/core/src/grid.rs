//! Uniform finite-difference grids with the classical 3-point (1D) / 5-point
//! (2D) stencil: discrete Laplacian, gradients, quadrature, norms, and a
//! cached direct Poisson solver with zero Dirichlet data.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the computational domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    Interval,
    Rectangle,
    /// Rectangle with every node outside the inscribed disc masked as boundary.
    Disc,
}

/// Serializable grid descriptor (kind, origin, extents, resolution).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDescriptor {
    pub kind: DomainKind,
    pub origin: Vec<f64>,
    pub extents: Vec<f64>,
    pub resolution: Vec<usize>,
}

#[derive(Debug)]
struct GridData {
    kind: DomainKind,
    dim: usize,
    origin: [f64; 2],
    extents: [f64; 2],
    resolution: [usize; 2],
    spacing: [f64; 2],
    /// node id -> interior index (None for boundary nodes)
    interior_index: Vec<Option<u32>>,
    /// interior index -> node id
    interior_nodes: Vec<u32>,
    poisson: OnceLock<std::result::Result<BandedCholesky, String>>,
}

/// Immutable, cheaply clonable handle on a grid. Two handles are compatible
/// when their descriptors agree, so identical grids built independently
/// interoperate.
#[derive(Debug, Clone)]
pub struct Grid(Arc<GridData>);

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.kind == other.0.kind
                && self.0.dim == other.0.dim
                && self.0.origin == other.0.origin
                && self.0.extents == other.0.extents
                && self.0.resolution == other.0.resolution)
    }
}

impl Grid {
    /// Builds a grid anchored at the coordinate origin.
    pub fn build(kind: DomainKind, extents: &[f64], resolution: &[usize]) -> Result<Grid> {
        let origin = vec![0.0; extents.len()];
        Grid::build_at(kind, &origin, extents, resolution)
    }

    /// Builds a grid whose lower-left corner sits at `origin`.
    pub fn build_at(
        kind: DomainKind,
        origin: &[f64],
        extents: &[f64],
        resolution: &[usize],
    ) -> Result<Grid> {
        let dim = match kind {
            DomainKind::Interval => 1,
            DomainKind::Rectangle | DomainKind::Disc => 2,
        };
        if extents.len() != dim || resolution.len() != dim || origin.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "{kind:?} needs {dim} axis entries, got extents {}, resolution {}, origin {}",
                extents.len(),
                resolution.len(),
                origin.len()
            )));
        }
        for (&e, &r) in extents.iter().zip(resolution) {
            if !(e > 0.0) {
                return Err(Error::InvalidGrid(format!("extent must be positive, got {e}")));
            }
            if r < 3 {
                return Err(Error::InvalidGrid(format!(
                    "resolution must be at least 3 nodes per axis, got {r}"
                )));
            }
        }

        let mut ext = [0.0; 2];
        let mut res = [1usize; 2];
        let mut org = [0.0; 2];
        let mut spc = [0.0; 2];
        for d in 0..dim {
            ext[d] = extents[d];
            res[d] = resolution[d];
            org[d] = origin[d];
            spc[d] = extents[d] / (resolution[d] - 1) as f64;
        }

        let n_nodes = res[0] * res[1];
        let mut interior_index = vec![None; n_nodes];
        let mut interior_nodes = Vec::new();

        // For the disc kind, the disc is inscribed in the bounding rectangle.
        let radius = 0.5 * ext[0].min(if dim == 2 { ext[1] } else { ext[0] });
        let center = [org[0] + 0.5 * ext[0], org[1] + 0.5 * ext[1]];
        let r2_cut = radius * radius * (1.0 - 1e-12);

        for j in 0..res[1] {
            for i in 0..res[0] {
                let node = j * res[0] + i;
                let on_edge = i == 0
                    || i + 1 == res[0]
                    || (dim == 2 && (j == 0 || j + 1 == res[1]));
                let masked = if kind == DomainKind::Disc {
                    let x = org[0] + i as f64 * spc[0] - center[0];
                    let y = org[1] + j as f64 * spc[1] - center[1];
                    x * x + y * y >= r2_cut
                } else {
                    false
                };
                if !on_edge && !masked {
                    interior_index[node] = Some(interior_nodes.len() as u32);
                    interior_nodes.push(node as u32);
                }
            }
        }

        Ok(Grid(Arc::new(GridData {
            kind,
            dim,
            origin: org,
            extents: ext,
            resolution: res,
            spacing: spc,
            interior_index,
            interior_nodes,
            poisson: OnceLock::new(),
        })))
    }

    pub fn kind(&self) -> DomainKind {
        self.0.kind
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    pub fn origin(&self) -> &[f64] {
        &self.0.origin[..self.0.dim]
    }

    pub fn extents(&self) -> &[f64] {
        &self.0.extents[..self.0.dim]
    }

    pub fn resolution(&self) -> &[usize] {
        &self.0.resolution[..self.0.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.0.spacing[..self.0.dim]
    }

    pub fn node_count(&self) -> usize {
        self.0.resolution[0] * self.0.resolution[1]
    }

    pub fn interior_count(&self) -> usize {
        self.0.interior_nodes.len()
    }

    /// Interior index -> node id.
    pub fn interior_node(&self, k: usize) -> usize {
        self.0.interior_nodes[k] as usize
    }

    /// Node id -> interior index, None for boundary nodes.
    pub fn interior_index(&self, node: usize) -> Option<usize> {
        self.0.interior_index[node].map(|k| k as usize)
    }

    pub fn is_interior(&self, node: usize) -> bool {
        self.0.interior_index[node].is_some()
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.interior_nodes.iter().map(|&n| n as usize)
    }

    /// Coordinate of a node along one axis.
    pub fn coord(&self, node: usize, axis: usize) -> f64 {
        let (i, j) = self.split(node);
        let idx = if axis == 0 { i } else { j };
        self.0.origin[axis] + idx as f64 * self.0.spacing[axis]
    }

    /// All coordinates of a node (length = dim).
    pub fn coords(&self, node: usize) -> [f64; 2] {
        let (i, j) = self.split(node);
        [
            self.0.origin[0] + i as f64 * self.0.spacing[0],
            self.0.origin[1] + j as f64 * self.0.spacing[1],
        ]
    }

    fn split(&self, node: usize) -> (usize, usize) {
        let nx = self.0.resolution[0];
        (node % nx, node / nx)
    }

    /// Product of spacings: the volume of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        self.0.spacing[..self.0.dim].iter().product()
    }

    pub fn descriptor(&self) -> GridDescriptor {
        GridDescriptor {
            kind: self.0.kind,
            origin: self.origin().to_vec(),
            extents: self.extents().to_vec(),
            resolution: self.resolution().to_vec(),
        }
    }

    pub fn from_descriptor(d: &GridDescriptor) -> Result<Grid> {
        Grid::build_at(d.kind, &d.origin, &d.extents, &d.resolution)
    }

    fn check(&self, f: &ScalarField) -> Result<()> {
        if &f.grid == self {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Field of zeros.
    pub fn zeros(&self) -> ScalarField {
        ScalarField {
            grid: self.clone(),
            values: vec![0.0; self.node_count()],
        }
    }

    /// Field with the same value at every node (boundary included).
    pub fn constant(&self, c: f64) -> ScalarField {
        ScalarField {
            grid: self.clone(),
            values: vec![c; self.node_count()],
        }
    }

    /// Field sampled from a function of the node coordinates at every node.
    pub fn sample(&self, mut f: impl FnMut(&[f64]) -> f64) -> ScalarField {
        let values = (0..self.node_count())
            .map(|n| f(&self.coords(n)[..self.0.dim]))
            .collect();
        ScalarField { grid: self.clone(), values }
    }

    /// Field sampled at interior nodes, zero on the boundary.
    pub fn sample_dirichlet(&self, mut f: impl FnMut(&[f64]) -> f64) -> ScalarField {
        let mut out = self.zeros();
        for n in self.interior_nodes() {
            out.values[n] = f(&self.coords(n)[..self.0.dim]);
        }
        out
    }

    /// Negative discrete Laplacian: (sum over axes of (2 f(x) - f(x-h) - f(x+h)) / h^2)
    /// at interior nodes, zero at boundary nodes of the output.
    pub fn laplacian(&self, f: &ScalarField) -> Result<ScalarField> {
        self.check(f)?;
        let nx = self.0.resolution[0];
        let mut out = self.zeros();
        for n in self.interior_nodes() {
            let mut acc = 0.0;
            let c = f.values[n];
            acc += (2.0 * c - f.values[n - 1] - f.values[n + 1])
                / (self.0.spacing[0] * self.0.spacing[0]);
            if self.0.dim == 2 {
                acc += (2.0 * c - f.values[n - nx] - f.values[n + nx])
                    / (self.0.spacing[1] * self.0.spacing[1]);
            }
            out.values[n] = acc;
        }
        Ok(out)
    }

    /// Central differences where both lattice neighbours exist, one-sided
    /// first-order differences on the lattice edges.
    pub fn gradient(&self, f: &ScalarField) -> Result<VectorField> {
        self.check(f)?;
        let dim = self.0.dim;
        let nx = self.0.resolution[0];
        let mut comps = vec![0.0; self.node_count() * dim];
        for node in 0..self.node_count() {
            let (i, j) = self.split(node);
            for d in 0..dim {
                let (idx, len, stride) = if d == 0 {
                    (i, self.0.resolution[0], 1)
                } else {
                    (j, self.0.resolution[1], nx)
                };
                let h = self.0.spacing[d];
                let v = if idx == 0 {
                    (f.values[node + stride] - f.values[node]) / h
                } else if idx + 1 == len {
                    (f.values[node] - f.values[node - stride]) / h
                } else {
                    (f.values[node + stride] - f.values[node - stride]) / (2.0 * h)
                };
                comps[node * dim + d] = v;
            }
        }
        Ok(VectorField { grid: self.clone(), dim, comps })
    }

    /// Quadrature: cell volume times the sum over interior nodes.
    pub fn integrate(&self, f: &ScalarField) -> Result<f64> {
        self.check(f)?;
        let vol = self.cell_volume();
        Ok(vol * self.interior_nodes().map(|n| f.values[n]).sum::<f64>())
    }

    /// Discrete Dirichlet form: sum over all lattice edges of the forward
    /// difference products. For fields vanishing on the boundary this equals
    /// integrate(laplacian(f) * g) exactly (summation by parts).
    pub fn grad_inner(&self, f: &ScalarField, g: &ScalarField) -> Result<f64> {
        self.check(f)?;
        self.check(g)?;
        let vol = self.cell_volume();
        let (nx, ny) = (self.0.resolution[0], self.0.resolution[1]);
        let mut acc = 0.0;
        let hx2 = self.0.spacing[0] * self.0.spacing[0];
        for j in 0..ny {
            for i in 0..nx - 1 {
                let n = j * nx + i;
                acc += (f.values[n + 1] - f.values[n]) * (g.values[n + 1] - g.values[n]) / hx2;
            }
        }
        if self.0.dim == 2 {
            let hy2 = self.0.spacing[1] * self.0.spacing[1];
            for j in 0..ny - 1 {
                for i in 0..nx {
                    let n = j * nx + i;
                    acc +=
                        (f.values[n + nx] - f.values[n]) * (g.values[n + nx] - g.values[n]) / hy2;
                }
            }
        }
        Ok(acc * vol)
    }

    /// H1(0) seminorm, sqrt of the Dirichlet form.
    pub fn h1_seminorm(&self, f: &ScalarField) -> Result<f64> {
        Ok(self.grad_inner(f, f)?.sqrt())
    }

    /// L2 norm over interior nodes.
    pub fn l2_norm(&self, f: &ScalarField) -> Result<f64> {
        self.check(f)?;
        let vol = self.cell_volume();
        Ok((vol * self.interior_nodes().map(|n| f.values[n] * f.values[n]).sum::<f64>()).sqrt())
    }

    /// Solves -Lap w = rhs with w = 0 on the boundary, through a banded
    /// Cholesky factorization cached on the grid.
    pub fn solve_poisson(&self, rhs: &ScalarField) -> Result<ScalarField> {
        self.check(rhs)?;
        let n_int = self.interior_count();
        let mut out = self.zeros();
        if n_int == 0 {
            return Ok(out);
        }
        let chol = self
            .0
            .poisson
            .get_or_init(|| self.factor_laplacian())
            .as_ref()
            .map_err(|e| Error::LinearSolver(e.clone()))?;
        let mut b: Vec<f64> = self.interior_nodes().map(|n| rhs.values[n]).collect();
        chol.solve(&mut b);
        for (k, n) in self.interior_nodes().enumerate() {
            out.values[n] = b[k];
        }
        Ok(out)
    }

    fn factor_laplacian(&self) -> std::result::Result<BandedCholesky, String> {
        let n_int = self.interior_count();
        let nx = self.0.resolution[0];
        let strides: [usize; 2] = [1, nx];

        // Bandwidth: largest interior-index distance across a stencil edge.
        let mut bw = 0usize;
        for (k, node) in self.interior_nodes().enumerate() {
            for d in 0..self.0.dim {
                if let Some(kn) = self.interior_index(node - strides[d]) {
                    bw = bw.max(k - kn);
                }
            }
        }

        let mut band = vec![0.0; n_int * (bw + 1)];
        let at = |i: usize, j: usize| i * (bw + 1) + (j + bw - i);
        for (k, node) in self.interior_nodes().enumerate() {
            let mut diag = 0.0;
            for d in 0..self.0.dim {
                let h2 = self.0.spacing[d] * self.0.spacing[d];
                diag += 2.0 / h2;
                if let Some(kn) = self.interior_index(node - strides[d]) {
                    band[at(k, kn)] = -1.0 / h2;
                }
            }
            band[at(k, k)] = diag;
        }
        BandedCholesky::factor(n_int, bw, band)
    }
}

/// One real value per grid node.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != grid.node_count() {
            return Err(Error::InvalidParameter(format!(
                "field has {} values but grid has {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        Ok(ScalarField { grid: grid.clone(), values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn set(&mut self, node: usize, v: f64) {
        self.values[node] = v;
    }

    /// Max of |value| over all nodes.
    pub fn linf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> ScalarField {
        self.map(|v| a * v)
    }

    pub fn zip(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(ScalarField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField> {
        self.zip(other, |a, b| a - b)
    }

    /// True when every boundary node carries exactly zero.
    pub fn is_dirichlet_zero(&self) -> bool {
        (0..self.grid.node_count())
            .all(|n| self.grid.is_interior(n) || self.values[n] == 0.0)
    }
}

/// One N-vector per grid node (N = domain dimension).
#[derive(Debug, Clone)]
pub struct VectorField {
    grid: Grid,
    dim: usize,
    comps: Vec<f64>,
}

impl VectorField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Components at one node.
    pub fn at(&self, node: usize) -> &[f64] {
        &self.comps[node * self.dim..(node + 1) * self.dim]
    }

    pub fn scale(&self, a: f64) -> VectorField {
        VectorField {
            grid: self.grid.clone(),
            dim: self.dim,
            comps: self.comps.iter().map(|&c| a * c).collect(),
        }
    }
}

/// Lower-band Cholesky factorization of a symmetric positive definite banded
/// matrix. Row i stores L[i][j] for j in [i-bw, i].
#[derive(Debug)]
struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    fn factor(n: usize, bw: usize, mut band: Vec<f64>) -> std::result::Result<Self, String> {
        let w = bw + 1;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut sum = band[i * w + (j + bw - i)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    sum -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
                }
                if j == i {
                    if sum <= 0.0 {
                        return Err(format!("non-positive pivot {sum:.3e} at row {i}"));
                    }
                    band[i * w + bw] = sum.sqrt();
                } else {
                    band[i * w + (j + bw - i)] = sum / band[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, band })
    }

    /// Solves A x = b in place (forward then backward substitution).
    fn solve(&self, b: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut sum = b[i];
            for j in lo..i {
                sum -= self.band[i * w + (j + bw - i)] * b[j];
            }
            b[i] = sum / self.band[i * w + bw];
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut sum = b[i];
            for j in i + 1..=hi {
                sum -= self.band[j * w + (i + bw - j)] * b[j];
            }
            b[i] = sum / self.band[i * w + bw];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit_interval(n: usize) -> Grid {
        Grid::build(DomainKind::Interval, &[1.0], &[n]).unwrap()
    }

    #[test]
    fn interval_five_nodes() {
        let g = unit_interval(5);
        assert_eq!(g.spacing()[0], 0.25);
        assert_eq!(g.interior_count(), 3);
        assert_eq!(g.node_count(), 5);
    }

    #[test]
    fn rectangle_five_by_five() {
        let g = Grid::build(DomainKind::Rectangle, &[1.0, 1.0], &[5, 5]).unwrap();
        assert_eq!(g.interior_count(), 9);
    }

    #[test]
    fn disc_masks_corners() {
        let g = Grid::build_at(DomainKind::Disc, &[-1.0, -1.0], &[2.0, 2.0], &[5, 5]).unwrap();
        // lattice corners: |(+-1, +-1)| > 1
        for node in [0, 4, 20, 24] {
            assert!(!g.is_interior(node));
        }
        assert_eq!(g.interior_count(), 9);

        // on a 9x9 grid the four inner corner nodes at (+-0.75, +-0.75) lie
        // outside the disc and get masked
        let g = Grid::build_at(DomainKind::Disc, &[-1.0, -1.0], &[2.0, 2.0], &[9, 9]).unwrap();
        assert_eq!(g.interior_count(), 45);
    }

    #[test]
    fn interior_index_is_a_bijection() {
        let g = Grid::build_at(DomainKind::Disc, &[-1.0, -1.0], &[2.0, 2.0], &[9, 9]).unwrap();
        let mut seen = vec![false; g.interior_count()];
        for node in 0..g.node_count() {
            if let Some(k) = g.interior_index(node) {
                assert!(!seen[k]);
                seen[k] = true;
                assert_eq!(g.interior_node(k), node);
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::build(DomainKind::Interval, &[1.0], &[2]).is_err());
        assert!(Grid::build(DomainKind::Interval, &[0.0], &[5]).is_err());
        assert!(Grid::build(DomainKind::Rectangle, &[1.0, -1.0], &[5, 5]).is_err());
    }

    #[test]
    fn laplacian_annihilates_constants() {
        let g = Grid::build(DomainKind::Rectangle, &[1.0, 1.0], &[9, 9]).unwrap();
        let lap = g.laplacian(&g.constant(7.5)).unwrap();
        assert!(lap.linf_norm() == 0.0);
    }

    #[test]
    fn laplacian_exact_on_quadratics() {
        // 3-point stencil expands exactly on x^2: (2x^2-(x-h)^2-(x+h)^2)/h^2 = -2
        let g = unit_interval(17);
        let f = g.sample(|x| x[0] * x[0]);
        let lap = g.laplacian(&f).unwrap();
        for n in g.interior_nodes() {
            assert!((lap.get(n) + 2.0).abs() < 1e-12, "got {}", lap.get(n));
        }
    }

    #[test]
    fn laplacian_second_order_on_sine() {
        let g = unit_interval(65);
        let f = g.sample(|x| (PI * x[0]).sin());
        let lap = g.laplacian(&f).unwrap();
        let mut worst = 0.0f64;
        for n in g.interior_nodes() {
            let exact = PI * PI * (PI * g.coord(n, 0)).sin();
            worst = worst.max((lap.get(n) - exact).abs());
        }
        assert!(worst < 5e-3, "max error {worst}");
    }

    #[test]
    fn gradient_exact_on_linears() {
        let g = unit_interval(9);
        assert_eq!(g.gradient(&g.constant(4.0)).unwrap().at(3), &[0.0]);
        let f = g.sample(|x| x[0]);
        let grad = g.gradient(&f).unwrap();
        for n in 0..g.node_count() {
            assert!((grad.at(n)[0] - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn gradient_exact_on_bilinear() {
        let g = Grid::build(DomainKind::Rectangle, &[1.0, 1.0], &[9, 9]).unwrap();
        let f = g.sample(|x| x[0] * x[1]);
        let grad = g.gradient(&f).unwrap();
        for n in g.interior_nodes() {
            let [x, y] = g.coords(n);
            assert!((grad.at(n)[0] - y).abs() < 1e-13);
            assert!((grad.at(n)[1] - x).abs() < 1e-13);
        }
    }

    #[test]
    fn integrate_measures_the_domain() {
        let g = unit_interval(65);
        let h = g.spacing()[0];
        let v = g.integrate(&g.constant(1.0)).unwrap();
        assert!((v - 1.0).abs() <= h + 1e-15);
        assert_eq!(g.integrate(&g.zeros()).unwrap(), 0.0);
    }

    #[test]
    fn integrate_sine_against_analytic() {
        let g = unit_interval(65);
        let f = g.sample(|x| (PI * x[0]).sin());
        let v = g.integrate(&f).unwrap();
        assert!((v - 2.0 / PI).abs() < 1e-3, "got {v}");
    }

    #[test]
    fn quadrature_linearity_is_exact() {
        // power-of-two spacing and integer data keep every operation exact
        let g = unit_interval(65);
        let f = g.sample(|x| (x[0] * 64.0).round() % 7.0);
        let q = g.sample(|x| (x[0] * 64.0).round() % 5.0 - 2.0);
        let (a, b) = (3.0, 0.25);
        let combo = f.zip(&q, |fv, qv| a * fv + b * qv).unwrap();
        let lhs = g.integrate(&combo).unwrap();
        let rhs = a * g.integrate(&f).unwrap() + b * g.integrate(&q).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn norms_on_reference_fields() {
        let g = unit_interval(65);
        assert_eq!(g.h1_seminorm(&g.zeros()).unwrap(), 0.0);
        assert_eq!(g.l2_norm(&g.zeros()).unwrap(), 0.0);
        assert_eq!(g.zeros().linf_norm(), 0.0);

        let f = g.sample(|x| (PI * x[0]).sin());
        let semi = g.h1_seminorm(&f).unwrap();
        let exact = PI / 2.0f64.sqrt();
        assert!((semi - exact).abs() / exact < 0.02, "got {semi}");

        let c = g.constant(3.0);
        assert_eq!(c.linf_norm(), 3.0);
        assert_eq!(g.h1_seminorm(&c).unwrap(), 0.0);
    }

    #[test]
    fn poisson_zero_rhs() {
        let g = unit_interval(33);
        let w = g.solve_poisson(&g.zeros()).unwrap();
        assert_eq!(w.linf_norm(), 0.0);
    }

    #[test]
    fn poisson_torsion_interval() {
        // -w'' = 1 on (-R, R): w = (R^2 - x^2)/2, quadratic, stencil-exact
        let r = 1.5;
        let g = Grid::build_at(DomainKind::Interval, &[-r], &[2.0 * r], &[97]).unwrap();
        let w = g.solve_poisson(&g.constant(1.0)).unwrap();
        for n in g.interior_nodes() {
            let x = g.coord(n, 0);
            let exact = (r * r - x * x) / 2.0;
            assert!((w.get(n) - exact).abs() < 1e-10, "x={x}: {} vs {exact}", w.get(n));
        }
    }

    #[test]
    fn poisson_torsion_disc_center() {
        // radial solution (R^2 - r^2)/(2N) with N = 2: center value R^2/4
        let g = Grid::build_at(DomainKind::Disc, &[-1.0, -1.0], &[2.0, 2.0], &[65, 65]).unwrap();
        let w = g.solve_poisson(&g.constant(1.0)).unwrap();
        let center = g.node_count() / 2;
        assert_eq!(g.coords(center), [0.0, 0.0]);
        let got = w.get(center);
        assert!((got - 0.25).abs() < 0.005, "center value {got}");
    }

    #[test]
    fn poisson_inverts_laplacian() {
        let g = Grid::build(DomainKind::Rectangle, &[1.0, 1.0], &[17, 17]).unwrap();
        let f = g.sample_dirichlet(|x| (PI * x[0]).sin() * (2.0 * PI * x[1]).sin() + x[0] * x[1]);
        let back = g.solve_poisson(&g.laplacian(&f).unwrap()).unwrap();
        let diff = back.sub(&f).unwrap();
        assert!(diff.linf_norm() < 1e-12, "round trip error {}", diff.linf_norm());
    }

    #[test]
    fn integration_by_parts_bridges_strong_and_weak() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let g = Grid::build(DomainKind::Rectangle, &[1.0, 1.0], &[17, 17]).unwrap();
        for _ in 0..20 {
            let f = g.sample_dirichlet(|_| rng.gen_range(-1.0..1.0));
            let q = g.sample_dirichlet(|_| rng.gen_range(-1.0..1.0));
            let strong = g
                .integrate(&g.laplacian(&f).unwrap().zip(&q, |a, b| a * b).unwrap())
                .unwrap();
            let weak = g.grad_inner(&f, &q).unwrap();
            let scale = strong.abs().max(weak.abs()).max(1e-30);
            assert!((strong - weak).abs() / scale < 1e-10);
        }
    }

    #[test]
    fn maximum_principle_nonnegative_rhs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let g = Grid::build_at(DomainKind::Disc, &[-1.0, -1.0], &[2.0, 2.0], &[17, 17]).unwrap();
        for _ in 0..20 {
            let rhs = g.sample_dirichlet(|_| rng.gen_range(0.0..1.0));
            let w = g.solve_poisson(&rhs).unwrap();
            assert!(w.values().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let g1 = unit_interval(9);
        let g2 = unit_interval(17);
        let f = g2.zeros();
        assert!(matches!(g1.laplacian(&f), Err(Error::GridMismatch)));
        assert!(matches!(g1.integrate(&f), Err(Error::GridMismatch)));
    }

    #[test]
    fn equal_descriptors_interoperate() {
        let g1 = unit_interval(9);
        let g2 = unit_interval(9);
        let f = g2.constant(1.0);
        assert!(g1.integrate(&f).is_ok());
    }
}
