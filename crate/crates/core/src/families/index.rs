use nalgebra::DMatrix;

use crate::error::{config, Result};

/// Per-cell index affine in θ: `s_xy(θ) = offset_xy + Σ_k c_xy,k θ_k`.
///
/// Coefficients are stored sparsely per cell, so free tables and
/// indicator designs with hundreds of parameters stay cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearIndex {
    nx: usize,
    ny: usize,
    dim: usize,
    offset: Vec<f64>,
    coefs: Vec<Vec<(usize, f64)>>,
}

impl LinearIndex {
    pub fn new(
        nx: usize,
        ny: usize,
        dim: usize,
        offset: Vec<f64>,
        coefs: Vec<Vec<(usize, f64)>>,
    ) -> Result<Self> {
        if offset.len() != nx * ny || coefs.len() != nx * ny {
            return config(format!("index tables must have {} cells", nx * ny));
        }
        if offset.iter().any(|v| !v.is_finite()) {
            return config("index offsets must be finite");
        }
        for cell in &coefs {
            for &(k, c) in cell {
                if k >= dim {
                    return config(format!("coefficient refers to parameter {k} of {dim}"));
                }
                if !c.is_finite() {
                    return config("index coefficients must be finite");
                }
            }
        }
        Ok(Self { nx, ny, dim, offset, coefs })
    }

    /// θ-free index.
    pub fn constant(table: &DMatrix<f64>, dim: usize) -> Self {
        let (nx, ny) = table.shape();
        Self {
            nx,
            ny,
            dim,
            offset: row_major(table),
            coefs: vec![Vec::new(); nx * ny],
        }
    }

    /// `s_xy = θ_param · table_xy`.
    pub fn scaled(table: &DMatrix<f64>, param: usize, dim: usize) -> Self {
        let (nx, ny) = table.shape();
        let coefs = row_major(table).into_iter().map(|c| vec![(param, c)]).collect();
        Self { nx, ny, dim, offset: vec![0.0; nx * ny], coefs }
    }

    /// `s = offset + Σ_k θ_k basis_k`.
    pub fn from_basis(offset: &DMatrix<f64>, basis: &[DMatrix<f64>]) -> Result<Self> {
        let (nx, ny) = offset.shape();
        if basis.iter().any(|b| b.shape() != (nx, ny)) {
            return config("basis tables must match the offset shape");
        }
        let mut coefs = vec![Vec::new(); nx * ny];
        for (k, b) in basis.iter().enumerate() {
            for x in 0..nx {
                for y in 0..ny {
                    let c = b[(x, y)];
                    if c != 0.0 {
                        coefs[x * ny + y].push((k, c));
                    }
                }
            }
        }
        Self::new(nx, ny, basis.len(), row_major(offset), coefs)
    }

    /// One parameter per listed cell, in order, starting at `first`.
    pub fn free_cells(nx: usize, ny: usize, cells: &[(usize, usize)], first: usize, dim: usize) -> Result<Self> {
        let mut coefs = vec![Vec::new(); nx * ny];
        for (i, &(x, y)) in cells.iter().enumerate() {
            if x >= nx || y >= ny {
                return config(format!("cell ({x}, {y}) outside {nx}x{ny}"));
            }
            coefs[x * ny + y].push((first + i, 1.0));
        }
        Self::new(nx, ny, dim, vec![0.0; nx * ny], coefs)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, theta: &[f64], x: usize, y: usize) -> f64 {
        let c = x * self.ny + y;
        self.offset[c] + self.coefs[c].iter().map(|&(k, w)| w * theta[k]).sum::<f64>()
    }

    pub fn coefs(&self, x: usize, y: usize) -> &[(usize, f64)] {
        &self.coefs[x * self.ny + y]
    }

    pub fn table(&self, theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.nx, self.ny, |x, y| self.eval(theta, x, y))
    }
}

fn row_major(table: &DMatrix<f64>) -> Vec<f64> {
    let (nx, ny) = table.shape();
    (0..nx * ny).map(|c| table[(c / ny, c % ny)]).collect()
}
