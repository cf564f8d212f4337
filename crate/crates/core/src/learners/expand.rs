use nalgebra::DMatrix;

use super::TermExpansion;

/// Column layout produced by a term expansion, fixed at fit time so that
/// prediction inputs are expanded identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    n_main: usize,
    products: Vec<(usize, usize)>,
}

fn is_binary_column(x: &DMatrix<f64>, j: usize) -> bool {
    x.column(j).iter().all(|&v| v == 0.0 || v == 1.0)
}

impl Expansion {
    /// Squares of 0/1 columns duplicate the column itself and are skipped.
    pub fn plan(x: &DMatrix<f64>, mode: TermExpansion) -> Self {
        let p = x.ncols();
        let mut products = Vec::new();
        if mode == TermExpansion::MainPlusSecondOrder {
            for i in 0..p {
                for j in i..p {
                    if i == j && is_binary_column(x, i) {
                        continue;
                    }
                    products.push((i, j));
                }
            }
        }
        Expansion {
            n_main: p,
            products,
        }
    }

    pub fn width(&self) -> usize {
        self.n_main + self.products.len()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        if self.products.is_empty() {
            return x.clone();
        }
        let n = x.nrows();
        let mut out = DMatrix::zeros(n, self.width());
        out.view_mut((0, 0), (n, self.n_main)).copy_from(x);
        for (k, &(i, j)) in self.products.iter().enumerate() {
            let mut col = out.column_mut(self.n_main + k);
            for r in 0..n {
                col[r] = x[(r, i)] * x[(r, j)];
            }
        }
        out
    }
}
