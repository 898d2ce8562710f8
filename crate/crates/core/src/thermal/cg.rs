//! Jacobi-preconditioned conjugate gradients on a CSR matrix.

pub(crate) struct Csr {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn n(&self) -> usize {
        self.row_ptr.len() - 1
    }

    fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        for (row, out) in y.iter_mut().enumerate() {
            let span = self.row_ptr[row]..self.row_ptr[row + 1];
            *out = self.cols[span.clone()]
                .iter()
                .zip(&self.vals[span])
                .map(|(&c, &v)| v * x[c])
                .sum();
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.n())
            .map(|row| {
                let span = self.row_ptr[row]..self.row_ptr[row + 1];
                self.cols[span.clone()]
                    .iter()
                    .zip(&self.vals[span])
                    .find(|(&c, _)| c == row)
                    .map_or(0.0, |(_, &v)| v)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for symmetric positive-definite `A`, starting from the
/// contents of `x`. Stops when `‖r‖ ≤ rtol · ‖b‖`.
pub(crate) fn solve(
    a: &Csr,
    b: &[f64],
    x: &mut [f64],
    rtol: f64,
    max_iter: usize,
) -> Result<usize, String> {
    let n = a.n();
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 0.0 })
        .collect();
    if inv_diag.contains(&0.0) {
        return Err("matrix has a non-positive diagonal entry".into());
    }
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut r = vec![0.0; n];
    a.mul_into(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        if dot(&r, &r).sqrt() <= rtol * b_norm {
            return Ok(it);
        }
        a.mul_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(format!("breakdown at iteration {it} (pᵀAp = {pap:e})"));
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if dot(&r, &r).sqrt() <= rtol * b_norm {
        Ok(max_iter)
    } else {
        Err(format!("no convergence in {max_iter} iterations"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal_system() {
        // 1-D Laplacian with Dirichlet ends, n = 50
        let n = 50;
        let mut row_ptr = vec![0];
        let (mut cols, mut vals) = (Vec::new(), Vec::new());
        for i in 0..n {
            if i > 0 {
                cols.push(i - 1);
                vals.push(-1.0);
            }
            cols.push(i);
            vals.push(2.0);
            if i + 1 < n {
                cols.push(i + 1);
                vals.push(-1.0);
            }
            row_ptr.push(cols.len());
        }
        let a = Csr {
            row_ptr,
            cols,
            vals,
        };
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; n];
        a.mul_into(&x_true, &mut b);
        let mut x = vec![0.0; n];
        solve(&a, &b, &mut x, 1e-13, 500).unwrap();
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-10);
        }
    }
}
