use nalgebra::DMatrix;

use super::{joint_null_dim, BasisBlock, Penalty};
use crate::error::{GammError, Result};
use crate::linalg::{column_sums, householder_for, symmetrize};

/// Index of a column that is constant across rows and untouched by every penalty.
fn unpenalized_constant_column(block: &BasisBlock) -> Option<usize> {
    (0..block.p()).find(|&j| {
        let c = block.x.column(j);
        let v = c[0];
        v != 0.0
            && c.iter().all(|&e| (e - v).abs() <= 1e-9 * v.abs())
            && block.penalties.iter().all(|s| {
                let scale = s.matrix.amax();
                s.matrix.column(j).iter().all(|&e| e.abs() <= 1e-12 * scale)
            })
    })
}

/// Imposes `Σ_i f(x_i) = 0` by reparameterizing onto a `p - 1` dimensional
/// subspace. When the block has an unpenalized constant column the
/// reparameterization centers the other columns and drops it, which keeps
/// diagonal penalties diagonal; otherwise a Householder null-space basis of
/// the column-sum vector is used.
pub fn absorb_constraints(block: &BasisBlock) -> Result<BasisBlock> {
    if block.constraint.is_some() {
        return Err(GammError::Spec(format!("block '{}' is already constrained", block.label)));
    }
    let p = block.p();
    if p < 2 {
        return Err(GammError::Numeric(format!(
            "cannot absorb a constraint into the {p}-column block '{}'",
            block.label
        )));
    }
    let sums = column_sums(&block.x);
    let scale = block.x.amax() * block.n_rows() as f64;
    if sums.amax() <= 1e-12 * scale {
        return Err(GammError::Numeric(format!(
            "columns of '{}' already sum to zero; constraint is rank deficient",
            block.label
        )));
    }

    let z = match unpenalized_constant_column(block) {
        Some(c) => {
            let n = block.n_rows() as f64;
            let b = block.x[(0, c)];
            let mut z = DMatrix::zeros(p, p - 1);
            let mut col = 0;
            for j in 0..p {
                if j == c {
                    continue;
                }
                z[(j, col)] = 1.0;
                z[(c, col)] = -(sums[j] / n) / b;
                col += 1;
            }
            z
        }
        None => householder_for(&sums).columns(1, p - 1).into_owned(),
    };

    let mut out = block.clone();
    out.push_transform(z.clone());
    out.penalties = block
        .penalties
        .iter()
        .map(|s| {
            let mut m = z.transpose() * &s.matrix * &z;
            symmetrize(&mut m);
            Penalty::new(m, s.label.clone())
        })
        .collect();
    out.null_dim = joint_null_dim(&out.penalties, p - 1);
    out.constraint = Some(z);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{cr_basis, knots_quantile, natural_reparam};
    use crate::linalg::is_diagonal;

    fn cr_block(n: usize, k: usize) -> BasisBlock {
        let x: Vec<f64> = (0..n).map(|i| ((i * 7919) % n) as f64 / n as f64).collect();
        cr_basis(&x, &knots_quantile(&x, k).unwrap()).unwrap()
    }

    #[test]
    fn removes_one_column_and_centers() {
        let b = absorb_constraints(&cr_block(80, 10)).unwrap();
        assert_eq!(b.p(), 9);
        for c in b.x.column_iter() {
            assert!(c.sum().abs() / 80.0 < 1e-10);
        }
        assert_eq!(b.null_dim, 1);
    }

    #[test]
    fn centering_path_keeps_penalty_diagonal() {
        let nb = natural_reparam(&cr_block(80, 10)).unwrap();
        let b = absorb_constraints(&nb).unwrap();
        assert_eq!(b.p(), 9);
        assert!(is_diagonal(&b.penalties[0].matrix));
        for c in b.x.column_iter() {
            assert!(c.sum().abs() / 80.0 < 1e-10);
        }
        assert_eq!(b.null_dim, 1);
    }

    #[test]
    fn double_absorption_is_rejected() {
        let b = absorb_constraints(&cr_block(40, 5)).unwrap();
        assert!(matches!(absorb_constraints(&b), Err(GammError::Spec(_))));
    }
}
