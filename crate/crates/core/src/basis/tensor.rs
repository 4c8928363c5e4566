use nalgebra::DMatrix;

use super::{absorb_constraints, joint_null_dim, BasisBlock, Evaluator, Penalty};
use crate::error::{GammError, Result};
use crate::linalg::{kron, row_kron};

/// Tensor product of two single-penalty marginal blocks.
///
/// The design is the row-wise Kronecker product and the penalties are
/// `S_A ⊗ I` and `I ⊗ S_B`, one smoothing parameter per margin. With
/// `interaction_only` each margin is first constrained to sum to zero, so the
/// product space excludes both marginal main effects and the intercept.
pub fn tensor_product(a: &BasisBlock, b: &BasisBlock, interaction_only: bool) -> Result<BasisBlock> {
    if a.n_rows() != b.n_rows() {
        return Err(GammError::Shape(format!(
            "margins have {} and {} rows",
            a.n_rows(),
            b.n_rows()
        )));
    }
    if a.penalties.len() != 1 || b.penalties.len() != 1 {
        return Err(GammError::Spec("tensor margins must each carry one penalty".into()));
    }
    let (a, b) = if interaction_only {
        let ca = if a.constraint.is_some() { a.clone() } else { absorb_constraints(a)? };
        let cb = if b.constraint.is_some() { b.clone() } else { absorb_constraints(b)? };
        (ca, cb)
    } else {
        (a.clone(), b.clone())
    };
    let (pa, pb) = (a.p(), b.p());
    let x = row_kron(&a.x, &b.x);
    let penalties = vec![
        Penalty::new(kron(&a.penalties[0].matrix, &DMatrix::identity(pb, pb)), "margin 1"),
        Penalty::new(kron(&DMatrix::identity(pa, pa), &b.penalties[0].matrix), "margin 2"),
    ];
    let null_dim = joint_null_dim(&penalties, pa * pb);
    let label = if interaction_only { "ti(x,z)" } else { "te(x,z)" };
    Ok(BasisBlock {
        label: label.into(),
        x,
        penalties,
        null_dim,
        constraint: None,
        eval: Evaluator::Tensor { a: Box::new(a), b: Box::new(b) },
        transforms: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{cr_basis, knots_quantile, natural_reparam, poly_basis};
    use nalgebra::DVector;

    fn margins(n: usize, ka: usize, kb: usize) -> (BasisBlock, BasisBlock) {
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).fract()).collect();
        let z: Vec<f64> = (0..n).map(|i| (i as f64 * 0.61 + 0.1).fract()).collect();
        let a = cr_basis(&x, &knots_quantile(&x, ka).unwrap()).unwrap();
        let b = cr_basis(&z, &knots_quantile(&z, kb).unwrap()).unwrap().with_covariates(&["z"]).unwrap();
        (a, b)
    }

    #[test]
    fn eight_by_eight_is_sixty_four() {
        let (a, b) = margins(200, 8, 8);
        let t = tensor_product(&a, &b, false).unwrap();
        assert_eq!(t.p(), 64);
        assert_eq!(t.penalties.len(), 2);
        assert_eq!(t.null_dim, 4);
    }

    #[test]
    fn constant_margin_reproduces_other_margin() {
        let (a, _) = margins(50, 5, 3);
        let one = {
            let mut c = poly_basis(&(0..50).map(|i| i as f64).collect::<Vec<_>>(), 1).unwrap();
            c.x = DMatrix::from_element(50, 1, 2.0);
            c
        };
        let t = tensor_product(&a, &one, false).unwrap();
        assert!((t.x - a.x * 2.0).abs().max() < 1e-15);
    }

    #[test]
    fn penalties_annihilate_constant() {
        let (a, b) = margins(60, 5, 4);
        let t = tensor_product(&a, &b, false).unwrap();
        // cardinal margins: the constant function is the all-ones vector
        let ones = DVector::from_element(20, 1.0);
        for s in &t.penalties {
            assert!((&s.matrix * &ones).amax() < 1e-9);
        }
    }

    #[test]
    fn interaction_only_excludes_main_effects() {
        let (a, b) = margins(120, 4, 3);
        let ti = tensor_product(&natural_reparam(&a).unwrap(), &natural_reparam(&b).unwrap(), true).unwrap();
        assert_eq!(ti.p(), 3 * 2);
        // marginal main-effect columns are not reproducible by the interaction span
        let ca = absorb_constraints(&natural_reparam(&a).unwrap()).unwrap();
        let qr = ti.x.clone().qr();
        let q = qr.q();
        for c in ca.x.column_iter() {
            let proj = &q * (q.transpose() * c);
            assert!((c - proj).norm() > 1e-3 * c.norm());
        }
    }

    #[test]
    fn row_mismatch() {
        let (a, _) = margins(30, 4, 3);
        let (_, b) = margins(31, 4, 3);
        assert!(matches!(tensor_product(&a, &b, false), Err(GammError::Shape(_))));
    }
}
