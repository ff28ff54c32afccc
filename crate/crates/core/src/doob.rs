//! Conjugation by the principal eigenvector, turning a generator with
//! nonpositive spectral bound into a sub-Markovian one.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::spectral::{principal_eigenpair, EigenPair, Side};
use crate::state_model::{row_sums_nonpositive, GeneratorModel, MeasureSpace};

/// Eigenvectors whose max/min ratio exceeds this are refused.
pub const CONDITIONING_LIMIT: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct DoobTransformed {
    pub original: GeneratorModel,
    pub phi1: EigenPair,
    /// `L^phi_ij = L_ij phi_j / phi_i`.
    pub transformed: GeneratorModel,
    /// `weights_i phi_i^p`.
    pub transformed_measure: Vec<f64>,
}

pub fn conjugate(l: &DMatrix<f64>, phi: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(l.nrows(), l.ncols(), |i, j| l[(i, j)] * phi[j] / phi[i])
}

pub fn doob_transform(model: &GeneratorModel) -> Result<DoobTransformed> {
    model.require_irreducible()?;
    let tol = 1e-12 * crate::linalg::scale_of(&model.l);
    if model.spectral_bound > tol {
        return Err(Error::PositiveSpectralBound(model.spectral_bound));
    }
    let phi1 = principal_eigenpair(model, &vec![0.0; model.n()], Side::Primal)?;
    let ratio = phi1.eigenvector.max() / phi1.eigenvector.min();
    if ratio > CONDITIONING_LIMIT {
        return Err(Error::IllConditioned(ratio));
    }
    let l = conjugate(&model.l, &phi1.eigenvector);
    let p = model.space.p;
    let measure: Vec<f64> = model
        .space
        .weights
        .iter()
        .zip(phi1.eigenvector.iter())
        .map(|(w, f)| w * f.powf(p))
        .collect();
    let transformed = GeneratorModel {
        space: MeasureSpace::new(measure.clone(), p)?,
        sub_markovian: row_sums_nonpositive(&l).is_none(),
        irreducible: model.irreducible,
        spectral_bound: model.spectral_bound,
        l,
    };
    Ok(DoobTransformed {
        original: model.clone(),
        phi1,
        transformed,
        transformed_measure: measure,
    })
}

/// `f^phi(i, y) = f(i, phi_i y) / phi_i`. Slopes are unchanged.
pub fn transform_nonlinearity(f: &Nonlinearity, phi1: &EigenPair) -> Result<Nonlinearity> {
    f.conjugated(phi1.eigenvector.as_slice())
}

/// `u = phi ⊙ v`.
pub fn pull_back_solution(v: &DVector<f64>, phi1: &EigenPair) -> DVector<f64> {
    v.component_mul(&phi1.eigenvector)
}

/// [`pull_back_solution`] followed by a residual check in the original
/// problem.
pub fn pull_back_checked(
    model: &GeneratorModel,
    f: &Nonlinearity,
    v: &DVector<f64>,
    phi1: &EigenPair,
    tolerance: f64,
) -> Result<DVector<f64>> {
    let u = pull_back_solution(v, phi1);
    let residual = crate::solver::definition_residual(model, f, &u, 1.0)?;
    if residual > tolerance {
        return Err(Error::ResidualTooLarge {
            residual,
            tolerance,
        });
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_eigenvector_leaves_generator() {
        let m = GeneratorModel::from_matrix(DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -2.0]))
            .unwrap();
        let d = doob_transform(&m).unwrap();
        assert!((d.transformed.l.clone() - m.l.clone()).amax() < 1e-12);
        assert!(d.transformed.sub_markovian);
    }

    #[test]
    fn nonsymmetric_example() {
        let m = GeneratorModel::from_matrix(DMatrix::from_row_slice(2, 2, &[-3.0, 1.0, 2.0, -3.0]))
            .unwrap();
        let d = doob_transform(&m).unwrap();
        let r2 = 2f64.sqrt();
        assert_relative_eq!(d.transformed.l[(0, 1)], r2, epsilon = 1e-10);
        assert_relative_eq!(d.transformed.l[(1, 0)], r2, epsilon = 1e-10);
        for i in 0..2 {
            assert_relative_eq!(d.transformed.l.row(i).sum(), -3.0 + r2, epsilon = 1e-10);
        }
        // Measure phi^2 with phi proportional to (1, sqrt 2).
        let phi = &d.phi1.eigenvector;
        assert_relative_eq!(phi[1] / phi[0], r2, epsilon = 1e-10);
        assert_relative_eq!(d.transformed_measure[1] / d.transformed_measure[0], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn positive_bound_rejected() {
        let m = GeneratorModel::from_matrix(DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 2.0, -1.0]))
            .unwrap();
        assert!(matches!(doob_transform(&m), Err(Error::PositiveSpectralBound(_))));
    }
}
