//! Finite-difference gradient oracle, independent of every analytic path.

use alloc::vec::Vec;

use super::ModelError;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate.
pub fn central_difference<F>(x: &[f64], step: f64, mut f: F) -> Result<Vec<f64>, ModelError>
where
    F: FnMut(&[f64]) -> Result<f64, ModelError>,
{
    if !(step > 0.0) {
        return Err(ModelError::Config(alloc::format!("finite-difference step {step} must be positive")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe)?;
        probe[i] = orig - step;
        let minus = f(&probe)?;
        probe[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_gradient() {
        let g = central_difference(&[1.0, -2.0, 3.0], 1e-4, |_| Ok(4.2)).unwrap();
        assert_eq!(g, alloc::vec![0.0; 3]);
    }

    #[test]
    fn quadratic_matches_normal_equations() {
        // L = 1/2 ||A x - b||^2 with A = [[1,2],[3,4],[0,1]], grad = A^T(Ax - b).
        let a = [[1.0, 2.0], [3.0, 4.0], [0.0, 1.0]];
        let b = [1.0, -1.0, 2.0];
        let x = [0.5, -0.25];
        let f = |t: &[f64]| {
            Ok(0.5
                * a.iter()
                    .zip(&b)
                    .map(|(r, bi)| {
                        let e = r[0] * t[0] + r[1] * t[1] - bi;
                        e * e
                    })
                    .sum::<f64>())
        };
        let g = central_difference(&x, 1e-3, f).unwrap();
        let mut expected = [0.0; 2];
        for (r, bi) in a.iter().zip(&b) {
            let e = r[0] * x[0] + r[1] * x[1] - bi;
            expected[0] += r[0] * e;
            expected[1] += r[1] * e;
        }
        // Central differences are exact for quadratics up to rounding.
        for (gi, ei) in g.iter().zip(expected) {
            assert!((gi - ei).abs() < 1e-9, "{gi} vs {ei}");
        }
    }

    #[test]
    fn rejects_nonpositive_step() {
        assert!(central_difference(&[1.0], 0.0, |_| Ok(0.0)).is_err());
    }
}
