//! Jacobians, small-matrix eigenvalues and natural frequencies.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::field::VectorField;

/// Square matrix as a vector of rows.
pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianMethod {
    Analytic,
    CentralFd,
}

/// Jacobian of `field` at `v`, either from the field's own derivative or by
/// central differences with step `h`.
pub fn jacobian_at<F: VectorField + ?Sized>(
    field: &F,
    v: &[f64],
    method: JacobianMethod,
    h: f64,
) -> Result<Matrix> {
    check_len("jacobian point", field.dim(), v.len())?;
    match method {
        JacobianMethod::Analytic => field
            .analytic_jacobian(v)
            .unwrap_or_else(|| Err(Error::Config("field has no analytic jacobian".into()))),
        JacobianMethod::CentralFd => central_fd_jacobian(field, v, h),
    }
}

pub fn central_fd_jacobian<F: VectorField + ?Sized>(
    field: &F,
    v: &[f64],
    h: f64,
) -> Result<Matrix> {
    let d = v.len();
    if !(h > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut jac = vec![vec![0.0; d]; d];
    let (mut fp, mut fm) = (vec![0.0; d], vec![0.0; d]);
    let mut x = v.to_vec();
    for j in 0..d {
        x[j] = v[j] + h;
        field.eval_into(&x, &mut fp)?;
        x[j] = v[j] - h;
        field.eval_into(&x, &mut fm)?;
        x[j] = v[j];
        for i in 0..d {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Characteristic polynomial coefficients `c[0..=n]` (ascending, monic) by
/// the Faddeev–LeVerrier recursion.
pub fn characteristic_polynomial(a: &Matrix) -> Vec<f64> {
    let n = a.len();
    let mut c = vec![0.0; n + 1];
    c[n] = 1.0;
    let mut m = vec![vec![0.0; n]; n];
    for k in 1..=n {
        // M_k = A M_{k-1} + c_{n-k+1} I
        let mut next = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..n {
                    s += a[i][l] * m[l][j];
                }
                next[i][j] = s;
            }
            next[i][i] += c[n - k + 1];
        }
        let mut tr = 0.0;
        for i in 0..n {
            for l in 0..n {
                tr += a[i][l] * next[l][i];
            }
        }
        c[n - k] = -tr / k as f64;
        m = next;
    }
    c
}

fn horner(c: &[f64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &ck in c.iter().rev() {
        dp = dp * z + p;
        p = p * z + ck;
    }
    (p, dp)
}

/// Eigenvalues of a real `d×d` matrix, `d ≤ 4`, sorted by `(Re, Im)`.
///
/// Roots of the characteristic polynomial come from Durand–Kerner iteration
/// followed by one Newton polish each; conjugate pairs are then symmetrised.
pub fn eigenvalues_small(a: &Matrix) -> Result<Vec<Complex64>> {
    let n = a.len();
    if n == 0 || n > 4 {
        return Err(Error::Config(format!(
            "eigenvalues_small supports 1..=4, got {n}"
        )));
    }
    for row in a {
        check_len("matrix row", n, row.len())?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("matrix has non-finite entries".into()));
        }
    }
    let c = characteristic_polynomial(a);
    let scale = 1.0 + c[..n].iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let seed = Complex64::new(0.4, 0.9);
    let mut z: Vec<Complex64> = (0..n)
        .map(|k| seed.powu(k as u32) * scale.min(1e6))
        .collect();
    let mut converged = false;
    for _ in 0..2000 {
        let mut max_step = 0.0f64;
        for i in 0..n {
            let (p, _) = horner(&c, z[i]);
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..n {
                if j != i {
                    denom *= z[i] - z[j];
                }
            }
            if denom.norm() == 0.0 {
                denom = Complex64::new(1e-300, 0.0);
            }
            let step = p / denom;
            z[i] -= step;
            max_step = max_step.max(step.norm());
        }
        if max_step <= 1e-15 * scale {
            converged = true;
            break;
        }
    }
    for zi in z.iter_mut() {
        let (p, dp) = horner(&c, *zi);
        if dp.norm() > 0.0 {
            let step = p / dp;
            if step.is_finite() && step.norm() < 1e-3 * scale {
                *zi -= step;
            }
        }
    }
    let residual = z
        .iter()
        .map(|&zi| horner(&c, zi).0.norm())
        .fold(0.0f64, f64::max);
    if !converged && residual > 1e-6 * scale.powi(n as i32) {
        return Err(Error::NoConvergence(format!(
            "eigenvalue iteration stalled, max polynomial residual {residual:.3e}"
        )));
    }
    Ok(symmetrize(z, scale))
}

/// Snap nearly real roots to the real axis and average conjugate partners so
/// the result is closed under conjugation.
fn symmetrize(mut z: Vec<Complex64>, scale: f64) -> Vec<Complex64> {
    let tol = 1e-7 * scale;
    for zi in z.iter_mut() {
        if zi.im.abs() <= tol {
            zi.im = 0.0;
        }
    }
    let mut used = vec![false; z.len()];
    for i in 0..z.len() {
        if used[i] || z[i].im <= 0.0 {
            continue;
        }
        let partner = (0..z.len())
            .filter(|&j| !used[j] && j != i && z[j].im < 0.0)
            .min_by(|&a, &b| {
                (z[a] - z[i].conj())
                    .norm()
                    .total_cmp(&(z[b] - z[i].conj()).norm())
            });
        if let Some(j) = partner {
            let re = 0.5 * (z[i].re + z[j].re);
            let im = 0.5 * (z[i].im - z[j].im);
            z[i] = Complex64::new(re, im);
            z[j] = Complex64::new(re, -im);
            used[i] = true;
            used[j] = true;
        }
    }
    z.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    z
}

/// One `|Im λ|` per conjugate pair whose imaginary part exceeds `tol`,
/// largest first.
pub fn natural_frequencies(eigs: &[Complex64], tol: f64) -> Vec<f64> {
    let mut out: Vec<f64> = eigs.iter().filter(|e| e.im > tol).map(|e| e.im).collect();
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oscillator_matrix() {
        let w: f64 = 8.944;
        let e = eigenvalues_small(&vec![vec![0.0, 1.0], vec![-w * w, 0.0]]).unwrap();
        assert!(e[0].re.abs() < 1e-10 && (e[0].im + w).abs() < 1e-10);
        assert!((e[1].im - w).abs() < 1e-10);
        assert_eq!(natural_frequencies(&e, 1e-9).len(), 1);
    }

    #[test]
    fn diagonal_matrix() {
        let a = vec![
            vec![3.0, 0.0, 0.0],
            vec![0.0, -1.0, 0.0],
            vec![0.0, 0.0, 0.5],
        ];
        let e = eigenvalues_small(&a).unwrap();
        let re: Vec<f64> = e.iter().map(|z| z.re).collect();
        for (got, want) in re.iter().zip([-1.0, 0.5, 3.0]) {
            assert!((got - want).abs() < 1e-10);
        }
        assert!(e.iter().all(|z| z.im == 0.0));
    }

    #[test]
    fn repeated_root() {
        let e = eigenvalues_small(&vec![vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        for z in e {
            assert!((z.re + 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn frequency_examples() {
        let e = [Complex64::new(0.0, 5.425), Complex64::new(0.0, -5.425)];
        assert_eq!(natural_frequencies(&e, 1e-9), vec![5.425]);
        assert!(natural_frequencies(&[Complex64::new(-1.0, 0.0)], 1e-9).is_empty());
        let (w, z) = (10.0f64, 0.1f64);
        let im = w * (1.0 - z * z).sqrt();
        let e = [Complex64::new(-z * w, im), Complex64::new(-z * w, -im)];
        assert!((natural_frequencies(&e, 1e-9)[0] - 9.9499).abs() < 1e-4);
    }
}
