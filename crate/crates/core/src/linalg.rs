//! Dense matrix equations and matrix functions on small matrices.
//!
//! Everything here works through the complex Schur form, so real and complex
//! spectra are handled by the same triangular recurrences.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

type CMatrix = DMatrix<Complex64>;

fn to_complex(a: &DMatrix<f64>) -> CMatrix {
    a.map(|v| Complex64::new(v, 0.0))
}

/// Real part of a complex matrix whose imaginary part should vanish.
fn real_part(a: &CMatrix, what: &str) -> Result<DMatrix<f64>> {
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let imag = a.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if imag > 1e-8 * scale {
        return Err(Error::Singular(format!(
            "{what}: result has imaginary part {imag:e} relative to {scale:e}"
        )));
    }
    Ok(a.map(|z| z.re))
}

fn check_square(a: &DMatrix<f64>, what: &str) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::param(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} has non-finite entries")));
    }
    Ok(a.nrows())
}

/// Complex Schur decomposition `a = u t u^H` with `t` upper triangular.
pub fn complex_schur(a: &DMatrix<f64>) -> (CMatrix, CMatrix) {
    let (u, t) = to_complex(a).schur().unpack();
    (u, t)
}

/// Eigenvalues read off the complex Schur form.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex64> {
    let (_, t) = complex_schur(a);
    (0..t.nrows()).map(|i| t[(i, i)]).collect()
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Spectral norm (largest singular value).
pub fn norm2(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().svd(false, false).singular_values.max()
}

/// Matrix exponential.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().exp()
}

/// Truncated exponential series `sum_{k=0}^p g^k / k!`.
pub fn taylor_exp(g: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let n = g.nrows();
    let mut acc = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=p {
        term = &term * g / k as f64;
        acc += &term;
    }
    acc
}

/// Tail of the exponential series, `exp(g) - taylor_exp(g, p)`, summed directly
/// so that it keeps full relative accuracy when `g` is small.
pub fn taylor_exp_tail(g: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let n = g.nrows();
    let mut term = DMatrix::identity(n, n);
    for k in 1..=p {
        term = &term * g / k as f64;
    }
    let mut acc = DMatrix::zeros(n, n);
    let mut k = p;
    loop {
        k += 1;
        term = &term * g / k as f64;
        acc += &term;
        let tn = term.norm();
        if tn <= f64::EPSILON * acc.norm() * 1e-3 || tn == 0.0 || k > p + 400 {
            break;
        }
    }
    acc
}

/// Back substitution for `t x = b` with `t` upper triangular.
fn solve_upper(t: &CMatrix, b: &[Complex64], what: &str) -> Result<Vec<Complex64>> {
    let n = t.nrows();
    let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= t[(i, j)] * x[j];
        }
        let d = t[(i, i)];
        if d.norm() <= 1e-14 * scale {
            return Err(Error::Singular(format!("{what}: near-zero pivot {d}")));
        }
        x[i] = s / d;
    }
    Ok(x)
}

/// Solves `a x + x b = c` by the Bartels–Stewart method.
pub fn solve_sylvester(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = check_square(a, "A")?;
    let m = check_square(b, "B")?;
    if c.nrows() != n || c.ncols() != m {
        return Err(Error::param(format!(
            "C must be {n}x{m}, got {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    let (ua, ta) = complex_schur(a);
    let (ub, tb) = complex_schur(b);
    let d = ua.adjoint() * to_complex(c) * &ub;
    let scale = ta.iter().chain(tb.iter()).map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    for i in 0..n {
        for k in 0..m {
            if (ta[(i, i)] + tb[(k, k)]).norm() <= 1e-13 * scale {
                return Err(Error::Singular(
                    "spectra of A and -B intersect; Sylvester equation has no unique solution".into(),
                ));
            }
        }
    }
    let mut y = CMatrix::zeros(n, m);
    for k in 0..m {
        let mut shifted = ta.clone();
        for i in 0..n {
            shifted[(i, i)] += tb[(k, k)];
        }
        let mut rhs: Vec<Complex64> = d.column(k).iter().copied().collect();
        for j in 0..k {
            let coeff = tb[(j, k)];
            for i in 0..n {
                rhs[i] -= y[(i, j)] * coeff;
            }
        }
        let col = solve_upper(&shifted, &rhs, "Sylvester")?;
        for i in 0..n {
            y[(i, k)] = col[i];
        }
    }
    real_part(&(&ua * y * ub.adjoint()), "Sylvester")
}

/// Solves the continuous Lyapunov equation `a x + x a^T = q`.
pub fn solve_lyapunov_continuous(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let x = solve_sylvester(a, &a.transpose(), q)?;
    Ok(symmetrize_if(&x, q))
}

fn symmetrize_if(x: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    if (q - q.transpose()).amax() == 0.0 {
        (x + x.transpose()) * 0.5
    } else {
        x.clone()
    }
}

/// Solves the Stein equation `b x b^T - x = c`.
pub fn solve_stein(b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = check_square(b, "B")?;
    if c.nrows() != n || c.ncols() != n {
        return Err(Error::param(format!(
            "C must be {n}x{n}, got {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    let (u, t) = complex_schur(b);
    let d = u.adjoint() * to_complex(c) * &u;
    for i in 0..n {
        for j in 0..n {
            if (t[(i, i)] * t[(j, j)].conj() - Complex64::new(1.0, 0.0)).norm() <= 1e-13 {
                return Err(Error::Singular(
                    "eigenvalue product of B equals one; Stein equation has no unique solution".into(),
                ));
            }
        }
    }
    let mut y = CMatrix::zeros(n, n);
    for j in (0..n).rev() {
        let mut w = vec![Complex64::new(0.0, 0.0); n];
        for l in j + 1..n {
            let coeff = t[(j, l)].conj();
            for i in 0..n {
                w[i] += y[(i, l)] * coeff;
            }
        }
        let tw: Vec<Complex64> = (0..n)
            .map(|i| (i..n).map(|k| t[(i, k)] * w[k]).sum())
            .collect();
        let rhs: Vec<Complex64> = (0..n).map(|i| d[(i, j)] - tw[i]).collect();
        let mut lhs = &t * t[(j, j)].conj();
        for i in 0..n {
            lhs[(i, i)] -= Complex64::new(1.0, 0.0);
        }
        let col = solve_upper(&lhs, &rhs, "Stein")?;
        for i in 0..n {
            y[(i, j)] = col[i];
        }
    }
    let x = real_part(&(&u * y * u.adjoint()), "Stein")?;
    Ok(symmetrize_if(&x, c))
}

/// Principal square root of an upper triangular matrix.
fn sqrt_upper(t: &CMatrix) -> CMatrix {
    let n = t.nrows();
    let mut r = CMatrix::zeros(n, n);
    for i in 0..n {
        r[(i, i)] = t[(i, i)].sqrt();
    }
    for j in 0..n {
        for i in (0..j).rev() {
            let mut s = t[(i, j)];
            for k in i + 1..j {
                s -= r[(i, k)] * r[(k, j)];
            }
            r[(i, j)] = s / (r[(i, i)] + r[(j, j)]);
        }
    }
    r
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = p1;
            dp = n as f64 * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Principal matrix logarithm by inverse scaling and squaring.
///
/// Fails when an eigenvalue lies on the closed negative real axis.
pub fn principal_log(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = check_square(b, "B")?;
    let (u, t) = complex_schur(b);
    let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for i in 0..n {
        let z = t[(i, i)];
        if z.norm() <= 1e-14 * scale || (z.re <= 0.0 && z.im.abs() <= 1e-12 * z.norm()) {
            return Err(Error::LogUndefined(format!(
                "eigenvalue {z} on the closed negative real axis; no principal logarithm"
            )));
        }
    }
    let id = CMatrix::identity(n, n);
    let mut r = t;
    let mut squarings = 0;
    while (&r - &id).norm() > 0.25 {
        r = sqrt_upper(&r);
        squarings += 1;
        if squarings > 60 {
            return Err(Error::LogUndefined("square-root iteration did not converge".into()));
        }
    }
    let x = &r - &id;
    let (nodes, weights) = gauss_legendre(12);
    let mut acc = CMatrix::zeros(n, n);
    for (s, w) in nodes.iter().zip(&weights) {
        let tau = 0.5 * (s + 1.0);
        let lhs = &id + &x * Complex64::new(tau, 0.0);
        for j in 0..n {
            let rhs: Vec<Complex64> = x.column(j).iter().copied().collect();
            let col = solve_upper(&lhs, &rhs, "log")?;
            for i in 0..n {
                acc[(i, j)] += col[i] * (0.5 * w);
            }
        }
    }
    acc *= Complex64::new(2f64.powi(squarings), 0.0);
    real_part(&(&u * acc * u.adjoint()), "log")
}

/// Symmetric square root of a symmetric positive semidefinite matrix.
pub fn sqrt_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = check_square(a, "matrix")?;
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let top = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    if eig.eigenvalues.iter().any(|&l| l < -1e-10 * top) {
        return Err(Error::param("matrix is not positive semidefinite"));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let v = &eig.eigenvectors;
    let r = v * d * v.transpose();
    debug_assert_eq!(r.nrows(), n);
    Ok(r)
}

/// `phi1(z) = sum_{k>=0} z^k / (k+1)!`, via the exponential of an augmented matrix.
pub fn phi1(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(z);
    aug.view_mut((0, n), (n, n)).fill_with_identity();
    let e = aug.exp();
    e.view((0, n), (n, n)).into_owned()
}

fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn unvec(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, v.as_slice())
}

/// Kronecker sum acting on column-major `vec(x)` as `vec(d x + x d^T)`.
fn kron_sum(d: &DMatrix<f64>) -> DMatrix<f64> {
    let n = d.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    id.kronecker(d) + d.kronecker(&id)
}

/// `int_0^dt exp(d s) q exp(d^T s) ds`.
pub fn integrated_covariance(d: &DMatrix<f64>, q: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    let n = check_square(d, "drift")?;
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::param("q must match the drift dimension"));
    }
    let k = kron_sum(d) * dt;
    let v = phi1(&k) * vec_of(q) * dt;
    let x = unvec(&v, n);
    Ok(symmetrize_if(&x, q))
}

/// Inverse of [`integrated_covariance`]: finds `q` with
/// `int_0^dt exp(d s) q exp(d^T s) ds = l`.
pub fn integrated_covariance_inverse(d: &DMatrix<f64>, l: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    let n = check_square(d, "drift")?;
    if l.nrows() != n || l.ncols() != n {
        return Err(Error::param("l must match the drift dimension"));
    }
    let k = kron_sum(d) * dt;
    let op = phi1(&k) * dt;
    let lu = op.lu();
    let v = lu
        .solve(&vec_of(l))
        .ok_or_else(|| Error::Singular("integrated covariance operator is singular".into()))?;
    let x = unvec(&v, n);
    Ok(symmetrize_if(&x, l))
}
