//! Symmetric cones, their Jordan algebra and Nesterov-Todd scalings.
//!
//! For each block the scaling `W` satisfies `W^{-1} x = W' z = lambda`.
//! The scaled point `lambda` is kept as a vector; for semidefinite blocks it
//! holds the eigenvalues of the (diagonal) scaled matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Cone {
    Nonneg(usize),
    Soc(usize),
    Psd(usize),
}

impl Cone {
    /// Barrier degree.
    pub fn degree(self) -> usize {
        match self {
            Cone::Nonneg(n) | Cone::Psd(n) => n,
            Cone::Soc(_) => 1,
        }
    }

    pub fn zero(self) -> Block {
        match self {
            Cone::Nonneg(n) | Cone::Soc(n) => Block::V(DVector::zeros(n)),
            Cone::Psd(n) => Block::M(DMatrix::zeros(n, n)),
        }
    }

    /// Identity element scaled by `s`.
    pub fn identity(self, s: f64) -> Block {
        match self {
            Cone::Nonneg(n) => Block::V(DVector::from_element(n, s)),
            Cone::Soc(n) => {
                let mut v = DVector::zeros(n);
                v[0] = s;
                Block::V(v)
            }
            Cone::Psd(n) => Block::M(DMatrix::identity(n, n) * s),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Block {
    V(DVector<f64>),
    M(DMatrix<f64>),
}

impl Block {
    pub fn dot(&self, other: &Block) -> f64 {
        match (self, other) {
            (Block::V(a), Block::V(b)) => a.dot(b),
            (Block::M(a), Block::M(b)) => a.dot(b),
            _ => unreachable!("block kind mismatch"),
        }
    }

    pub fn axpy(&mut self, s: f64, other: &Block) {
        match (self, other) {
            (Block::V(a), Block::V(b)) => a.axpy(s, b, 1.0),
            (Block::M(a), Block::M(b)) => *a += b * s,
            _ => unreachable!("block kind mismatch"),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn vec(&self) -> &DVector<f64> {
        match self {
            Block::V(v) => v,
            Block::M(_) => unreachable!("expected a vector block"),
        }
    }

    pub fn mat(&self) -> &DMatrix<f64> {
        match self {
            Block::M(m) => m,
            Block::V(_) => unreachable!("expected a matrix block"),
        }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `sqrt(x0^2 - |x1|^2)` or `None` outside the interior.
fn soc_jnorm(x: &DVector<f64>) -> Option<f64> {
    let t = x.rows(1, x.len() - 1).norm();
    let a = x[0] - t;
    if a > 0.0 {
        Some((a * (x[0] + t)).sqrt())
    } else {
        None
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Scaling {
    Nonneg {
        d: DVector<f64>,
        lambda: DVector<f64>,
    },
    Soc {
        beta: f64,
        /// `W = beta (2 v v' - J)`.
        v: DVector<f64>,
        /// First component of the normalized scaling point.
        w0: f64,
        lambda: DVector<f64>,
    },
    Psd {
        r: DMatrix<f64>,
        rinv: DMatrix<f64>,
        g: DMatrix<f64>,
        lambda: DVector<f64>,
    },
}

fn jmul(v: &DVector<f64>) -> DVector<f64> {
    let mut out = -v.clone();
    out[0] = v[0];
    out
}

impl Scaling {
    /// NT scaling at `(x, z)`; `None` if either point left the interior.
    pub fn new(cone: Cone, x: &Block, z: &Block) -> Option<Scaling> {
        match cone {
            Cone::Nonneg(_) => {
                let (x, z) = (x.vec(), z.vec());
                if x.iter().chain(z.iter()).any(|&v| !(v > 0.0)) {
                    return None;
                }
                Some(Scaling::Nonneg {
                    d: x.zip_map(z, |a, b| (a / b).sqrt()),
                    lambda: x.zip_map(z, |a, b| (a * b).sqrt()),
                })
            }
            Cone::Soc(_) => {
                let (x, z) = (x.vec(), z.vec());
                let xn = soc_jnorm(x)?;
                let zn = soc_jnorm(z)?;
                let xb = x / xn;
                let zb = z / zn;
                let gamma = ((1.0 + xb.dot(&zb)) / 2.0).sqrt();
                let wb = (xb + jmul(&zb)) / (2.0 * gamma);
                let w0 = wb[0];
                let mut v = wb;
                v[0] += 1.0;
                v /= (2.0 * (w0 + 1.0)).sqrt();
                let beta = (xn / zn).sqrt();
                let mut s = Scaling::Soc {
                    beta,
                    v,
                    w0,
                    lambda: DVector::zeros(x.len()),
                };
                let lam = s.wt(&Block::V(z.clone()));
                if let Scaling::Soc { lambda, .. } = &mut s {
                    *lambda = lam.vec().clone();
                }
                Some(s)
            }
            Cone::Psd(n) => {
                let lx = x.mat().clone().cholesky()?.l();
                let lz = z.mat().clone().cholesky()?.l();
                let svd = (lz.transpose() * &lx).svd(false, true);
                let vt = svd.v_t?;
                let lambda = svd.singular_values;
                if lambda.iter().any(|&l| !(l > 0.0)) {
                    return None;
                }
                let isq = DMatrix::from_diagonal(&lambda.map(|l| 1.0 / l.sqrt()));
                let sq = DMatrix::from_diagonal(&lambda.map(|l| l.sqrt()));
                let r = &lx * vt.transpose() * isq;
                let lx_inv = lx.solve_lower_triangular(&DMatrix::identity(n, n))?;
                let rinv = sq * vt * lx_inv;
                let g = &r * r.transpose();
                Some(Scaling::Psd { r, rinv, g, lambda })
            }
        }
    }

    pub fn lambda(&self) -> &DVector<f64> {
        match self {
            Scaling::Nonneg { lambda, .. }
            | Scaling::Soc { lambda, .. }
            | Scaling::Psd { lambda, .. } => lambda,
        }
    }

    /// `W u`.
    pub fn w(&self, u: &Block) -> Block {
        match self {
            Scaling::Nonneg { d, .. } => Block::V(u.vec().component_mul(d)),
            Scaling::Soc { beta, v, .. } => {
                let u = u.vec();
                Block::V((v * (2.0 * v.dot(u)) - jmul(u)) * *beta)
            }
            Scaling::Psd { r, .. } => {
                let mut m = r * u.mat() * r.transpose();
                symmetrize(&mut m);
                Block::M(m)
            }
        }
    }

    /// `W' u`.
    pub fn wt(&self, u: &Block) -> Block {
        match self {
            Scaling::Psd { r, .. } => {
                let mut m = r.transpose() * u.mat() * r;
                symmetrize(&mut m);
                Block::M(m)
            }
            _ => self.w(u),
        }
    }

    /// `W^{-1} u`; used to check the scaling identities.
    #[cfg_attr(not(test), allow(dead_code))]
    pub fn winv(&self, u: &Block) -> Block {
        match self {
            Scaling::Nonneg { d, .. } => Block::V(u.vec().component_div(d)),
            Scaling::Soc { beta, v, .. } => {
                let u = u.vec();
                let jv = jmul(v);
                Block::V((&jv * (2.0 * jv.dot(u)) - jmul(u)) / *beta)
            }
            Scaling::Psd { rinv, .. } => {
                let mut m = rinv * u.mat() * rinv.transpose();
                symmetrize(&mut m);
                Block::M(m)
            }
        }
    }

    /// `W W' u`.
    pub fn wwt(&self, u: &Block) -> Block {
        match self {
            Scaling::Psd { g, .. } => {
                let mut m = g * u.mat() * g;
                symmetrize(&mut m);
                Block::M(m)
            }
            _ => self.w(&self.w(u)),
        }
    }
}

/// Jordan product of two scaled directions.
pub(crate) fn jordan(cone: Cone, a: &Block, b: &Block) -> Block {
    match cone {
        Cone::Nonneg(_) => Block::V(a.vec().component_mul(b.vec())),
        Cone::Soc(_) => {
            let (a, b) = (a.vec(), b.vec());
            let mut out = a * b[0] + b * a[0];
            out[0] = a.dot(b);
            Block::V(out)
        }
        Cone::Psd(_) => {
            let (a, b) = (a.mat(), b.mat());
            let p = a * b;
            Block::M((&p + p.transpose()) * 0.5)
        }
    }
}

/// `lambda o lambda` for a scaling point.
pub(crate) fn lambda_sq(cone: Cone, lambda: &DVector<f64>) -> Block {
    match cone {
        Cone::Psd(_) => Block::M(DMatrix::from_diagonal(&lambda.map(|l| l * l))),
        _ => {
            let b = Block::V(lambda.clone());
            jordan(cone, &b, &b)
        }
    }
}

/// Solves `lambda o u = r` for `u`.
pub(crate) fn lambda_ldiv(cone: Cone, lambda: &DVector<f64>, r: &Block) -> Block {
    match cone {
        Cone::Nonneg(_) => Block::V(r.vec().component_div(lambda)),
        Cone::Soc(n) => {
            let r = r.vec();
            let l0 = lambda[0];
            let l1 = lambda.rows(1, n - 1);
            let r1 = r.rows(1, n - 1);
            let det = l0 * l0 - l1.norm_squared();
            let u0 = (l0 * r[0] - l1.dot(&r1)) / det;
            let mut u = DVector::zeros(n);
            u[0] = u0;
            let tail = (r1 - l1 * u0) / l0;
            u.rows_mut(1, n - 1).copy_from(&tail);
            Block::V(u)
        }
        Cone::Psd(n) => {
            let r = r.mat();
            Block::M(DMatrix::from_fn(n, n, |i, j| {
                2.0 * r[(i, j)] / (lambda[i] + lambda[j])
            }))
        }
    }
}

/// Largest `alpha` with `lambda + alpha d` in the cone (possibly infinite).
pub(crate) fn max_step(cone: Cone, lambda: &DVector<f64>, d: &Block) -> f64 {
    match cone {
        Cone::Nonneg(_) => d
            .vec()
            .iter()
            .zip(lambda.iter())
            .filter(|(&di, _)| di < 0.0)
            .map(|(&di, &li)| -li / di)
            .fold(f64::INFINITY, f64::min),
        Cone::Soc(n) => {
            let d = d.vec();
            let l1 = lambda.rows(1, n - 1);
            let d1 = d.rows(1, n - 1);
            let a = d[0] * d[0] - d1.norm_squared();
            let b = lambda[0] * d[0] - l1.dot(&d1);
            let c = lambda[0] * lambda[0] - l1.norm_squared();
            smallest_positive_root(a, b, c)
        }
        Cone::Psd(_) => {
            let d = d.mat();
            let is = lambda.map(|l| 1.0 / l.sqrt());
            let m = DMatrix::from_fn(d.nrows(), d.ncols(), |i, j| is[i] * d[(i, j)] * is[j]);
            let emin = SymmetricEigen::new(m).eigenvalues.min();
            if emin >= 0.0 {
                f64::INFINITY
            } else {
                -1.0 / emin
            }
        }
    }
}

/// Smallest positive root of `a t^2 + 2 b t + c` with `c > 0`.
fn smallest_positive_root(a: f64, b: f64, c: f64) -> f64 {
    if a == 0.0 {
        return if b < 0.0 { -c / (2.0 * b) } else { f64::INFINITY };
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let q = -(b + b.signum() * disc.sqrt());
    let mut best = f64::INFINITY;
    for t in [q / a, if q != 0.0 { c / q } else { f64::INFINITY }] {
        if t > 0.0 && t < best {
            best = t;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn close(a: &Block, b: &Block, tol: f64) {
        let mut d = a.clone();
        d.axpy(-1.0, b);
        assert!(d.norm_sq().sqrt() <= tol * (1.0 + a.norm_sq().sqrt()), "{a:?} vs {b:?}");
    }

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed;
        let a = DMatrix::from_fn(n, n, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        });
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn soc_scaling_maps_both_points_to_lambda() {
        let cone = Cone::Soc(4);
        let x = Block::V(DVector::from_vec(vec![3.0, 1.0, -0.5, 0.7]));
        let z = Block::V(DVector::from_vec(vec![2.0, -0.3, 0.9, 0.1]));
        let s = Scaling::new(cone, &x, &z).unwrap();
        let l = Block::V(s.lambda().clone());
        close(&s.winv(&x), &l, 1e-12);
        close(&s.wt(&z), &l, 1e-12);
        close(&s.w(&s.winv(&x)), &x, 1e-12);
        if let Scaling::Soc { beta, v, w0, .. } = &s {
            // W^2 has the closed form used by the Schur complement.
            let u = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5]);
            let direct = s.wwt(&Block::V(u.clone()));
            let jv = jmul(v);
            let closed = (v * (4.0 * w0 * v.dot(&u)) - v * (2.0 * jv.dot(&u))
                - &jv * (2.0 * v.dot(&u))
                + &u)
                * (beta * beta);
            close(&direct, &Block::V(closed), 1e-12);
        }
    }

    #[test]
    fn psd_scaling_maps_both_points_to_lambda() {
        let cone = Cone::Psd(5);
        let x = Block::M(spd(5, 1));
        let z = Block::M(spd(5, 2));
        let s = Scaling::new(cone, &x, &z).unwrap();
        let l = Block::M(DMatrix::from_diagonal(s.lambda()));
        close(&s.winv(&x), &l, 1e-10);
        close(&s.wt(&z), &l, 1e-10);
        close(&s.wwt(&z), &x, 1e-10);
    }

    #[test]
    fn ldiv_inverts_jordan_product() {
        for (cone, lam) in [
            (Cone::Nonneg(3), DVector::from_vec(vec![1.0, 2.0, 0.5])),
            (Cone::Soc(3), DVector::from_vec(vec![2.0, 0.5, -0.7])),
            (Cone::Psd(3), DVector::from_vec(vec![1.0, 3.0, 0.2])),
        ] {
            let u = match cone {
                Cone::Psd(_) => Block::M(spd(3, 7)),
                _ => Block::V(DVector::from_vec(vec![0.4, -1.0, 2.5])),
            };
            let lb = match cone {
                Cone::Psd(_) => Block::M(DMatrix::from_diagonal(&lam)),
                _ => Block::V(lam.clone()),
            };
            let r = jordan(cone, &lb, &u);
            close(&lambda_ldiv(cone, &lam, &r), &u, 1e-12);
        }
    }

    #[test]
    fn step_lengths_hit_the_boundary() {
        let lam = DVector::from_vec(vec![2.0, 0.0, 0.0]);
        let d = Block::V(DVector::from_vec(vec![-1.0, 1.0, 0.0]));
        let a = max_step(Cone::Soc(3), &lam, &d);
        // (2 - a)^2 = a^2  =>  a = 1
        assert_relative_eq!(a, 1.0, epsilon = 1e-12);
        let d = Block::V(DVector::from_vec(vec![1.0, 0.0, 0.0]));
        assert!(max_step(Cone::Soc(3), &lam, &d).is_infinite());
        let lam = DVector::from_vec(vec![1.0, 4.0]);
        let d = Block::M(DMatrix::from_diagonal(&DVector::from_vec(vec![-2.0, -2.0])));
        assert_relative_eq!(max_step(Cone::Psd(2), &lam, &d), 0.5, epsilon = 1e-12);
        let d = Block::V(DVector::from_vec(vec![-2.0, -2.0]));
        assert_relative_eq!(max_step(Cone::Nonneg(2), &lam, &d), 0.5, epsilon = 1e-12);
    }
}
