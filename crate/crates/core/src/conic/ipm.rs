//! Infeasible primal-dual interior-point method with Nesterov-Todd scaling
//! and Mehrotra predictor-corrector steps.
//!
//! Solves `min c'x  s.t.  A x = b,  x in K` together with its dual
//! `max b'y  s.t.  A'y + z = c,  z in K*` over products of nonnegative
//! orthants, second-order cones and semidefinite cones.

use nalgebra::{DMatrix, DVector};

use super::cones::{jordan, lambda_ldiv, lambda_sq, max_step, Block, Cone, Scaling};
use super::presolve::{tri_entry, StdForm};
use super::{SolveStatus, SolverSettings};

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct IpmInfo {
    pub iterations: usize,
    pub pinf: f64,
    pub dinf: f64,
    pub rel_gap: f64,
}

pub(crate) struct IpmOutput {
    pub status: SolveStatus,
    /// Flat cone-entry values in the presolved numbering.
    pub x: Vec<f64>,
    pub info: IpmInfo,
}

#[derive(Debug, Clone, Default)]
struct RowPart {
    block: usize,
    vec: Vec<(usize, f64)>,
    /// Upper-triangular coefficients: the row reads `sum v X[i][j]`.
    psd: Vec<(usize, usize, f64)>,
}

struct Data {
    cones: Vec<Cone>,
    rows: Vec<Vec<RowPart>>,
    b: DVector<f64>,
    c: Vec<Block>,
    /// For each block, the rows touching it and the index of the part.
    block_rows: Vec<Vec<(usize, usize)>>,
}

type Pt = Vec<Block>;

fn pt_dot(a: &Pt, b: &Pt) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn pt_norm(a: &Pt) -> f64 {
    pt_dot(a, a).sqrt()
}

fn pt_axpy(a: &mut Pt, s: f64, b: &Pt) {
    for (x, y) in a.iter_mut().zip(b) {
        x.axpy(s, y);
    }
}

impl Data {
    fn from_std(p: &StdForm) -> (Data, f64) {
        let locate = |flat: usize| -> (usize, usize) {
            let blk = p.offsets.partition_point(|&o| o <= flat) - 1;
            (blk, flat - p.offsets[blk])
        };
        let to_parts = |row: &[(usize, f64)]| -> Vec<RowPart> {
            let mut parts: Vec<RowPart> = Vec::new();
            for &(flat, v) in row {
                let (blk, local) = locate(flat);
                let part = match parts.iter_mut().position(|q| q.block == blk) {
                    Some(k) => &mut parts[k],
                    None => {
                        parts.push(RowPart {
                            block: blk,
                            ..RowPart::default()
                        });
                        parts.last_mut().unwrap()
                    }
                };
                match p.blocks[blk] {
                    Cone::Psd(_) => {
                        let (i, j) = tri_entry(local);
                        part.psd.push((i, j, v));
                    }
                    _ => part.vec.push((local, v)),
                }
            }
            parts
        };

        let part_norm_sq = |q: &RowPart| -> f64 {
            q.vec.iter().map(|&(_, v)| v * v).sum::<f64>()
                + q.psd
                    .iter()
                    .map(|&(i, j, v)| if i == j { v * v } else { 0.5 * v * v })
                    .sum::<f64>()
        };

        let mut rows = Vec::with_capacity(p.rows.len());
        let mut b = DVector::zeros(p.rows.len());
        for (k, r) in p.rows.iter().enumerate() {
            let mut parts = to_parts(r);
            let norm = parts.iter().map(part_norm_sq).sum::<f64>().sqrt();
            let s = if norm > 0.0 { 1.0 / norm } else { 1.0 };
            for q in parts.iter_mut() {
                q.vec.iter_mut().for_each(|t| t.1 *= s);
                q.psd.iter_mut().for_each(|t| t.2 *= s);
            }
            b[k] = p.b[k] * s;
            rows.push(parts);
        }

        let mut c: Vec<Block> = p.blocks.iter().map(|k| k.zero()).collect();
        for part in to_parts(&p.c) {
            match &mut c[part.block] {
                Block::V(v) => {
                    for &(k, a) in &part.vec {
                        v[k] += a;
                    }
                }
                Block::M(m) => {
                    for &(i, j, a) in &part.psd {
                        if i == j {
                            m[(i, i)] += a;
                        } else {
                            m[(i, j)] += 0.5 * a;
                            m[(j, i)] += 0.5 * a;
                        }
                    }
                }
            }
        }
        let cnorm = pt_norm(&c).max(1.0);
        for blk in c.iter_mut() {
            match blk {
                Block::V(v) => *v /= cnorm,
                Block::M(m) => *m /= cnorm,
            }
        }

        let mut block_rows = vec![Vec::new(); p.blocks.len()];
        for (k, parts) in rows.iter().enumerate() {
            for (pi, q) in parts.iter().enumerate() {
                block_rows[q.block].push((k, pi));
            }
        }
        (
            Data {
                cones: p.blocks.clone(),
                rows,
                b,
                c,
                block_rows,
            },
            cnorm,
        )
    }

    fn m(&self) -> usize {
        self.rows.len()
    }

    fn a_apply(&self, x: &Pt) -> DVector<f64> {
        DVector::from_iterator(
            self.m(),
            self.rows.iter().map(|parts| {
                parts
                    .iter()
                    .map(|q| match &x[q.block] {
                        Block::V(v) => q.vec.iter().map(|&(k, a)| a * v[k]).sum::<f64>(),
                        Block::M(m) => q.psd.iter().map(|&(i, j, a)| a * m[(i, j)]).sum(),
                    })
                    .sum()
            }),
        )
    }

    fn at_apply(&self, y: &DVector<f64>) -> Pt {
        let mut out: Pt = self.cones.iter().map(|k| k.zero()).collect();
        for (k, parts) in self.rows.iter().enumerate() {
            let yk = y[k];
            if yk == 0.0 {
                continue;
            }
            for q in parts {
                match &mut out[q.block] {
                    Block::V(v) => {
                        for &(e, a) in &q.vec {
                            v[e] += yk * a;
                        }
                    }
                    Block::M(m) => {
                        for &(i, j, a) in &q.psd {
                            if i == j {
                                m[(i, i)] += yk * a;
                            } else {
                                m[(i, j)] += 0.5 * yk * a;
                                m[(j, i)] += 0.5 * yk * a;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Schur complement `M[k][l] = <A_k, W W' A_l>`.
    fn schur(&self, scalings: &[Scaling]) -> DMatrix<f64> {
        let m = self.m();
        let mut mat = DMatrix::zeros(m, m);
        for (blk, sc) in scalings.iter().enumerate() {
            let touching = &self.block_rows[blk];
            match sc {
                Scaling::Psd { g, .. } => {
                    for (ai, &(k, pk)) in touching.iter().enumerate() {
                        let ak = &self.rows[k][pk].psd;
                        for &(l, pl) in &touching[ai..] {
                            let al = &self.rows[l][pl].psd;
                            let mut s = 0.0;
                            for &(i, j, v) in ak {
                                for &(p, q, w) in al {
                                    s += v * w * (g[(i, p)] * g[(j, q)] + g[(i, q)] * g[(j, p)]);
                                }
                            }
                            mat[(k.min(l), k.max(l))] += 0.5 * s;
                        }
                    }
                }
                Scaling::Nonneg { d, .. } => {
                    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); d.len()];
                    for &(k, pk) in touching {
                        for &(e, a) in &self.rows[k][pk].vec {
                            cols[e].push((k, a));
                        }
                    }
                    for (e, col) in cols.iter().enumerate() {
                        let h = d[e] * d[e];
                        for (ai, &(k, a)) in col.iter().enumerate() {
                            for &(l, b) in &col[ai..] {
                                mat[(k.min(l), k.max(l))] += h * a * b;
                            }
                        }
                    }
                }
                Scaling::Soc { beta, v, w0, .. } => {
                    let b2 = beta * beta;
                    let n = v.len();
                    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
                    let mut s = vec![0.0; touching.len()];
                    let mut t = vec![0.0; touching.len()];
                    for (ai, &(k, pk)) in touching.iter().enumerate() {
                        for &(e, a) in &self.rows[k][pk].vec {
                            cols[e].push((k, a));
                            s[ai] += a * v[e];
                            t[ai] += a * if e == 0 { v[0] } else { -v[e] };
                        }
                    }
                    for col in &cols {
                        for (ai, &(k, a)) in col.iter().enumerate() {
                            for &(l, b) in &col[ai..] {
                                mat[(k.min(l), k.max(l))] += b2 * a * b;
                            }
                        }
                    }
                    for (ai, &(k, _)) in touching.iter().enumerate() {
                        for (bi, &(l, _)) in touching.iter().enumerate().skip(ai) {
                            let val = 4.0 * w0 * s[ai] * s[bi] - 2.0 * (s[ai] * t[bi] + t[ai] * s[bi]);
                            mat[(k.min(l), k.max(l))] += b2 * val;
                        }
                    }
                }
            }
        }
        for k in 0..m {
            for l in 0..k {
                mat[(k, l)] = mat[(l, k)];
            }
        }
        mat
    }

    fn initial_point(&self) -> (Pt, Pt) {
        let mut x = Vec::new();
        let mut z = Vec::new();
        for (blk, &cone) in self.cones.iter().enumerate() {
            let n = match cone {
                Cone::Nonneg(n) | Cone::Soc(n) | Cone::Psd(n) => n as f64,
            };
            let mut zeta: f64 = 10f64.max(n.sqrt());
            let mut eta: f64 = 10f64.max(n.sqrt()).max(self.c[blk].norm_sq().sqrt());
            for &(k, pk) in &self.block_rows[blk] {
                let q = &self.rows[k][pk];
                let na = (q.vec.iter().map(|t| t.1 * t.1).sum::<f64>()
                    + q.psd.iter().map(|t| t.2 * t.2).sum::<f64>())
                .sqrt();
                zeta = zeta.max(n * (1.0 + self.b[k].abs()) / (1.0 + na));
                eta = eta.max(na);
            }
            x.push(cone.identity(zeta));
            z.push(cone.identity(eta));
        }
        (x, z)
    }
}

fn factor(m: DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = m.diagonal().iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-300);
    let mut reg = 0.0;
    for _ in 0..12 {
        let mut mm = m.clone();
        if reg > 0.0 {
            for k in 0..mm.nrows() {
                mm[(k, k)] += reg;
            }
        }
        if let Some(ch) = mm.cholesky() {
            return Some(ch);
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 10.0 };
    }
    None
}

struct Dir {
    dx: Pt,
    dy: DVector<f64>,
    dz: Pt,
    dxs: Pt,
    dzs: Pt,
}

pub(crate) fn solve(p: &StdForm, settings: &SolverSettings) -> IpmOutput {
    let (data, cnorm) = Data::from_std(p);
    let cones = data.cones.clone();
    let nu: f64 = cones.iter().map(|k| k.degree() as f64).sum();
    let (mut x, mut z) = data.initial_point();
    let mut y = DVector::zeros(data.m());
    let bnorm = data.b.norm();
    let cnorm_s = pt_norm(&data.c);

    let mut info = IpmInfo::default();
    let mut best: Option<(f64, Pt, IpmInfo)> = None;
    let mut stalls = 0;
    let mut status = None;

    for iter in 0..=settings.max_iter {
        let rp = &data.b - data.a_apply(&x);
        let mut rd = data.c.clone();
        pt_axpy(&mut rd, -1.0, &data.at_apply(&y));
        pt_axpy(&mut rd, -1.0, &z);
        let pobj = pt_dot(&data.c, &x);
        let dobj = data.b.dot(&y);
        let gap = pt_dot(&x, &z);
        info = IpmInfo {
            iterations: iter,
            pinf: rp.norm() / (1.0 + bnorm),
            dinf: pt_norm(&rd) / (1.0 + cnorm_s),
            rel_gap: gap.max(0.0) / (1.0 + pobj.abs() + dobj.abs()),
        };
        if settings.verbose {
            log::debug!(
                "ipm {iter:3}: pobj {:+.6e} dobj {:+.6e} gap {:.2e} pinf {:.2e} dinf {:.2e}",
                pobj * cnorm,
                dobj * cnorm,
                info.rel_gap,
                info.pinf,
                info.dinf
            );
        }
        let merit = info.pinf.max(info.dinf).max(info.rel_gap);
        if best.as_ref().map_or(true, |(m, _, _)| merit < *m) {
            best = Some((merit, x.clone(), info));
        }
        if info.pinf < settings.tol_feas && info.dinf < settings.tol_feas && info.rel_gap < settings.tol_gap {
            status = Some(SolveStatus::Optimal);
            break;
        }
        if dobj > 0.0 {
            let aty_z = {
                let mut v = data.c.clone();
                pt_axpy(&mut v, -1.0, &rd);
                pt_norm(&v)
            };
            if aty_z / dobj < settings.tol_infeas {
                status = Some(SolveStatus::Infeasible);
                break;
            }
        }
        if pobj < 0.0 {
            let ax = (&data.b - &rp).norm();
            if ax / -pobj < settings.tol_infeas {
                status = Some(SolveStatus::Unbounded);
                break;
            }
        }
        if iter == settings.max_iter || stalls >= 3 {
            break;
        }

        let Some(scalings) = cones
            .iter()
            .zip(x.iter().zip(&z))
            .map(|(&k, (xb, zb))| Scaling::new(k, xb, zb))
            .collect::<Option<Vec<_>>>()
        else {
            break;
        };
        let Some(chol) = factor(data.schur(&scalings)) else {
            break;
        };
        let wwt_rd: Pt = scalings.iter().zip(&rd).map(|(s, r)| s.wwt(r)).collect();
        let a_wwt_rd = data.a_apply(&wwt_rd);

        let direction = |u: &Pt| -> Dir {
            let wu: Pt = scalings.iter().zip(u).map(|(s, b)| s.w(b)).collect();
            let rhs = &rp - data.a_apply(&wu) + &a_wwt_rd;
            let dy = chol.solve(&rhs);
            let mut dz = rd.clone();
            pt_axpy(&mut dz, -1.0, &data.at_apply(&dy));
            let mut dx = wu;
            let wwt_dz: Pt = scalings.iter().zip(&dz).map(|(s, b)| s.wwt(b)).collect();
            pt_axpy(&mut dx, -1.0, &wwt_dz);
            let dzs: Pt = scalings.iter().zip(&dz).map(|(s, b)| s.wt(b)).collect();
            let mut dxs = u.clone();
            pt_axpy(&mut dxs, -1.0, &dzs);
            Dir { dx, dy, dz, dxs, dzs }
        };
        let steps = |d: &Dir| -> (f64, f64) {
            let mut ap = f64::INFINITY;
            let mut ad = f64::INFINITY;
            for (k, (&cone, s)) in cones.iter().zip(&scalings).enumerate() {
                ap = ap.min(max_step(cone, s.lambda(), &d.dxs[k]));
                ad = ad.min(max_step(cone, s.lambda(), &d.dzs[k]));
            }
            (ap, ad)
        };

        let mu = gap / nu;
        let lam_sq: Pt = cones
            .iter()
            .zip(&scalings)
            .map(|(&k, s)| lambda_sq(k, s.lambda()))
            .collect();
        let u_aff: Pt = cones
            .iter()
            .zip(&scalings)
            .zip(&lam_sq)
            .map(|((&k, s), l2)| {
                let mut r = l2.clone();
                r.axpy(-2.0, l2);
                lambda_ldiv(k, s.lambda(), &r)
            })
            .collect();
        let aff = direction(&u_aff);
        let (ap, ad) = steps(&aff);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mut xa = x.clone();
        pt_axpy(&mut xa, ap, &aff.dx);
        let mut za = z.clone();
        pt_axpy(&mut za, ad, &aff.dz);
        let sigma = ((pt_dot(&xa, &za) / nu / mu).max(0.0)).powi(3).min(1.0);

        let u_cc: Pt = cones
            .iter()
            .enumerate()
            .map(|(k, &cone)| {
                let mut r = cone.identity(sigma * mu);
                r.axpy(-1.0, &lam_sq[k]);
                r.axpy(-1.0, &jordan(cone, &aff.dxs[k], &aff.dzs[k]));
                lambda_ldiv(cone, scalings[k].lambda(), &r)
            })
            .collect();
        let d = direction(&u_cc);
        let (ap, ad) = steps(&d);
        let gamma = 0.9 + 0.09 * ap.min(ad).min(1.0);
        let ap = (gamma * ap).min(1.0);
        let ad = (gamma * ad).min(1.0);
        pt_axpy(&mut x, ap, &d.dx);
        y.axpy(ad, &d.dy, 1.0);
        pt_axpy(&mut z, ad, &d.dz);
        if ap.max(ad) < 1e-8 {
            stalls += 1;
        } else {
            stalls = 0;
        }
    }

    let status = match status {
        Some(s) => s,
        None => {
            let (merit, bx, binfo) = best.clone().unwrap();
            if merit < settings.tol_inaccurate {
                x = bx;
                info = binfo;
                SolveStatus::Inaccurate
            } else {
                SolveStatus::SolverError
            }
        }
    };

    let mut flat = vec![0.0; p.n_flat];
    for (blk, b) in x.iter().enumerate() {
        let off = p.offsets[blk];
        match b {
            Block::V(v) => flat[off..off + v.len()].copy_from_slice(v.as_slice()),
            Block::M(m) => {
                for j in 0..m.ncols() {
                    for i in 0..=j {
                        flat[off + j * (j + 1) / 2 + i] = m[(i, j)];
                    }
                }
            }
        }
    }
    IpmOutput {
        status,
        x: flat,
        info,
    }
}
