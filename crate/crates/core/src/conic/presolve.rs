//! Lowering of a [`ConicProgram`] to standard primal form
//! `min c'w  s.t.  A w = b,  w in K`.
//!
//! Every cone entry becomes a cone variable `w`. An entry that is a single
//! scalar column not yet claimed by another entry absorbs that column; all
//! other entries are tied to their expression by an equality row. Remaining
//! free columns are then pivoted out of the equality rows, so the standard
//! form only contains cone variables.

use std::collections::BTreeMap;

use super::cones::Cone;
use super::{ConicProgram, LinExpr};
use crate::error::Result;

/// Coefficients below this fraction of a row's largest entry are dropped
/// after elimination.
const DROP_TOL: f64 = 1e-14;

#[derive(Debug, Clone)]
pub(crate) struct StdForm {
    pub blocks: Vec<Cone>,
    pub offsets: Vec<usize>,
    pub n_flat: usize,
    /// Sparse rows over flat cone-entry indices.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub b: Vec<f64>,
    pub c: Vec<(usize, f64)>,
}

/// Position `(i, j)`, `i <= j`, of local entry `k` of an `n x n` block.
pub(crate) fn tri_entry(k: usize) -> (usize, usize) {
    let mut j = ((((8 * k + 1) as f64).sqrt() - 1.0) / 2.0) as usize;
    while j * (j + 1) / 2 > k {
        j -= 1;
    }
    while (j + 1) * (j + 2) / 2 <= k {
        j += 1;
    }
    (k - j * (j + 1) / 2, j)
}

pub(crate) fn tri_index(i: usize, j: usize) -> usize {
    let (i, j) = (i.min(j), i.max(j));
    j * (j + 1) / 2 + i
}

#[derive(Debug, Clone)]
pub(crate) struct Recovery {
    n_cols: usize,
    n_flat: usize,
    /// `x[col] = (w[flat] - c) / a`.
    claimed: Vec<(usize, usize, f64, f64)>,
    /// `x[col] = constant + sum coef * unified[idx]`, applied in reverse.
    eliminated: Vec<(usize, Vec<(usize, f64)>, f64)>,
}

impl Recovery {
    pub fn recover(&self, w: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n_cols];
        for &(col, flat, a, c) in &self.claimed {
            x[col] = (w[flat] - c) / a;
        }
        for (col, terms, c) in self.eliminated.iter().rev() {
            let mut v = *c;
            for &(idx, coef) in terms {
                v += coef
                    * if idx < self.n_flat {
                        w[idx]
                    } else {
                        x[idx - self.n_flat]
                    };
            }
            x[*col] = v;
        }
        x
    }
}

#[derive(Debug)]
pub(crate) enum Lowered {
    Problem(StdForm, Recovery),
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Default)]
struct Row {
    terms: BTreeMap<usize, f64>,
    constant: f64,
}

impl Row {
    fn add(&mut self, idx: usize, v: f64) {
        *self.terms.entry(idx).or_insert(0.0) += v;
    }

    fn max_abs(&self) -> f64 {
        self.terms.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn axpy(&mut self, other: &Row, s: f64) {
        for (&k, &v) in &other.terms {
            self.add(k, s * v);
        }
        self.constant += s * other.constant;
    }

    fn clean(&mut self, exact_zero: Option<usize>) {
        if let Some(k) = exact_zero {
            self.terms.remove(&k);
        }
        let tol = DROP_TOL * self.max_abs();
        self.terms.retain(|_, v| v.abs() > tol);
    }
}

pub(crate) fn lower(p: &ConicProgram) -> Result<Lowered> {
    let n_cols = p.space.len();

    let mut blocks = Vec::new();
    let mut offsets = Vec::new();
    let mut entries: Vec<(usize, LinExpr)> = Vec::new();
    let mut n_flat = 0usize;

    for lmi in &p.lmis {
        let mut map: BTreeMap<(usize, usize), LinExpr> = BTreeMap::new();
        for (i, j, e) in &lmi.entries {
            map.entry((*i, *j)).or_default().add_scaled(e, 1.0);
        }
        offsets.push(n_flat);
        if lmi.is_diagonal() || lmi.dim == 1 {
            blocks.push(Cone::Nonneg(lmi.dim));
            for i in 0..lmi.dim {
                entries.push((n_flat + i, map.remove(&(i, i)).unwrap_or_default()));
            }
            n_flat += lmi.dim;
        } else {
            blocks.push(Cone::Psd(lmi.dim));
            for j in 0..lmi.dim {
                for i in 0..=j {
                    entries.push((
                        n_flat + tri_index(i, j),
                        map.remove(&(i, j)).unwrap_or_default(),
                    ));
                }
            }
            n_flat += lmi.dim * (lmi.dim + 1) / 2;
        }
    }
    for soc in &p.socs {
        offsets.push(n_flat);
        let dim = soc.body.len() + 1;
        blocks.push(Cone::Soc(dim));
        entries.push((n_flat, soc.head.clone()));
        for (k, e) in soc.body.iter().enumerate() {
            entries.push((n_flat + 1 + k, e.clone()));
        }
        n_flat += dim;
    }

    // Claim single-column entries.
    let mut claim: Vec<Option<(usize, f64, f64)>> = vec![None; n_cols];
    let mut rows: Vec<Row> = Vec::new();
    for (flat, mut e) in entries {
        e.compress();
        if let [(col, a)] = e.terms[..] {
            if claim[col].is_none() {
                claim[col] = Some((flat, a, e.constant));
                continue;
            }
        }
        let mut r = Row::default();
        r.add(flat, 1.0);
        for &(col, v) in &e.terms {
            r.add(n_flat + col, -v);
        }
        r.constant = -e.constant;
        rows.push(r);
    }
    for eq in &p.equalities {
        let mut r = Row::default();
        for &(col, v) in &eq.expr.terms {
            r.add(n_flat + col, v);
        }
        r.constant = eq.expr.constant;
        rows.push(r);
    }
    let mut obj = Row::default();
    for &(col, v) in &p.objective.terms {
        obj.add(n_flat + col, v);
    }
    obj.constant = p.objective.constant;

    let substitute = |r: &mut Row| {
        let claimed: Vec<(usize, f64)> = r
            .terms
            .iter()
            .filter(|(&k, _)| k >= n_flat && claim[k - n_flat].is_some())
            .map(|(&k, &v)| (k, v))
            .collect();
        for (k, v) in claimed {
            let (flat, a, c) = claim[k - n_flat].unwrap();
            r.terms.remove(&k);
            r.add(flat, v / a);
            r.constant -= v * c / a;
        }
        r.clean(None);
    };
    for r in rows.iter_mut() {
        substitute(r);
    }
    substitute(&mut obj);

    // Pivot free columns out of the rows.
    let mut eliminated = Vec::new();
    let mut active: Vec<bool> = vec![true; rows.len()];
    loop {
        let mut occ: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (ri, r) in rows.iter().enumerate() {
            if !active[ri] {
                continue;
            }
            for &k in r.terms.keys() {
                if k >= n_flat {
                    occ.entry(k).or_default().push(ri);
                }
            }
        }
        let Some((&var, cand)) = occ.iter().min_by_key(|(&k, v)| (v.len(), k)) else {
            break;
        };
        let score = |ri: usize| {
            let r = &rows[ri];
            r.terms[&var].abs() / r.max_abs()
        };
        let pivot_row = cand
            .iter()
            .copied()
            .filter(|&ri| score(ri) >= 1e-3)
            .min_by(|&a, &b| {
                rows[a]
                    .terms
                    .len()
                    .cmp(&rows[b].terms.len())
                    .then(score(b).total_cmp(&score(a)))
            })
            .unwrap_or_else(|| {
                cand.iter()
                    .copied()
                    .max_by(|&a, &b| score(a).total_cmp(&score(b)))
                    .unwrap()
            });
        let others: Vec<usize> = cand.iter().copied().filter(|&ri| ri != pivot_row).collect();
        let pr = rows[pivot_row].clone();
        let a = pr.terms[&var];
        active[pivot_row] = false;
        for ri in others {
            let s = -rows[ri].terms[&var] / a;
            rows[ri].axpy(&pr, s);
            rows[ri].clean(Some(var));
        }
        if let Some(&v) = obj.terms.get(&var) {
            obj.axpy(&pr, -v / a);
            obj.clean(Some(var));
        }
        let terms: Vec<(usize, f64)> = pr
            .terms
            .iter()
            .filter(|(&k, _)| k != var)
            .map(|(&k, &v)| (k, -v / a))
            .collect();
        eliminated.push((var - n_flat, terms, -pr.constant / a));
    }

    // Columns left only in the objective make it unbounded.
    let obj_scale = 1.0 + obj.max_abs();
    for (&k, &v) in &obj.terms {
        if k >= n_flat && v.abs() > 1e-12 * obj_scale {
            return Ok(Lowered::Unbounded);
        }
    }
    obj.terms.retain(|&k, _| k < n_flat);

    let mut std_rows = Vec::new();
    let mut b = Vec::new();
    for (ri, r) in rows.iter().enumerate() {
        if !active[ri] {
            continue;
        }
        if r.terms.is_empty() {
            if r.constant.abs() > 1e-9 * (1.0 + r.constant.abs().min(1.0)) {
                return Ok(Lowered::Infeasible);
            }
            continue;
        }
        std_rows.push(r.terms.iter().map(|(&k, &v)| (k, v)).collect());
        b.push(-r.constant);
    }

    let claimed = claim
        .iter()
        .enumerate()
        .filter_map(|(col, c)| c.map(|(flat, a, k)| (col, flat, a, k)))
        .collect();

    Ok(Lowered::Problem(
        StdForm {
            blocks,
            offsets,
            n_flat,
            rows: std_rows,
            b,
            c: obj.terms.iter().map(|(&k, &v)| (k, v)).collect(),
        },
        Recovery {
            n_cols,
            n_flat,
            claimed,
            eliminated,
        },
    ))
}
