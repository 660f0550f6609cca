//! Stationary solvers for small continuous-time chains described by their
//! off-diagonal rates.

use crate::error::{Error, Result};

/// Off-diagonal transition rates, one row per state. Self-loops are ignored.
pub type RateRows = Vec<Vec<(usize, f64)>>;

fn rate_to(row: &[(usize, f64)], j: usize) -> f64 {
    row.iter().find(|e| e.0 == j).map_or(0.0, |e| e.1)
}

fn add_rate(row: &mut Vec<(usize, f64)>, j: usize, v: f64) -> bool {
    if let Some(e) = row.iter_mut().find(|e| e.0 == j) {
        e.1 += v;
        false
    } else {
        row.push((j, v));
        true
    }
}

/// Grassmann-Taksar-Heyman elimination on a sparse rate list, eliminating
/// states from the highest index down. Returns `None` when the chain is not
/// irreducible.
pub fn gth_sparse(rows: &[Vec<(usize, f64)>]) -> Option<Vec<f64>> {
    let n = rows.len();
    if n == 0 {
        return Some(vec![]);
    }
    let mut out: RateRows = vec![Vec::new(); n];
    let mut inc: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            if j != i && v > 0.0 && add_rate(&mut out[i], j, v) {
                inc[j].push(i);
            }
        }
    }
    let mut scale = vec![0.0; n];
    for p in (1..n).rev() {
        let down: Vec<(usize, f64)> = out[p].iter().copied().filter(|e| e.0 < p).collect();
        let s: f64 = down.iter().map(|e| e.1).sum();
        if !(s > 0.0) {
            return None;
        }
        scale[p] = s;
        let sources: Vec<usize> = inc[p].iter().copied().filter(|&i| i < p).collect();
        for i in sources {
            let rip = rate_to(&out[i], p);
            if rip == 0.0 {
                continue;
            }
            let f = rip / s;
            for &(j, rpj) in &down {
                if j != i && add_rate(&mut out[i], j, f * rpj) {
                    inc[j].push(i);
                }
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for p in 1..n {
        let mut acc = 0.0;
        for &i in &inc[p] {
            if i < p {
                acc += pi[i] * rate_to(&out[i], p);
            }
        }
        pi[p] = acc / scale[p];
    }
    normalize(&mut pi);
    Some(pi)
}

/// Square matrix stored by diagonals |i - j| <= w.
#[derive(Debug, Clone)]
pub struct Band {
    n: usize,
    w: usize,
    data: Vec<f64>,
}

impl Band {
    pub fn new(n: usize, w: usize) -> Self {
        Band { n, w, data: vec![0.0; n * (2 * w + 1)] }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.w);
        i * (2 * self.w + 1) + (j + self.w - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.w {
            0.0
        } else {
            self.data[self.at(i, j)]
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let a = self.at(i, j);
        self.data[a] += v;
    }
}

/// GTH elimination on a banded rate matrix. Diagonal entries are ignored.
/// Fill-in stays inside the band because no pivoting is done.
pub fn gth_banded(mut a: Band) -> Option<Vec<f64>> {
    let n = a.n;
    let w = a.w;
    if n == 0 {
        return Some(vec![]);
    }
    let mut scale = vec![0.0; n];
    for p in (1..n).rev() {
        let lo = p.saturating_sub(w);
        let s: f64 = (lo..p).map(|j| a.get(p, j)).sum();
        if !(s > 0.0) {
            return None;
        }
        scale[p] = s;
        for i in lo..p {
            let aip = a.get(i, p);
            if aip == 0.0 {
                continue;
            }
            let f = aip / s;
            for j in lo..p {
                if j != i {
                    let apj = a.get(p, j);
                    if apj != 0.0 {
                        a.add(i, j, f * apj);
                    }
                }
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for p in 1..n {
        let lo = p.saturating_sub(w);
        let acc: f64 = (lo..p).map(|i| pi[i] * a.get(i, p)).sum();
        pi[p] = acc / scale[p];
    }
    normalize(&mut pi);
    Some(pi)
}

/// Power iteration on the uniformized chain P = I + Q/unif, started from
/// `start` (uniform when `None`). Stops when successive iterates differ by
/// less than `tol` in max-norm.
pub fn power_stationary(
    rows: &[Vec<(usize, f64)>],
    unif: f64,
    tol: f64,
    max_iter: usize,
    start: Option<Vec<f64>>,
) -> Result<(Vec<f64>, usize)> {
    let n = rows.len();
    let exit: Vec<f64> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| r.iter().filter(|e| e.0 != i).map(|e| e.1).sum())
        .collect();
    let mut pi = start.unwrap_or_else(|| vec![1.0 / n as f64; n]);
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        for (j, v) in next.iter_mut().enumerate() {
            *v = pi[j] * (1.0 - exit[j] / unif);
        }
        for (i, row) in rows.iter().enumerate() {
            let pii = pi[i] / unif;
            if pii == 0.0 {
                continue;
            }
            for &(j, r) in row {
                if j != i {
                    next[j] += pii * r;
                }
            }
        }
        normalize(&mut next);
        residual = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut pi, &mut next);
        if residual < tol {
            return Ok((pi, it));
        }
    }
    Err(Error::IterationLimit { iterations: max_iter, residual })
}

pub fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}
