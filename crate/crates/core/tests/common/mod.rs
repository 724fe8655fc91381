#![allow(dead_code)]

use cansim_core::signed_graph::SignedDigraph;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Triples = Vec<(usize, usize, f64)>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn magnitude(r: &mut ChaCha8Rng) -> f64 {
    *[0.5, 1.0, 1.5, 2.0].choose(r).unwrap()
}

fn sign(r: &mut ChaCha8Rng) -> f64 {
    if r.gen_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

fn has(t: &Triples, a: usize, b: usize) -> bool {
    t.iter().any(|&(x, y, _)| x == a && y == b)
}

/// Strongly connected graph on nodes `offset+1 ..= offset+n` (1-based).
/// Balanced graphs respect a random bipartition; unbalanced ones flip one
/// edge of a spanning cycle.
pub fn strong_triples(r: &mut ChaCha8Rng, n: usize, offset: usize, balanced: bool) -> Triples {
    let gauge: Vec<f64> = (0..n).map(|_| sign(r)).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(r);
    let mut t = Triples::new();
    if n < 2 {
        return t;
    }
    for i in 0..n {
        let (a, b) = (perm[i], perm[(i + 1) % n]);
        if !has(&t, a, b) {
            t.push((a, b, magnitude(r) * gauge[a] * gauge[b]));
        }
    }
    for a in 0..n {
        for b in 0..n {
            if a != b && !has(&t, a, b) && r.gen_bool(0.3) {
                t.push((a, b, magnitude(r) * gauge[a] * gauge[b]));
            }
        }
    }
    if !balanced {
        t[0].2 = -t[0].2;
    }
    t.into_iter().map(|(a, b, w)| (a + offset + 1, b + offset + 1, w)).collect()
}

pub fn strong_graph(r: &mut ChaCha8Rng, n: usize, balanced: bool) -> SignedDigraph {
    SignedDigraph::from_triples(n, &strong_triples(r, n, 0, balanced)).unwrap()
}

/// Adds followers `first ..` (0-based) each with an in-edge from an earlier
/// node, plus random extra edges into followers.
fn add_followers(r: &mut ChaCha8Rng, t: &mut Triples, first: usize, nf: usize) {
    let n = first + nf;
    for j in first..n {
        let src = r.gen_range(0..j);
        t.push((src + 1, j + 1, magnitude(r) * sign(r)));
    }
    for j in first..n {
        for src in 0..n {
            if src != j && !has(t, src + 1, j + 1) && r.gen_bool(0.25) {
                t.push((src + 1, j + 1, magnitude(r) * sign(r)));
            }
        }
    }
}

/// Quasi-strongly connected graph: `k` leaders (nodes 1..=k) and `nf` followers.
pub fn quasi_strong_graph(r: &mut ChaCha8Rng, k: usize, nf: usize, leaders_balanced: bool) -> SignedDigraph {
    let mut t = strong_triples(r, k, 0, leaders_balanced);
    add_followers(r, &mut t, k, nf);
    SignedDigraph::from_triples(k + nf, &t).unwrap()
}

/// Weakly connected graph with two closed strong components of sizes `k1`, `k2`.
pub fn weak_graph(
    r: &mut ChaCha8Rng,
    (k1, k2): (usize, usize),
    (b1, b2): (bool, bool),
    nf: usize,
) -> SignedDigraph {
    let mut t = strong_triples(r, k1, 0, b1);
    t.extend(strong_triples(r, k2, k1, b2));
    let first = k1 + k2;
    t.push((r.gen_range(0..k1) + 1, first + 1, magnitude(r) * sign(r)));
    let target = first + nf - 1;
    t.push((k1 + r.gen_range(0..k2) + 1, target + 1, magnitude(r) * sign(r)));
    for j in first + 1..first + nf {
        t.push((j, j + 1, magnitude(r) * sign(r)));
    }
    add_followers(r, &mut t, first, nf);
    let mut seen = Vec::new();
    t.retain(|&(a, b, _)| {
        let fresh = !seen.contains(&(a, b));
        seen.push((a, b));
        fresh
    });
    SignedDigraph::from_triples(first + nf, &t).unwrap()
}

pub fn random_triples(r: &mut ChaCha8Rng, n: usize, density: f64) -> Triples {
    let mut t = Triples::new();
    for a in 1..=n {
        for b in 1..=n {
            if a != b && r.gen_bool(density) {
                t.push((a, b, sign(r)));
            }
        }
    }
    t
}

pub fn uniform_vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

/// `L = D - W` straight from the edge list.
pub fn laplacian_oracle(g: &SignedDigraph) -> DMatrix<f64> {
    let n = g.n();
    let mut w = DMatrix::zeros(n, n);
    for e in g.edges() {
        w[(e.to, e.from)] = e.weight;
    }
    let mut l = -w.clone();
    for k in 0..n {
        l[(k, k)] = (0..n).map(|j| w[(k, j)].abs()).sum();
    }
    l
}

pub fn comparison_oracle(a: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| if i == j { a[(i, j)].abs() } else { -a[(i, j)].abs() })
}

pub fn sub(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// A gauge with `G L G = M(L)` found by exhaustive search, if one exists.
pub fn brute_gauge(l: &DMatrix<f64>) -> Option<Vec<f64>> {
    let n = l.nrows();
    let m = comparison_oracle(l);
    (0u32..(1 << n)).find_map(|mask| {
        let g: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
        let ok = (0..n).all(|i| (0..n).all(|j| g[i] * l[(i, j)] * g[j] == m[(i, j)]));
        ok.then_some(g)
    })
}

/// Left null vector of `M(L)` from the smallest singular vector, normalised to sum one.
pub fn perron_oracle(l: &DMatrix<f64>) -> DVector<f64> {
    let n = l.nrows();
    if n == 1 {
        return DVector::from_element(1, 1.0);
    }
    let svd = comparison_oracle(l).transpose().svd(false, true);
    let v_t = svd.v_t.unwrap();
    let (idx, _) = svd.singular_values.iter().enumerate().fold((0, f64::INFINITY), |best, (i, &s)| {
        if s < best.1 {
            (i, s)
        } else {
            best
        }
    });
    let p = v_t.row(idx).transpose();
    &p / p.sum()
}

/// Limit of the undisturbed nominal protocol given the closed strong components.
pub fn limit_oracle(g: &SignedDigraph, cscs: &[Vec<usize>], x0: &[f64]) -> Vec<f64> {
    let n = g.n();
    let l = laplacian_oracle(g);
    let mut limit = vec![0.0; n];
    let mut is_leader = vec![false; n];
    for c in cscs {
        let lk = sub(&l, c, c);
        for &v in c {
            is_leader[v] = true;
        }
        if let Some(gauge) = brute_gauge(&lk) {
            let p = perron_oracle(&lk);
            let value: f64 = (0..c.len()).map(|i| p[i] * gauge[i] * x0[c[i]]).sum();
            for (i, &v) in c.iter().enumerate() {
                limit[v] = gauge[i] * value;
            }
        }
    }
    let leaders: Vec<usize> = (0..n).filter(|&v| is_leader[v]).collect();
    let followers: Vec<usize> = (0..n).filter(|&v| !is_leader[v]).collect();
    if !followers.is_empty() {
        let xl = DVector::from_iterator(leaders.len(), leaders.iter().map(|&v| limit[v]));
        let rhs = -(sub(&l, &followers, &leaders) * xl);
        let xf = sub(&l, &followers, &followers).lu().solve(&rhs).unwrap();
        for (i, &v) in followers.iter().enumerate() {
            limit[v] = xf[i];
        }
    }
    limit
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn tol_for(x0: &[f64]) -> f64 {
    1e-3 * inf_norm(x0).max(1.0)
}
