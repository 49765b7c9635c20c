//! Brute-force evaluation of the partition posterior, written without any of
//! the crate's caching: each layout is its own tree, medians come from a full
//! sort, and Beta integrals are rising-factorial products instead of
//! log-gamma differences.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use suba::{Arm, BetaHyper, PartitionCatalog, PosteriorState, PriorParams, TrialData};

#[derive(Debug, Clone)]
pub enum Tree {
    Leaf,
    Split(usize, Box<Tree>, Box<Tree>),
}

pub fn trees(k: usize, rounds_left: usize) -> Vec<Tree> {
    let mut out = vec![Tree::Leaf];
    if rounds_left == 0 {
        return out;
    }
    let sub = trees(k, rounds_left - 1);
    for m in 0..k {
        for lo in &sub {
            for hi in &sub {
                out.push(Tree::Split(m, Box::new(lo.clone()), Box::new(hi.clone())));
            }
        }
    }
    out
}

pub fn text(t: &Tree) -> String {
    match t {
        Tree::Leaf => ".".into(),
        Tree::Split(m, lo, hi) => format!("{}({},{})", m + 1, text(lo), text(hi)),
    }
}

pub fn prior(t: &Tree, v: &[f64], phi: f64, max_rounds: usize) -> f64 {
    fn walk(t: &Tree, depth: usize, v: &[f64], max_rounds: usize, used: &mut BTreeSet<usize>) -> f64 {
        let here = |p: f64| if depth < max_rounds { p } else { 1.0 };
        match t {
            Tree::Leaf => here(v[0]),
            Tree::Split(m, lo, hi) => {
                used.insert(*m);
                here(v[m + 1]) * walk(lo, depth + 1, v, max_rounds, used) * walk(hi, depth + 1, v, max_rounds, used)
            }
        }
    }
    let mut used = BTreeSet::new();
    let p = walk(t, 0, v, max_rounds, &mut used);
    p * phi.powi(used.len() as i32)
}

pub fn sorted_median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Leaves of `t` in preorder, each as the list of patients it holds, plus the
/// leaf a new point `x` falls into.
pub fn leaves(t: &Tree, rows: &[Vec<f64>], members: Vec<usize>, x: &[f64], x_here: bool, out: &mut Vec<(Vec<usize>, bool)>) {
    match t {
        Tree::Leaf => out.push((members, x_here)),
        Tree::Split(m, lo, hi) => {
            let cut = sorted_median(members.iter().map(|&i| rows[i][*m]).collect());
            let (upper, lower): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&i| rows[i][*m] >= cut);
            let x_upper = x[*m] >= cut;
            leaves(lo, rows, lower, x, x_here && !x_upper, out);
            leaves(hi, rows, upper, x, x_here && x_upper, out);
        }
    }
}

/// `∫ θ^s (1-θ)^f dBeta(a, b)` as a ratio of rising factorials.
pub fn beta_ratio(a: f64, b: f64, s: u32, f: u32) -> f64 {
    let mut num = 1.0;
    for i in 0..s {
        num *= a + i as f64;
    }
    for j in 0..f {
        num *= b + j as f64;
    }
    let mut den = 1.0;
    for k in 0..s + f {
        den *= a + b + k as f64;
    }
    num / den
}

#[derive(Debug, Clone)]
pub struct Patient {
    pub x: Vec<f64>,
    pub arm: usize,
    pub y: Option<bool>,
}

#[derive(Debug)]
pub struct Fixture {
    pub k: usize,
    pub depth: usize,
    pub n_arms: usize,
    pub v: Vec<f64>,
    pub phi: f64,
    pub a: f64,
    pub b: f64,
    pub patients: Vec<Patient>,
    pub probe: Vec<f64>,
}

pub struct OracleResult {
    pub weights: Vec<(String, f64)>,
    pub q: Vec<f64>,
}

pub fn oracle(f: &Fixture) -> OracleResult {
    let rows: Vec<Vec<f64>> = f.patients.iter().map(|p| p.x.clone()).collect();
    let mut unnorm = Vec::new();
    let mut q_parts = Vec::new();
    for t in trees(f.k, f.depth) {
        let mut ls = Vec::new();
        leaves(&t, &rows, (0..rows.len()).collect(), &f.probe, true, &mut ls);
        let mut lik = 1.0;
        let mut q = vec![0.0; f.n_arms];
        for (members, holds_probe) in &ls {
            for (arm, q_arm) in q.iter_mut().enumerate() {
                let (mut s, mut fl) = (0, 0);
                for &i in members {
                    let p = &f.patients[i];
                    match p.y {
                        Some(true) if p.arm == arm => s += 1,
                        Some(false) if p.arm == arm => fl += 1,
                        _ => {}
                    }
                }
                lik *= beta_ratio(f.a, f.b, s, fl);
                if *holds_probe {
                    *q_arm = (f.a + s as f64) / (f.a + f.b + (s + fl) as f64);
                }
            }
        }
        unnorm.push((text(&t), prior(&t, &f.v, f.phi, f.depth) * lik));
        q_parts.push(q);
    }
    let z: f64 = unnorm.iter().map(|(_, w)| w).sum();
    let weights: Vec<(String, f64)> = unnorm.into_iter().map(|(s, w)| (s, w / z)).collect();
    let mut q = vec![0.0; f.n_arms];
    for ((_, w), qs) in weights.iter().zip(&q_parts) {
        for (acc, v) in q.iter_mut().zip(qs) {
            *acc += w * v;
        }
    }
    OracleResult { weights, q }
}

/// Largest absolute differences between the crate and the oracle, over
/// layout weights and over `q` at the fixture's probe.
pub fn max_errors(f: &Fixture) -> (f64, f64) {
    let params = PriorParams::new(f.v.clone(), f.phi, f.depth).unwrap();
    let catalog = Arc::new(PartitionCatalog::with_prior(&params).unwrap());
    let mut data = TrialData::new(f.k);
    for p in &f.patients {
        data.push(&p.x, Some(Arm(p.arm)), p.y).unwrap();
    }
    let state = PosteriorState::rebuild(catalog.clone(), &data, BetaHyper::new(f.a, f.b).unwrap(), f.n_arms).unwrap();
    let expect = oracle(f);
    assert_eq!(expect.weights.len(), catalog.len());
    let mut w_err: f64 = 0.0;
    for (text, w) in &expect.weights {
        let r = catalog
            .layouts()
            .iter()
            .position(|l| &l.to_string() == text)
            .unwrap_or_else(|| panic!("layout {text} missing from catalog"));
        w_err = w_err.max((state.weight(r) - w).abs());
    }
    let q = state.predictive_all(&f.probe).unwrap();
    let q_err = q.iter().zip(&expect.q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (w_err, q_err)
}
