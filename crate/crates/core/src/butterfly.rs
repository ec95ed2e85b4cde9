//! Butterfly interaction structure: per-stage PE pairings, plus explicit
//! (test-tier) materialisation of the interaction matrices.
//!
//! Runtime code never materialises a matrix; every algorithm works off the
//! [`PairSchedule`] and island-local reductions. The dense matrices exist so
//! tests can check their structural laws directly.

use crate::error::{Error, Result};

/// PE/particle layout: m PEs (a power of two), M particles per PE,
/// S = log2(m) butterfly stages, N = m*M particles in total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    m: usize,
    particles_per_pe: usize,
}

impl Topology {
    pub fn new(m: usize, particles_per_pe: usize) -> Result<Self> {
        if m == 0 || !m.is_power_of_two() {
            return Err(Error::Topology(format!("m = {m} is not a power of two")));
        }
        if particles_per_pe == 0 {
            return Err(Error::Topology("M must be at least 1".into()));
        }
        Ok(Self {
            m,
            particles_per_pe,
        })
    }

    /// Number of PEs (islands).
    pub fn num_pes(&self) -> usize {
        self.m
    }

    /// Particles per PE.
    pub fn island_size(&self) -> usize {
        self.particles_per_pe
    }

    /// Total particle count N = m * M.
    pub fn total_particles(&self) -> usize {
        self.m * self.particles_per_pe
    }

    /// Stage count S = log2(m).
    pub fn stages(&self) -> usize {
        self.m.trailing_zeros() as usize
    }
}

/// The stage-s partner of PE `i` (both 1-based): ((i-1) XOR 2^(s-1)) + 1.
pub fn partner(i: usize, s: usize) -> usize {
    ((i - 1) ^ (1 << (s - 1))) + 1
}

/// For each stage s in 1..=S, the m/2 PE pairs (l, r) with l < r, 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSchedule {
    topology: Topology,
    stages: Vec<Vec<(usize, usize)>>,
}

impl PairSchedule {
    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Pairs of stage `s` (1-based), ordered by left index.
    pub fn stage(&self, s: usize) -> &[(usize, usize)] {
        &self.stages[s - 1]
    }

    /// Text dump, one line per stage, pairs as "(l,r)".
    pub fn dump_text(&self) -> String {
        let mut out = String::new();
        for stage in &self.stages {
            let line: Vec<String> = stage.iter().map(|(l, r)| format!("({l},{r})")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Build the butterfly schedule from the closed-form left/right index
/// sequences: at stage s, l = 2^s (i-1) + (j-1) + 1 and r = l + 2^(s-1)
/// for i in 1..=2^(S-s), j in 1..=2^(s-1).
pub fn build_schedule(topology: Topology) -> PairSchedule {
    let s_max = topology.stages();
    let mut stages = Vec::with_capacity(s_max);
    for s in 1..=s_max {
        let half = 1usize << (s - 1);
        let groups = 1usize << (s_max - s);
        let mut pairs = Vec::with_capacity(topology.num_pes() / 2);
        for i in 1..=groups {
            for j in 1..=half {
                let l = (1 << s) * (i - 1) + (j - 1) + 1;
                pairs.push((l, l + half));
            }
        }
        pairs.sort_unstable();
        stages.push(pairs);
    }
    PairSchedule { topology, stages }
}

/// Small dense matrix, just enough for the structural tests.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// The all-ones matrix of size n scaled by 1/n.
    pub fn ones_over(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            data: vec![1.0 / n as f64; n * n],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn kron(&self, other: &Self) -> Self {
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        let mut out = Self::zeros(rows, cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self.get(i, j);
                if a == 0.0 {
                    continue;
                }
                for k in 0..other.rows {
                    for l in 0..other.cols {
                        out.data[(i * other.rows + k) * cols + (j * other.cols + l)] =
                            a * other.get(k, l);
                    }
                }
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }
}

const MATERIALIZE_GUARD: usize = 4096;

fn check_stage(topology: Topology, s: usize) -> Result<()> {
    if s == 0 || s > topology.stages() {
        return Err(Error::Topology(format!(
            "stage {s} out of range 1..={}",
            topology.stages()
        )));
    }
    Ok(())
}

/// The N x N stage matrix I_{2^(S-s)} (x) 1_{1/2} (x) I_{2^(s-1)} (x) 1_{1/M},
/// entries in {0, 1/(2M)}. Guarded to N <= 4096; this is a test artifact.
pub fn materialize_interaction(topology: Topology, s: usize) -> Result<DenseMat> {
    check_stage(topology, s)?;
    let n = topology.total_particles();
    if n > MATERIALIZE_GUARD {
        return Err(Error::Guard(format!(
            "N = {n} exceeds the materialisation limit {MATERIALIZE_GUARD}"
        )));
    }
    let island = materialize_island_interaction(topology, s)?;
    Ok(island.kron(&DenseMat::ones_over(topology.island_size())))
}

/// The m x m island-level stage matrix I_{2^(S-s)} (x) 1_{1/2} (x) I_{2^(s-1)}.
pub fn materialize_island_interaction(topology: Topology, s: usize) -> Result<DenseMat> {
    check_stage(topology, s)?;
    if topology.num_pes() > MATERIALIZE_GUARD {
        return Err(Error::Guard(format!(
            "m = {} exceeds the materialisation limit {MATERIALIZE_GUARD}",
            topology.num_pes()
        )));
    }
    let s_max = topology.stages();
    let left = DenseMat::identity(1 << (s_max - s));
    let mid = DenseMat::ones_over(2);
    let right = DenseMat::identity(1 << (s - 1));
    Ok(left.kron(&mid).kron(&right))
}
