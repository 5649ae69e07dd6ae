//! Separable constraint-coupled QP data model and problem generators.
//!
//! Subproblem `i` minimizes `½ xᵢᵀ Pᵢ xᵢ + cᵢᵀ xᵢ` subject to `Aᵢ xᵢ ≤ bᵢ` and
//! `Eᵢ xᵢ = eᵢ`. The subproblems are joined by affine coupling rows
//! `Σᵢ Hᵢ xᵢ = d` and `Σᵢ Fᵢ xᵢ ≤ f`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Entries with magnitude at or below this count as structural zeros.
pub const STRUCTURAL_ZERO: f64 = 1e-14;

/// Default curvature floor added to generated Hessians.
pub const DEFAULT_CURVATURE_FLOOR: f64 = 1e-2;

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq)]
pub struct Subproblem {
    pub p: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub e_mat: DMatrix<f64>,
    pub e: DVector<f64>,
}

impl Subproblem {
    pub fn new(
        p: DMatrix<f64>,
        c: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        e_mat: DMatrix<f64>,
        e: DVector<f64>,
    ) -> Result<Self> {
        let sp = Subproblem {
            p,
            c,
            a,
            b,
            e_mat,
            e,
        };
        sp.check_dims()?;
        Ok(sp)
    }

    /// Subproblem with no local constraints.
    pub fn unconstrained(p: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        let n = c.len();
        Self::new(
            p,
            c,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DMatrix::zeros(0, n),
            DVector::zeros(0),
        )
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.b.len()
    }

    pub fn n_eq(&self) -> usize {
        self.e.len()
    }

    /// Size of the local KKT system `(x, λ_local, μ_local)`.
    pub fn kkt_dim(&self) -> usize {
        self.n() + self.n_ineq() + self.n_eq()
    }

    fn check_dims(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::InvalidDimensions(
                "subproblem with no variables".into(),
            ));
        }
        if self.p.shape() != (n, n) {
            return Err(Error::InvalidDimensions(format!(
                "P is {:?}, expected {n}x{n}",
                self.p.shape()
            )));
        }
        if self.a.shape() != (self.b.len(), n) {
            return Err(Error::InvalidDimensions(format!(
                "A is {:?}, expected {}x{n}",
                self.a.shape(),
                self.b.len()
            )));
        }
        if self.e_mat.shape() != (self.e.len(), n) {
            return Err(Error::InvalidDimensions(format!(
                "E is {:?}, expected {}x{n}",
                self.e_mat.shape(),
                self.e.len()
            )));
        }
        Ok(())
    }

    pub fn min_curvature(&self) -> f64 {
        crate::linalg::min_eigenvalue_sym(&self.p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingConstraints {
    pub h_blocks: Vec<DMatrix<f64>>,
    pub d: DVector<f64>,
    pub f_blocks: Vec<DMatrix<f64>>,
    pub f: DVector<f64>,
}

impl CouplingConstraints {
    pub fn none(sizes: &[usize]) -> Self {
        CouplingConstraints {
            h_blocks: sizes.iter().map(|&n| DMatrix::zeros(0, n)).collect(),
            d: DVector::zeros(0),
            f_blocks: sizes.iter().map(|&n| DMatrix::zeros(0, n)).collect(),
            f: DVector::zeros(0),
        }
    }

    pub fn n_eq(&self) -> usize {
        self.d.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.f.len()
    }

    /// Total number of coupling rows, equalities first.
    pub fn len(&self) -> usize {
        self.n_eq() + self.n_ineq()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stacked `[Hᵢ; Fᵢ]` block of subproblem `i`.
    pub fn stacked_block(&self, i: usize) -> DMatrix<f64> {
        let h = &self.h_blocks[i];
        let f = &self.f_blocks[i];
        let mut m = DMatrix::zeros(h.nrows() + f.nrows(), h.ncols());
        m.rows_mut(0, h.nrows()).copy_from(h);
        m.rows_mut(h.nrows(), f.nrows()).copy_from(f);
        m
    }

    /// Row `row` (equalities first) of subproblem `i`'s block.
    pub fn block_row(&self, i: usize, row: usize) -> DVector<f64> {
        if row < self.n_eq() {
            self.h_blocks[i].row(row).transpose()
        } else {
            self.f_blocks[i].row(row - self.n_eq()).transpose()
        }
    }

    /// Whether subproblem `i` has a structurally nonzero entry in coupling row `row`.
    pub fn touches(&self, i: usize, row: usize) -> bool {
        self.block_row(i, row)
            .iter()
            .any(|v| v.abs() > STRUCTURAL_ZERO)
    }
}

/// One parameterized model coefficient: `coefficient = scale · θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamEntry {
    pub index: usize,
    pub scale: f64,
}

impl ParamEntry {
    pub fn plain(index: usize) -> Self {
        ParamEntry { index, scale: 1.0 }
    }

    pub fn scaled(index: usize, scale: f64) -> Self {
        ParamEntry { index, scale }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalSelector {
    pub c: Vec<ParamEntry>,
    pub b: Vec<ParamEntry>,
    pub e: Vec<ParamEntry>,
}

impl LocalSelector {
    pub fn len(&self) -> usize {
        self.c.len() + self.b.len() + self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CouplingSelector {
    pub d: Vec<ParamEntry>,
    pub f: Vec<ParamEntry>,
}

impl CouplingSelector {
    pub fn len(&self) -> usize {
        self.d.len() + self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Which model coefficients make up `θ = [θ₁, …, θ_N, θ_c]`.
///
/// Within `θᵢ` the order is `c` entries, then `b`, then `e`; within `θ_c` it is
/// `d` then `f`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterMap {
    pub local: Vec<LocalSelector>,
    pub coupling: CouplingSelector,
}

impl ParameterMap {
    /// `θᵢ = (cᵢ, bᵢ)` for every subproblem and `θ_c = (d, f)`.
    pub fn default_for(subproblems: &[Subproblem], coupling: &CouplingConstraints) -> Self {
        let local = subproblems
            .iter()
            .map(|sp| LocalSelector {
                c: (0..sp.n()).map(ParamEntry::plain).collect(),
                b: (0..sp.n_ineq()).map(ParamEntry::plain).collect(),
                e: Vec::new(),
            })
            .collect();
        ParameterMap {
            local,
            coupling: CouplingSelector {
                d: (0..coupling.n_eq()).map(ParamEntry::plain).collect(),
                f: (0..coupling.n_ineq()).map(ParamEntry::plain).collect(),
            },
        }
    }

    pub fn local_dim(&self, i: usize) -> usize {
        self.local[i].len()
    }

    pub fn coupling_dim(&self) -> usize {
        self.coupling.len()
    }

    pub fn local_offset(&self, i: usize) -> usize {
        self.local[..i].iter().map(LocalSelector::len).sum()
    }

    pub fn coupling_offset(&self) -> usize {
        self.local.iter().map(LocalSelector::len).sum()
    }

    pub fn total_dim(&self) -> usize {
        self.coupling_offset() + self.coupling_dim()
    }

    fn check(&self, subproblems: &[Subproblem], coupling: &CouplingConstraints) -> Result<()> {
        if self.local.len() != subproblems.len() {
            return Err(Error::InvalidDimensions(format!(
                "parameter map has {} local selectors for {} subproblems",
                self.local.len(),
                subproblems.len()
            )));
        }
        fn check_group(entries: &[ParamEntry], len: usize, what: &str) -> Result<()> {
            let mut seen = vec![false; len];
            for e in entries {
                if e.index >= len {
                    return Err(Error::InvalidDimensions(format!(
                        "{what} selector index {} out of range {len}",
                        e.index
                    )));
                }
                if seen[e.index] {
                    return Err(Error::InvalidDimensions(format!(
                        "{what} entry {} selected twice",
                        e.index
                    )));
                }
                if !(e.scale.is_finite() && e.scale != 0.0) {
                    return Err(Error::InvalidDimensions(format!(
                        "{what} entry {} has invalid scale {}",
                        e.index, e.scale
                    )));
                }
                seen[e.index] = true;
            }
            Ok(())
        }
        for (sel, sp) in self.local.iter().zip(subproblems) {
            check_group(&sel.c, sp.n(), "c")?;
            check_group(&sel.b, sp.n_ineq(), "b")?;
            check_group(&sel.e, sp.n_eq(), "e")?;
        }
        check_group(&self.coupling.d, coupling.n_eq(), "d")?;
        check_group(&self.coupling.f, coupling.n_ineq(), "f")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub seed: Option<u64>,
    pub generator: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "doc::ProblemDoc", into = "doc::ProblemDoc")]
pub struct Problem {
    pub subproblems: Vec<Subproblem>,
    pub coupling: CouplingConstraints,
    pub params: ParameterMap,
    pub meta: Meta,
}

impl Problem {
    /// Assembles and validates a problem.
    pub fn new(
        subproblems: Vec<Subproblem>,
        coupling: CouplingConstraints,
        params: ParameterMap,
        meta: Meta,
    ) -> Result<Self> {
        let p = Problem {
            subproblems,
            coupling,
            params,
            meta,
        };
        p.validate()?;
        Ok(p)
    }

    /// Same as [`Problem::new`] with the default parameter map.
    pub fn with_default_params(
        subproblems: Vec<Subproblem>,
        coupling: CouplingConstraints,
        meta: Meta,
    ) -> Result<Self> {
        let params = ParameterMap::default_for(&subproblems, &coupling);
        Self::new(subproblems, coupling, params, meta)
    }

    /// Checks dimensions, the parameter map, and that every coupling row links at
    /// least two subproblems. Convexity is checked separately by
    /// [`Problem::min_curvature`].
    pub fn validate(&self) -> Result<()> {
        if self.subproblems.is_empty() {
            return Err(Error::InvalidDimensions(
                "problem has no subproblems".into(),
            ));
        }
        for sp in &self.subproblems {
            sp.check_dims()?;
        }
        let cp = &self.coupling;
        let n_sub = self.subproblems.len();
        if cp.h_blocks.len() != n_sub || cp.f_blocks.len() != n_sub {
            return Err(Error::InvalidDimensions(format!(
                "coupling has {}/{} blocks for {n_sub} subproblems",
                cp.h_blocks.len(),
                cp.f_blocks.len()
            )));
        }
        for (i, sp) in self.subproblems.iter().enumerate() {
            if cp.h_blocks[i].shape() != (cp.n_eq(), sp.n()) {
                return Err(Error::InvalidDimensions(format!(
                    "H block {i} is {:?}, expected {}x{}",
                    cp.h_blocks[i].shape(),
                    cp.n_eq(),
                    sp.n()
                )));
            }
            if cp.f_blocks[i].shape() != (cp.n_ineq(), sp.n()) {
                return Err(Error::InvalidDimensions(format!(
                    "F block {i} is {:?}, expected {}x{}",
                    cp.f_blocks[i].shape(),
                    cp.n_ineq(),
                    sp.n()
                )));
            }
        }
        for row in 0..cp.len() {
            let touching = (0..n_sub).filter(|&i| cp.touches(i, row)).count();
            if touching < 2 {
                return Err(Error::InvalidDimensions(format!(
                    "coupling row {row} touches {touching} subproblem(s); at least two required"
                )));
            }
        }
        self.params.check(&self.subproblems, &self.coupling)
    }

    pub fn n_subproblems(&self) -> usize {
        self.subproblems.len()
    }

    pub fn n_coupling(&self) -> usize {
        self.coupling.len()
    }

    pub fn n_total(&self) -> usize {
        self.subproblems.iter().map(Subproblem::n).sum()
    }

    /// Offset of `xᵢ` in the stacked primal vector.
    pub fn x_offset(&self, i: usize) -> usize {
        self.subproblems[..i].iter().map(Subproblem::n).sum()
    }

    pub fn theta_dim(&self) -> usize {
        self.params.total_dim()
    }

    /// Subproblems with a nonzero block in coupling row `row`, ascending.
    pub fn row_support(&self, row: usize) -> Vec<usize> {
        (0..self.n_subproblems())
            .filter(|&i| self.coupling.touches(i, row))
            .collect()
    }

    /// Coupling rows that subproblem `i` takes part in, ascending.
    pub fn rows_of(&self, i: usize) -> Vec<usize> {
        (0..self.n_coupling())
            .filter(|&r| self.coupling.touches(i, r))
            .collect()
    }

    /// Subproblem that carries the offset of coupling row `row` in the
    /// separable assembly: the lowest index touching the row.
    pub fn offset_owner(&self, row: usize) -> usize {
        self.row_support(row).first().copied().unwrap_or(0)
    }

    /// All equality normals stacked: local `Eᵢ` rows in subproblem order, then `H`.
    pub fn equality_matrix(&self) -> DMatrix<f64> {
        let n_eq: usize =
            self.subproblems.iter().map(|s| s.n_eq()).sum::<usize>() + self.coupling.n_eq();
        let mut m = DMatrix::zeros(n_eq, self.n_total());
        let mut r = 0;
        for (i, sp) in self.subproblems.iter().enumerate() {
            m.view_mut((r, self.x_offset(i)), (sp.n_eq(), sp.n()))
                .copy_from(&sp.e_mat);
            r += sp.n_eq();
        }
        for (i, h) in self.coupling.h_blocks.iter().enumerate() {
            m.view_mut((r, self.x_offset(i)), (h.nrows(), h.ncols()))
                .copy_from(h);
        }
        m
    }

    pub fn min_curvature(&self) -> f64 {
        self.subproblems
            .iter()
            .map(Subproblem::min_curvature)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn theta_read(&self) -> DVector<f64> {
        let mut theta = Vec::with_capacity(self.theta_dim());
        for (sel, sp) in self.params.local.iter().zip(&self.subproblems) {
            theta.extend(sel.c.iter().map(|e| sp.c[e.index] / e.scale));
            theta.extend(sel.b.iter().map(|e| sp.b[e.index] / e.scale));
            theta.extend(sel.e.iter().map(|e| sp.e[e.index] / e.scale));
        }
        let cs = &self.params.coupling;
        theta.extend(cs.d.iter().map(|e| self.coupling.d[e.index] / e.scale));
        theta.extend(cs.f.iter().map(|e| self.coupling.f[e.index] / e.scale));
        DVector::from_vec(theta)
    }

    pub fn theta_write(&self, theta: &DVector<f64>) -> Result<Problem> {
        if theta.len() != self.theta_dim() {
            return Err(Error::LengthMismatch {
                expected: self.theta_dim(),
                got: theta.len(),
            });
        }
        let mut out = self.clone();
        let mut k = 0;
        for (sel, sp) in self.params.local.iter().zip(out.subproblems.iter_mut()) {
            for e in &sel.c {
                sp.c[e.index] = e.scale * theta[k];
                k += 1;
            }
            for e in &sel.b {
                sp.b[e.index] = e.scale * theta[k];
                k += 1;
            }
            for e in &sel.e {
                sp.e[e.index] = e.scale * theta[k];
                k += 1;
            }
        }
        for e in &self.params.coupling.d {
            out.coupling.d[e.index] = e.scale * theta[k];
            k += 1;
        }
        for e in &self.params.coupling.f {
            out.coupling.f[e.index] = e.scale * theta[k];
            k += 1;
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Sparsity pattern of the coupling rows of a random instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    /// Every row touches every subproblem.
    Dense,
    /// Row `j` links subproblems `j mod N` and `(j+1) mod N`; wraps into a ring once `Λ ≥ N`.
    Chain,
    /// Row `j` touches a window of `B + 1` consecutive subproblems.
    Banded(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomConfig {
    pub n_sub: usize,
    pub n: usize,
    pub l: usize,
    pub k: usize,
    pub lambda_h: usize,
    pub lambda_f: usize,
    pub structure: Structure,
    pub seed: u64,
    pub curvature_floor: f64,
    /// Scale of coupling coefficients on every support member except the
    /// first; values below 1 weaken the interaction between neighbors.
    #[serde(default = "unit_weight")]
    pub neighbor_weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl RandomConfig {
    pub fn new(
        n_sub: usize,
        n: usize,
        l: usize,
        k: usize,
        lambda_h: usize,
        lambda_f: usize,
        structure: Structure,
        seed: u64,
    ) -> Self {
        RandomConfig {
            n_sub,
            n,
            l,
            k,
            lambda_h,
            lambda_f,
            structure,
            seed,
            curvature_floor: DEFAULT_CURVATURE_FLOOR,
            neighbor_weight: 1.0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Subproblem supports of each coupling row for a given structure.
pub fn row_supports(n_sub: usize, rows: usize, structure: Structure) -> Result<Vec<Vec<usize>>> {
    if rows == 0 {
        return Ok(Vec::new());
    }
    if n_sub < 2 {
        return Err(Error::InvalidDimensions(
            "coupling rows need at least two subproblems".into(),
        ));
    }
    let supports = match structure {
        Structure::Dense => (0..rows).map(|_| (0..n_sub).collect()).collect(),
        Structure::Chain => (0..rows)
            .map(|j| {
                let a = j % n_sub;
                let b = (j + 1) % n_sub;
                let mut s = vec![a, b];
                s.sort_unstable();
                s
            })
            .collect(),
        Structure::Banded(bw) => {
            let width = bw + 1;
            if bw == 0 || width > n_sub {
                return Err(Error::InvalidDimensions(format!(
                    "banded structure with B = {bw} needs 1 <= B < N = {n_sub}"
                )));
            }
            (0..rows)
                .map(|j| {
                    let start = (j * n_sub / rows).min(n_sub - width);
                    (start..start + width).collect()
                })
                .collect()
        }
    };
    Ok(supports)
}

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn normal_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn uniform_vector(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let l = normal_matrix(rng, n, n, 1.0 / (n as f64).sqrt());
    let mut p = &l * l.transpose();
    for i in 0..n {
        p[(i, i)] += floor;
    }
    // exact symmetry
    (&p + p.transpose()) * 0.5
}

/// Random feasible instance with explicit coupling-row supports.
///
/// An interior point `x̂` is drawn first; `b`, `e`, `d` and `f` are derived from
/// it so that `x̂` is strictly feasible for every inequality.
pub fn generate_with_supports(
    sizes: &[(usize, usize, usize)],
    eq_supports: &[Vec<usize>],
    ineq_supports: &[Vec<usize>],
    curvature_floor: f64,
    neighbor_weight: f64,
    seed: u64,
) -> Result<Problem> {
    let n_sub = sizes.len();
    if n_sub == 0 {
        return Err(Error::InvalidDimensions("N must be at least 1".into()));
    }
    for &(n, _, k) in sizes {
        if n == 0 {
            return Err(Error::InvalidDimensions("n must be at least 1".into()));
        }
        if k >= n {
            return Err(Error::InvalidDimensions(format!(
                "k = {k} local equalities leave no freedom in a subproblem with n = {n}"
            )));
        }
    }
    for s in eq_supports.iter().chain(ineq_supports) {
        if s.len() < 2 || s.iter().any(|&i| i >= n_sub) {
            return Err(Error::InvalidDimensions(format!(
                "coupling row support {s:?} must name at least two of {n_sub} subproblems"
            )));
        }
    }
    if !(curvature_floor > 0.0) {
        return Err(Error::InvalidDimensions(
            "curvature floor must be positive".into(),
        ));
    }
    if !(neighbor_weight > 0.0 && neighbor_weight.is_finite()) {
        return Err(Error::InvalidDimensions(
            "neighbor weight must be positive".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subproblems = Vec::with_capacity(n_sub);
    let mut x_hat = Vec::with_capacity(n_sub);
    for &(n, l, k) in sizes {
        let p = random_spd(&mut rng, n, curvature_floor);
        let c = normal_vector(&mut rng, n, 2.0);
        let a = normal_matrix(&mut rng, l, n, 1.0);
        let e_mat = normal_matrix(&mut rng, k, n, 1.0);
        let xh = normal_vector(&mut rng, n, 1.0);
        let b = &a * &xh + uniform_vector(&mut rng, l, 0.1, 1.0);
        let e = &e_mat * &xh;
        subproblems.push(Subproblem {
            p,
            c,
            a,
            b,
            e_mat,
            e,
        });
        x_hat.push(xh);
    }

    let lambda_h = eq_supports.len();
    let lambda_f = ineq_supports.len();
    let mut h_blocks: Vec<DMatrix<f64>> = sizes
        .iter()
        .map(|&(n, _, _)| DMatrix::zeros(lambda_h, n))
        .collect();
    let mut f_blocks: Vec<DMatrix<f64>> = sizes
        .iter()
        .map(|&(n, _, _)| DMatrix::zeros(lambda_f, n))
        .collect();
    for (row, support) in eq_supports.iter().enumerate() {
        for (pos, &i) in support.iter().enumerate() {
            let scale = if pos == 0 { 1.0 } else { neighbor_weight };
            let v = normal_vector(&mut rng, sizes[i].0, scale);
            h_blocks[i].row_mut(row).copy_from(&v.transpose());
        }
    }
    for (row, support) in ineq_supports.iter().enumerate() {
        for (pos, &i) in support.iter().enumerate() {
            let scale = if pos == 0 { 1.0 } else { neighbor_weight };
            let v = normal_vector(&mut rng, sizes[i].0, scale);
            f_blocks[i].row_mut(row).copy_from(&v.transpose());
        }
    }
    let mut d = DVector::zeros(lambda_h);
    let mut f = DVector::zeros(lambda_f);
    for i in 0..n_sub {
        d += &h_blocks[i] * &x_hat[i];
        f += &f_blocks[i] * &x_hat[i];
    }
    f += uniform_vector(&mut rng, lambda_f, 0.1, 1.0);

    let coupling = CouplingConstraints {
        h_blocks,
        d,
        f_blocks,
        f,
    };
    let problem = Problem::with_default_params(
        subproblems,
        coupling,
        Meta {
            seed: Some(seed),
            generator: "random".into(),
            version: FORMAT_VERSION.into(),
        },
    )?;
    let eq = problem.equality_matrix();
    if linalg::min_singular_value(&eq) <= 1e-9 {
        return Err(Error::InvalidDimensions(format!(
            "{} equality rows over {} variables are not linearly independent",
            eq.nrows(),
            eq.ncols()
        )));
    }
    Ok(problem)
}

/// Random weakly-coupled instance with uniform subproblem sizes.
pub fn generate_random(cfg: &RandomConfig) -> Result<Problem> {
    if cfg.n_sub == 0 {
        return Err(Error::InvalidDimensions("N must be at least 1".into()));
    }
    let total = cfg.lambda_h + cfg.lambda_f;
    let supports = row_supports(cfg.n_sub, total, cfg.structure)?;
    let (eq, ineq) = supports.split_at(cfg.lambda_h);
    let sizes = vec![(cfg.n, cfg.l, cfg.k); cfg.n_sub];
    let mut p = generate_with_supports(
        &sizes,
        eq,
        ineq,
        cfg.curvature_floor,
        cfg.neighbor_weight,
        cfg.seed,
    )?;
    p.meta.generator = format!("random:{:?}", cfg.structure).to_lowercase();
    Ok(p)
}

/// Time-coupled chain: step `t` is linked to step `t+1` by one balance row
/// `uₜᵀ xₜ − buffer · wₜᵀ xₜ₊₁ = dₜ`.
pub fn generate_chain(horizon: usize, n: usize, buffer: f64, seed: u64) -> Result<Problem> {
    generate_chain_with_floor(horizon, n, buffer, DEFAULT_CURVATURE_FLOOR, seed)
}

/// Shape knobs for [`generate_chain_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainOptions {
    pub curvature_floor: f64,
    /// Scale the balance-row vectors to unit length.
    pub unit_carry: bool,
    /// Give each step `n / 2` local inequalities.
    pub local_inequalities: bool,
}

impl Default for ChainOptions {
    fn default() -> Self {
        ChainOptions {
            curvature_floor: DEFAULT_CURVATURE_FLOOR,
            unit_carry: false,
            local_inequalities: true,
        }
    }
}

/// [`generate_chain`] with an explicit curvature floor on every `Pₜ`.
pub fn generate_chain_with_floor(
    horizon: usize,
    n: usize,
    buffer: f64,
    curvature_floor: f64,
    seed: u64,
) -> Result<Problem> {
    let opts = ChainOptions {
        curvature_floor,
        ..ChainOptions::default()
    };
    generate_chain_with(horizon, n, buffer, &opts, seed)
}

/// Chain generator with every shape knob exposed.
pub fn generate_chain_with(
    horizon: usize,
    n: usize,
    buffer: f64,
    opts: &ChainOptions,
    seed: u64,
) -> Result<Problem> {
    let curvature_floor = opts.curvature_floor;
    if horizon < 2 {
        return Err(Error::InvalidDimensions(
            "chain horizon must be at least 2".into(),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidDimensions("n must be at least 1".into()));
    }
    if !(buffer > 0.0 && buffer <= 1.0) {
        return Err(Error::InvalidDimensions(format!(
            "buffer {buffer} outside (0, 1]"
        )));
    }
    if !(curvature_floor > 0.0) {
        return Err(Error::InvalidDimensions(
            "curvature floor must be positive".into(),
        ));
    }
    let l = if opts.local_inequalities { n / 2 } else { 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subproblems = Vec::with_capacity(horizon);
    let mut x_hat = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let p = random_spd(&mut rng, n, curvature_floor);
        let c = normal_vector(&mut rng, n, 2.0);
        let a = normal_matrix(&mut rng, l, n, 1.0);
        let xh = normal_vector(&mut rng, n, 1.0);
        let b = &a * &xh + uniform_vector(&mut rng, l, 0.1, 1.0);
        subproblems.push(Subproblem {
            p,
            c,
            a,
            b,
            e_mat: DMatrix::zeros(0, n),
            e: DVector::zeros(0),
        });
        x_hat.push(xh);
    }
    let rows = horizon - 1;
    let mut h_blocks: Vec<DMatrix<f64>> = (0..horizon).map(|_| DMatrix::zeros(rows, n)).collect();
    for j in 0..rows {
        let mut carry_out = normal_vector(&mut rng, n, 1.0);
        let mut carry_in = normal_vector(&mut rng, n, 1.0);
        if opts.unit_carry {
            carry_out.normalize_mut();
            carry_in.normalize_mut();
        }
        carry_in *= -buffer;
        h_blocks[j].row_mut(j).copy_from(&carry_out.transpose());
        h_blocks[j + 1].row_mut(j).copy_from(&carry_in.transpose());
    }
    let mut d = DVector::zeros(rows);
    for t in 0..horizon {
        d += &h_blocks[t] * &x_hat[t];
    }
    let coupling = CouplingConstraints {
        h_blocks,
        d,
        f_blocks: (0..horizon).map(|_| DMatrix::zeros(0, n)).collect(),
        f: DVector::zeros(0),
    };
    Problem::with_default_params(
        subproblems,
        coupling,
        Meta {
            seed: Some(seed),
            generator: "chain".into(),
            version: FORMAT_VERSION.into(),
        },
    )
}

/// Small hand-built instances with known closed forms.
pub mod fixtures {
    use super::*;

    fn meta(name: &str) -> Meta {
        Meta {
            seed: None,
            generator: name.into(),
            version: FORMAT_VERSION.into(),
        }
    }

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    /// `min Σ ½xᵢ² − θᵢxᵢ  s.t.  x₁ + x₂ = d` with `θ = (θ₁, θ₂, d)`.
    pub fn consensus(theta1: f64, theta2: f64, d: f64) -> Problem {
        let sub =
            |t: f64| Subproblem::unconstrained(scalar(1.0), DVector::from_element(1, -t)).unwrap();
        let coupling = CouplingConstraints {
            h_blocks: vec![scalar(1.0), scalar(1.0)],
            d: DVector::from_element(1, d),
            f_blocks: vec![DMatrix::zeros(0, 1), DMatrix::zeros(0, 1)],
            f: DVector::zeros(0),
        };
        let params = ParameterMap {
            local: vec![
                LocalSelector {
                    c: vec![ParamEntry::scaled(0, -1.0)],
                    ..Default::default()
                },
                LocalSelector {
                    c: vec![ParamEntry::scaled(0, -1.0)],
                    ..Default::default()
                },
            ],
            coupling: CouplingSelector {
                d: vec![ParamEntry::plain(0)],
                f: Vec::new(),
            },
        };
        Problem::new(
            vec![sub(theta1), sub(theta2)],
            coupling,
            params,
            meta("consensus"),
        )
        .unwrap()
    }

    /// Single-subproblem `min ½x² − θx  s.t.  x ≤ b` with `θ = (θ, b)`.
    pub fn scalar_box(theta: f64, bound: f64) -> Problem {
        let sp = Subproblem::new(
            scalar(1.0),
            DVector::from_element(1, -theta),
            scalar(1.0),
            DVector::from_element(1, bound),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
        )
        .unwrap();
        let params = ParameterMap {
            local: vec![LocalSelector {
                c: vec![ParamEntry::scaled(0, -1.0)],
                b: vec![ParamEntry::plain(0)],
                e: Vec::new(),
            }],
            coupling: CouplingSelector::default(),
        };
        Problem::new(
            vec![sp],
            CouplingConstraints::none(&[1]),
            params,
            meta("scalar_box"),
        )
        .unwrap()
    }

    /// `min ½(x₁ − θ)²  s.t.  x₁ = x₂`: globally well posed, but the second
    /// subproblem has zero curvature.
    pub fn flat_second_subproblem(theta: f64) -> Problem {
        let s1 = Subproblem::unconstrained(scalar(1.0), DVector::from_element(1, -theta)).unwrap();
        let s2 = Subproblem::unconstrained(scalar(0.0), DVector::zeros(1)).unwrap();
        let coupling = CouplingConstraints {
            h_blocks: vec![scalar(1.0), scalar(-1.0)],
            d: DVector::zeros(1),
            f_blocks: vec![DMatrix::zeros(0, 1), DMatrix::zeros(0, 1)],
            f: DVector::zeros(0),
        };
        let params = ParameterMap {
            local: vec![
                LocalSelector {
                    c: vec![ParamEntry::scaled(0, -1.0)],
                    ..Default::default()
                },
                LocalSelector::default(),
            ],
            coupling: CouplingSelector::default(),
        };
        Problem::new(
            vec![s1, s2],
            coupling,
            params,
            meta("flat_second_subproblem"),
        )
        .unwrap()
    }

    /// Four subproblems and three coupling rows: subproblem 0 touches row 0,
    /// subproblem 1 touches rows 0, 1, 2, subproblems 2 and 3 touch rows 1 and 2.
    pub fn hub(seed: u64) -> Problem {
        let sizes = vec![(2, 0, 0); 4];
        let eq = vec![vec![0, 1], vec![1, 2], vec![1, 3]];
        generate_with_supports(&sizes, &eq, &[], DEFAULT_CURVATURE_FLOOR, 1.0, seed).unwrap()
    }
}

mod doc {
    //! JSON document layout: matrices are row-major nested arrays.

    use super::*;

    #[derive(Serialize, Deserialize, Clone)]
    pub struct SubproblemDoc {
        #[serde(rename = "P")]
        pub p: Vec<Vec<f64>>,
        pub c: Vec<f64>,
        #[serde(rename = "A")]
        pub a: Vec<Vec<f64>>,
        pub b: Vec<f64>,
        #[serde(rename = "E")]
        pub e_mat: Vec<Vec<f64>>,
        pub e: Vec<f64>,
    }

    #[derive(Serialize, Deserialize, Clone)]
    pub struct CouplingDoc {
        #[serde(rename = "H_blocks")]
        pub h_blocks: Vec<Vec<Vec<f64>>>,
        pub d: Vec<f64>,
        #[serde(rename = "F_blocks")]
        pub f_blocks: Vec<Vec<Vec<f64>>>,
        pub f: Vec<f64>,
    }

    /// A plain index, or an index with a non-unit scale.
    #[derive(Serialize, Deserialize, Clone)]
    #[serde(untagged)]
    pub enum EntryDoc {
        Index(usize),
        Scaled { index: usize, scale: f64 },
    }

    #[derive(Serialize, Deserialize, Clone, Default)]
    pub struct LocalDoc {
        #[serde(default)]
        pub c: Vec<EntryDoc>,
        #[serde(default)]
        pub b: Vec<EntryDoc>,
        #[serde(default)]
        pub e: Vec<EntryDoc>,
    }

    #[derive(Serialize, Deserialize, Clone, Default)]
    pub struct CouplingParamsDoc {
        #[serde(default)]
        pub d: Vec<EntryDoc>,
        #[serde(default)]
        pub f: Vec<EntryDoc>,
    }

    #[derive(Serialize, Deserialize, Clone)]
    pub struct ParamsDoc {
        pub local: Vec<LocalDoc>,
        pub coupling: CouplingParamsDoc,
    }

    #[derive(Serialize, Deserialize, Clone)]
    pub struct ProblemDoc {
        pub subproblems: Vec<SubproblemDoc>,
        pub coupling: CouplingDoc,
        /// Absent means the default map.
        #[serde(default)]
        pub params: Option<ParamsDoc>,
        #[serde(default)]
        pub meta: Meta,
    }

    pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
        if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
            return Err(Error::InvalidDimensions(format!(
                "{what} row has {} entries, expected {ncols}",
                bad.len()
            )));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }

    fn entry_to_doc(e: &ParamEntry) -> EntryDoc {
        if e.scale == 1.0 {
            EntryDoc::Index(e.index)
        } else {
            EntryDoc::Scaled {
                index: e.index,
                scale: e.scale,
            }
        }
    }

    fn entry_from_doc(e: &EntryDoc) -> ParamEntry {
        match *e {
            EntryDoc::Index(index) => ParamEntry::plain(index),
            EntryDoc::Scaled { index, scale } => ParamEntry::scaled(index, scale),
        }
    }

    fn entries(v: &[ParamEntry]) -> Vec<EntryDoc> {
        v.iter().map(entry_to_doc).collect()
    }

    fn from_entries(v: &[EntryDoc]) -> Vec<ParamEntry> {
        v.iter().map(entry_from_doc).collect()
    }

    impl From<Problem> for ProblemDoc {
        fn from(p: Problem) -> Self {
            ProblemDoc {
                subproblems: p
                    .subproblems
                    .iter()
                    .map(|sp| SubproblemDoc {
                        p: rows_of(&sp.p),
                        c: sp.c.iter().copied().collect(),
                        a: rows_of(&sp.a),
                        b: sp.b.iter().copied().collect(),
                        e_mat: rows_of(&sp.e_mat),
                        e: sp.e.iter().copied().collect(),
                    })
                    .collect(),
                coupling: CouplingDoc {
                    h_blocks: p.coupling.h_blocks.iter().map(rows_of).collect(),
                    d: p.coupling.d.iter().copied().collect(),
                    f_blocks: p.coupling.f_blocks.iter().map(rows_of).collect(),
                    f: p.coupling.f.iter().copied().collect(),
                },
                params: Some(ParamsDoc {
                    local: p
                        .params
                        .local
                        .iter()
                        .map(|s| LocalDoc {
                            c: entries(&s.c),
                            b: entries(&s.b),
                            e: entries(&s.e),
                        })
                        .collect(),
                    coupling: CouplingParamsDoc {
                        d: entries(&p.params.coupling.d),
                        f: entries(&p.params.coupling.f),
                    },
                }),
                meta: p.meta,
            }
        }
    }

    impl TryFrom<ProblemDoc> for Problem {
        type Error = Error;

        fn try_from(doc: ProblemDoc) -> Result<Self> {
            let mut subproblems = Vec::with_capacity(doc.subproblems.len());
            for (i, s) in doc.subproblems.iter().enumerate() {
                let n = s.c.len();
                subproblems.push(Subproblem::new(
                    matrix_from_rows(&s.p, n, &format!("P[{i}]"))?,
                    DVector::from_vec(s.c.clone()),
                    matrix_from_rows(&s.a, n, &format!("A[{i}]"))?,
                    DVector::from_vec(s.b.clone()),
                    matrix_from_rows(&s.e_mat, n, &format!("E[{i}]"))?,
                    DVector::from_vec(s.e.clone()),
                )?);
            }
            let nblocks = subproblems.len();
            if doc.coupling.h_blocks.len() != nblocks || doc.coupling.f_blocks.len() != nblocks {
                return Err(Error::InvalidDimensions(
                    "coupling block count does not match subproblem count".into(),
                ));
            }
            let h_blocks = doc
                .coupling
                .h_blocks
                .iter()
                .zip(&subproblems)
                .enumerate()
                .map(|(i, (rows, sp))| matrix_from_rows(rows, sp.n(), &format!("H[{i}]")))
                .collect::<Result<Vec<_>>>()?;
            let f_blocks = doc
                .coupling
                .f_blocks
                .iter()
                .zip(&subproblems)
                .enumerate()
                .map(|(i, (rows, sp))| matrix_from_rows(rows, sp.n(), &format!("F[{i}]")))
                .collect::<Result<Vec<_>>>()?;
            let coupling = CouplingConstraints {
                h_blocks,
                d: DVector::from_vec(doc.coupling.d.clone()),
                f_blocks,
                f: DVector::from_vec(doc.coupling.f.clone()),
            };
            let params = match doc.params {
                Some(pd) => ParameterMap {
                    local: pd
                        .local
                        .iter()
                        .map(|l| LocalSelector {
                            c: from_entries(&l.c),
                            b: from_entries(&l.b),
                            e: from_entries(&l.e),
                        })
                        .collect(),
                    coupling: CouplingSelector {
                        d: from_entries(&pd.coupling.d),
                        f: from_entries(&pd.coupling.f),
                    },
                },
                None => ParameterMap::default_for(&subproblems, &coupling),
            };
            Problem::new(subproblems, coupling, params, doc.meta)
        }
    }
}
