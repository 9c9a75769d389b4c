//! Lattices `Λ_k = Z e_1 + ⋯ + Z e_k`, their sup-norm shells, pin
//! characters and the deck groups of the Möbius-type and Klein-type
//! quotients of `R^n`.

use std::ops::Add;

use crate::error::{Error, Result};

/// Integer lattice point `m_1 e_1 + ⋯ + m_k e_k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LatticeVector(pub Vec<i64>);

impl LatticeVector {
    pub fn zeros(rank: usize) -> Self {
        Self(vec![0; rank])
    }

    /// Generator `e_index` (0-based) of a rank-`rank` lattice.
    pub fn unit(rank: usize, index: usize) -> Self {
        let mut coords = vec![0; rank];
        coords[index] = 1;
        Self(coords)
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn sup_norm(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }
}

impl Add for &LatticeVector {
    type Output = LatticeVector;

    fn add(self, rhs: &LatticeVector) -> LatticeVector {
        assert_eq!(self.rank(), rhs.rank(), "lattice rank mismatch");
        LatticeVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl From<Vec<i64>> for LatticeVector {
    fn from(coords: Vec<i64>) -> Self {
        Self(coords)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifoldKind {
    MobiusStrip,
    KleinBottle,
}

/// How the Möbius deck group decides whether a translation flips `x_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignRule {
    /// `(−1)^{m_1+⋯+m_k}`: a character of `Λ_k`, so the deck maps form a group.
    #[default]
    Parity,
    /// `+1` iff `v ∈ 2Λ_k`. Kept for comparison only; it is not
    /// multiplicative for `k >= 2`.
    EvenSublattice,
}

/// Which quotient of `R^n` is meant, and the rank of its translation lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifoldSpec {
    kind: ManifoldKind,
    n: usize,
    k: usize,
    sign_rule: SignRule,
}

impl ManifoldSpec {
    /// `M_k^-`: translations by `Λ_k` in the first `k` coordinates, flipping `x_n`.
    pub fn mobius(n: usize, k: usize) -> Result<Self> {
        if n < 2 || k < 1 || k > n - 1 {
            return Err(Error::InvalidParameter(format!(
                "Moebius strip needs n >= 2 and 1 <= k <= n-1, got n={n}, k={k}"
            )));
        }
        Ok(Self { kind: ManifoldKind::MobiusStrip, n, k, sign_rule: SignRule::Parity })
    }

    /// `K_n`: full rank lattice, unit steps in `x_n` act by odd-offset reflection.
    pub fn klein(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("Klein bottle needs n >= 2, got {n}")));
        }
        Ok(Self { kind: ManifoldKind::KleinBottle, n, k: n, sign_rule: SignRule::Parity })
    }

    pub fn with_sign_rule(mut self, rule: SignRule) -> Self {
        self.sign_rule = rule;
        self
    }

    pub fn kind(&self) -> ManifoldKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sign_rule(&self) -> SignRule {
        self.sign_rule
    }

    pub(crate) fn flip_sign(&self, v: &[i64]) -> f64 {
        match self.sign_rule {
            SignRule::Parity => parity_sign(v.iter().sum()),
            SignRule::EvenSublattice => {
                if v.iter().all(|c| c % 2 == 0) {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    fn check_rank(&self, v: &LatticeVector) -> Result<()> {
        if v.rank() != self.k {
            return Err(Error::RankMismatch { expected: self.k, got: v.rank() });
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::RankMismatch { expected: self.n, got: x.len() });
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn parity_sign(sum: i64) -> f64 {
    if sum.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `sgn(v) = (−1)^{m_1+⋯+m_k}`.
pub fn sign_of(v: &LatticeVector) -> i32 {
    parity_sign(v.0.iter().sum()) as i32
}

/// The even-sublattice rule `+1` iff `v ∈ 2Λ_k`.
pub fn sign_of_even_sublattice(v: &LatticeVector) -> i32 {
    if v.0.iter().all(|c| c % 2 == 0) {
        1
    } else {
        -1
    }
}

/// Character `χ_S(v) = (−1)^{Σ_{i∈S} m_i}` of `Λ_k`; one per pinor bundle.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct PinCharacter {
    twisted: Vec<usize>,
}

impl PinCharacter {
    pub fn trivial() -> Self {
        Self::default()
    }

    /// Character twisting the given 0-based generator indices.
    pub fn new(mut twisted: Vec<usize>, rank: usize) -> Result<Self> {
        twisted.sort_unstable();
        twisted.dedup();
        if let Some(&bad) = twisted.iter().find(|&&i| i >= rank) {
            return Err(Error::InvalidParameter(format!(
                "twisted generator index {bad} out of range for rank {rank}"
            )));
        }
        Ok(Self { twisted })
    }

    /// Contiguous choice `S = {e_1, …, e_l}` from the decomposition `Λ_l ⊕ Λ_{k−l}`.
    pub fn contiguous(l: usize) -> Self {
        Self { twisted: (0..l).collect() }
    }

    /// All `2^rank` characters, indexed by bitmask.
    pub fn all(rank: usize) -> Vec<Self> {
        (0..1usize << rank)
            .map(|mask| Self { twisted: (0..rank).filter(|i| mask >> i & 1 == 1).collect() })
            .collect()
    }

    pub fn twisted(&self) -> &[usize] {
        &self.twisted
    }

    pub fn is_trivial(&self) -> bool {
        self.twisted.is_empty()
    }

    #[inline]
    pub(crate) fn eval(&self, v: &[i64]) -> f64 {
        parity_sign(self.twisted.iter().map(|&i| v[i]).sum())
    }
}

pub fn character_value(chi: &PinCharacter, v: &LatticeVector) -> i32 {
    chi.eval(&v.0) as i32
}

/// Sup-norm shell `Ω_m = { v ∈ Λ_k : |v|_max = m }`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeShell {
    pub m: usize,
    pub points: Vec<LatticeVector>,
}

/// `#Ω_m = (2m+1)^k − (2m−1)^k`, and `1` for `m = 0`.
pub fn shell_count(k: usize, m: usize) -> usize {
    if m == 0 {
        1
    } else {
        (2 * m + 1).pow(k as u32) - (2 * m - 1).pow(k as u32)
    }
}

/// Enumerates `Ω_m` of `Λ_k` in lexicographic order.
pub fn shell(k: usize, m: usize) -> LatticeShell {
    let mut points = Vec::with_capacity(shell_count(k, m));
    for_each_shell_point(k, m, |v| points.push(LatticeVector(v.to_vec())));
    LatticeShell { m, points }
}

/// Calls `visit` on every point of `Ω_m`, lexicographically, without allocating per point.
pub(crate) fn for_each_shell_point(k: usize, m: usize, mut visit: impl FnMut(&[i64])) {
    assert!(k >= 1);
    let mut buf = vec![0i64; k];
    shell_rec(&mut buf, 0, m as i64, true, &mut visit);
}

// Fills buf[pos..]; `need_edge` means no earlier coordinate reached |c| = m yet.
fn shell_rec(buf: &mut [i64], pos: usize, m: i64, need_edge: bool, visit: &mut impl FnMut(&[i64])) {
    let k = buf.len();
    if pos == k - 1 {
        if need_edge {
            if m == 0 {
                buf[pos] = 0;
                visit(buf);
            } else {
                buf[pos] = -m;
                visit(buf);
                buf[pos] = m;
                visit(buf);
            }
        } else {
            for c in -m..=m {
                buf[pos] = c;
                visit(buf);
            }
        }
        return;
    }
    for c in -m..=m {
        buf[pos] = c;
        shell_rec(buf, pos + 1, m, need_edge && c.abs() != m, visit);
    }
}

/// Action of a deck transformation `v ∘ x`.
///
/// Möbius: `(x̲ + v̲, x_{k+1}, …, x_{n−1}, sgn(v) x_n)`.
/// Klein: `(x_1 + m_1, …, x_{n−1} + m_{n−1}, (−1)^{m_n} x_n + m_n)`.
pub fn deck_apply(spec: &ManifoldSpec, v: &LatticeVector, x: &[f64]) -> Result<Vec<f64>> {
    spec.check_rank(v)?;
    spec.check_point(x)?;
    let mut out = x.to_vec();
    apply_in_place(spec, &v.0, &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn apply_in_place(spec: &ManifoldSpec, v: &[i64], x: &mut [f64]) {
    let n = spec.n;
    match spec.kind {
        ManifoldKind::MobiusStrip => {
            for i in 0..spec.k {
                x[i] += v[i] as f64;
            }
            x[n - 1] *= spec.flip_sign(v);
        }
        ManifoldKind::KleinBottle => {
            for i in 0..n - 1 {
                x[i] += v[i] as f64;
            }
            let mn = v[n - 1];
            x[n - 1] = parity_sign(mn) * x[n - 1] + mn as f64;
        }
    }
}

/// Group law: the element `c` with `c ∘ x = a ∘ (b ∘ x)`.
///
/// Möbius elements compose additively. Klein elements compose as
/// `c̲ = a̲ + b̲`, `c_n = a_n + (−1)^{a_n} b_n` (infinite dihedral in `x_n`).
pub fn compose(spec: &ManifoldSpec, a: &LatticeVector, b: &LatticeVector) -> Result<LatticeVector> {
    spec.check_rank(a)?;
    spec.check_rank(b)?;
    let mut c = a + b;
    if spec.kind == ManifoldKind::KleinBottle {
        let last = spec.n - 1;
        c.0[last] = a.0[last] + parity_sign(a.0[last]) as i64 * b.0[last];
    }
    Ok(c)
}

/// Inverse group element.
pub fn inverse(spec: &ManifoldSpec, a: &LatticeVector) -> Result<LatticeVector> {
    spec.check_rank(a)?;
    let mut c = LatticeVector(a.0.iter().map(|m| -m).collect());
    if spec.kind == ManifoldKind::KleinBottle {
        let last = spec.n - 1;
        c.0[last] = -(parity_sign(a.0[last]) as i64) * a.0[last];
    }
    Ok(c)
}

/// Orbit representative in the fundamental cell.
///
/// Möbius: first `k` coordinates in `[0, 1)`, with `x_n` carried along by the
/// deck map. Klein: `[0, 1)^{n−1} × [0, 2)`, reached by integer translations
/// in `x̲` and even translations in `x_n`.
pub fn reduce_to_cell(spec: &ManifoldSpec, x: &[f64]) -> Result<Vec<f64>> {
    spec.check_point(x)?;
    let n = spec.n;
    let mut v = vec![0i64; spec.k];
    let reduced_len = match spec.kind {
        ManifoldKind::MobiusStrip => spec.k,
        ManifoldKind::KleinBottle => n - 1,
    };
    for i in 0..reduced_len {
        v[i] = -x[i].floor() as i64;
        if x[i] + v[i] as f64 >= 1.0 {
            v[i] -= 1;
        }
    }
    if spec.kind == ManifoldKind::KleinBottle {
        let mut shift = -2 * (x[n - 1] / 2.0).floor() as i64;
        if x[n - 1] + shift as f64 >= 2.0 {
            shift -= 2;
        }
        v[n - 1] = shift;
    }
    let mut out = x.to_vec();
    apply_in_place(spec, &v, &mut out);
    Ok(out)
}

/// Smallest Euclidean distance from `x` to a deck image `γ y` with
/// `|γ|_max <= radius`, after reducing both points to the cell.
pub fn orbit_distance(spec: &ManifoldSpec, x: &[f64], y: &[f64], radius: usize) -> Result<f64> {
    let x = reduce_to_cell(spec, x)?;
    let y = reduce_to_cell(spec, y)?;
    let mut best = f64::INFINITY;
    let mut img = vec![0.0; spec.n];
    for m in 0..=radius {
        for_each_shell_point(spec.k, m, |v| {
            img.copy_from_slice(&y);
            apply_in_place(spec, v, &mut img);
            let d2: f64 = x.iter().zip(&img).map(|(a, b)| (a - b) * (a - b)).sum();
            best = best.min(d2.sqrt());
        });
    }
    Ok(best)
}
