//! Galerkin matrices of the stability operator `L = Delta_f + 2 Rm*` and the
//! gauge operator `Delta_f + 1/2`, their spectra, and the splitting of the
//! tensor space into Lie-derivative and essential directions.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AxisymTensor, AxisymVector, Background, TensorGrid, VectorGrid};

/// Eigenvalues with `|lambda|` below this are neutral.
pub const NEUTRAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    /// `L` on symmetric 2-tensors.
    Stability,
    /// `Delta_f + 1/2` on vector fields.
    Gauge,
}

/// One zonal degree of an operator: `gram` and `stiffness` are the Gram and
/// `<e_i, A e_j>` matrices of that degree's basis, `action = gram^{-1} stiffness`.
#[derive(Debug, Clone)]
pub struct Block {
    pub degree: usize,
    pub gram: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub action: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub kind: OperatorKind,
    pub blocks: Vec<Block>,
}

impl DiscreteOperator {
    pub fn block(&self, degree: usize) -> Option<&Block> {
        self.blocks.iter().find(|b| b.degree == degree)
    }

    /// Largest `|S - S^T|` relative to `|S|` over all blocks.
    pub fn asymmetry(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| (&b.stiffness - b.stiffness.transpose()).amax() / b.stiffness.amax().max(1e-300))
            .fold(0.0, f64::max)
    }

    /// Apply to a tensor through the block matrices.
    pub fn apply_tensor(&self, h: &AxisymTensor) -> AxisymTensor {
        let mut out = AxisymTensor::zeros(h.l_max());
        for b in &self.blocks {
            let v = &b.action * DVector::from_vec(h.block(b.degree));
            out.set_block(b.degree, v.as_slice());
        }
        out
    }

    pub fn apply_vector(&self, x: &AxisymVector) -> AxisymVector {
        let mut out = AxisymVector::zeros(x.e.len() - 1);
        for b in &self.blocks {
            out.e[b.degree] = b.action[(0, 0)] * x.e[b.degree];
        }
        out
    }
}

/// Assemble `L` or the gauge operator by applying it to each basis element
/// and testing against the basis of the same degree.
pub fn assemble_operator(bg: &Background, kind: OperatorKind) -> Result<DiscreteOperator> {
    if !bg.is_shrinker() {
        return Err(Error::Capability(
            "degree-block assembly needs a constant potential".into(),
        ));
    }
    let mut blocks = Vec::new();
    match kind {
        OperatorKind::Stability => {
            for l in 0..=bg.l_max() {
                let els = bg.tensor_basis_grid(l);
                let m = els.len();
                let images: Vec<TensorGrid> =
                    (0..m).map(|j| bg.stability_operator(&unit_tensor(bg.l_max(), l, j))).collect();
                for img in &images {
                    let leak = off_degree(bg.analyze_tensor(img), l);
                    if leak > 1e-9 * (1.0 + img.max_abs()) {
                        return Err(Error::Numerical(format!("operator couples degree {l} to others ({leak:.2e})")));
                    }
                }
                let mut s = DMatrix::zeros(m, m);
                for i in 0..m {
                    for j in 0..m {
                        s[(i, j)] = bg.inner_tensor_grid(&els[i], &images[j]);
                    }
                }
                blocks.push(make_block(l, bg.tensor_gram(l).clone(), s)?);
            }
        }
        OperatorKind::Gauge => {
            for l in 1..=bg.l_max() {
                let mut x = AxisymVector::zeros(bg.l_max());
                x.e[l] = 1.0;
                let img = bg.vector_operator(&x);
                let s = bg.inner_vector_grid(&bg.vector_basis_grid(l), &img);
                let g = DMatrix::from_element(1, 1, bg.vector_gram(l));
                blocks.push(make_block(l, g, DMatrix::from_element(1, 1, s))?);
            }
        }
    }
    let op = DiscreteOperator { kind, blocks };
    let asym = op.asymmetry();
    if asym > 1e-10 {
        return Err(Error::Numerical(format!("assembled operator is not self-adjoint ({asym:.2e})")));
    }
    Ok(op)
}

fn make_block(degree: usize, gram: DMatrix<f64>, stiffness: DMatrix<f64>) -> Result<Block> {
    let chol = Cholesky::new(gram.clone())
        .ok_or_else(|| Error::Numerical(format!("singular Gram matrix in degree {degree}")))?;
    let action = chol.solve(&stiffness);
    Ok(Block { degree, gram, stiffness, action })
}

pub(crate) fn unit_tensor(l_max: usize, l: usize, j: usize) -> AxisymTensor {
    let mut h = AxisymTensor::zeros(l_max);
    if j == 0 {
        h.c[l] = 1.0;
    } else {
        h.d[l] = 1.0;
    }
    h
}

fn off_degree(h: AxisymTensor, l: usize) -> f64 {
    let mut m: f64 = 0.0;
    for k in 0..h.c.len() {
        if k != l {
            m = m.max(h.c[k].abs()).max(h.d[k].abs());
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Unstable,
    Neutral,
    Stable,
}

impl Sign {
    pub fn of(lambda: f64) -> Sign {
        if lambda > NEUTRAL_TOL {
            Sign::Unstable
        } else if lambda < -NEUTRAL_TOL {
            Sign::Stable
        } else {
            Sign::Neutral
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Sign::Unstable => "+",
            Sign::Neutral => "0",
            Sign::Stable => "-",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeClass {
    /// In the closure of `{L_X g}`.
    Lie,
    /// Orthogonal to every `L_X g`.
    Essential,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mode {
    pub eigenvalue: f64,
    pub degree: usize,
    /// Coordinates in the degree's Galerkin basis, unit `L^2_f` norm.
    pub coeffs: Vec<f64>,
    pub sign: Sign,
    /// `None` for the gauge operator.
    pub class: Option<ModeClass>,
    /// `|A e - lambda e|` measured with the grid operator.
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralDecomposition {
    pub kind: OperatorKind,
    pub l_max: usize,
    /// Descending by eigenvalue, then by degree, essential before Lie.
    pub modes: Vec<Mode>,
}

/// Subset of modes: `{all, +, -, 0, lie, ess}`, class/sign pairs such as
/// `ess+` or `lie-`, and eigenvalue floors `lie>=x` or `>=x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Selector {
    pub class: Option<ModeClass>,
    pub signs: Option<Vec<Sign>>,
    pub min_eigenvalue: Option<f64>,
}

impl Selector {
    pub const ALL: Selector = Selector { class: None, signs: None, min_eigenvalue: None };

    pub fn parse(text: &str) -> Result<Selector> {
        let t = text.trim().to_ascii_lowercase();
        let bad = || Error::UnknownSelector(text.to_string());
        let (class, rest) = if let Some(r) = t.strip_prefix("lie") {
            (Some(ModeClass::Lie), r)
        } else if let Some(r) = t.strip_prefix("ess") {
            (Some(ModeClass::Essential), r)
        } else if t == "all" {
            return Ok(Selector::ALL);
        } else {
            (None, t.as_str())
        };
        let mut sel = Selector { class, signs: None, min_eigenvalue: None };
        match rest {
            "" if class.is_some() => {}
            "+" => sel.signs = Some(vec![Sign::Unstable]),
            "-" => sel.signs = Some(vec![Sign::Stable]),
            "0" => sel.signs = Some(vec![Sign::Neutral]),
            "0+" | "+0" => sel.signs = Some(vec![Sign::Unstable, Sign::Neutral]),
            "0-" | "-0" => sel.signs = Some(vec![Sign::Stable, Sign::Neutral]),
            r => {
                let v = r.strip_prefix(">=").ok_or_else(bad)?;
                let x: f64 = v.trim().parse().map_err(|_| bad())?;
                sel.min_eigenvalue = Some(x);
            }
        }
        Ok(sel)
    }

    pub fn of_class(class: ModeClass) -> Selector {
        Selector { class: Some(class), signs: None, min_eigenvalue: None }
    }

    pub fn with_sign(mut self, sign: Sign) -> Selector {
        self.signs = Some(vec![sign]);
        self
    }

    pub fn at_least(mut self, lambda: f64) -> Selector {
        self.min_eigenvalue = Some(lambda);
        self
    }

    pub fn matches(&self, m: &Mode) -> bool {
        if let Some(c) = self.class {
            if m.class != Some(c) {
                return false;
            }
        }
        if let Some(s) = &self.signs {
            if !s.contains(&m.sign) {
                return false;
            }
        }
        if let Some(x) = self.min_eigenvalue {
            if m.eigenvalue < x - NEUTRAL_TOL {
                return false;
            }
        }
        true
    }
}

/// `L^2_f`-orthogonal projection onto the Lie directions, computed from the
/// normal equations of `min_X |h - L_X g|`.
#[derive(Debug, Clone)]
pub struct LieProjector {
    chol: Cholesky<f64, Dyn>,
    images: Vec<TensorGrid>,
}

impl LieProjector {
    pub fn new(bg: &Background) -> Result<Self> {
        let l_max = bg.l_max();
        let images: Vec<TensorGrid> = (1..=l_max)
            .map(|l| {
                let mut x = AxisymVector::zeros(l_max);
                x.e[l] = 1.0;
                bg.lie_derivative_bg(&x)
            })
            .collect();
        let k = DMatrix::from_fn(l_max, l_max, |i, j| bg.inner_tensor_grid(&images[i], &images[j]));
        let chol = Cholesky::new(k).ok_or_else(|| Error::Numerical("Lie Gram matrix is singular".into()))?;
        Ok(LieProjector { chol, images })
    }

    /// The vector field `X` with `P_Lie h = L_X g`.
    pub fn potential(&self, bg: &Background, h: &AxisymTensor) -> AxisymVector {
        self.potential_grid(bg, &bg.synthesize_tensor(h))
    }

    pub fn potential_grid(&self, bg: &Background, g: &TensorGrid) -> AxisymVector {
        let rhs = DVector::from_iterator(self.images.len(), self.images.iter().map(|im| bg.inner_tensor_grid(im, g)));
        AxisymVector::from_flat(self.chol.solve(&rhs).as_slice())
    }

    pub fn project(&self, bg: &Background, h: &AxisymTensor) -> AxisymTensor {
        let x = self.potential(bg, h);
        bg.analyze_tensor(&bg.lie_derivative_bg(&x))
    }
}

impl SpectralDecomposition {
    /// Diagonalise every degree block. For the stability operator each
    /// eigenspace is rotated so that it splits into Lie and essential modes.
    pub fn new(bg: &Background, op: &DiscreteOperator) -> Result<Self> {
        let lie = match op.kind {
            OperatorKind::Stability => Some(LieProjector::new(bg)?),
            OperatorKind::Gauge => None,
        };
        let mut modes = Vec::new();
        for b in &op.blocks {
            let chol = Cholesky::new(b.gram.clone())
                .ok_or_else(|| Error::Numerical(format!("singular Gram in degree {}", b.degree)))?;
            let l_inv = chol.l().try_inverse().ok_or_else(|| Error::Numerical("Gram factor not invertible".into()))?;
            let m = &l_inv * &b.stiffness * l_inv.transpose();
            let m = (&m + m.transpose()) * 0.5;
            let eig = SymmetricEigen::new(m);
            // Columns of `vecs` are G-orthonormal coefficient vectors.
            let vecs = l_inv.transpose() * &eig.eigenvectors;
            let mut pairs: Vec<(f64, DVector<f64>)> =
                (0..vecs.ncols()).map(|i| (eig.eigenvalues[i], vecs.column(i).into_owned())).collect();
            pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());

            let mut i = 0;
            while i < pairs.len() {
                let mut j = i + 1;
                while j < pairs.len() && (pairs[j].0 - pairs[i].0).abs() <= 1e-8 * (1.0 + pairs[i].0.abs()) {
                    j += 1;
                }
                let cluster: Vec<(f64, DVector<f64>)> = pairs[i..j].to_vec();
                let lambda = cluster.iter().map(|c| c.0).sum::<f64>() / cluster.len() as f64;
                match &lie {
                    Some(p) => {
                        for (class, v) in split_cluster(bg, p, b.degree, &cluster)? {
                            modes.push(make_mode(bg, op.kind, b.degree, lambda, v, Some(class)));
                        }
                    }
                    None => {
                        for (_, v) in cluster {
                            modes.push(make_mode(bg, op.kind, b.degree, lambda, v, None));
                        }
                    }
                }
                i = j;
            }
        }
        modes.sort_by(|x, y| {
            y.eigenvalue
                .partial_cmp(&x.eigenvalue)
                .unwrap()
                .then(x.degree.cmp(&y.degree))
                .then(class_rank(x.class).cmp(&class_rank(y.class)))
        });
        Ok(SpectralDecomposition { kind: op.kind, l_max: bg.l_max(), modes })
    }

    pub fn indices(&self, sel: &Selector) -> Vec<usize> {
        (0..self.modes.len()).filter(|&i| sel.matches(&self.modes[i])).collect()
    }

    pub fn count(&self, sel: &Selector) -> usize {
        self.indices(sel).len()
    }

    /// Index of the `L`-spectrum restricted to a class: number of modes with
    /// positive eigenvalue.
    pub fn index_of(&self, class: Option<ModeClass>) -> usize {
        self.modes.iter().filter(|m| m.sign == Sign::Unstable && (class.is_none() || m.class == class)).count()
    }

    pub fn mode_tensor(&self, i: usize) -> AxisymTensor {
        let m = &self.modes[i];
        let mut h = AxisymTensor::zeros(self.l_max);
        h.set_block(m.degree, &m.coeffs);
        h
    }

    pub fn mode_vector(&self, i: usize) -> AxisymVector {
        let m = &self.modes[i];
        let mut x = AxisymVector::zeros(self.l_max);
        x.e[m.degree] = m.coeffs[0];
        x
    }

    /// `<h, e_i>` for every mode, using the block Gram matrices.
    pub fn modal_coords(&self, bg: &Background, h: &AxisymTensor) -> Vec<f64> {
        self.modes
            .iter()
            .map(|m| {
                let g = bg.tensor_gram(m.degree);
                let hv = DVector::from_vec(h.block(m.degree));
                let ev = DVector::from_vec(m.coeffs.clone());
                (g * ev).dot(&hv)
            })
            .collect()
    }

    pub fn modal_coords_vector(&self, bg: &Background, x: &AxisymVector) -> Vec<f64> {
        self.modes.iter().map(|m| bg.vector_gram(m.degree) * m.coeffs[0] * x.e[m.degree]).collect()
    }

    pub fn from_modal(&self, coords: &[f64]) -> AxisymTensor {
        let mut h = AxisymTensor::zeros(self.l_max);
        for (m, &a) in self.modes.iter().zip(coords) {
            let mut blk = h.block(m.degree);
            for (x, c) in blk.iter_mut().zip(&m.coeffs) {
                *x += a * c;
            }
            h.set_block(m.degree, &blk);
        }
        h
    }

    pub fn from_modal_vector(&self, coords: &[f64]) -> AxisymVector {
        let mut x = AxisymVector::zeros(self.l_max);
        for (m, &a) in self.modes.iter().zip(coords) {
            x.e[m.degree] += a * m.coeffs[0];
        }
        x
    }

    /// `L^2_f`-orthogonal projection onto the selected modes.
    pub fn project(&self, bg: &Background, h: &AxisymTensor, sel: &Selector) -> AxisymTensor {
        let mut c = self.modal_coords(bg, h);
        for (i, m) in self.modes.iter().enumerate() {
            if !sel.matches(m) {
                c[i] = 0.0;
            }
        }
        self.from_modal(&c)
    }

    /// `|P h|^2` for the selected modes.
    pub fn projected_norm2(&self, coords: &[f64], sel: &Selector) -> f64 {
        self.modes.iter().zip(coords).filter(|(m, _)| sel.matches(m)).map(|(_, a)| a * a).sum()
    }

    /// `|h|^2_{H_W} = sum_i (1 + max(-lambda_i, 0)) <h, e_i>^2`.
    pub fn hw_norm2(&self, coords: &[f64]) -> f64 {
        self.modes.iter().zip(coords).map(|(m, a)| (1.0 + (-m.eigenvalue).max(0.0)) * a * a).sum()
    }

    /// Extreme eigenvalues over the selected modes.
    pub fn eigen_range(&self, sel: &Selector) -> Option<(f64, f64)> {
        let v: Vec<f64> = self.modes.iter().filter(|m| sel.matches(m)).map(|m| m.eigenvalue).collect();
        if v.is_empty() {
            return None;
        }
        Some((v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)))
    }

    /// Distinct eigenvalues, descending.
    pub fn distinct_eigenvalues(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for m in &self.modes {
            if out.last().is_none_or(|&l| (l - m.eigenvalue).abs() > 1e-8 * (1.0 + l.abs())) {
                out.push(m.eigenvalue);
            }
        }
        out
    }
}

fn class_rank(c: Option<ModeClass>) -> u8 {
    match c {
        Some(ModeClass::Essential) | None => 0,
        Some(ModeClass::Lie) => 1,
    }
}

fn split_cluster(
    bg: &Background,
    lie: &LieProjector,
    degree: usize,
    cluster: &[(f64, DVector<f64>)],
) -> Result<Vec<(ModeClass, DVector<f64>)>> {
    let l_max = bg.l_max();
    let tensors: Vec<AxisymTensor> = cluster
        .iter()
        .map(|(_, v)| {
            let mut h = AxisymTensor::zeros(l_max);
            h.set_block(degree, v.as_slice());
            h
        })
        .collect();
    let proj: Vec<AxisymTensor> = tensors.iter().map(|h| lie.project(bg, h)).collect();
    let k = cluster.len();
    let m = DMatrix::from_fn(k, k, |i, j| 0.5 * (bg.inner_tensor(&tensors[i], &proj[j]) + bg.inner_tensor(&tensors[j], &proj[i])));
    let eig = SymmetricEigen::new(m);
    let mut out = Vec::new();
    for c in 0..k {
        let w = eig.eigenvalues[c];
        let class = if (w - 1.0).abs() < 1e-7 {
            ModeClass::Lie
        } else if w.abs() < 1e-7 {
            ModeClass::Essential
        } else {
            return Err(Error::Numerical(format!(
                "eigenspace in degree {degree} is neither Lie nor essential (weight {w:.3e})"
            )));
        };
        let mut v = DVector::zeros(cluster[0].1.len());
        for (i, (_, e)) in cluster.iter().enumerate() {
            v += e * eig.eigenvectors[(i, c)];
        }
        out.push((class, v));
    }
    out.sort_by_key(|(c, _)| class_rank(Some(*c)));
    Ok(out)
}

fn make_mode(
    bg: &Background,
    kind: OperatorKind,
    degree: usize,
    lambda: f64,
    v: DVector<f64>,
    class: Option<ModeClass>,
) -> Mode {
    let mut coeffs: Vec<f64> = v.iter().copied().collect();
    // Deterministic sign: first non-negligible coordinate positive.
    let scale = coeffs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = coeffs.iter().find(|x| x.abs() > 1e-8 * scale) {
        if *first < 0.0 {
            coeffs.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let residual = match kind {
        OperatorKind::Stability => {
            let mut h = AxisymTensor::zeros(bg.l_max());
            h.set_block(degree, &coeffs);
            let mut r = bg.stability_operator(&h);
            r.axpy(-lambda, &bg.synthesize_tensor(&h));
            bg.inner_tensor_grid(&r, &r).sqrt()
        }
        OperatorKind::Gauge => {
            let mut x = AxisymVector::zeros(bg.l_max());
            x.e[degree] = coeffs[0];
            let mut r = bg.vector_operator(&x);
            r.axpy(-lambda, &bg.synthesize_vector(&x));
            bg.inner_vector_grid(&r, &r).sqrt()
        }
    };
    Mode { eigenvalue: lambda, degree, coeffs, sign: Sign::of(lambda), class, residual }
}

/// Eigenvalues of `L` in closed form on the round shrinker, descending with
/// multiplicity and class: `(lambda, degree, class)`.
pub fn analytic_stability_spectrum(dim: usize, l_max: usize) -> Vec<(f64, usize, ModeClass)> {
    let mut v = Vec::new();
    for l in 0..=l_max {
        let lam = 1.0 - crate::geometry::basis::laplace_eigenvalue(dim, l);
        match l {
            0 => v.push((lam, 0, ModeClass::Essential)),
            1 => v.push((lam, 1, ModeClass::Lie)),
            _ => {
                v.push((lam, l, ModeClass::Essential));
                v.push((lam, l, ModeClass::Lie));
            }
        }
    }
    v.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    v
}

/// Outcome of one identity in [`commutator_report`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    /// Largest relative residual `|lhs - rhs| / max(|lhs|, |rhs|)` seen.
    pub max_residual: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommutatorReport {
    pub checks: Vec<IdentityCheck>,
}

impl CommutatorReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&IdentityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Residual tolerance of the commutator identities.
pub const COMMUTATOR_TOL: f64 = 1e-7;

fn rel_tensor(bg: &Background, lhs: &TensorGrid, rhs: &TensorGrid) -> f64 {
    let mut d = lhs.clone();
    d.axpy(-1.0, rhs);
    let scale = bg.inner_tensor_grid(lhs, lhs).max(bg.inner_tensor_grid(rhs, rhs)).sqrt();
    if scale == 0.0 {
        0.0
    } else {
        bg.inner_tensor_grid(&d, &d).max(0.0).sqrt() / scale
    }
}

fn rel_vector(bg: &Background, lhs: &VectorGrid, rhs: &VectorGrid) -> f64 {
    let mut d = lhs.clone();
    d.axpy(-1.0, rhs);
    let scale = bg.inner_vector_grid(lhs, lhs).max(bg.inner_vector_grid(rhs, rhs)).sqrt();
    if scale == 0.0 {
        0.0
    } else {
        bg.inner_vector_grid(&d, &d).max(0.0).sqrt() / scale
    }
}

/// A random zonal vector field with coefficients decaying like `l^-2`.
pub fn random_vector(l_max: usize, rng: &mut impl rand::Rng) -> AxisymVector {
    let mut x = AxisymVector::zeros(l_max);
    for l in 1..=l_max {
        x.e[l] = rng.gen_range(-1.0..1.0) / (l * l) as f64;
    }
    x
}

/// Check the commutation identities between the stability operator, the
/// gauge operator and `div*`, on `samples` random vector fields and on every
/// Lie-derivative eigentensor. Breaches are reported, not returned as errors.
pub fn commutator_report(bg: &Background, samples: usize, seed: u64) -> Result<CommutatorReport> {
    use rand::SeedableRng;
    if !bg.is_shrinker() {
        return Err(Error::Capability("commutator identities need a constant potential".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let fields: Vec<AxisymVector> = (0..samples).map(|_| random_vector(bg.l_max(), &mut rng)).collect();
    let mut checks = Vec::new();
    let mut push = |name: &str, residuals: Vec<f64>| {
        let max_residual = residuals.iter().cloned().fold(0.0, f64::max);
        checks.push(IdentityCheck {
            name: name.into(),
            max_residual,
            tolerance: COMMUTATOR_TOL,
            samples: residuals.len(),
            passed: max_residual <= COMMUTATOR_TOL,
        });
    };

    // div_0 (L_Z g) = (Delta + Ric) Z.
    push(
        "div0_lie_derivative",
        fields
            .iter()
            .map(|z| {
                let lz = bg.analyze_tensor(&bg.lie_derivative_bg(z));
                rel_vector(bg, &bg.divergence_0(&lz), &bg.vector_operator(z))
            })
            .collect(),
    );
    // L div* = div* (gauge operator).
    push(
        "stability_div_star",
        fields
            .iter()
            .map(|x| {
                let lhs = bg.stability_operator(&bg.analyze_tensor(&bg.div_star(x)));
                let rhs = bg.div_star(&bg.analyze_vector(&bg.vector_operator(x)));
                rel_tensor(bg, &lhs, &rhs)
            })
            .collect(),
    );
    // L = -2 div* div_0 on the image of div*.
    push(
        "stability_on_image",
        fields
            .iter()
            .map(|x| {
                let h = bg.analyze_tensor(&bg.div_star(x));
                let mut rhs = bg.div_star(&bg.analyze_vector(&bg.divergence_0(&h)));
                rhs.a.iter_mut().chain(rhs.b.iter_mut()).for_each(|v| *v *= -2.0);
                rel_tensor(bg, &bg.stability_operator(&h), &rhs)
            })
            .collect(),
    );
    // -2 div* div_0 = lambda on Lie eigentensors.
    // A broken operator may not split into Lie and essential modes at all;
    // that counts as a breach of this identity.
    let lie_residuals = assemble_operator(bg, OperatorKind::Stability)
        .and_then(|op| SpectralDecomposition::new(bg, &op))
        .map(|decomp| {
            decomp
                .modes
                .iter()
                .enumerate()
                .filter(|(_, m)| m.class == Some(ModeClass::Lie))
                .map(|(i, m)| {
                    let e = decomp.mode_tensor(i);
                    let mut lhs = bg.div_star(&bg.analyze_vector(&bg.divergence_0(&e)));
                    lhs.a.iter_mut().chain(lhs.b.iter_mut()).for_each(|v| *v *= -2.0);
                    let rhs = bg.synthesize_tensor(&e.scaled(m.eigenvalue));
                    rel_tensor(bg, &lhs, &rhs)
                })
                .collect()
        })
        .unwrap_or_else(|_| vec![f64::INFINITY]);
    push("lie_eigen_identity", lie_residuals);
    // <div* X, h> = <X, div_f h>.
    push(
        "div_star_adjoint",
        fields
            .windows(2)
            .map(|w| {
                let h = bg.analyze_tensor(&bg.lie_derivative_bg(&w[1]));
                let lhs = bg.inner_tensor_grid(&bg.div_star(&w[0]), &bg.synthesize_tensor(&h));
                let rhs = bg.inner_vector_grid(&bg.synthesize_vector(&w[0]), &bg.divergence_f(&h));
                (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE)
            })
            .collect(),
    );
    // Contracting Rm against the metric gives Ric = (n-1) K g.
    let g = AxisymTensor::conformal(bg.l_max(), 1.0);
    let ric = bg.synthesize_tensor(&g.scaled((bg.dim() - 1) as f64 * bg.sectional_curvature()));
    push("rm_contraction", vec![rel_tensor(bg, &bg.rm_action(&g), &ric)]);
    Ok(CommutatorReport { checks })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexReport {
    /// Unstable Lie-derivative modes of `L`.
    pub gen_index: usize,
    /// Unstable essential modes of `L`.
    pub ess_index: usize,
    /// Unstable modes of the gauge operator.
    pub gauge_index: usize,
}

pub fn index_report(bg: &Background) -> Result<IndexReport> {
    let l = SpectralDecomposition::new(bg, &assemble_operator(bg, OperatorKind::Stability)?)?;
    let v = SpectralDecomposition::new(bg, &assemble_operator(bg, OperatorKind::Gauge)?)?;
    Ok(IndexReport {
        gen_index: l.count(&Selector::of_class(ModeClass::Lie).with_sign(Sign::Unstable)),
        ess_index: l.count(&Selector::of_class(ModeClass::Essential).with_sign(Sign::Unstable)),
        gauge_index: v.modes.iter().filter(|m| m.sign == Sign::Unstable).count(),
    })
}
