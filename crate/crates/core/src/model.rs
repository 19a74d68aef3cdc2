//! Full finite-element models: cantilever beams, spring-mass chains and
//! imported matrices, plus boundary conditions and Rayleigh damping.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix_market;
use crate::numerics::{factorize, SymMatrix};

/// A degree of freedom identified as `node:direction`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DofLabel {
    pub node: String,
    pub direction: String,
}

impl DofLabel {
    pub fn new(node: impl fmt::Display, direction: &str) -> Self {
        Self {
            node: node.to_string(),
            direction: direction.to_string(),
        }
    }
}

impl fmt::Display for DofLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node, self.direction)
    }
}

impl FromStr for DofLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.split_once(':') {
            Some((n, d)) if !n.is_empty() && !d.is_empty() && !d.contains(':') => {
                Ok(Self::new(n, d))
            }
            _ => Err(Error::UnknownLabel(s.to_string())),
        }
    }
}

/// Transverse deflection direction tag used by the beam builder.
pub const BEAM_DEFLECTION: &str = "z";
/// Rotation direction tag used by the beam builder.
pub const BEAM_ROTATION: &str = "ry";
/// Direction tag for spring-chain DOFs.
pub const CHAIN_DIRECTION: &str = "x";
/// Direction tag for imported matrices without a label file.
pub const IMPORTED_DIRECTION: &str = "u";

/// Assembled mass, damping and stiffness matrices with DOF bookkeeping.
#[derive(Debug, Clone)]
pub struct FullModel {
    pub m: SymMatrix,
    pub k: SymMatrix,
    pub c: SymMatrix,
    pub dof_labels: Vec<DofLabel>,
    /// DOFs removed by boundary conditions before assembly of this model.
    pub constrained_dofs: Vec<DofLabel>,
}

impl FullModel {
    /// Validates dimensions, label uniqueness and positive definiteness of `m`.
    pub fn new(
        m: SymMatrix,
        k: SymMatrix,
        c: SymMatrix,
        dof_labels: Vec<DofLabel>,
        constrained_dofs: Vec<DofLabel>,
    ) -> Result<Self> {
        let n = m.dim();
        for d in [k.dim(), c.dim(), dof_labels.len()] {
            if d != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: d,
                });
            }
        }
        let mut seen = HashSet::new();
        for l in &dof_labels {
            if !seen.insert(l) {
                return Err(Error::InvalidParameter(format!("duplicate DOF label {l}")));
            }
        }
        factorize(&m)?;
        Ok(Self {
            m,
            k,
            c,
            dof_labels,
            constrained_dofs,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    pub fn index_of(&self, label: &DofLabel) -> Option<usize> {
        self.dof_labels.iter().position(|l| l == label)
    }

    /// Resolves a list of labels to DOF indices.
    pub fn indices_of(&self, labels: &[DofLabel]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.index_of(l)
                    .ok_or_else(|| Error::UnknownLabel(l.to_string()))
            })
            .collect()
    }

    /// Removes `dofs` (indices) by row/column deletion.
    pub fn eliminate(&self, dofs: &[usize]) -> Result<FullModel> {
        let drop: HashSet<usize> = dofs.iter().copied().collect();
        if let Some(&bad) = dofs.iter().find(|&&d| d >= self.dim()) {
            return Err(Error::InvalidParameter(format!(
                "DOF index {bad} out of range"
            )));
        }
        let keep: Vec<usize> = (0..self.dim()).filter(|i| !drop.contains(i)).collect();
        if keep.is_empty() {
            return Err(Error::InvalidParameter("all DOFs constrained".into()));
        }
        let mut constrained = self.constrained_dofs.clone();
        let mut removed: Vec<usize> = drop.into_iter().collect();
        removed.sort_unstable();
        constrained.extend(removed.iter().map(|&i| self.dof_labels[i].clone()));
        FullModel::new(
            self.m.principal(&keep),
            self.k.principal(&keep),
            self.c.principal(&keep),
            keep.iter().map(|&i| self.dof_labels[i].clone()).collect(),
            constrained,
        )
    }

    /// Writes `m.mtx`, `k.mtx`, `c.mtx` and `labels.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        matrix_market::write_symmetric(&dir.join("m.mtx"), &self.m)?;
        matrix_market::write_symmetric(&dir.join("k.mtx"), &self.k)?;
        matrix_market::write_symmetric(&dir.join("c.mtx"), &self.c)?;
        write_labels(&dir.join("labels.txt"), &self.dof_labels)?;
        if !self.constrained_dofs.is_empty() {
            write_labels(&dir.join("constrained.txt"), &self.constrained_dofs)?;
        }
        Ok(())
    }

    /// Reads a directory written by [`FullModel::save`].
    pub fn load(dir: &Path) -> Result<FullModel> {
        let mut model = import_matrices(
            &dir.join("m.mtx"),
            &dir.join("k.mtx"),
            Some(&dir.join("labels.txt")),
        )?;
        let c_path = dir.join("c.mtx");
        if c_path.exists() {
            let c = matrix_market::read_symmetric(&c_path)?;
            if c.dim() != model.dim() {
                return Err(Error::DimensionMismatch {
                    expected: model.dim(),
                    found: c.dim(),
                });
            }
            model.c = c;
        }
        let cons = dir.join("constrained.txt");
        if cons.exists() {
            model.constrained_dofs = read_labels(&cons)?;
        }
        Ok(model)
    }
}

pub fn write_labels(path: &Path, labels: &[DofLabel]) -> Result<()> {
    let mut s = String::new();
    for l in labels {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<DofLabel>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                msg: format!("bad label `{l}`"),
            })
        })
        .collect()
}

/// Geometry and material of a prismatic cantilever beam.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BeamSpec {
    /// m
    pub length: f64,
    /// m
    pub width: f64,
    /// m
    pub thickness: f64,
    /// Pa
    pub youngs_modulus: f64,
    /// kg/m³
    pub density: f64,
    pub n_elements: usize,
    /// Node whose deflection and rotation are fixed.
    pub clamped_end: usize,
}

impl Default for BeamSpec {
    /// Thin aluminium strip, 170 × 13 × 1.2 mm.
    fn default() -> Self {
        Self {
            length: 0.170,
            width: 0.013,
            thickness: 0.0012,
            youngs_modulus: 69e9,
            density: 2700.0,
            n_elements: 50,
            clamped_end: 0,
        }
    }
}

impl BeamSpec {
    pub fn area(&self) -> f64 {
        self.width * self.thickness
    }

    /// Second moment of area for bending through the thickness.
    pub fn second_moment(&self) -> f64 {
        self.width * self.thickness.powi(3) / 12.0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("length", self.length),
            ("width", self.width),
            ("thickness", self.thickness),
            ("youngs_modulus", self.youngs_modulus),
            ("density", self.density),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidSpec(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.n_elements == 0 {
            return Err(Error::InvalidSpec("n_elements must be at least 1".into()));
        }
        if self.clamped_end > self.n_elements {
            return Err(Error::InvalidSpec(format!(
                "clamped node {} outside 0..={}",
                self.clamped_end, self.n_elements
            )));
        }
        Ok(())
    }

    /// Analytic first bending frequency (Hz) of the clamped-free beam.
    pub fn first_frequency_hz(&self) -> f64 {
        let ei = self.youngs_modulus * self.second_moment();
        let rho_a = self.density * self.area();
        1.875_104_068_711_961_f64.powi(2) * (ei / rho_a).sqrt()
            / (2.0 * std::f64::consts::PI * self.length.powi(2))
    }
}

/// Cubic-Hermite bending element stiffness, DOFs `[w1, θ1, w2, θ2]`.
pub fn beam_element_stiffness(ei: f64, le: f64) -> [[f64; 4]; 4] {
    let c = ei / le.powi(3);
    let l = le;
    let l2 = le * le;
    [
        [12.0 * c, 6.0 * l * c, -12.0 * c, 6.0 * l * c],
        [6.0 * l * c, 4.0 * l2 * c, -6.0 * l * c, 2.0 * l2 * c],
        [-12.0 * c, -6.0 * l * c, 12.0 * c, -6.0 * l * c],
        [6.0 * l * c, 2.0 * l2 * c, -6.0 * l * c, 4.0 * l2 * c],
    ]
}

/// Consistent mass of the cubic-Hermite element.
pub fn beam_element_mass(rho_a: f64, le: f64) -> [[f64; 4]; 4] {
    let c = rho_a * le / 420.0;
    let l = le;
    let l2 = le * le;
    [
        [156.0 * c, 22.0 * l * c, 54.0 * c, -13.0 * l * c],
        [22.0 * l * c, 4.0 * l2 * c, 13.0 * l * c, -3.0 * l2 * c],
        [54.0 * c, 13.0 * l * c, 156.0 * c, -22.0 * l * c],
        [-13.0 * l * c, -3.0 * l2 * c, -22.0 * l * c, 4.0 * l2 * c],
    ]
}

/// Assembles the free-free beam. DOFs are node-major: `[w0, θ0, w1, θ1, …]`.
/// Returns `(k, m, labels)`; `k` is singular (two rigid-body modes).
pub fn assemble_beam(spec: &BeamSpec) -> Result<(SymMatrix, SymMatrix, Vec<DofLabel>)> {
    spec.validate()?;
    let n_nodes = spec.n_elements + 1;
    let n = 2 * n_nodes;
    let le = spec.length / spec.n_elements as f64;
    let ke = beam_element_stiffness(spec.youngs_modulus * spec.second_moment(), le);
    let me = beam_element_mass(spec.density * spec.area(), le);
    let mut k = DMatrix::zeros(n, n);
    let mut m = DMatrix::zeros(n, n);
    for e in 0..spec.n_elements {
        let dofs = [2 * e, 2 * e + 1, 2 * e + 2, 2 * e + 3];
        for a in 0..4 {
            for b in 0..4 {
                k[(dofs[a], dofs[b])] += ke[a][b];
                m[(dofs[a], dofs[b])] += me[a][b];
            }
        }
    }
    let labels = (0..n_nodes)
        .flat_map(|i| {
            [
                DofLabel::new(i, BEAM_DEFLECTION),
                DofLabel::new(i, BEAM_ROTATION),
            ]
        })
        .collect();
    Ok((SymMatrix::new(k)?, SymMatrix::new(m)?, labels))
}

/// Euler–Bernoulli cantilever with the clamped node's two DOFs eliminated
/// and zero damping.
pub fn build_cantilever_beam(spec: &BeamSpec) -> Result<FullModel> {
    let (k, m, labels) = assemble_beam(spec)?;
    let n = k.dim();
    let free = FullModel {
        m,
        k,
        c: SymMatrix::zeros(n),
        dof_labels: labels,
        constrained_dofs: Vec::new(),
    };
    let node = spec.clamped_end;
    free.eliminate(&[2 * node, 2 * node + 1])
}

/// Spring-mass chain. With `grounded`, `stiffnesses[0]` ties mass 0 to the
/// ground and `stiffnesses[i]` joins masses `i-1` and `i` (len = n). Without
/// it the chain is free and `stiffnesses` has n−1 entries.
pub fn build_spring_chain(
    masses: &[f64],
    stiffnesses: &[f64],
    grounded: bool,
) -> Result<FullModel> {
    let n = masses.len();
    if n == 0 {
        return Err(Error::InvalidSpec("chain needs at least one mass".into()));
    }
    let expected = if grounded { n } else { n - 1 };
    if stiffnesses.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: stiffnesses.len(),
        });
    }
    if masses.iter().chain(stiffnesses).any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidSpec(
            "masses and stiffnesses must be positive".into(),
        ));
    }
    let mut k = DMatrix::zeros(n, n);
    let offset = usize::from(grounded);
    if grounded {
        k[(0, 0)] += stiffnesses[0];
    }
    for i in 1..n {
        let s = stiffnesses[i - 1 + offset];
        k[(i - 1, i - 1)] += s;
        k[(i, i)] += s;
        k[(i - 1, i)] -= s;
        k[(i, i - 1)] -= s;
    }
    FullModel::new(
        SymMatrix::from_diagonal(masses),
        SymMatrix::new(k)?,
        SymMatrix::zeros(n),
        (0..n).map(|i| DofLabel::new(i, CHAIN_DIRECTION)).collect(),
        Vec::new(),
    )
}

/// Loads mass and stiffness from Matrix Market files; damping is zero.
/// Without a label file DOF `i` is labelled `i:u`.
pub fn import_matrices(m_path: &Path, k_path: &Path, labels: Option<&Path>) -> Result<FullModel> {
    let m = matrix_market::read_symmetric(m_path)?;
    let k = matrix_market::read_symmetric(k_path)?;
    if k.dim() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            found: k.dim(),
        });
    }
    let n = m.dim();
    let dof_labels = match labels {
        Some(p) => read_labels(p)?,
        None => (0..n)
            .map(|i| DofLabel::new(i, IMPORTED_DIRECTION))
            .collect(),
    };
    FullModel::new(m, k, SymMatrix::zeros(n), dof_labels, Vec::new())
}

/// Exports `m.mtx`, `k.mtx` and `labels.txt` in the layout read by
/// [`import_matrices`].
pub fn export_matrices(model: &FullModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    matrix_market::write_symmetric(&dir.join("m.mtx"), &model.m)?;
    matrix_market::write_symmetric(&dir.join("k.mtx"), &model.k)?;
    write_labels(&dir.join("labels.txt"), &model.dof_labels)
}

/// Returns a copy with `c = a·m + b·k`.
pub fn rayleigh_damping(model: &FullModel, a: f64, b: f64) -> Result<FullModel> {
    if !(a >= 0.0 && b >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "Rayleigh coefficients must be non-negative, got a={a}, b={b}"
        )));
    }
    let mut out = model.clone();
    out.c = model.m.combine(a, &model.k, b)?;
    Ok(out)
}

/// Rayleigh coefficients `(a, b)` giving damping ratio `zeta` at both
/// `f1` and `f2` (Hz).
pub fn rayleigh_coefficients(zeta: f64, f1: f64, f2: f64) -> Result<(f64, f64)> {
    if !(zeta >= 0.0 && f1 > 0.0 && f2 > f1 && f2.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need zeta >= 0 and 0 < f1 < f2, got zeta={zeta}, f1={f1}, f2={f2}"
        )));
    }
    let (w1, w2) = (std::f64::consts::TAU * f1, std::f64::consts::TAU * f2);
    Ok((2.0 * zeta * w1 * w2 / (w1 + w2), 2.0 * zeta / (w1 + w2)))
}
