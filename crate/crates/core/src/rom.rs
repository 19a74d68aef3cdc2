//! Hybrid condensation / component-mode reduction.
//!
//! Master DOFs stay physical; slave DOFs are represented by static constraint
//! modes plus a truncated set of slave eigenmodes, and the transformation is
//! enriched with a residual-flexibility term:
//!
//! ```text
//! u ≈ T̂ û,   û = [u_m; q_s],   T̂ = T₀ + T_r
//! T₀  = [[I, 0], [Υ, Ψ_d]]
//! T_r = [[0, 0], [F_rs (M_sm + M_ss Υ), 0]] · M̂₀⁻¹ K̂₀
//! Υ   = −K_ss⁻¹ K_sm,   F_rs = K_ss⁻¹ − Ψ_d Γ_d⁻¹ Ψ_dᵀ
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix_market;
use crate::model::{read_labels, write_labels, DofLabel, FullModel};
use crate::numerics::{
    factorize, submatrix, sym_generalized_eig, sym_generalized_eigenvalues, SymMatrix,
};

/// Node tag used for modal coordinates in reduced-space labels (`mode:1`, …).
pub const MODAL_NODE: &str = "mode";

/// Master/slave split of a full model's DOFs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub master_dofs: Vec<usize>,
    pub slave_dofs: Vec<usize>,
}

impl Partition {
    /// Masters in the given order; slaves are the remaining DOFs ascending.
    pub fn new(n: usize, master_dofs: Vec<usize>) -> Result<Self> {
        if master_dofs.is_empty() {
            return Err(Error::InvalidPartition(
                "at least one master DOF required".into(),
            ));
        }
        let mut seen = HashSet::new();
        for &d in &master_dofs {
            if d >= n {
                return Err(Error::InvalidPartition(format!(
                    "DOF {d} out of range 0..{n}"
                )));
            }
            if !seen.insert(d) {
                return Err(Error::InvalidPartition(format!("DOF {d} listed twice")));
            }
        }
        let slave_dofs: Vec<usize> = (0..n).filter(|i| !seen.contains(i)).collect();
        if slave_dofs.is_empty() {
            return Err(Error::InvalidPartition("no slave DOFs left".into()));
        }
        Ok(Self {
            master_dofs,
            slave_dofs,
        })
    }

    pub fn from_labels(model: &FullModel, masters: &[DofLabel]) -> Result<Self> {
        Self::new(model.dim(), model.indices_of(masters)?)
    }

    pub fn n_master(&self) -> usize {
        self.master_dofs.len()
    }

    pub fn n_slave(&self) -> usize {
        self.slave_dofs.len()
    }
}

/// Reduced model with its transformation and building blocks.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub m_hat: SymMatrix,
    pub c_hat: SymMatrix,
    pub k_hat: SymMatrix,
    /// N × N̂, rows in full-model DOF order.
    pub t_hat: DMatrix<f64>,
    pub n_master: usize,
    pub n_modes: usize,
    pub partition: Partition,
    /// Labels of the full model, used to name masters and expand responses.
    pub full_labels: Vec<DofLabel>,
    /// Constraint modes, N_s × N_m.
    pub upsilon: DMatrix<f64>,
    /// Mass-normalized slave modes, N_s × N_d.
    pub psi_d: DMatrix<f64>,
    pub gamma_d: Vec<f64>,
    pub damping_a: f64,
    pub damping_b: f64,
}

impl ReducedModel {
    pub fn dim(&self) -> usize {
        self.n_master + self.n_modes
    }

    pub fn master_labels(&self) -> Vec<DofLabel> {
        self.partition
            .master_dofs
            .iter()
            .map(|&i| self.full_labels[i].clone())
            .collect()
    }

    /// Labels of the generalized coordinates `[u_m; q_s]`.
    pub fn reduced_labels(&self) -> Vec<DofLabel> {
        let mut labels = self.master_labels();
        labels.extend((1..=self.n_modes).map(|i| DofLabel::new(MODAL_NODE, &i.to_string())));
        labels
    }

    /// Full-field displacement `T̂·û`.
    pub fn expand(&self, u_hat: &[f64]) -> Result<DVector<f64>> {
        if u_hat.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: u_hat.len(),
            });
        }
        Ok(&self.t_hat * DVector::from_column_slice(u_hat))
    }
}

/// `Υ = −K_ss⁻¹ K_sm`
pub fn constraint_modes(model: &FullModel, p: &Partition) -> Result<DMatrix<f64>> {
    let k_ss = model.k.principal(&p.slave_dofs);
    let k_sm = submatrix(&model.k, &p.slave_dofs, &p.master_dofs);
    let f = factorize(&k_ss).map_err(|_| Error::SingularSlaveBlock)?;
    Ok(-f.solve_matrix(&k_sm)?)
}

/// Reduces `model` to `N_m + n_modes` DOFs and adds Rayleigh damping
/// `Ĉ = a·M̂ + b·K̂` on the reduced matrices.
pub fn reduce(
    model: &FullModel,
    p: &Partition,
    n_modes: usize,
    a: f64,
    b: f64,
) -> Result<ReducedModel> {
    let n = model.dim();
    if p.master_dofs.len() + p.slave_dofs.len() != n {
        return Err(Error::InvalidPartition(format!(
            "partition covers {} DOFs, model has {n}",
            p.master_dofs.len() + p.slave_dofs.len()
        )));
    }
    let (nm, ns) = (p.n_master(), p.n_slave());
    if n_modes == 0 || n_modes > ns {
        return Err(Error::InvalidParameter(format!(
            "n_modes must lie in 1..={ns}, got {n_modes}"
        )));
    }
    if !(a >= 0.0 && b >= 0.0) {
        return Err(Error::InvalidParameter(
            "damping coefficients must be non-negative".into(),
        ));
    }
    let nr = nm + n_modes;

    let k_ss = model.k.principal(&p.slave_dofs);
    let m_ss = model.m.principal(&p.slave_dofs);
    let m_sm = submatrix(&model.m, &p.slave_dofs, &p.master_dofs);
    let k_ss_f = factorize(&k_ss).map_err(|_| Error::SingularSlaveBlock)?;

    let upsilon = constraint_modes(model, p)?;
    let slave = sym_generalized_eig(&k_ss, &m_ss, n_modes)?;
    let psi_d = slave.vectors;
    let gamma_d = slave.values;

    let mut t0 = DMatrix::zeros(n, nr);
    for (r, &dof) in p.master_dofs.iter().enumerate() {
        t0[(dof, r)] = 1.0;
    }
    for (r, &dof) in p.slave_dofs.iter().enumerate() {
        for c in 0..nm {
            t0[(dof, c)] = upsilon[(r, c)];
        }
        for c in 0..n_modes {
            t0[(dof, nm + c)] = psi_d[(r, c)];
        }
    }
    let m0 = model.m.congruence(&t0);
    let k0 = model.k.congruence(&t0);

    // F_rs = K_ss⁻¹ − Ψ_d Γ_d⁻¹ Ψ_dᵀ
    let mut psi_scaled = psi_d.clone();
    for (j, &g) in gamma_d.iter().enumerate() {
        psi_scaled.column_mut(j).scale_mut(1.0 / g);
    }
    let f_rs = k_ss_f.inverse().into_inner() - psi_scaled * psi_d.transpose();

    // M̂₀⁻¹ K̂₀ through the factorization of M̂₀; only its first N_m rows
    // survive the product with [F_rs(M_sm + M_ss Υ), 0].
    let m0_inv_k0 = factorize(&m0)?.solve_matrix(&k0)?;
    let coupling = &f_rs * (m_sm + m_ss.as_matrix() * &upsilon);
    let tr_slave = coupling * m0_inv_k0.rows(0, nm);

    let mut t_hat = t0;
    for (r, &dof) in p.slave_dofs.iter().enumerate() {
        for c in 0..nr {
            t_hat[(dof, c)] += tr_slave[(r, c)];
        }
    }

    let m_hat = model.m.congruence(&t_hat);
    let k_hat = model.k.congruence(&t_hat);
    let c_hat = m_hat.combine(a, &k_hat, b)?;

    Ok(ReducedModel {
        m_hat,
        c_hat,
        k_hat,
        t_hat,
        n_master: nm,
        n_modes,
        partition: p.clone(),
        full_labels: model.dof_labels.clone(),
        upsilon,
        psi_d,
        gamma_d,
        damping_a: a,
        damping_b: b,
    })
}

/// Percentage eigenvalue errors `(λᵢ − λ̂ᵢ)/λᵢ × 100` of the `count` lowest modes.
pub fn eigenvalue_error(full: &FullModel, red: &ReducedModel, count: usize) -> Result<Vec<f64>> {
    if count > full.dim().min(red.dim()) {
        return Err(Error::InvalidParameter(format!(
            "count {count} exceeds min(N, N̂) = {}",
            full.dim().min(red.dim())
        )));
    }
    let reference = sym_generalized_eigenvalues(&full.k, &full.m, count)?;
    let reduced = sym_generalized_eigenvalues(&red.k_hat, &red.m_hat, count)?;
    Ok(percentage_errors(&reference, &reduced))
}

pub fn percentage_errors(reference: &[f64], approx: &[f64]) -> Vec<f64> {
    reference
        .iter()
        .zip(approx)
        .map(|(&l, &lh)| (l - lh) / l * 100.0)
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    n_full: usize,
    n_master: usize,
    n_modes: usize,
    damping_a: f64,
    damping_b: f64,
    master_dofs: Vec<usize>,
    slave_dofs: Vec<usize>,
    gamma_d: Vec<f64>,
}

const ARCHIVE_FORMAT: &str = "vsense-rom-1";

impl ReducedModel {
    /// Writes the archive directory: `manifest.toml`, the reduced and
    /// transformation matrices as Matrix Market files, and `labels.txt`
    /// with the full-model DOF labels.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            format: ARCHIVE_FORMAT.into(),
            n_full: self.full_labels.len(),
            n_master: self.n_master,
            n_modes: self.n_modes,
            damping_a: self.damping_a,
            damping_b: self.damping_b,
            master_dofs: self.partition.master_dofs.clone(),
            slave_dofs: self.partition.slave_dofs.clone(),
            gamma_d: self.gamma_d.clone(),
        };
        let text = toml::to_string(&manifest)
            .map_err(|e| Error::InvalidParameter(format!("manifest serialization: {e}")))?;
        fs::write(dir.join("manifest.toml"), text)?;
        matrix_market::write_symmetric(&dir.join("m_hat.mtx"), &self.m_hat)?;
        matrix_market::write_symmetric(&dir.join("k_hat.mtx"), &self.k_hat)?;
        matrix_market::write_symmetric(&dir.join("c_hat.mtx"), &self.c_hat)?;
        matrix_market::write_general(&dir.join("t_hat.mtx"), &self.t_hat)?;
        matrix_market::write_general(&dir.join("upsilon.mtx"), &self.upsilon)?;
        matrix_market::write_general(&dir.join("psi_d.mtx"), &self.psi_d)?;
        write_labels(&dir.join("labels.txt"), &self.full_labels)
    }

    pub fn load(dir: &Path) -> Result<ReducedModel> {
        let path = dir.join("manifest.toml");
        let text = fs::read_to_string(&path)?;
        let man: Manifest = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        if man.format != ARCHIVE_FORMAT {
            return Err(Error::Parse {
                path,
                msg: format!("unsupported archive format `{}`", man.format),
            });
        }
        let full_labels = read_labels(&dir.join("labels.txt"))?;
        let partition = Partition::new(full_labels.len(), man.master_dofs)?;
        if partition.slave_dofs != man.slave_dofs || man.n_full != full_labels.len() {
            return Err(Error::Parse {
                path,
                msg: "partition inconsistent with labels".into(),
            });
        }
        let red = ReducedModel {
            m_hat: matrix_market::read_symmetric(&dir.join("m_hat.mtx"))?,
            c_hat: matrix_market::read_symmetric(&dir.join("c_hat.mtx"))?,
            k_hat: matrix_market::read_symmetric(&dir.join("k_hat.mtx"))?,
            t_hat: matrix_market::read_matrix(&dir.join("t_hat.mtx"))?,
            n_master: man.n_master,
            n_modes: man.n_modes,
            partition,
            full_labels,
            upsilon: matrix_market::read_matrix(&dir.join("upsilon.mtx"))?,
            psi_d: matrix_market::read_matrix(&dir.join("psi_d.mtx"))?,
            gamma_d: man.gamma_d,
            damping_a: man.damping_a,
            damping_b: man.damping_b,
        };
        let nr = red.dim();
        if red.m_hat.dim() != nr
            || red.k_hat.dim() != nr
            || red.c_hat.dim() != nr
            || red.t_hat.shape() != (man.n_full, nr)
            || red.n_master != red.partition.n_master()
        {
            return Err(Error::Parse {
                path: dir.to_path_buf(),
                msg: "archive blocks have inconsistent dimensions".into(),
            });
        }
        Ok(red)
    }
}
