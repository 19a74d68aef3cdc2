//! Measured/unmeasured reordering of the reduced coordinates.
//!
//! The working ("breve") order puts the measured master DOFs first in the
//! order the user listed them, then the unmeasured masters in their original
//! order, then the modal coordinates. Every matrix `A` in that order splits as
//!
//! ```text
//! A = [[A^m,  A^c],
//!      [A^cᵀ, A^u]]
//! ```
//!
//! with `A^m` the `n_m × n_m` measured block.

use std::collections::HashSet;

use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::error::{Error, Result};
use crate::model::{DofLabel, FullModel};
use crate::numerics::SymMatrix;
use crate::rom::ReducedModel;

#[derive(Debug, Clone)]
pub struct PartitionedModel {
    pub m: SymMatrix,
    pub c: SymMatrix,
    pub k: SymMatrix,
    /// Labels in working order.
    pub labels: Vec<DofLabel>,
    pub n_measured: usize,
    /// `order[i]` is the source index of working coordinate `i`.
    pub order: Vec<usize>,
    /// `position[j]` is the working index of source coordinate `j`.
    pub position: Vec<usize>,
}

impl PartitionedModel {
    /// Reorders a reduced model; measured labels must name master DOFs.
    pub fn from_reduced(red: &ReducedModel, measured: &[DofLabel]) -> Result<Self> {
        let labels = red.reduced_labels();
        let physical: Vec<bool> = (0..red.dim()).map(|i| i < red.n_master).collect();
        let slaves: HashSet<&DofLabel> = red
            .partition
            .slave_dofs
            .iter()
            .map(|&i| &red.full_labels[i])
            .collect();
        for l in measured {
            if slaves.contains(l) {
                return Err(Error::MeasuredModalCoordinate(l.to_string()));
            }
        }
        Self::build(
            &red.m_hat, &red.c_hat, &red.k_hat, labels, &physical, measured,
        )
    }

    /// Uses a full model as is, every DOF being physical.
    pub fn from_full(model: &FullModel, measured: &[DofLabel]) -> Result<Self> {
        let physical = vec![true; model.dim()];
        Self::build(
            &model.m,
            &model.c,
            &model.k,
            model.dof_labels.clone(),
            &physical,
            measured,
        )
    }

    fn build(
        m: &SymMatrix,
        c: &SymMatrix,
        k: &SymMatrix,
        labels: Vec<DofLabel>,
        physical: &[bool],
        measured: &[DofLabel],
    ) -> Result<Self> {
        let n = labels.len();
        if measured.is_empty() {
            return Err(Error::InvalidPartition("no measured DOFs".into()));
        }
        if measured.len() >= n {
            return Err(Error::InvalidPartition(
                "at least one unmeasured coordinate is required".into(),
            ));
        }
        let mut order = Vec::with_capacity(n);
        let mut seen = HashSet::new();
        for l in measured {
            let idx = labels
                .iter()
                .position(|x| x == l)
                .ok_or_else(|| Error::UnknownLabel(l.to_string()))?;
            if !physical[idx] {
                return Err(Error::MeasuredModalCoordinate(l.to_string()));
            }
            if !seen.insert(idx) {
                return Err(Error::InvalidPartition(format!("{l} measured twice")));
            }
            order.push(idx);
        }
        order.extend((0..n).filter(|i| physical[*i] && !seen.contains(i)));
        order.extend((0..n).filter(|i| !physical[*i]));

        let mut position = vec![0; n];
        for (i, &src) in order.iter().enumerate() {
            position[src] = i;
        }
        Ok(Self {
            m: m.principal(&order),
            c: c.principal(&order),
            k: k.principal(&order),
            labels: order.iter().map(|&i| labels[i].clone()).collect(),
            n_measured: measured.len(),
            order,
            position,
        })
    }

    pub fn dim(&self) -> usize {
        self.order.len()
    }

    pub fn n_unmeasured(&self) -> usize {
        self.dim() - self.n_measured
    }

    pub fn measured_labels(&self) -> &[DofLabel] {
        &self.labels[..self.n_measured]
    }

    pub fn measured_block<'a>(&self, a: &'a DMatrix<f64>) -> DMatrixView<'a, f64> {
        a.view((0, 0), (self.n_measured, self.n_measured))
    }

    pub fn coupling_block<'a>(&self, a: &'a DMatrix<f64>) -> DMatrixView<'a, f64> {
        a.view((0, self.n_measured), (self.n_measured, self.n_unmeasured()))
    }

    pub fn unmeasured_block<'a>(&self, a: &'a DMatrix<f64>) -> DMatrixView<'a, f64> {
        let nm = self.n_measured;
        a.view((nm, nm), (self.n_unmeasured(), self.n_unmeasured()))
    }

    /// Source-order vector → working order.
    pub fn to_working(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.order.iter().map(|&i| x[i]))
    }

    /// Working-order vector → source order.
    pub fn to_source(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.position.iter().map(|&i| x[i]))
    }

    /// Working-order matrix → source order (inverse permutation).
    pub fn matrix_to_source(&self, a: &SymMatrix) -> SymMatrix {
        a.principal(&self.position)
    }
}
