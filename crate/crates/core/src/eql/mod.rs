//! Equation learning: regression systems for the mechanisms `D`, `R`, `H`
//! and `E`, quantile pruning, least squares, the PDE-based loss, and
//! stepwise selection.

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub mod basis;
pub mod design;
pub mod loss;
pub mod lsq;
pub mod prune;
pub mod sequential;
pub mod stepwise;

pub use basis::BasisLibrary;
pub use design::{DesignSystem, PointData, RowGroup};
pub use loss::{LossContext, LossMode, PdeSettings};
pub use prune::PruneConfig;
pub use sequential::{sequential_learn, SequentialResult, SequentialSettings, StageData};
pub use stepwise::{select, stepwise_select, ActiveStart, Candidate, Constraint, FitResult, StepwiseConfig, Termination, TraceStep};

/// The four learnable functions of density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// `D(q)`, the nonlinear diffusivity.
    Diffusion,
    /// `R(q)`, the source term.
    Reaction,
    /// `H(q)`, the gradient at the leading edge.
    EdgeGradient,
    /// `E(q)`, the diffusivity in the edge velocity law.
    EdgeDiffusion,
}

impl Mechanism {
    pub const ALL: [Mechanism; 4] = [
        Mechanism::Diffusion,
        Mechanism::Reaction,
        Mechanism::EdgeGradient,
        Mechanism::EdgeDiffusion,
    ];

    pub fn symbol(self) -> char {
        match self {
            Mechanism::Diffusion => 'd',
            Mechanism::Reaction => 'r',
            Mechanism::EdgeGradient => 'h',
            Mechanism::EdgeDiffusion => 'e',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Diffusion => "D",
            Mechanism::Reaction => "R",
            Mechanism::EdgeGradient => "H",
            Mechanism::EdgeDiffusion => "E",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// One basis library per mechanism. The global coefficient vector is the
/// concatenation `(θ^d, θ^r, θ^h, θ^e)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Libraries {
    pub d: BasisLibrary,
    pub r: BasisLibrary,
    pub h: BasisLibrary,
    pub e: BasisLibrary,
}

impl Libraries {
    pub fn get(&self, m: Mechanism) -> &BasisLibrary {
        match m {
            Mechanism::Diffusion => &self.d,
            Mechanism::Reaction => &self.r,
            Mechanism::EdgeGradient => &self.h,
            Mechanism::EdgeDiffusion => &self.e,
        }
    }

    pub fn get_mut(&mut self, m: Mechanism) -> &mut BasisLibrary {
        match m {
            Mechanism::Diffusion => &mut self.d,
            Mechanism::Reaction => &mut self.r,
            Mechanism::EdgeGradient => &mut self.h,
            Mechanism::EdgeDiffusion => &mut self.e,
        }
    }

    /// Only the library for `m`.
    pub fn only(m: Mechanism, library: BasisLibrary) -> Self {
        let mut libs = Self::default();
        *libs.get_mut(m) = library;
        libs
    }

    pub fn total(&self) -> usize {
        Mechanism::ALL.iter().map(|&m| self.get(m).len()).sum()
    }

    pub fn columns(&self, m: Mechanism) -> Range<usize> {
        let start: usize = Mechanism::ALL[..m.index()].iter().map(|&o| self.get(o).len()).sum();
        start..start + self.get(m).len()
    }

    /// Mechanism and within-library index of global column `c`.
    pub fn locate(&self, c: usize) -> (Mechanism, usize) {
        for m in Mechanism::ALL {
            let cols = self.columns(m);
            if cols.contains(&c) {
                return (m, c - cols.start);
            }
        }
        panic!("column {c} out of range for {} columns", self.total());
    }

    /// Label such as `θ2d`, numbered from 1.
    pub fn column_label(&self, c: usize) -> String {
        let (m, k) = self.locate(c);
        format!("θ{}{}", k + 1, m.symbol())
    }

    /// The slice of `theta` belonging to `m`.
    pub fn block<'a>(&self, theta: &'a [f64], m: Mechanism) -> &'a [f64] {
        &theta[self.columns(m)]
    }
}
