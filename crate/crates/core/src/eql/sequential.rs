//! Learning `D`, `E`, `H` and `R` one at a time, each on its own time
//! window, with earlier results frozen.

use serde::{Deserialize, Serialize};

use super::design::DesignSystem;
use super::loss::{LossContext, LossMode, PdeSettings};
use super::prune::{prune, PruneConfig};
use super::stepwise::{stepwise_select, ActiveStart, FitResult, StepwiseConfig};
use super::{Libraries, Mechanism};
use crate::density_stats::DensityGrid;
use crate::error::{EqlError, Result};
use crate::fvm::{Law, MechanismSet};
use crate::numdiff::{GridDerivatives, TimeDerivativeMode};

/// Data for one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageData {
    pub grid: DensityGrid,
    pub prune: PruneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequentialSettings {
    pub time_mode: TimeDerivativeMode,
    pub n_c: usize,
    pub max_steps: usize,
    pub pde: PdeSettings,
}

impl Default for SequentialSettings {
    fn default() -> Self {
        Self {
            time_mode: TimeDerivativeMode::default(),
            n_c: 100,
            max_steps: 100,
            pde: PdeSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialResult {
    pub libraries: Libraries,
    /// Combined `(θ^d, θ^r, θ^h, θ^e)`; mechanisms without a stage stay zero.
    pub theta: Vec<f64>,
    /// Stage results in the order they ran.
    pub stages: Vec<(Mechanism, FitResult)>,
}

impl SequentialResult {
    pub fn coefficients(&self, m: Mechanism) -> &[f64] {
        self.libraries.block(&self.theta, m)
    }
}

fn zero_mechanisms() -> MechanismSet {
    MechanismSet {
        diffusion: Law::Zero,
        reaction: Law::Zero,
        edge_gradient: Law::Zero,
        edge_diffusion: Law::Zero,
    }
}

fn pruned_system(
    data: &StageData,
    libraries: Libraries,
    settings: &SequentialSettings,
) -> Result<DesignSystem> {
    let derivs = GridDerivatives::estimate(&data.grid, settings.time_mode)?;
    let system = DesignSystem::assemble(&data.grid, &derivs, libraries)?;
    prune(&system, &data.prune)
}

/// Runs the stages `D` (with `R = H = E = 0`), `E` (with `R = H = 0`), `H`
/// (with `R = 0`) and `R`, each from an empty model with the
/// density-plus-edge loss. The `R` stage regresses on `∂q/∂t − A^d θ^d`.
///
/// With `H = 0` the edge cannot move, so the `D` stage (from a uniform
/// start) and the `E` stage see no difference in loss between candidates of
/// equal size; the tie-break then falls through to the regression residual.
///
/// Stages other than `D` are optional; skipped mechanisms stay zero.
pub fn sequential_learn(
    libraries: &Libraries,
    diffusion: &StageData,
    edge_diffusion: Option<&StageData>,
    edge_gradient: Option<&StageData>,
    reaction: Option<&StageData>,
    settings: &SequentialSettings,
) -> Result<SequentialResult> {
    let mut theta = vec![0.0; libraries.total()];
    let mut stages = Vec::new();
    let mut known = zero_mechanisms();
    let config = StepwiseConfig {
        initial_active: ActiveStart::AllInactive,
        n_c: settings.n_c,
        max_steps: settings.max_steps,
        loss_mode: LossMode::DensityPlusEdge,
        ..Default::default()
    };

    let plan = [
        (Mechanism::Diffusion, Some(diffusion)),
        (Mechanism::EdgeDiffusion, edge_diffusion),
        (Mechanism::EdgeGradient, edge_gradient),
        (Mechanism::Reaction, reaction),
    ];
    for (m, data) in plan {
        let Some(data) = data else { continue };
        let run = || -> Result<FitResult> {
            let library = libraries.get(m).clone();
            if library.is_empty() {
                return Err(EqlError::InvalidConfig(format!("empty basis for {}", m.name())));
            }
            let mut system = pruned_system(data, Libraries::only(m, library), settings)?;
            if m == Mechanism::Reaction {
                system.subtract_known(
                    Mechanism::Diffusion,
                    &libraries.d,
                    libraries.block(&theta, Mechanism::Diffusion),
                );
            }
            let mut context = LossContext::new(data.grid.clone(), true, LossMode::DensityPlusEdge).with_known(known.clone());
            context.pde = settings.pde;
            stepwise_select(&system, &context, &config)
        };
        let fit = run().map_err(|e| e.in_stage(m.name()))?;
        let cols = libraries.columns(m);
        theta[cols.clone()].copy_from_slice(fit.coefficients(m));
        let law = libraries.get(m).law(fit.coefficients(m));
        match m {
            Mechanism::Diffusion => known.diffusion = law,
            Mechanism::Reaction => known.reaction = law,
            Mechanism::EdgeGradient => known.edge_gradient = law,
            Mechanism::EdgeDiffusion => known.edge_diffusion = law,
        }
        stages.push((m, fit));
    }
    Ok(SequentialResult {
        libraries: libraries.clone(),
        theta,
        stages,
    })
}
