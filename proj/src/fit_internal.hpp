#pragma once

#include "gpdm/train.hpp"

namespace gpdm::internal {

/// Shared MAP-fit loop. with_dynamics=false optimizes only the observation
/// side (latent variable model): the transition blocks stay at their initial
/// values and contribute nothing to the objective.
GpdmModel fit_impl(const TrainingSet& ts, const KernelSpec& kernel_y,
                   const KernelSpec& kernel_x, const TrainConfig& cfg,
                   bool with_dynamics);

}  // namespace gpdm::internal
