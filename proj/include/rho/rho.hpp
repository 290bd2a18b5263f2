#pragma once

// Umbrella header.

#include "rho/errors.hpp"
#include "rho/random.hpp"
#include "rho/hash.hpp"
#include "rho/tensor.hpp"
#include "rho/autodiff.hpp"
#include "rho/mlp.hpp"
#include "rho/optimizer.hpp"
#include "rho/dataset.hpp"
#include "rho/csv.hpp"
#include "rho/dataset_io.hpp"
#include "rho/fitting.hpp"
#include "rho/il_model.hpp"
#include "rho/selection.hpp"
#include "rho/trainer.hpp"
#include "rho/record_io.hpp"
#include "rho/approx_lab.hpp"
#include "rho/cli/config.hpp"
#include "rho/cli/commands.hpp"
