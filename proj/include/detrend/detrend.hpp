#pragma once

#include "detrend/chain.hpp"
#include "detrend/cli.hpp"
#include "detrend/config.hpp"
#include "detrend/convergence.hpp"
#include "detrend/diagnostics.hpp"
#include "detrend/drift_models.hpp"
#include "detrend/flow.hpp"
#include "detrend/ode.hpp"
#include "detrend/parallel.hpp"
#include "detrend/partition.hpp"
#include "detrend/quadrature.hpp"
#include "detrend/random.hpp"
#include "detrend/sde_transform.hpp"
#include "detrend/types.hpp"
#include "detrend/verify.hpp"

