#pragma once

#include "bmc/common.hpp"
#include "bmc/completion.hpp"
#include "bmc/errors.hpp"
#include "bmc/graph.hpp"
#include "bmc/lbfgs.hpp"
#include "bmc/parallel.hpp"
#include "bmc/rng.hpp"
#include "bmc/selection.hpp"
#include "bmc/simulate.hpp"
#include "bmc/solver.hpp"
#include "bmc/system.hpp"
