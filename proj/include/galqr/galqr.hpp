#pragma once

#include "galqr/config.hpp"
#include "galqr/csv.hpp"
#include "galqr/dataset.hpp"
#include "galqr/diagnostics.hpp"
#include "galqr/distributions.hpp"
#include "galqr/math.hpp"
#include "galqr/mcmc.hpp"
#include "galqr/model.hpp"
#include "galqr/parallel.hpp"
#include "galqr/quadrature.hpp"
#include "galqr/rng.hpp"
#include "galqr/sim.hpp"
#include "galqr/version.hpp"
