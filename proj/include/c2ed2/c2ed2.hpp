#pragma once

#include "errors.hpp"
#include "estimator.hpp"
#include "io.hpp"
#include "montecarlo.hpp"
#include "numerics.hpp"
#include "panel.hpp"
#include "rng.hpp"
#include "twfe.hpp"
