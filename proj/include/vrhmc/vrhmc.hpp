#pragma once

#include "vrhmc/random.hpp"
#include "vrhmc/potential.hpp"
#include "vrhmc/estimator.hpp"
#include "vrhmc/integrator.hpp"
#include "vrhmc/record.hpp"
#include "vrhmc/metrics.hpp"
#include "vrhmc/sampler.hpp"
#include "vrhmc/dataio.hpp"
#include "vrhmc/experiment.hpp"
