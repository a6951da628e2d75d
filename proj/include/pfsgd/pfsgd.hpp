#pragma once

#include "pfsgd/driver.hpp"
#include "pfsgd/dubins.hpp"
#include "pfsgd/errors.hpp"
#include "pfsgd/experiments.hpp"
#include "pfsgd/fbsde.hpp"
#include "pfsgd/lq.hpp"
#include "pfsgd/model.hpp"
#include "pfsgd/particle_filter.hpp"
#include "pfsgd/rng.hpp"
#include "pfsgd/sgd.hpp"
#include "pfsgd/time_grid.hpp"
