#pragma once

#include "mixlab/error.hpp"
#include "mixlab/numeric.hpp"
#include "mixlab/model_family.hpp"
#include "mixlab/mixture.hpp"
#include "mixlab/regret.hpp"
#include "mixlab/fisher.hpp"
#include "mixlab/weight_bound.hpp"
#include "mixlab/sgld.hpp"
