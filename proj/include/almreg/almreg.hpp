#pragma once

#include "almreg/common.hpp"
#include "almreg/operators.hpp"
#include "almreg/regularizers.hpp"
#include "almreg/index_functions.hpp"
#include "almreg/alm_core.hpp"
#include "almreg/experiments.hpp"
