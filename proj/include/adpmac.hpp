#pragma once

#include "adpmac/random.hpp"
#include "adpmac/core.hpp"
#include "adpmac/traffic.hpp"
#include "adpmac/highsim.hpp"
#include "adpmac/lowsim.hpp"
#include "adpmac/stats.hpp"
#include "adpmac/experiment.hpp"
#include "adpmac/compare.hpp"
