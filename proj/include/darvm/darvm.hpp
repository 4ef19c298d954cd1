#pragma once

#include "darvm/active.hpp"
#include "darvm/config.hpp"
#include "darvm/dataset.hpp"
#include "darvm/experiment.hpp"
#include "darvm/inference.hpp"
#include "darvm/mapping.hpp"
#include "darvm/metrics.hpp"
#include "darvm/nuts.hpp"
#include "darvm/rvm.hpp"
#include "darvm/synthetic.hpp"
#include "darvm/types.hpp"
