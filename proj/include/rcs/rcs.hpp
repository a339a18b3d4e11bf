#pragma once

#include "rcs/analysis.hpp"
#include "rcs/attack.hpp"
#include "rcs/augment.hpp"
#include "rcs/autodiff.hpp"
#include "rcs/config.hpp"
#include "rcs/criteria.hpp"
#include "rcs/data.hpp"
#include "rcs/distance.hpp"
#include "rcs/divergence.hpp"
#include "rcs/error.hpp"
#include "rcs/losses.hpp"
#include "rcs/model.hpp"
#include "rcs/objectives.hpp"
#include "rcs/random.hpp"
#include "rcs/selection.hpp"
#include "rcs/tensor.hpp"
#include "rcs/trainer.hpp"
