#pragma once

#include "kafisto/baselines.hpp"
#include "kafisto/core.hpp"
#include "kafisto/filter.hpp"
#include "kafisto/layerwise.hpp"
#include "kafisto/noise.hpp"
#include "kafisto/objectives.hpp"
#include "kafisto/optimizer.hpp"
#include "kafisto/rng.hpp"
#include "kafisto/target.hpp"
