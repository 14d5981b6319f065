#pragma once

#include "nbdml/dgp.hpp"
#include "nbdml/error.hpp"
#include "nbdml/estimator.hpp"
#include "nbdml/harness.hpp"
#include "nbdml/learners.hpp"
#include "nbdml/metric_space.hpp"
#include "nbdml/moments.hpp"
#include "nbdml/parallel.hpp"
#include "nbdml/rng.hpp"
#include "nbdml/stability.hpp"
#include "nbdml/tree.hpp"
