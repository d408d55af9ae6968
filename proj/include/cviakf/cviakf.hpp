#pragma once

#include "cviakf/distributions.hpp"
#include "cviakf/filters.hpp"
#include "cviakf/metrics.hpp"
#include "cviakf/models.hpp"
#include "cviakf/selfcheck.hpp"
#include "cviakf/simulator.hpp"
