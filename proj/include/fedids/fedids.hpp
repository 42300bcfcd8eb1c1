#pragma once

#include "core.hpp"
#include "dataset.hpp"
#include "preprocess.hpp"
#include "neuralnet.hpp"
#include "aggregation.hpp"
#include "adversary.hpp"
#include "metrics.hpp"
#include "federation.hpp"
#include "config.hpp"
#include "harness.hpp"
#include "report.hpp"
