#pragma once

#include "reptest/random.hpp"
#include "reptest/numeric.hpp"
#include "reptest/distribution.hpp"
#include "reptest/statistics.hpp"
#include "reptest/tester.hpp"
#include "reptest/harness.hpp"
#include "reptest/analysis.hpp"
