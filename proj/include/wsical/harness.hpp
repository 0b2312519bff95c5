#pragma once

#include "wsical/harness/config.hpp"
#include "wsical/harness/experiment.hpp"
#include "wsical/harness/report.hpp"
#include "wsical/harness/results.hpp"
#include "wsical/harness/svg.hpp"
