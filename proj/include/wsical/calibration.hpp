#pragma once

#include "wsical/calibration/ece.hpp"
#include "wsical/calibration/metrics.hpp"
#include "wsical/calibration/predictions.hpp"
#include "wsical/calibration/report.hpp"
#include "wsical/calibration/temperature.hpp"
