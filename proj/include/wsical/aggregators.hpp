#pragma once

#include "wsical/aggregators/checkpoint.hpp"
#include "wsical/aggregators/clam.hpp"
#include "wsical/aggregators/config.hpp"
#include "wsical/aggregators/gnn.hpp"
#include "wsical/aggregators/layers.hpp"
#include "wsical/aggregators/model.hpp"
#include "wsical/aggregators/train.hpp"
#include "wsical/aggregators/transformer.hpp"
