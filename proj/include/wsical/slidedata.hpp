#pragma once

#include "wsical/slidedata/bag.hpp"
#include "wsical/slidedata/bagio.hpp"
#include "wsical/slidedata/graph.hpp"
#include "wsical/slidedata/splits.hpp"
#include "wsical/slidedata/synthetic.hpp"
