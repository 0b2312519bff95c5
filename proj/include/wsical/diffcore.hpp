#pragma once

#include "wsical/diffcore/gradcheck.hpp"
#include "wsical/diffcore/ops.hpp"
#include "wsical/diffcore/optim.hpp"
#include "wsical/diffcore/params.hpp"
#include "wsical/diffcore/tape.hpp"
#include "wsical/diffcore/tensor.hpp"
