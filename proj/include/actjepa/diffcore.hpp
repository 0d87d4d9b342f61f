#pragma once

#include "actjepa/diffcore/adam.hpp"
#include "actjepa/diffcore/grad_check.hpp"
#include "actjepa/diffcore/graph.hpp"
#include "actjepa/diffcore/ops.hpp"
#include "actjepa/diffcore/tensor.hpp"
