#pragma once

// Umbrella header: the whole library.

#include "flexalloc/types.hpp"
#include "flexalloc/model.hpp"
#include "flexalloc/qp.hpp"
#include "flexalloc/qos.hpp"
#include "flexalloc/gradient.hpp"
#include "flexalloc/signals.hpp"
#include "flexalloc/parallel.hpp"
#include "flexalloc/algorithms.hpp"
#include "flexalloc/oracle.hpp"
#include "flexalloc/harness.hpp"
#include "flexalloc/cli.hpp"
