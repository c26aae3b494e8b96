#pragma once

#include "array_core.hpp"
#include "baselines.hpp"
#include "harness.hpp"
#include "message_passing.hpp"
#include "metrics.hpp"
#include "signal_sim.hpp"
#include "snapshot_io.hpp"
