#pragma once

#include "havc/config.hpp"
#include "havc/error.hpp"
#include "havc/guidance.hpp"
#include "havc/head_profiler.hpp"
#include "havc/pixmap.hpp"
#include "havc/report.hpp"
#include "havc/rng.hpp"
#include "havc/spatial_ops.hpp"
#include "havc/sweep.hpp"
#include "havc/synth_bench.hpp"
#include "havc/tensor_store.hpp"
#include "havc/types.hpp"
