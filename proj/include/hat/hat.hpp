#pragma once

// Hardware-aware transformer architecture search toolkit: elastic design
// space, weight-shared supernet, host latency measurement, latency predictor,
// constrained evolutionary search, quantization.

#include "hat/checkpoint.hpp"
#include "hat/common.hpp"
#include "hat/decode.hpp"
#include "hat/design_space.hpp"
#include "hat/evolution.hpp"
#include "hat/graph.hpp"
#include "hat/latency.hpp"
#include "hat/predictor.hpp"
#include "hat/proxy.hpp"
#include "hat/quantize.hpp"
#include "hat/supernet.hpp"
#include "hat/task.hpp"
#include "hat/tensor.hpp"
#include "hat/trainer.hpp"
