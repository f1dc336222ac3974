#pragma once

#include "fedbench/core/error.hpp"
#include "fedbench/core/model.hpp"
#include "fedbench/core/nn.hpp"
#include "fedbench/core/optimizer.hpp"
#include "fedbench/core/rng.hpp"
#include "fedbench/core/tensor.hpp"
#include "fedbench/data/dataset.hpp"
#include "fedbench/data/idx.hpp"
#include "fedbench/data/partition.hpp"
#include "fedbench/protocol/baselines.hpp"
#include "fedbench/protocol/engine.hpp"
#include "fedbench/protocol/network.hpp"
#include "fedbench/protocol/strategy.hpp"
#include "fedbench/protocol/wire.hpp"
#include "fedbench/metrics/accuracy.hpp"
#include "fedbench/metrics/report.hpp"
#include "fedbench/attacks/capture.hpp"
#include "fedbench/attacks/dlg.hpp"
#include "fedbench/attacks/fc.hpp"
#include "fedbench/attacks/scoring.hpp"
#include "fedbench/bench/attack.hpp"
#include "fedbench/bench/commands.hpp"
#include "fedbench/bench/config.hpp"
#include "fedbench/bench/experiment.hpp"
#include "fedbench/bench/sweep.hpp"
