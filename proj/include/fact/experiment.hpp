// SPDX-License-Identifier: Apache-2.0
//
// End-to-end runs driven by a RunConfig; shared by the CLI and the acceptance suite.
#pragma once

#include "fact/config.hpp"
#include "fact/protocol.hpp"
#include "fact/trainer.hpp"

namespace fact {

SessionStream make_stream(const RunConfig& cfg);

struct BaseRun {
  SessionStream stream;
  SessionState state;
  TrainReport report;
};

/// Builds the stream, initializes φ and the head from the run seed, and trains
/// on the base split.
BaseRun train_base_from_config(const RunConfig& cfg);

}  // namespace fact
