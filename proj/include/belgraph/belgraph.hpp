// Convenience header pulling in the whole library.
#pragma once

#include "belgraph/action_model.hpp"
#include "belgraph/belief_graph.hpp"
#include "belgraph/core.hpp"
#include "belgraph/embeddings.hpp"
#include "belgraph/harness.hpp"
#include "belgraph/inference.hpp"
#include "belgraph/metrics.hpp"
#include "belgraph/trainer.hpp"
