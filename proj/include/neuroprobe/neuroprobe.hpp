#pragma once

// Everything except the HTTP service (include neuroprobe/service.hpp for that).
#include "neuroprobe/activation_store.hpp"
#include "neuroprobe/gru_tagger.hpp"
#include "neuroprobe/intervention.hpp"
#include "neuroprobe/neuron_id.hpp"
#include "neuroprobe/probe.hpp"
#include "neuroprobe/ranking.hpp"
#include "neuroprobe/task.hpp"
#include "neuroprobe/training.hpp"
#include "neuroprobe/vis_data.hpp"
#include "neuroprobe/workspace.hpp"
