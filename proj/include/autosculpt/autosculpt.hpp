#pragma once

#include "autosculpt/errors.hpp"
#include "autosculpt/numerics.hpp"
#include "autosculpt/model/flops.hpp"
#include "autosculpt/model/forward.hpp"
#include "autosculpt/model/io.hpp"
#include "autosculpt/model/ir.hpp"
#include "autosculpt/model/train.hpp"
#include "autosculpt/patterns/pattern.hpp"
#include "autosculpt/patterns/assignment.hpp"
#include "autosculpt/graph/graph.hpp"
#include "autosculpt/encoder/encoder.hpp"
#include "autosculpt/agent/actor_critic.hpp"
#include "autosculpt/agent/ppo.hpp"
#include "autosculpt/agent/search.hpp"
#include "autosculpt/harness/config.hpp"
#include "autosculpt/harness/dataset.hpp"
#include "autosculpt/harness/commands.hpp"
