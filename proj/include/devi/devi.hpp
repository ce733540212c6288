#pragma once

#include "devi/alignment.hpp"
#include "devi/errors.hpp"
#include "devi/geometry.hpp"
#include "devi/mesh.hpp"
#include "devi/metrics.hpp"
#include "devi/nn.hpp"
#include "devi/rewards.hpp"
#include "devi/rl.hpp"
#include "devi/scenario.hpp"
#include "devi/sim.hpp"
#include "devi/skinning.hpp"
#include "devi/targets.hpp"
#include "devi/textio.hpp"
