// Umbrella header.
#pragma once

#include "asyppo/advantage.hpp"
#include "asyppo/approximator.hpp"
#include "asyppo/common.hpp"
#include "asyppo/ensemble.hpp"
#include "asyppo/envs.hpp"
#include "asyppo/objective.hpp"
#include "asyppo/rollout.hpp"
#include "asyppo/trainer.hpp"
#include "asyppo/xio.hpp"
