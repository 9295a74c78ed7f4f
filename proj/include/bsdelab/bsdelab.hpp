#pragma once

#include "core.hpp"
#include "generator.hpp"
#include "forward_sde.hpp"
#include "regression.hpp"
#include "bsde_solver.hpp"
#include "theta_transform.hpp"
#include "terminal_behavior.hpp"
#include "liquidation.hpp"
#include "io.hpp"
#include "cli.hpp"
