#pragma once

#include "dgfn/adam.hpp"
#include "dgfn/checkpoint.hpp"
#include "dgfn/cli.hpp"
#include "dgfn/config.hpp"
#include "dgfn/experiment.hpp"
#include "dgfn/grad_check.hpp"
#include "dgfn/hypergrid.hpp"
#include "dgfn/metrics.hpp"
#include "dgfn/objectives.hpp"
#include "dgfn/oracle.hpp"
#include "dgfn/policy.hpp"
#include "dgfn/rng.hpp"
#include "dgfn/tape.hpp"
#include "dgfn/tensor.hpp"
#include "dgfn/trainer.hpp"
