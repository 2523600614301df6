#pragma once

#include "pixrel/core.hpp"
#include "pixrel/tensor_io.hpp"
#include "pixrel/rng.hpp"
#include "pixrel/parallel.hpp"
#include "pixrel/seeding.hpp"
#include "pixrel/relations.hpp"
#include "pixrel/losses.hpp"
#include "pixrel/fieldfit.hpp"
#include "pixrel/instancing.hpp"
#include "pixrel/affinity.hpp"
#include "pixrel/propagation.hpp"
#include "pixrel/synthgen.hpp"
#include "pixrel/eval.hpp"
#include "pixrel/pipeline.hpp"
