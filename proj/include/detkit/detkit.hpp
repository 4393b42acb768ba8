#pragma once

// Umbrella header: the full proposal-refinement detection toolkit.

#include "detkit/apdi.hpp"
#include "detkit/config.hpp"
#include "detkit/data.hpp"
#include "detkit/errors.hpp"
#include "detkit/eval.hpp"
#include "detkit/features.hpp"
#include "detkit/geometry.hpp"
#include "detkit/heads.hpp"
#include "detkit/io.hpp"
#include "detkit/matching.hpp"
#include "detkit/parallel.hpp"
#include "detkit/pipeline.hpp"
#include "detkit/random.hpp"
#include "detkit/train.hpp"
