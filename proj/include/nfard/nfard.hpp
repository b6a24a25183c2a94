#pragma once

// Umbrella header: pulls in the whole library.

#include "nfard/align.hpp"
#include "nfard/cli.hpp"
#include "nfard/csv.hpp"
#include "nfard/detector.hpp"
#include "nfard/error.hpp"
#include "nfard/eval.hpp"
#include "nfard/linalg.hpp"
#include "nfard/matrix.hpp"
#include "nfard/metrics.hpp"
#include "nfard/model.hpp"
#include "nfard/rng.hpp"
#include "nfard/zoo.hpp"
