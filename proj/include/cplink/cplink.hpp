#pragma once

// Umbrella header for the whole library: constrained nonnegative CP
// decomposition of sparse count tensors under a Poisson objective, with
// angular, l2 and cannot-link penalties, plus the co-occurrence machinery
// that derives the cannot-link constraints and the evaluation harness.

#include "cplink/errors.hpp"
#include "cplink/rng.hpp"
#include "cplink/tensor.hpp"
#include "cplink/objective.hpp"
#include "cplink/projections.hpp"
#include "cplink/solver.hpp"
#include "cplink/linkmatrix.hpp"
#include "cplink/metrics.hpp"
#include "cplink/evaluation.hpp"
#include "cplink/assignment.hpp"
#include "cplink/synth.hpp"
#include "cplink/io.hpp"
