#pragma once

// Umbrella header: ensemble kernel for incomplete data plus the spectral
// clustering pipeline, missingness generators and evaluation tools around it.

#include "pckid/csv.hpp"
#include "pckid/errors.hpp"
#include "pckid/evaluation.hpp"
#include "pckid/experiment.hpp"
#include "pckid/gmm.hpp"
#include "pckid/idx.hpp"
#include "pckid/incomplete_matrix.hpp"
#include "pckid/kernel.hpp"
#include "pckid/missingness.hpp"
#include "pckid/preprocess.hpp"
#include "pckid/rng.hpp"
#include "pckid/spectral.hpp"
#include "pckid/version.hpp"
