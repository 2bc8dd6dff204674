#pragma once

#include "odre/error.hpp"
#include "odre/rng.hpp"
#include "odre/special.hpp"
#include "odre/covariates.hpp"
#include "odre/kernels.hpp"
#include "odre/links.hpp"
#include "odre/model.hpp"
#include "odre/wasserstein.hpp"
#include "odre/engine.hpp"
#include "odre/verify.hpp"
#include "odre/io.hpp"
#include "odre/cli.hpp"
