#pragma once

// Umbrella header for the solver library (no file I/O or CLI dependencies).

#include "blur.hpp"
#include "core.hpp"
#include "evalkit.hpp"
#include "flow.hpp"
#include "latent.hpp"
#include "parallel.hpp"
#include "pipeline.hpp"
#include "pyramid.hpp"
#include "refine.hpp"
#include "terms.hpp"
