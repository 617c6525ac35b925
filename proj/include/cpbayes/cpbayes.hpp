#pragma once

#include "cpbayes/bounds.hpp"
#include "cpbayes/cp_factors.hpp"
#include "cpbayes/dense_tensor.hpp"
#include "cpbayes/design.hpp"
#include "cpbayes/errors.hpp"
#include "cpbayes/experiment.hpp"
#include "cpbayes/io.hpp"
#include "cpbayes/norms.hpp"
#include "cpbayes/rng.hpp"
#include "cpbayes/sampler.hpp"
#include "cpbayes/shape.hpp"
